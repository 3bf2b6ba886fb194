//! A small quantizer × bit-depth grid on synthetic shapes, stored as result
//! records and drawn as an accuracy/bit-rate curve. Uses the classifier and
//! 1-bit quantizer from `train_on_shapes` when present.
//!
//!     cargo run --release --example train_on_shapes
//!     cargo run --release --example rate_curve [runs/shapes]

use std::path::PathBuf;

use colorcnn::classifier::{train_classifier, Architecture, Classifier, ClassifierSpec, TrainSchedule};
use colorcnn::data::{channel_stats, shapes, SHAPE_CLASSES};
use colorcnn::eval::{append_record, evaluate_cell, rate_accuracy_curve, Method, QuantizerId};
use colorcnn::quantizer::QuantizerNetwork;

fn main() -> colorcnn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/shapes".into()));
    let out = dir.join("grid");
    std::fs::create_dir_all(&out)?;
    let test = shapes(32, 16, 1)?;
    let classifier_path = dir.join("resnet18.safetensors");
    let classifier = if classifier_path.exists() {
        Classifier::load(&classifier_path)?.0
    } else {
        println!("no trained classifier in {}, training a quick one", dir.display());
        let train = shapes(64, 16, 0)?;
        let spec = ClassifierSpec::new(Architecture::ResNet18, SHAPE_CLASSES, 16).narrowed(8);
        let schedule = TrainSchedule { epochs: 4, batch_size: 32, ..TrainSchedule::default() };
        train_classifier(spec, channel_stats(&train)?.into(), &train, None, &schedule, 0, None)?.0
    };
    let learned = QuantizerNetwork::load(dir.join("colorcnn_d1.safetensors")).ok();

    let records_path = out.join("records.jsonl");
    let _ = std::fs::remove_file(&records_path);
    let mut records = Vec::new();
    for d in 1..=4 {
        let mut methods = vec![
            Method::Classical(QuantizerId::MedianCut),
            Method::Classical(QuantizerId::Octree),
            Method::Classical(QuantizerId::MedianCutDither),
        ];
        if let Some((net, manifest)) = learned.as_ref().filter(|(_, m)| m.config.bit_depth == d) {
            methods.push(Method::Learned(net, &manifest.config));
        }
        for method in &methods {
            let r = evaluate_cell(method, d, &classifier, &test, 64, 0, None)?;
            println!("{:<18} {d} bit: accuracy {:.3}, {:.3} bpp", r.quantizer.as_str(), r.accuracy, r.mean_bpp);
            append_record(&records_path, &r)?;
            records.push(r);
        }
    }
    let curve = rate_accuracy_curve(&records, &[], &out, "rate_accuracy")?;
    println!("{}\n{}\n{}", records_path.display(), curve.plot.display(), curve.table.display());
    Ok(())
}
