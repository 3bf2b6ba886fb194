//! Trains a narrow ResNet18 on synthetic shapes, then a 1-bit ColorCNN
//! against it, and compares the hard pass with 1-bit MedianCut.
//!
//!     cargo run --release --example train_on_shapes [output_dir]

use std::path::PathBuf;

use colorcnn::classifier::{evaluate_top1, train_classifier, Architecture, ClassifierSpec, TrainSchedule};
use colorcnn::data::{channel_stats, shapes, SHAPE_CLASSES};
use colorcnn::eval::{evaluate_cell, Method, QuantizerId};
use colorcnn::nn::LrSchedule;
use colorcnn::quantizer::{train_quantizer, QuantizerConfig, QuantizerManifest, QuantizerSchedule, UNetConfig};

fn main() -> colorcnn::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/shapes".into()));
    std::fs::create_dir_all(&out)?;
    let train = shapes(128, 16, 0)?;
    let test = shapes(32, 16, 1)?;
    let normalization = channel_stats(&train)?.into();

    let spec = ClassifierSpec::new(Architecture::ResNet18, SHAPE_CLASSES, 16).narrowed(8);
    let schedule = TrainSchedule {
        epochs: 12,
        batch_size: 32,
        ..TrainSchedule::default()
    };
    let (classifier, history) = train_classifier(spec, normalization, &train, Some(&test), &schedule, 0, None)?;
    for e in &history {
        println!("classifier epoch {}: loss {:.3}, test {:?}", e.epoch, e.train_loss, e.test_accuracy);
    }
    classifier.save(out.join("resnet18.safetensors"), &classifier.manifest(0))?;

    let mut config = QuantizerConfig::new(1, normalization);
    config.unet = UNetConfig {
        levels: 2,
        base_width: 8,
        head_width: 32,
    };
    let mut net = config.build_network(0)?;
    let qschedule = QuantizerSchedule {
        epochs: 20,
        batch_size: 32,
        lr: LrSchedule::CosineWarmRestart {
            peak: 0.01,
            min: 0.0,
            period: 20.0,
        },
        val_every: 5,
        ..QuantizerSchedule::default()
    };
    for e in train_quantizer(&mut net, &classifier, &train, Some(&test), &config, &qschedule, 0, None)? {
        println!("quantizer epoch {}: loss {:.3}, R {:.3}, val {:?}", e.epoch, e.train_loss, e.regularizer, e.val_accuracy);
    }
    let manifest = QuantizerManifest {
        config,
        dataset: Some("shapes".into()),
        classifier: Some("resnet18".into()),
        epochs_trained: qschedule.epochs,
        seed: 0,
    };
    net.save(out.join("colorcnn_d1.safetensors"), &manifest)?;

    println!("clean accuracy {:.3}", evaluate_top1(&classifier, &test, 64)?);
    for method in [Method::Learned(&net, &config), Method::Classical(QuantizerId::MedianCut)] {
        let r = evaluate_cell(&method, 1, &classifier, &test, 64, 0, None)?;
        println!("{:<10} 1 bit: accuracy {:.3}, {:.3} bits/pixel", r.quantizer.as_str(), r.accuracy, r.mean_bpp);
    }
    Ok(())
}
