//! Class activation maps of a classifier on original images and on their
//! 1-bit quantized versions, written as one PNG grid.
//!
//!     cargo run --release --example train_on_shapes
//!     cargo run --release --example cam_comparison [runs/shapes]

use std::path::PathBuf;

use colorcnn::classifier::Classifier;
use colorcnn::data::shapes;
use colorcnn::eval::{cam_comparison, Method, QuantizerId};
use colorcnn::quantizer::QuantizerNetwork;

fn main() -> colorcnn::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/shapes".into()));
    let (classifier, _) = Classifier::load(dir.join("resnet18.safetensors"))?;
    let test = shapes(4, 16, 1)?;
    let images: Vec<_> = (0..test.len()).map(|i| test.image(i)).collect();
    let classes: Vec<usize> = test.labels().iter().map(|&l| l as usize).collect();

    let learned = QuantizerNetwork::load(dir.join("colorcnn_d1.safetensors")).ok();
    let mut methods = Vec::new();
    if let Some((net, manifest)) = &learned {
        methods.push(("colorcnn".to_string(), Method::Learned(net, &manifest.config)));
    }
    methods.push(("mediancut".to_string(), Method::Classical(QuantizerId::MedianCut)));
    methods.push(("octree".to_string(), Method::Classical(QuantizerId::Octree)));

    let out = dir.join("cam_d1.png");
    let cmp = cam_comparison(&classifier, &images, &classes, &methods, 1, &out)?;
    println!("{} rows × {} columns -> {}", cmp.rows, cmp.columns.len(), out.display());
    for (name, iou) in cmp.columns.iter().skip(1).zip(&cmp.mean_iou) {
        println!("{name:<10} mean top-20% IoU with the original CAM: {iou:.3}");
    }
    Ok(())
}
