//! Loads a dataset split from its published archive layout, draws a
//! class-balanced subset and prints normalization statistics. Also writes a
//! checksum manifest of the source files.
//!
//!     cargo run --release --example dataset_stats -- cifar10 /data/cifar-10-batches-bin [per_class]

use colorcnn::data::{channel_stats, load_dataset, subset, write_source_manifest, DatasetName, Split};

fn main() -> colorcnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(name), Some(root)) = (args.next(), args.next()) else {
        eprintln!("usage: dataset_stats <cifar10|cifar100|stl10|tiny200> <data_dir> [per_class]");
        std::process::exit(2);
    };
    let name: DatasetName = name.parse()?;
    let desc = name.descriptor();
    println!(
        "{name}: {} classes, {}/{} images at {}×{}",
        desc.num_classes, desc.train_count, desc.test_count, desc.resolution, desc.resolution
    );
    let train = load_dataset(name, &root, Split::Train)?;
    let stats = channel_stats(&train)?;
    println!("full train split: mean {:?}, std {:?}", stats.mean, stats.std);
    if let Some(per_class) = args.next() {
        let per_class: usize = per_class.parse().map_err(|_| colorcnn::Error::Config("per_class must be an integer".into()))?;
        let small = subset(&train, per_class, 0)?;
        let stats = channel_stats(&small)?;
        println!("{} image subset: mean {:?}, std {:?}", small.len(), stats.mean, stats.std);
    }
    let manifest = std::path::Path::new("runs").join(format!("{name}_sources.toml"));
    std::fs::create_dir_all("runs")?;
    write_source_manifest(name, &root, &manifest)?;
    println!("source checksums in {}", manifest.display());
    Ok(())
}
