use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use colorcnn::classifier::{
    train_cam_probe, train_classifier, Architecture, Classifier, ClassifierSpec, TrainSchedule,
};
use colorcnn::data::{channel_stats, load_dataset, subset, DatasetName, LabeledImages, Split};
use colorcnn::eval::{
    ablation_table, cam_comparison, rate_accuracy_curve, read_jpeg_points, read_records, run_grid, AblationVariant,
    ExperimentSpec, Method, QuantizerId,
};
use colorcnn::imaging::RgbImage;
use colorcnn::quantizer::{
    hard_quantize, train_quantizer, QuantizerConfig, QuantizerManifest, QuantizerNetwork, QuantizerSchedule,
};
use colorcnn::{Error, Result};

#[derive(Parser)]
#[command(name = "colorcnn", version, about = "Low-bit color quantization for image classifiers")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Clone, Copy)]
enum Verb {
    /// Train a classifier on a dataset (or a class-balanced subset of it).
    TrainClassifier,
    /// Train a ColorCNN quantizer against a frozen classifier.
    TrainQuantizer,
    /// Quantize one image to an indexed PNG.
    Quantize,
    /// Run the quantizer × bit-depth grid and append result records.
    Evaluate,
    /// Compare trained quantizer variants at one bit depth.
    Ablate,
    /// Rate/accuracy plot and table from result records.
    Plot,
    /// Side-by-side class activation maps on original and quantized images.
    Cam,
}

/// Every flag may also come from `--config`; flags win.
#[derive(Args, Serialize, Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct Options {
    /// TOML file with any of these options (snake_case keys)
    #[arg(long, global = true)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<DatasetName>,
    /// Directory holding the dataset in its published layout
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    arch: Option<Architecture>,
    #[arg(long, global = true)]
    bit_depth: Option<u32>,
    /// Bit depths for `evaluate`, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    bit_depths: Vec<u32>,
    /// Weight of the palette diversity penalty
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Standard deviation of the training color jitter
    #[arg(long, global = true)]
    xi: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training images per class
    #[arg(long, global = true)]
    subset: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Divide every classifier width by this (for quick runs)
    #[arg(long, global = true)]
    width_divisor: Option<usize>,
    /// U-Net base width of the quantizer
    #[arg(long, global = true)]
    unet_width: Option<usize>,
    /// Classifier checkpoint
    #[arg(long, global = true)]
    classifier: Option<PathBuf>,
    /// ColorCNN checkpoints; repeat for several bit depths or variants
    #[arg(long, global = true)]
    quantizer: Vec<PathBuf>,
    /// Methods: colorcnn, mediancut, octree, mediancut+dither
    #[arg(long, global = true, value_delimiter = ',')]
    method: Vec<QuantizerId>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Result records (JSON lines) for `plot`
    #[arg(long, global = true)]
    records: Option<PathBuf>,
    /// CSV of `bpp,accuracy` JPEG reference points for `plot`
    #[arg(long, global = true)]
    jpeg: Option<PathBuf>,
    /// Use only the first this many test images
    #[arg(long, global = true)]
    limit: Option<usize>,
    /// Store the quantized PNGs of an `evaluate` run
    #[arg(long, global = true)]
    save_artifacts: bool,
}

impl Options {
    /// Fills every option not given on the command line from `file`.
    fn merged_with(self, file: Options) -> Options {
        macro_rules! pick {
            ($($f:ident),*) => { Options { config: self.config, $($f: self.$f.or(file.$f),)*
                bit_depths: if self.bit_depths.is_empty() { file.bit_depths } else { self.bit_depths },
                quantizer: if self.quantizer.is_empty() { file.quantizer } else { self.quantizer },
                method: if self.method.is_empty() { file.method } else { self.method },
                save_artifacts: self.save_artifacts || file.save_artifacts,
            } };
        }
        pick!(
            dataset, data_dir, arch, bit_depth, gamma, xi, seed, subset, epochs, batch_size, width_divisor, unet_width,
            classifier, input, output, output_dir, records, jpeg, limit
        )
    }

    fn load(self) -> Result<Options> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)?;
        let file: Options = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(self.merged_with(file))
    }
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn output_dir(o: &Options) -> PathBuf {
    o.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

fn training_data(o: &Options, dataset: DatasetName, seed: u64) -> Result<LabeledImages> {
    let root = need(o.data_dir.clone(), "data-dir")?;
    let train = load_dataset(dataset, &root, Split::Train)?;
    match o.subset {
        Some(per_class) => subset(&train, per_class, seed),
        None => Ok(train),
    }
}

fn test_data(o: &Options, dataset: DatasetName) -> Result<LabeledImages> {
    let root = need(o.data_dir.clone(), "data-dir")?;
    let test = load_dataset(dataset, &root, Split::Test)?;
    Ok(match o.limit {
        Some(n) => test.select(&(0..n.min(test.len())).collect::<Vec<_>>()),
        None => test,
    })
}

fn train_classifier_cmd(o: &Options) -> Result<()> {
    let dataset = need(o.dataset, "dataset")?;
    let arch = o.arch.unwrap_or(Architecture::ResNet18);
    let seed = o.seed.unwrap_or(0);
    let train = training_data(o, dataset, seed)?;
    let test = o.data_dir.as_ref().map(|_| test_data(o, dataset)).transpose()?;
    let normalization = channel_stats(&train)?.into();
    let desc = dataset.descriptor();
    let spec = ClassifierSpec::new(arch, desc.num_classes, desc.resolution).narrowed(o.width_divisor.unwrap_or(1));
    let mut schedule = TrainSchedule::default();
    schedule.epochs = o.epochs.unwrap_or(schedule.epochs);
    schedule.batch_size = o.batch_size.unwrap_or(schedule.batch_size);

    let dir = output_dir(o);
    fs::create_dir_all(&dir)?;
    let out = o.output.clone().unwrap_or_else(|| dir.join(format!("{arch}_{dataset}_s{seed}.safetensors")));
    let mut log = BufWriter::new(File::create(out.with_extension("log.jsonl"))?);
    let (classifier, history) =
        train_classifier(spec, normalization, &train, test.as_ref(), &schedule, seed, Some(&mut log))?;
    let mut manifest = classifier.manifest(seed);
    manifest.dataset = Some(dataset.to_string());
    manifest.schedule = Some(schedule);
    manifest.epochs_trained = schedule.epochs;
    manifest.final_accuracy = history.last().and_then(|e| e.test_accuracy);
    classifier.save(&out, &manifest)?;
    println!("saved {} (test accuracy {:?})", out.display(), manifest.final_accuracy);
    Ok(())
}

fn train_quantizer_cmd(o: &Options) -> Result<()> {
    let classifier_path = need(o.classifier.clone(), "classifier")?;
    let (classifier, cmanifest) = Classifier::load(&classifier_path)?;
    let dataset = match (o.dataset, cmanifest.dataset.as_deref()) {
        (Some(d), _) => d,
        (None, Some(name)) => name.parse()?,
        (None, None) => return Err(Error::Config("--dataset is required".into())),
    };
    let seed = o.seed.unwrap_or(0);
    let train = training_data(o, dataset, seed)?;
    let val = test_data(o, dataset)?;
    let d = need(o.bit_depth, "bit-depth")?;
    let mut config = QuantizerConfig::new(d, *classifier.normalization());
    config.gamma = o.gamma.unwrap_or(config.gamma);
    config.xi = o.xi.unwrap_or(config.xi);
    if let Some(w) = o.unet_width {
        config.unet.base_width = w;
    }
    let mut schedule = QuantizerSchedule::default();
    schedule.epochs = o.epochs.unwrap_or(schedule.epochs);
    schedule.batch_size = o.batch_size.unwrap_or(schedule.batch_size);

    let dir = output_dir(o);
    fs::create_dir_all(&dir)?;
    let stem = classifier_path.file_stem().and_then(|s| s.to_str()).unwrap_or("classifier").to_string();
    let out = o
        .output
        .clone()
        .unwrap_or_else(|| dir.join(format!("colorcnn_{stem}_d{d}_g{}_x{}.safetensors", config.gamma, config.xi)));
    let mut net = config.build_network(seed)?;
    let mut log = BufWriter::new(File::create(out.with_extension("log.jsonl"))?);
    let history = train_quantizer(&mut net, &classifier, &train, Some(&val), &config, &schedule, seed, Some(&mut log))?;
    let manifest = QuantizerManifest {
        config,
        dataset: Some(dataset.to_string()),
        classifier: Some(stem),
        epochs_trained: schedule.epochs,
        seed,
    };
    net.save(&out, &manifest)?;
    let val = history.last().and_then(|e| e.val_accuracy);
    println!("saved {} (hard-pass validation accuracy {val:?})", out.display());
    Ok(())
}

fn quantize_cmd(o: &Options) -> Result<()> {
    let input = need(o.input.clone(), "input")?;
    let output = need(o.output.clone(), "output")?;
    let image = RgbImage::load(&input)?;
    let method = o.method.first().copied().unwrap_or(QuantizerId::ColorCnn);
    let result = if method == QuantizerId::ColorCnn {
        let path = need(o.quantizer.first().cloned(), "quantizer")?;
        let (net, manifest) = QuantizerNetwork::load(path)?;
        hard_quantize(&net, &image, &manifest.config)?
    } else {
        let d = need(o.bit_depth, "bit-depth")?;
        Method::Classical(method).quantize(std::slice::from_ref(&image), d)?.remove(0)
    };
    fs::write(&output, result.encode_png()?)?;
    println!(
        "{}: {} colors, {:.3} bits/pixel",
        output.display(),
        result.distinct_colors,
        result.bits_per_pixel
    );
    Ok(())
}

fn quantizer_checkpoints(o: &Options) -> Result<Vec<(QuantizerNetwork, QuantizerConfig)>> {
    o.quantizer
        .iter()
        .map(|p| QuantizerNetwork::load(p).map(|(net, m)| (net, m.config)))
        .collect()
}

fn evaluate_cmd(o: &Options) -> Result<()> {
    let mut colorcnn = BTreeMap::new();
    for path in &o.quantizer {
        let text = fs::read_to_string(path.with_extension("toml")).map_err(|_| Error::MissingCheckpoint(path.clone()))?;
        let manifest: QuantizerManifest = toml::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        colorcnn.insert(manifest.config.bit_depth, path.clone());
    }
    let quantizers = if o.method.is_empty() { QuantizerId::ALL.to_vec() } else { o.method.clone() };
    let bit_depths = if o.bit_depths.is_empty() { (1..=6).collect() } else { o.bit_depths.clone() };
    let spec = ExperimentSpec {
        dataset: need(o.dataset, "dataset")?,
        dataset_root: need(o.data_dir.clone(), "data-dir")?,
        classifier: need(o.classifier.clone(), "classifier")?,
        quantizers,
        bit_depths,
        colorcnn,
        seed: o.seed.unwrap_or(0),
        output_dir: output_dir(o),
        limit: o.limit,
        save_artifacts: o.save_artifacts,
        batch_size: o.batch_size.unwrap_or(128),
    };
    let records = run_grid(&spec)?;
    println!("{:<18} {:>4} {:>9} {:>8} {:>8}", "quantizer", "bits", "accuracy", "colors", "bpp");
    for r in &records {
        println!(
            "{:<18} {:>4} {:>8.2}% {:>8.2} {:>8.3}",
            r.quantizer.as_str(),
            r.bit_depth,
            r.accuracy * 100.0,
            r.mean_distinct_colors,
            r.mean_bpp
        );
    }
    println!("records in {}", spec.records_path().display());
    Ok(())
}

fn variant_name(config: &QuantizerConfig) -> String {
    match (config.gamma == 0.0, config.xi == 0.0) {
        (false, false) => "full".into(),
        (true, false) => "w/o regularization".into(),
        (false, true) => "w/o jitter".into(),
        (true, true) => "w/o regularization, w/o jitter".into(),
    }
}

fn ablate_cmd(o: &Options) -> Result<()> {
    let (classifier, manifest) = Classifier::load(need(o.classifier.clone(), "classifier")?)?;
    let dataset = match o.dataset {
        Some(d) => d,
        None => need(manifest.dataset.as_deref(), "dataset")?.parse()?,
    };
    let test = test_data(o, dataset)?;
    let nets = quantizer_checkpoints(o)?;
    let variants: Vec<AblationVariant> = nets
        .iter()
        .map(|(network, config)| AblationVariant {
            name: variant_name(config),
            network,
            config,
        })
        .collect();
    let out = o.output.clone().unwrap_or_else(|| output_dir(o).join("ablation.md"));
    let rows = ablation_table(&classifier, &test, &variants, o.batch_size.unwrap_or(128), &out)?;
    print!("{}", fs::read_to_string(&out)?);
    log::info!("{} rows written to {}", rows.len(), out.display());
    Ok(())
}

fn plot_cmd(o: &Options) -> Result<()> {
    let records = read_records(need(o.records.clone(), "records")?)?;
    let jpeg = o.jpeg.as_ref().map(read_jpeg_points).transpose()?.unwrap_or_default();
    let out = rate_accuracy_curve(&records, &jpeg, output_dir(o), "rate_accuracy")?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}\n{}", out.plot.display(), out.table.display());
    Ok(())
}

fn cam_cmd(o: &Options) -> Result<()> {
    let (mut classifier, manifest) = Classifier::load(need(o.classifier.clone(), "classifier")?)?;
    let dataset = match o.dataset {
        Some(d) => d,
        None => need(manifest.dataset.as_deref(), "dataset")?.parse()?,
    };
    let seed = o.seed.unwrap_or(0);
    if classifier.cam_weights().is_err() {
        let probe_data = training_data(o, dataset, seed)?;
        let acc = train_cam_probe(&mut classifier, &probe_data, o.epochs.unwrap_or(5), 128, 0.01, seed)?;
        log::info!("trained CAM probe, accuracy {acc:.3}");
    }
    let test = test_data(o, dataset)?;
    let count = o.limit.unwrap_or(8).min(test.len());
    let images: Vec<RgbImage> = (0..count).map(|i| test.image(i)).collect();
    let classes: Vec<usize> = (0..count).map(|i| test.label(i) as usize).collect();
    let nets = quantizer_checkpoints(o)?;
    let d = match (o.bit_depth, nets.first()) {
        (Some(d), _) => d,
        (None, Some((_, c))) => c.bit_depth,
        (None, None) => 1,
    };
    let mut methods: Vec<(String, Method)> = Vec::new();
    for (net, config) in &nets {
        methods.push((format!("colorcnn ({})", variant_name(config)), Method::Learned(net, config)));
    }
    let classical = if o.method.is_empty() { vec![QuantizerId::MedianCut] } else { o.method.clone() };
    for id in classical.into_iter().filter(|id| id.is_classical()) {
        methods.push((id.to_string(), Method::Classical(id)));
    }
    let out = o.output.clone().unwrap_or_else(|| output_dir(o).join(format!("cam_d{d}.png")));
    let cmp = cam_comparison(&classifier, &images, &classes, &methods, d, &out)?;
    for (name, iou) in cmp.columns.iter().skip(1).zip(&cmp.mean_iou) {
        println!("{name}: mean top-20% CAM IoU with the original {iou:.3}");
    }
    println!("{}", out.display());
    Ok(())
}

fn run(verb: Verb, o: &Options) -> Result<()> {
    match verb {
        Verb::TrainClassifier => train_classifier_cmd(o),
        Verb::TrainQuantizer => train_quantizer_cmd(o),
        Verb::Quantize => quantize_cmd(o),
        Verb::Evaluate => evaluate_cmd(o),
        Verb::Ablate => ablate_cmd(o),
        Verb::Plot => plot_cmd(o),
        Verb::Cam => cam_cmd(o),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = cli.opts.load().and_then(|o| run(cli.verb, &o));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
