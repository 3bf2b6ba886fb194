use std::collections::BTreeMap;
use std::fs;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Dirichlet;

use colorcnn::classical::{floyd_steinberg_dither, median_cut, median_cut_dither, octree_quantize};
use colorcnn::classifier::{Architecture, Classifier, ClassifierSpec};
use colorcnn::data::{channel_stats, load_dataset, load_dataset_with, DatasetName, LabeledImages, LoadOptions, Normalization, Split};
use colorcnn::eval::{read_records, run_grid_with, ExperimentSpec, QuantizerId, ResultRecord};
use colorcnn::imaging::{decode_indexed_png, encode_indexed_png, measure_bpp, palette_entropy, IndexMap, Palette, RgbImage};
use colorcnn::quantizer::apply_color_jitter;
use colorcnn::Error;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn sq_error(a: &RgbImage, b: &RgbImage) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) as f64 * (x - y) as f64).sum()
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in order.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[test]
fn png_rate_rises_with_index_entropy() {
    // 64×64 maps over 16 entries whose index distributions range from one
    // dominant entry to uniform
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let palette = Palette::new((0..16).map(|i| [i as f32 / 15.0, 1.0 - i as f32 / 15.0, 0.5]).collect());
    let (mut entropies, mut rates) = (Vec::new(), Vec::new());
    for k in 0..60 {
        let alpha = 0.02 * 1.12f64.powi(k);
        let weights = rng.sample(Dirichlet::new([alpha; 16]).unwrap());
        let indices: Vec<u32> = (0..64 * 64)
            .map(|_| {
                let mut u: f64 = rng.random();
                weights.iter().position(|&w| {
                    u -= w;
                    u <= 0.0
                }).unwrap_or(15) as u32
            })
            .collect();
        let map = IndexMap::new(64, 64, indices).unwrap();
        entropies.push(palette_entropy(&map));
        rates.push(measure_bpp(&encode_indexed_png(&map, &palette).unwrap(), 64, 64));
    }
    let rho = spearman(&entropies, &rates);
    assert!(rho > 0.95, "rank correlation {rho}");
}

#[test]
fn random_eight_color_map_beats_raw_rgb() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let palette = Palette::new((0..8).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
    let map = IndexMap::new(32, 32, (0..32 * 32).map(|_| rng.random_range(0..8)).collect()).unwrap();
    let bytes = encode_indexed_png(&map, &palette).unwrap();
    assert!(measure_bpp(&bytes, 32, 32) < 24.0);
    let (back, _) = decode_indexed_png(&bytes).unwrap();
    assert_eq!(back, map);
}

#[test]
fn dithering_conserves_mean_color() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..40 {
        let (h, w) = (rng.random_range(8..40), rng.random_range(8..40));
        let image = random_image(&mut rng, h, w);
        // the eight cube corners contain every color, so no error is clipped
        let corners: Vec<[f32; 3]> = (0..8).map(|i| [i & 1, i >> 1 & 1, i >> 2 & 1].map(|b| b as f32)).collect();
        let out = floyd_steinberg_dither(&image, &Palette::new(corners)).unwrap().image;
        let bound = 2.0 / ((h * w) as f32).sqrt();
        let (a, b) = (image.mean_color(), out.mean_color());
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= bound, "trial {trial} channel {k}: {} vs {}", a[k], b[k]);
        }
    }
}

#[test]
fn gray_dithers_to_its_mean() {
    let gray = RgbImage::filled(64, 64, [0.5; 3]);
    let out = floyd_steinberg_dither(&gray, &Palette::new(vec![[0.0; 3], [1.0; 3]])).unwrap().image;
    assert!((out.mean_color()[0] - 0.5).abs() <= 0.02);
    let q = median_cut_dither(&gray, 2).unwrap();
    assert_eq!(q.distinct_colors, 1);
}

#[test]
fn finer_octree_is_closer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let colors: Vec<[f32; 3]> = (0..64).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let image = RgbImage::from_fn(16, 16, |_, _| colors[rng.random_range(0..64)]);
    let e4 = sq_error(&image, &octree_quantize(&image, 4).unwrap().image);
    let e8 = sq_error(&image, &octree_quantize(&image, 8).unwrap().image);
    assert!(e8 <= e4, "{e8} > {e4}");
    let m4 = sq_error(&image, &median_cut(&image, 4).unwrap().image);
    let m8 = sq_error(&image, &median_cut(&image, 8).unwrap().image);
    assert!(m8 <= m4, "{m8} > {m4}");
}

fn cifar_record(label_bytes: &[u8], seed: u8) -> Vec<u8> {
    let mut rec = label_bytes.to_vec();
    rec.extend((0..3 * 1024).map(|i| (i as u8).wrapping_mul(7).wrapping_add(seed)));
    rec
}

#[test]
fn cifar_binary_layouts_load() {
    let dir = tempfile::tempdir().unwrap();
    let c10 = dir.path().join("cifar-10-batches-bin");
    fs::create_dir(&c10).unwrap();
    for b in 1..=5u8 {
        let bytes: Vec<u8> = (0..3u8).flat_map(|i| cifar_record(&[(b + i) % 10], b)).collect();
        fs::write(c10.join(format!("data_batch_{b}.bin")), bytes).unwrap();
    }
    fs::write(c10.join("test_batch.bin"), [cifar_record(&[9], 0), cifar_record(&[0], 1)].concat()).unwrap();

    let lenient = LoadOptions { verify_counts: false };
    let train = load_dataset_with(DatasetName::Cifar10, dir.path(), Split::Train, lenient).unwrap();
    assert_eq!((train.len(), train.height(), train.num_classes()), (15, 32, 10));
    assert_eq!(&train.labels()[..3], &[1, 2, 3]);
    let test = load_dataset_with(DatasetName::Cifar10, &c10, Split::Test, lenient).unwrap();
    assert_eq!(test.labels(), &[9, 0]);
    // planar records become interleaved pixels
    let px = test.rgb8(0);
    for p in 0..1024 {
        for ch in 0..3 {
            assert_eq!(px[p * 3 + ch], ((ch * 1024 + p) as u8).wrapping_mul(7));
        }
    }

    // counts are checked against the published sizes by default
    assert!(matches!(load_dataset(DatasetName::Cifar10, dir.path(), Split::Test), Err(Error::Ingestion { .. })));

    let c100 = dir.path().join("cifar-100-binary");
    fs::create_dir(&c100).unwrap();
    fs::write(c100.join("test.bin"), [cifar_record(&[3, 42], 0), cifar_record(&[19, 99], 0)].concat()).unwrap();
    let test = load_dataset_with(DatasetName::Cifar100, dir.path(), Split::Test, lenient).unwrap();
    assert_eq!((test.labels(), test.num_classes()), (&[42u32, 99][..], 100));

    fs::write(c100.join("test.bin"), vec![0u8; 100]).unwrap();
    assert!(matches!(
        load_dataset_with(DatasetName::Cifar100, dir.path(), Split::Test, lenient),
        Err(Error::Ingestion { .. })
    ));
}

#[test]
fn streaming_stats_match_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 300;
    let pixels: Vec<u8> = (0..n * 8 * 8 * 3).map(|i| if i % 3 == 0 { rng.random_range(200..=255) } else { rng.random() }).collect();
    let data = LabeledImages::new(8, 8, 3, pixels.clone(), (0..n as u32).map(|i| i % 3).collect()).unwrap();
    let stats = channel_stats(&data).unwrap();
    for k in 0..3 {
        let values: Vec<f64> = pixels.iter().skip(k).step_by(3).map(|&v| v as f64 / 255.0).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!((stats.mean[k] - mean).abs() <= 1e-6);
        assert!((stats.std[k] - var.sqrt()).abs() <= 1e-6);
    }
}

#[test]
fn unit_jitter_has_unit_variance() {
    let x = Tensor::zeros((10, 3, 50, 70), DType::F64, &Device::Cpu).unwrap();
    let y = apply_color_jitter(&x, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let v: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(v.len(), 105_000);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    assert!((var - 1.0).abs() <= 0.03, "variance {var}");
}

fn grid_fixture(dir: &std::path::Path) -> (ExperimentSpec, Classifier, LabeledImages) {
    let spec = ClassifierSpec::new(Architecture::ResNet18, 4, 8).narrowed(32);
    let classifier = Classifier::new(spec, Normalization::IDENTITY, 3).unwrap();
    let path = dir.join("classifier.safetensors");
    classifier.save(&path, &classifier.manifest(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let images: Vec<RgbImage> = (0..12).map(|_| random_image(&mut rng, 8, 8)).collect();
    let test = LabeledImages::from_images(&images, (0..12).map(|i| i % 4).collect(), 4).unwrap();
    let experiment = ExperimentSpec {
        dataset: DatasetName::Cifar10,
        dataset_root: dir.to_path_buf(),
        classifier: path,
        quantizers: vec![QuantizerId::MedianCut, QuantizerId::Octree, QuantizerId::MedianCutDither],
        bit_depths: vec![1, 3],
        colorcnn: BTreeMap::new(),
        seed: 0,
        output_dir: dir.join("grid"),
        limit: None,
        save_artifacts: true,
        batch_size: 5,
    };
    (experiment, classifier, test)
}

fn same_results(a: &[ResultRecord], b: &[ResultRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_result(y))
}

#[test]
fn grid_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let (mut spec, classifier, test) = grid_fixture(dir.path());
    let full = run_grid_with(&spec, &classifier, &test).unwrap();
    assert_eq!(full.len(), 6);

    spec.output_dir = dir.path().join("again");
    let again = run_grid_with(&spec, &classifier, &test).unwrap();
    assert!(same_results(&full, &again), "{full:#?}\n{again:#?}");

    // interrupt after two cells, leaving a torn third line behind
    spec.output_dir = dir.path().join("resumed");
    fs::create_dir_all(&spec.output_dir).unwrap();
    let mut text: String = full[..2].iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    text.push_str(&serde_json::to_string(&full[2]).unwrap()[..20]);
    fs::write(spec.records_path(), text).unwrap();
    let resumed = run_grid_with(&spec, &classifier, &test).unwrap();
    assert!(same_results(&full, &resumed));
    assert!(same_results(&full, &read_records(spec.records_path()).unwrap()));
}

#[test]
fn recorded_rates_match_stored_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (spec, classifier, test) = grid_fixture(dir.path());
    for record in run_grid_with(&spec, &classifier, &test).unwrap() {
        let name = format!("{}_d{}", record.quantizer.as_str().replace('+', "_"), record.bit_depth);
        let artifacts = spec.output_dir.join("artifacts").join(&name);
        let mut total = 0.0;
        for i in 0..test.len() {
            let bytes = fs::read(artifacts.join(format!("{i:05}.png"))).unwrap();
            let (map, palette) = decode_indexed_png(&bytes).unwrap();
            let reencoded = encode_indexed_png(&map, &palette).unwrap();
            total += measure_bpp(&reencoded, 8, 8);
        }
        let mean = total / test.len() as f64;
        assert!((mean - record.mean_bpp).abs() <= 1e-9, "{name}: {mean} vs {}", record.mean_bpp);
    }
}
