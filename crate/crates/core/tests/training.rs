use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use colorcnn::classifier::{
    class_activation_map, evaluate_top1, train_classifier, Architecture, Classifier, ClassifierSpec, TrainSchedule,
};
use colorcnn::data::{shapes, LabeledImages, Normalization, SHAPE_CLASSES};
use colorcnn::imaging::RgbImage;
use colorcnn::nn::{LrSchedule, Sgd};
use colorcnn::quantizer::{quantizer_loss, train_quantizer, QuantizerConfig, QuantizerSchedule, UNetConfig};

const SIDE: usize = 32;

fn training_set() -> &'static LabeledImages {
    static DATA: OnceLock<LabeledImages> = OnceLock::new();
    DATA.get_or_init(|| shapes(16, SIDE, 21).unwrap())
}

/// A narrow ResNet18 fitted to the shapes set until it memorizes it.
fn trained() -> &'static Classifier {
    static NET: OnceLock<Classifier> = OnceLock::new();
    NET.get_or_init(|| {
        let spec = ClassifierSpec::new(Architecture::ResNet18, SHAPE_CLASSES, SIDE).narrowed(8);
        let schedule = TrainSchedule {
            epochs: 30,
            batch_size: 16,
            lr: LrSchedule::OneCycle { peak: 0.05 },
            augment: false,
            ..TrainSchedule::default()
        };
        train_classifier(spec, Normalization::IDENTITY, training_set(), None, &schedule, 4, None).unwrap().0
    })
}

/// A classifier trained with shifted crops on a larger shapes set, so its
/// activations follow the object.
fn localizing() -> &'static Classifier {
    static NET: OnceLock<Classifier> = OnceLock::new();
    NET.get_or_init(|| {
        let spec = ClassifierSpec::new(Architecture::ResNet18, SHAPE_CLASSES, SIDE).narrowed(16);
        let schedule = TrainSchedule {
            epochs: 25,
            batch_size: 32,
            lr: LrSchedule::OneCycle { peak: 0.05 },
            augment: true,
            ..TrainSchedule::default()
        };
        let data = shapes(128, SIDE, 21).unwrap();
        train_classifier(spec, Normalization::IDENTITY, &data, None, &schedule, 4, None).unwrap().0
    })
}

#[test]
fn classifier_memorizes_its_training_set() {
    let acc = evaluate_top1(trained(), training_set(), 32).unwrap();
    assert!(acc > 0.95, "training accuracy {acc}");
}

#[test]
fn untrained_classifier_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 200;
    let pixels: Vec<u8> = (0..n * 8 * 8 * 3).map(|_| rng.random()).collect();
    let data = LabeledImages::new(8, 8, 10, pixels, (0..n as u32).map(|i| i % 10).collect()).unwrap();
    let spec = ClassifierSpec::new(Architecture::ResNet18, 10, 8).narrowed(16);
    let accs: Vec<f64> = (0..8)
        .map(|seed| evaluate_top1(&Classifier::new(spec, Normalization::IDENTITY, seed).unwrap(), &data, 50).unwrap())
        .collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.1).abs() <= 0.03, "mean accuracy {mean} over {accs:?}");
}

#[test]
fn evaluation_ignores_order_and_repeats_exactly() {
    let data = shapes(10, SIDE, 77).unwrap();
    let classifier = trained();
    let base = evaluate_top1(classifier, &data, 7).unwrap();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(base, evaluate_top1(classifier, &data.select(&order), 7).unwrap());
    let frozen = classifier.frozen().unwrap();
    assert_eq!(evaluate_top1(&frozen, &data, 13).unwrap(), evaluate_top1(&frozen, &data, 13).unwrap());
    assert_eq!(base, evaluate_top1(&frozen, &data, 13).unwrap());
}

fn small_config(bit_depth: u32) -> QuantizerConfig {
    let mut config = QuantizerConfig::new(bit_depth, Normalization::IDENTITY);
    config.unet = UNetConfig {
        levels: 2,
        base_width: 8,
        head_width: 32,
    };
    config
}

#[test]
fn quantizer_training_leaves_the_classifier_untouched() {
    let classifier = trained();
    let before = classifier.store().fingerprint().unwrap();
    let config = small_config(2);
    let mut net = config.build_network(1).unwrap();
    let schedule = QuantizerSchedule {
        epochs: 1,
        batch_size: 16,
        val_every: 0,
        ..QuantizerSchedule::default()
    };
    train_quantizer(&mut net, classifier, training_set(), Some(training_set()), &config, &schedule, 2, None).unwrap();
    assert_eq!(before, classifier.store().fingerprint().unwrap());
}

#[test]
fn quantizer_overfits_one_batch() {
    let classifier = trained().frozen().unwrap();
    let mut config = small_config(1);
    // a fixed batch is overfit without the jitter's sampling noise
    config.xi = 0.0;
    let net = config.build_network(3).unwrap();
    let indices: Vec<usize> = (0..16).collect();
    let (x, labels) = training_set().batch(&indices, None, net.dtype()).unwrap();
    let vars = net.store().trainable().into_iter().map(|(_, v)| v).collect();
    let mut opt = Sgd::new(vars, 0.9, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut losses = Vec::new();
    for _ in 0..200 {
        let loss = quantizer_loss(&net, &classifier, &x, &labels, &config, &mut rng).unwrap();
        losses.push(loss.total.to_scalar::<f32>().unwrap() as f64);
        opt.step(&loss.total.backward().unwrap(), 0.05).unwrap();
    }
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best <= 0.5 * losses[0], "loss went from {} to at best {best}", losses[0]);
}

/// One disc of fixed colors on a plain background.
fn disc(cy: f32, cx: f32) -> RgbImage {
    RgbImage::from_fn(SIDE, SIDE, |r, c| {
        let (dy, dx) = (r as f32 + 0.5 - cy, c as f32 + 0.5 - cx);
        if dy * dy + dx * dx < 36.0 {
            [0.9, 0.2, 0.1]
        } else {
            [0.1, 0.3, 0.7]
        }
    })
}

#[test]
fn cam_follows_a_translated_object() {
    let classifier = localizing();
    let held_out = evaluate_top1(classifier, &shapes(25, SIDE, 5).unwrap(), 50).unwrap();
    assert!(held_out > 0.7, "held-out accuracy {held_out}");
    // feature cells of ResNet18 span eight pixels
    let cell = Architecture::ResNet18.downsampling() as i64;
    let mut moves = Vec::new();
    for cy in [8.0, 12.0, 16.0, 24.0] {
        for cx in [7.0, 10.0, 13.0, 16.0] {
            let a = class_activation_map(classifier, &disc(cy, cx), 1).unwrap().argmax();
            let b = class_activation_map(classifier, &disc(cy, cx + 8.0), 1).unwrap().argmax();
            moves.push((b.0 as i64 - a.0 as i64, b.1 as i64 - a.1 as i64));
        }
    }
    let followed = moves.iter().filter(|(dr, dc)| dr.abs() <= cell && (dc - 8).abs() <= cell).count();
    assert!(followed * 4 >= moves.len() * 3, "argmax moves {moves:?}");
}
