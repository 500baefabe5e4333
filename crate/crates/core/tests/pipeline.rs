//! Training, checkpoint and embedding behaviour on tiny models.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavecls_core::{
    extract_embeddings, load_checkpoint, save_checkpoint, train, Checkpoint, EncoderConfig, Granularity, HeadBlock,
    HeadConfig, Model, ModelConfig, Segment, TrainConfig,
};

const SEG: usize = 64;

fn tiny_config(n_classes: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            n_layers: 2,
            channels: 4,
            kernel: 2,
            seg_len: SEG,
        },
        head: HeadConfig {
            blocks: vec![HeadBlock::new(6, 3, 2, 2)],
            n_classes,
        },
    }
}

/// Class 0 is a sine, class 1 is uniform noise.
fn sine_or_noise(n: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let phase: f32 = rng.random_range(0.0..TAU);
            let samples = (0..SEG)
                .map(|t| {
                    if label == 0 {
                        0.5 * (TAU * t as f32 / 16.0 + phase).sin()
                    } else {
                        rng.random_range(-0.5..0.5)
                    }
                })
                .collect();
            Segment {
                parent_track_id: format!("track{}", i / 4),
                offset: (i % 4) * SEG,
                samples,
                label,
            }
        })
        .collect()
}

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("artist{i}")).collect()
}

#[test]
fn frozen_model_stops_after_patience_epochs() {
    let data = sine_or_noise(8, 1);
    let cfg = TrainConfig {
        learning_rate: 1e-30,
        patience: 1,
        max_epochs: 50,
        batch_size: 4,
        deterministic: true,
        ..TrainConfig::default()
    };
    let model = Model::build(&tiny_config(2), 3).unwrap();
    let out = train(model, &classes(2), &data, &data, &cfg).unwrap();
    assert_eq!(out.history.epochs.len(), 2);
    assert!(out.history.stopped_early);
    assert_eq!(out.history.best_epoch, 1);
    assert_eq!(out.best.meta.epoch, 1);
}

#[test]
fn max_epochs_bounds_training() {
    let data = sine_or_noise(8, 2);
    let cfg = TrainConfig {
        patience: 100,
        max_epochs: 3,
        deterministic: true,
        ..TrainConfig::default()
    };
    let out = train(Model::build(&tiny_config(2), 4).unwrap(), &classes(2), &data, &data, &cfg).unwrap();
    assert_eq!(out.history.epochs.len(), 3);
    assert!(!out.history.stopped_early);
    let epochs: Vec<usize> = out.history.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [1, 2, 3]);
}

#[test]
fn deterministic_training_repeats_exactly() {
    let data = sine_or_noise(12, 5);
    let cfg = TrainConfig {
        batch_size: 5,
        max_epochs: 4,
        seed: 11,
        deterministic: true,
        ..TrainConfig::default()
    };
    let run = || {
        let out = train(Model::build(&tiny_config(2), 6).unwrap(), &classes(2), &data, &data, &cfg).unwrap();
        (out.best.to_bytes().unwrap(), out.history.to_json().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn full_batch_loss_mostly_non_increasing() {
    // statistical: at least 19 of 20 seeds
    let data = sine_or_noise(8, 7);
    let mut good = 0;
    for seed in 0..20 {
        let cfg = TrainConfig {
            batch_size: data.len(),
            learning_rate: 1e-3,
            patience: 100,
            max_epochs: 5,
            seed,
            deterministic: true,
            ..TrainConfig::default()
        };
        let out = train(Model::build(&tiny_config(2), seed).unwrap(), &classes(2), &data, &data, &cfg).unwrap();
        let losses: Vec<f64> = out.history.epochs.iter().map(|e| e.train_loss).collect();
        if losses.windows(2).all(|w| w[1] <= w[0]) {
            good += 1;
        }
    }
    assert!(good >= 19, "only {good}/20 seeds had non-increasing loss");
}

#[test]
fn saved_checkpoint_predicts_identically() {
    let model = Model::build(&tiny_config(3), 8).unwrap();
    let ckpt = Checkpoint {
        model,
        classes: classes(3),
        meta: Default::default(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.classes, ckpt.classes);
    for s in sine_or_noise(6, 9) {
        let x = ckpt.model.segment_tensor(&s.samples).unwrap();
        let a = ckpt.model.forward(&x).unwrap();
        let b = loaded.model.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn embeddings_are_the_logits() {
    let ckpt = Checkpoint {
        model: Model::build(&tiny_config(3), 10).unwrap(),
        classes: classes(3),
        meta: Default::default(),
    };
    let mut segs = sine_or_noise(6, 11);
    segs[5].samples = segs[4].samples.clone();
    let set = extract_embeddings(&ckpt, &segs, 3, Granularity::Segment).unwrap();
    assert_eq!(set.len(), 6);
    assert!(set.points.iter().all(|p| p.len() == 3));
    assert_eq!(set.points[4], set.points[5]);
    for (s, p) in segs.iter().zip(&set.points) {
        let logits = ckpt.model.forward(&ckpt.model.segment_tensor(&s.samples).unwrap()).unwrap();
        assert_eq!(logits.data(), &p[..]);
    }
    assert!(extract_embeddings(&ckpt, &segs, 4, Granularity::Segment).is_err());
}

#[test]
fn track_embeddings_average_segments() {
    let ckpt = Checkpoint {
        model: Model::build(&tiny_config(2), 12).unwrap(),
        classes: classes(2),
        meta: Default::default(),
    };
    let segs = sine_or_noise(8, 13);
    let per_seg = extract_embeddings(&ckpt, &segs, 2, Granularity::Segment).unwrap();
    let per_track = extract_embeddings(&ckpt, &segs, 2, Granularity::Track).unwrap();
    assert_eq!(per_track.ids, ["track0", "track1"]);
    for (k, id) in per_track.ids.iter().enumerate() {
        let rows: Vec<&Vec<f32>> = per_seg
            .ids
            .iter()
            .zip(&per_seg.points)
            .filter(|(i, _)| i.starts_with(&format!("{id}@")))
            .map(|(_, p)| p)
            .collect();
        for c in 0..2 {
            let mean = rows.iter().map(|r| r[c] as f64).sum::<f64>() / rows.len() as f64;
            assert!((per_track.points[k][c] as f64 - mean).abs() < 1e-6);
        }
    }
}
