use super::*;
use crate::data::{rotated_videos, DigitSynth, ImageDataset, VideoDataset};
use crate::engine::{SeededRng, Tensor4};
use crate::error::Error;
use crate::model::{ModelConfig, TwoStreamNet};
use crate::par::Execution;

fn videos(count: usize, seed: u64) -> VideoDataset<f64> {
    let synth = DigitSynth {
        size: 10,
        glyph_box: 7.0,
    };
    let (images, labels) = synth.dataset::<f64>(count, seed);
    let ds = ImageDataset::new(images, labels, 10).unwrap();
    rotated_videos(&ds, 3, 18.0, Execution::Sequential).unwrap()
}

fn model(seed: u64) -> TwoStreamNet<f64> {
    let cfg = ModelConfig {
        channels: 3,
        enc_kernel: 3,
        dec_kernel: 3,
        input_channels: 1,
    };
    TwoStreamNet::glorot(cfg, &mut SeededRng::new(seed)).unwrap()
}

fn cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        frames: 3,
        seed: 5,
        adam: AdamConfig::with_lr(0.01),
        deterministic: true,
        ..TrainConfig::default()
    }
}

fn fresh(seed: u64, c: &TrainConfig) -> Checkpoint<f64> {
    Checkpoint::fresh(model(seed), None, c.adam, c.seed)
}

#[test]
fn zero_lr_on_full_batch_keeps_loss_constant() {
    let ds = videos(6, 1);
    let c = TrainConfig {
        batch_size: 6,
        epochs: 4,
        adam: AdamConfig::with_lr(0.0),
        ..cfg()
    };
    let run = train_unsupervised(fresh(2, &c), &ds, &c).unwrap();
    let t = run.log.totals();
    assert_eq!(t.len(), 4);
    // Each epoch visits the batch in a new order, so sums may differ in the last bits.
    assert!(t.iter().all(|&v| (v - t[0]).abs() <= 1e-12 * t[0].abs()));
    assert_eq!(run.checkpoint.net, model(2));
}

#[test]
fn batch_loss_matches_one_batched_pass() {
    let ds = videos(5, 3);
    let net = model(4);
    let idx = [4, 0, 2];
    let lv = batch_loss_and_grads(&net, &ds, &idx, 3, Default::default(), Execution::Sequential)
        .unwrap();
    let direct = net.loss(&ds.batch(&idx, 3), Default::default()).unwrap();
    assert!((lv.total - direct).abs() < 1e-12);
    let whole = net.loss_and_grads(&ds.batch(&idx, 3), Default::default()).unwrap();
    for (a, b) in lv.grads.iter().zip(&whole.grads) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-12);
    }
}

#[test]
fn parallel_and_sequential_are_bit_identical() {
    let ds = videos(8, 3);
    let seq = cfg();
    let par = TrainConfig {
        deterministic: false,
        ..cfg()
    };
    let a = train_unsupervised(fresh(1, &seq), &ds, &seq).unwrap();
    let b = train_unsupervised(fresh(1, &par), &ds, &par).unwrap();
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.log.totals(), b.log.totals());
}

#[test]
fn same_seed_same_trace_and_checkpoint() {
    let ds = videos(8, 3);
    let c = cfg();
    let a = train_unsupervised(fresh(1, &c), &ds, &c).unwrap();
    let b = train_unsupervised(fresh(1, &c), &ds, &c).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());
    assert_eq!(a.log.rows.len(), 4);
    assert!(a.log.rows.iter().all(|r| r.wall_ms == 0));
}

#[test]
fn resume_matches_unbroken_run() {
    let ds = videos(10, 7);
    let full = TrainConfig {
        epochs: 3,
        ..cfg()
    };
    let unbroken = train_unsupervised(fresh(3, &full), &ds, &full).unwrap();

    let first = TrainConfig {
        max_updates: Some(4),
        ..full.clone()
    };
    let part = train_unsupervised(fresh(3, &first), &ds, &first).unwrap();
    let bytes = part.checkpoint.to_bytes().unwrap();
    let reloaded = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    let rest = train_unsupervised(reloaded, &ds, &full).unwrap();

    let mut joined = part.log.clone();
    joined.extend(rest.log);
    assert_eq!(joined, unbroken.log);
    assert_eq!(rest.checkpoint, unbroken.checkpoint);
}

#[test]
fn divergence_returns_last_good_checkpoint() {
    let ds = videos(4, 1);
    let c = TrainConfig {
        batch_size: 2,
        epochs: 1,
        ..cfg()
    };
    let mut start = fresh(1, &c);
    start.net.dec.bias.fill(f64::INFINITY);
    match train_unsupervised(start.clone(), &ds, &c) {
        Err(TrainError::Diverged {
            step, last_good, ..
        }) => {
            assert_eq!(step, 1);
            assert_eq!(*last_good, start);
        }
        other => panic!("expected divergence, got {:?}", other.map(|r| r.log)),
    }
}

#[test]
fn short_sequences_are_rejected() {
    let ds = videos(2, 1);
    let c = TrainConfig {
        frames: 4,
        ..cfg()
    };
    assert!(matches!(
        train_unsupervised(fresh(1, &c), &ds, &c),
        Err(TrainError::Failed(Error::Config(_)))
    ));
}

#[test]
fn training_reduces_loss() {
    let ds = videos(16, 2);
    let c = TrainConfig {
        epochs: 10,
        ..cfg()
    };
    let run = train_unsupervised(fresh(5, &c), &ds, &c).unwrap();
    let (head, tail) = (run.log.head_mean(4).unwrap(), run.log.tail_mean(4).unwrap());
    assert!(tail < head, "loss {head} -> {tail}");
}

#[test]
fn single_class_finetune_reaches_full_accuracy() {
    let mut ds = videos(8, 4);
    // Relabel everything as class 1 of a 2-class problem.
    let frames: Vec<Vec<Tensor4<f64>>> = (0..ds.len()).map(|i| ds.video(i)).collect();
    let mut one = VideoDataset::empty(3, 1, 10, 10, 2);
    for (i, f) in frames.iter().enumerate() {
        one.push(f, 1, ds.meta()[i]).unwrap();
    }
    ds = one;
    let c = TrainConfig {
        epochs: 15,
        adam: AdamConfig::with_lr(0.05),
        ..cfg()
    };
    let start = with_head(model(1), 2, c.adam, c.seed).unwrap();
    let run = finetune_supervised(start, &ds, Some(&ds), &c).unwrap();
    let last = run.log.epochs.last().unwrap();
    assert_eq!(last.train_accuracy, 1.0);
    assert_eq!(last.val_accuracy, Some(1.0));
    assert_eq!(run.log.epochs.len(), 15);
}

#[test]
fn finetune_rejects_out_of_range_labels() {
    let ds = videos(4, 1);
    let c = cfg();
    let start = with_head(model(1), 3, c.adam, c.seed).unwrap();
    assert!(matches!(
        finetune_supervised(start, &ds, None, &c),
        Err(TrainError::Failed(Error::Data(_)))
    ));
}

#[test]
fn finetune_parallel_matches_sequential() {
    let ds = videos(6, 9);
    let seq = cfg();
    let par = TrainConfig {
        deterministic: false,
        ..cfg()
    };
    let a = finetune_supervised(with_head(model(2), 10, seq.adam, 1).unwrap(), &ds, None, &seq).unwrap();
    let b = finetune_supervised(with_head(model(2), 10, par.adam, 1).unwrap(), &ds, None, &par).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax::<f64>(&[0.0; 4]), 0);
}
