use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::data::VideoDataset;
use crate::engine::{NodeId, Real, SeededRng, Tape, Tensor4};
use crate::error::{Error, Result};
use crate::model::{classify, collect_grads, ClassifierHead, TwoStreamNet};
use crate::par::{map_indexed, Execution};

use super::adam::{clip_global_norm, AdamConfig};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::unsupervised::{check_dataset, epoch_order, mean_grads, TrainError};

/// Network plus a zero-initialised head, ready for supervised training.
pub fn with_head<T: Real>(net: TwoStreamNet<T>, classes: usize, adam: AdamConfig, seed: u64) -> Result<Checkpoint<T>> {
    let head = ClassifierHead::zeros(net.config.channels, classes)?;
    Ok(Checkpoint::fresh(net, Some(head), adam, seed))
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Real>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

struct SampleResult<T> {
    loss: f64,
    predicted: usize,
    grads: Vec<Tensor4<T>>,
}

fn sample_xent<T: Real>(
    net: &TwoStreamNet<T>,
    head: &ClassifierHead<T>,
    frames: &[Tensor4<T>],
    label: usize,
) -> Result<SampleResult<T>> {
    let mut tape = Tape::new();
    let bn = net.bind(&mut tape, true);
    let bh = head.bind(&mut tape, true);
    let xs: Vec<NodeId> = frames.iter().map(|f| tape.constant(f.clone())).collect();
    let scores = classify(&mut tape, &bn, bh, &xs)?;
    let loss = tape.softmax_xent(scores, &[label])?;
    let grads = tape.backward(loss)?;
    let mut ids = bn.ids().to_vec();
    ids.extend([bh.0, bh.1]);
    Ok(SampleResult {
        loss: tape.value(loss).data()[0].as_f64(),
        predicted: argmax(tape.value(scores).data()),
        grads: collect_grads(&tape, &grads, &ids),
    })
}

/// Class scores of every video, one row per video.
pub fn predict_scores<T: Real>(
    net: &TwoStreamNet<T>,
    head: &ClassifierHead<T>,
    ds: &VideoDataset<T>,
    frames: usize,
    exec: Execution,
) -> Result<Vec<Vec<T>>> {
    map_indexed(ds.len(), exec, |i| {
        let mut tape = Tape::new();
        let bn = net.bind(&mut tape, false);
        let bh = head.bind(&mut tape, false);
        let xs: Vec<NodeId> = ds
            .batch(&[i], frames)
            .into_iter()
            .map(|f| tape.constant(f))
            .collect();
        let scores = classify(&mut tape, &bn, bh, &xs)?;
        Ok(tape.value(scores).data().to_vec())
    })
    .into_iter()
    .collect()
}

pub fn predict_classes<T: Real>(
    net: &TwoStreamNet<T>,
    head: &ClassifierHead<T>,
    ds: &VideoDataset<T>,
    frames: usize,
    exec: Execution,
) -> Result<Vec<usize>> {
    Ok(predict_scores(net, head, ds, frames, exec)?
        .iter()
        .map(|s| argmax(s))
        .collect())
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / predicted.len() as f64
}

/// Accuracy summary of one fine-tuning epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochAccuracy {
    pub epoch: u64,
    /// Updates completed at the end of the epoch.
    pub step: u64,
    pub train_loss: f64,
    /// Accuracy of the predictions made during the epoch's forward passes.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FinetuneLog {
    pub epochs: Vec<EpochAccuracy>,
}

impl FinetuneLog {
    pub const HEADER: &'static str = "epoch,step,train_loss,train_accuracy,val_accuracy,wall_ms";

    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for e in &self.epochs {
            let val = e.val_accuracy.map_or(String::new(), |v| format!("{v:e}"));
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{},{}",
                e.epoch, e.step, e.train_loss, e.train_accuracy, val, e.wall_ms
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneRun<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: FinetuneLog,
}

/// End-to-end supervised training of the recurrent stream and its head.
pub fn finetune_supervised<T: Real>(
    start: Checkpoint<T>,
    train: &VideoDataset<T>,
    val: Option<&VideoDataset<T>>,
    cfg: &TrainConfig,
) -> std::result::Result<FinetuneRun<T>, TrainError<T>> {
    check_dataset(&start, train, cfg)?;
    let classes = match &start.head {
        Some(h) => h.classes(),
        None => return Err(Error::config("fine-tuning needs a classifier head").into()),
    };
    for ds in std::iter::once(train).chain(val) {
        if let Some(&bad) = ds.labels().iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for a {classes}-class head")).into());
        }
    }
    if let Some(v) = val {
        if v.frames() < cfg.frames {
            return Err(Error::config("validation videos are shorter than the training length").into());
        }
    }
    let n = train.len();
    let bpe = cfg.batches_per_epoch(n);
    let total = cfg.total_updates(n);
    let base = SeededRng::from_state(start.rng);
    let exec = cfg.execution();
    let clock = Instant::now();
    let mut ck = start;
    let mut log = FinetuneLog::default();
    let mut order: (u64, Vec<usize>) = (u64::MAX, Vec::new());
    let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);

    while ck.step < total {
        let s = ck.step;
        let epoch = s / bpe;
        if order.0 != epoch {
            order = (epoch, epoch_order(&base, epoch, n));
        }
        let b = (s % bpe) as usize * cfg.batch_size;
        let idx = &order.1[b..(b + cfg.batch_size).min(n)];
        let head = ck.head.as_ref().expect("checked above");
        let parts = map_indexed(idx.len(), exec, |i| {
            let v = idx[i];
            sample_xent(&ck.net, head, &train.batch(&[v], cfg.frames), train.labels()[v])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let batch_loss = parts.iter().map(|p| p.loss).sum::<f64>() / parts.len() as f64;
        if !batch_loss.is_finite() {
            return Err(TrainError::Diverged {
                step: s + 1,
                reason: format!("loss is {batch_loss}"),
                last_good: Box::new(ck),
                log: Default::default(),
            });
        }
        loss_sum += batch_loss * parts.len() as f64;
        seen += parts.len();
        hits += parts
            .iter()
            .zip(idx)
            .filter(|(p, &v)| p.predicted == train.labels()[v])
            .count();
        let mut grads = mean_grads(parts.into_iter().map(|p| p.grads).collect());
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        if let Err(e) = ck.apply(&grads) {
            return Err(TrainError::Diverged {
                step: s + 1,
                reason: e.to_string(),
                last_good: Box::new(ck),
                log: Default::default(),
            });
        }
        let epoch_done = ck.step.is_multiple_of(bpe) || ck.step == total;
        if epoch_done {
            let head = ck.head.as_ref().expect("checked above");
            let val_accuracy = match val {
                Some(v) => Some(accuracy(
                    &predict_classes(&ck.net, head, v, cfg.frames, exec)?,
                    v.labels(),
                )),
                None => None,
            };
            log.epochs.push(EpochAccuracy {
                epoch,
                step: ck.step,
                train_loss: loss_sum / seen as f64,
                train_accuracy: hits as f64 / seen as f64,
                val_accuracy,
                wall_ms: if cfg.deterministic {
                    0
                } else {
                    clock.elapsed().as_millis() as u64
                },
            });
            (loss_sum, hits, seen) = (0.0, 0, 0);
        }
    }
    Ok(FinetuneRun { checkpoint: ck, log })
}
