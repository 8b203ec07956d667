use std::fmt::Debug;
use std::time::Instant;

use crate::data::VideoDataset;
use crate::engine::{Real, SeededRng, Tensor4};
use crate::error::{Error, Result};
use crate::model::{LossValues, TwoStreamNet, WtaRule};
use crate::par::{map_indexed, Execution};

use super::adam::clip_global_norm;
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::metrics::{MetricsLog, MetricsRow};

/// A failed run. Divergence keeps the state from before the bad update.
#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Debug> {
    #[error(transparent)]
    Failed(#[from] Error),
    #[error("training diverged at step {step}: {reason}")]
    Diverged {
        step: u64,
        reason: String,
        last_good: Box<Checkpoint<T>>,
        log: MetricsLog,
    },
}

impl<T: Debug> From<TrainError<T>> for Error {
    fn from(e: TrainError<T>) -> Self {
        match e {
            TrainError::Failed(e) => e,
            other => Error::Training(other.to_string()),
        }
    }
}

/// Final state and loss trace of a run.
#[derive(Clone, Debug)]
pub struct TrainRun<T> {
    pub checkpoint: Checkpoint<T>,
    pub log: MetricsLog,
}

/// Sums `parts` in order and scales by `1 / parts.len()`.
pub(crate) fn mean_grads<T: Real>(parts: Vec<Vec<Tensor4<T>>>) -> Vec<Tensor4<T>> {
    let inv = T::one() / T::from_usize(parts.len()).expect("nonzero count");
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one sample");
    for g in it {
        for (a, b) in acc.iter_mut().zip(&g) {
            a.add_assign(b).expect("matching gradient shapes");
        }
    }
    for a in &mut acc {
        a.scale_in_place(inv);
    }
    acc
}

/// Mean two-stream loss and gradient over the videos `indices`.
///
/// Each video is differentiated on its own and the results are reduced in
/// index order, so the answer does not depend on `exec`.
pub fn batch_loss_and_grads<T: Real>(
    net: &TwoStreamNet<T>,
    ds: &VideoDataset<T>,
    indices: &[usize],
    frames: usize,
    rule: WtaRule,
    exec: Execution,
) -> Result<LossValues<T>> {
    if indices.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    let parts = map_indexed(indices.len(), exec, |i| {
        net.loss_and_grads(&ds.batch(&indices[i..i + 1], frames), rule)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let inv = T::one() / T::from_usize(parts.len()).expect("nonzero count");
    let mean = |f: fn(&LossValues<T>) -> T| parts.iter().map(f).fold(T::zero(), |a, b| a + b) * inv;
    let (recon, pred, total) = (mean(|p| p.recon), mean(|p| p.pred), mean(|p| p.total));
    let grads = mean_grads(parts.into_iter().map(|p| p.grads).collect());
    Ok(LossValues {
        recon,
        pred,
        total,
        grads,
    })
}

/// Batch order of `epoch`; a pure function of the seed so runs can resume anywhere.
pub(crate) fn epoch_order(seed_state: &SeededRng, epoch: u64, len: usize) -> Vec<usize> {
    seed_state.fork(epoch + 1).permutation(len)
}

pub(crate) fn check_dataset<T: Real>(ck: &Checkpoint<T>, ds: &VideoDataset<T>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if ds.frames() < cfg.frames {
        return Err(Error::config(format!(
            "videos have {} frames, training asks for {}",
            ds.frames(),
            cfg.frames
        )));
    }
    let c = ds.frame_shape().c();
    if c != ck.net.config.input_channels {
        return Err(Error::shape(format!(
            "videos have {c} channels, model expects {}",
            ck.net.config.input_channels
        )));
    }
    Ok(())
}

/// Backpropagation through time on the two-stream loss, continuing from
/// `start.step` until the update budget of `cfg` is spent.
pub fn train_unsupervised<T: Real>(
    start: Checkpoint<T>,
    ds: &VideoDataset<T>,
    cfg: &TrainConfig,
) -> std::result::Result<TrainRun<T>, TrainError<T>> {
    check_dataset(&start, ds, cfg)?;
    let n = ds.len();
    let bpe = cfg.batches_per_epoch(n);
    let total = cfg.total_updates(n);
    let base = SeededRng::from_state(start.rng);
    let exec = cfg.execution();
    let clock = Instant::now();
    let mut ck = start;
    let mut log = MetricsLog::default();
    let mut order: (u64, Vec<usize>) = (u64::MAX, Vec::new());

    while ck.step < total {
        let s = ck.step;
        let epoch = s / bpe;
        if order.0 != epoch {
            order = (epoch, epoch_order(&base, epoch, n));
        }
        let b = (s % bpe) as usize * cfg.batch_size;
        let idx = &order.1[b..(b + cfg.batch_size).min(n)];
        let lv = batch_loss_and_grads(&ck.net, ds, idx, cfg.frames, cfg.wta_rule, exec)?;
        let (recon, pred, loss) = (lv.recon.as_f64(), lv.pred.as_f64(), lv.total.as_f64());
        if !loss.is_finite() {
            return Err(TrainError::Diverged {
                step: s + 1,
                reason: format!("loss is {loss}"),
                last_good: Box::new(ck),
                log,
            });
        }
        let mut grads = lv.grads;
        if let Some(c) = cfg.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        if let Err(e) = ck.apply(&grads) {
            return Err(TrainError::Diverged {
                step: s + 1,
                reason: e.to_string(),
                last_good: Box::new(ck),
                log,
            });
        }
        if s.is_multiple_of(cfg.log_every as u64) {
            log.push(MetricsRow {
                step: s + 1,
                epoch,
                loss_recon: recon,
                loss_pred: pred,
                loss_total: loss,
                wall_ms: if cfg.deterministic {
                    0
                } else {
                    clock.elapsed().as_millis() as u64
                },
            });
        }
    }
    Ok(TrainRun { checkpoint: ck, log })
}
