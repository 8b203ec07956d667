use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "step,epoch,loss_recon,loss_pred,loss_total,wall_ms";

/// One logged update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    /// Updates completed, counting this one.
    pub step: u64,
    /// Zero-based epoch of the update.
    pub epoch: u64,
    pub loss_recon: f64,
    pub loss_pred: f64,
    pub loss_total: f64,
    /// Milliseconds since the run started; zero in deterministic mode.
    pub wall_ms: u64,
}

/// Per-update loss trace.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.rows.extend(other.rows);
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss_total).collect()
    }

    /// Mean of `loss_total` over the first `n` rows.
    pub fn head_mean(&self, n: usize) -> Option<f64> {
        mean(self.rows.iter().take(n).map(|r| r.loss_total))
    }

    /// Mean of `loss_total` over the last `n` rows.
    pub fn tail_mean(&self, n: usize) -> Option<f64> {
        let skip = self.rows.len().saturating_sub(n);
        mean(self.rows.iter().skip(skip).map(|r| r.loss_total))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            // `{:e}` round-trips f64 exactly.
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{:e},{}",
                r.step, r.epoch, r.loss_recon, r.loss_pred, r.loss_total, r.wall_ms
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == METRICS_HEADER => {}
            other => {
                return Err(Error::format(0, format!("unexpected metrics header {other:?}")));
            }
        }
        let mut log = MetricsLog::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| Error::Data(format!("metrics line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("field count"));
            }
            let num = |k: usize| f[k].trim().parse::<f64>().map_err(|_| bad("number"));
            let int = |k: usize| f[k].trim().parse::<u64>().map_err(|_| bad("integer"));
            log.push(MetricsRow {
                step: int(0)?,
                epoch: int(1)?,
                loss_recon: num(2)?,
                loss_pred: num(3)?,
                loss_total: num(4)?,
                wall_ms: int(5)?,
            });
        }
        Ok(log)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec((any::<u32>(), 0.0f64..1e6, -1e-3f64..10.0, any::<u16>()), 0..20)) {
            let mut log = MetricsLog::default();
            for (k, &(step, a, b, ms)) in vals.iter().enumerate() {
                log.push(MetricsRow { step: step as u64, epoch: k as u64, loss_recon: a, loss_pred: b, loss_total: a + b, wall_ms: ms as u64 });
            }
            prop_assert_eq!(MetricsLog::from_csv(&log.to_csv()).unwrap(), log);
        }
    }

    #[test]
    fn header_is_fixed() {
        let csv = MetricsLog::default().to_csv();
        assert_eq!(csv, "step,epoch,loss_recon,loss_pred,loss_total,wall_ms\n");
        assert!(MetricsLog::from_csv("a,b\n").is_err());
    }
}
