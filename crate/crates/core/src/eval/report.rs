use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Accuracy and confusion counts of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub error_rate: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Per-video vote histograms when predictions came from voting.
    pub votes: Option<Vec<Vec<u64>>>,
}

pub fn report(preds: &[usize], labels: &[usize], classes: usize) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("nothing to evaluate"));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Data(format!(
                "class {} out of range for {classes} classes",
                p.max(l)
            )));
        }
        confusion[l][p] += 1;
    }
    let hits: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = hits as f64 / preds.len() as f64;
    Ok(EvalReport {
        accuracy,
        error_rate: 1.0 - accuracy,
        confusion,
        votes: None,
    })
}

impl EvalReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn summary_line(&self) -> String {
        format!(
            "accuracy={:.4} error_rate={:.4} n={}",
            self.accuracy,
            self.error_rate,
            self.total()
        )
    }

    /// `true_class,predicted_class,count` rows for every cell, followed by
    /// the summary as `#` comments.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true_class,predicted_class,count\n");
        for (t, row) in self.confusion.iter().enumerate() {
            for (p, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{t},{p},{c}");
            }
        }
        let _ = writeln!(s, "# accuracy,{:e}", self.accuracy);
        let _ = writeln!(s, "# error_rate,{:e}", self.error_rate);
        s
    }
}
