use crate::engine::SeededRng;
use crate::error::{Error, Result};

use super::features::FeatureMatrix;

/// Per-dimension z-scoring fit on a training split. Constant dimensions
/// are centred but not scaled.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &FeatureMatrix) -> Result<Self> {
        if x.rows == 0 {
            return Err(Error::Data("cannot standardize zero rows".into()));
        }
        if !x.is_finite() {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        let n = x.rows as f64;
        let mut mean = vec![0.0; x.dim];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.dim];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) * s;
        }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.dim != self.mean.len() {
            return Err(Error::shape(format!(
                "features have {} dims, standardizer was fit on {}",
                x.dim,
                self.mean.len()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows {
            self.apply_row(out.row_mut(i));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmConfig {
    /// L2 coefficient.
    pub reg: f64,
    pub epochs: usize,
    /// Initial step; step t is `eta0 / (1 + reg * eta0 * t)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            reg: 1e-4,
            epochs: 50,
            eta0: 0.01,
            seed: 0,
        }
    }
}

/// One-vs-rest linear classifier, `score_c = w_c . x + b_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    /// classes x dim, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub dim: usize,
    pub reg: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_f64(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl LinearSvm {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LinearSvm {
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            classes,
            dim,
            reg: 0.0,
        }
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::shape(format!(
                "feature vector has length {}, classifier expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok((0..self.classes)
            .map(|c| dot(self.class_weights(c), x) + self.bias[c])
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let s = self.scores(x)?;
        Ok((argmax_f64(&s), s))
    }

    pub fn predict_all(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        (0..x.rows).map(|i| self.predict(x.row(i)).map(|p| p.0)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded stochastic subgradient descent on the regularised one-vs-rest
/// hinge loss `reg/2 |w_c|^2 + mean_i max(0, 1 - y_ic (w_c . x_i + b_c))`.
pub fn svm_train(x: &FeatureMatrix, labels: &[usize], classes: usize, cfg: &SvmConfig) -> Result<LinearSvm> {
    if labels.len() != x.rows {
        return Err(Error::contract(format!(
            "{} labels for {} feature rows",
            labels.len(),
            x.rows
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    let distinct = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if classes < 2 || distinct < 2 {
        return Err(Error::contract(format!(
            "an SVM needs at least two classes, training labels contain {distinct}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data("features contain non-finite values".into()));
    }
    let mut svm = LinearSvm::zeros(classes, x.dim);
    svm.reg = cfg.reg;
    let base = SeededRng::new(cfg.seed);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        for i in base.fork(epoch as u64).permutation(x.rows) {
            let eta = cfg.eta0 / (1.0 + cfg.reg * cfg.eta0 * t as f64);
            t += 1;
            let row = x.row(i);
            let shrink = 1.0 - eta * cfg.reg;
            for c in 0..classes {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let w = &mut svm.weights[c * x.dim..(c + 1) * x.dim];
                let margin = y * (dot(w, row) + svm.bias[c]);
                if margin < 1.0 {
                    for (wk, xk) in w.iter_mut().zip(row) {
                        *wk = *wk * shrink + eta * y * xk;
                    }
                    svm.bias[c] += eta * y;
                } else {
                    w.iter_mut().for_each(|wk| *wk *= shrink);
                }
            }
        }
    }
    Ok(svm)
}

pub fn svm_predict(svm: &LinearSvm, x: &[f64]) -> Result<(usize, Vec<f64>)> {
    svm.predict(x)
}

/// Standardizer plus SVM, applied to raw features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub standardizer: Standardizer,
    pub svm: LinearSvm,
}

impl LinearClassifier {
    pub fn fit(x: &FeatureMatrix, labels: &[usize], classes: usize, cfg: &SvmConfig) -> Result<Self> {
        let standardizer = Standardizer::fit(x)?;
        let svm = svm_train(&standardizer.apply(x)?, labels, classes, cfg)?;
        Ok(LinearClassifier { standardizer, svm })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.svm.dim {
            return Err(Error::shape(format!(
                "feature vector has length {}, classifier expects {}",
                x.len(),
                self.svm.dim
            )));
        }
        let mut row = x.to_vec();
        self.standardizer.apply_row(&mut row);
        Ok(self.svm.predict(&row)?.0)
    }

    pub fn predict_all(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        (0..x.rows).map(|i| self.predict(x.row(i))).collect()
    }
}
