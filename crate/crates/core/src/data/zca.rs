//! ZCA whitening of flattened frames.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::VideoDataset;
use crate::engine::{Real, Shape4, Tensor4};
use crate::error::{Error, Result};

/// Eigenvalue floor used when fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZcaEpsilon {
    Absolute(f64),
    /// Multiple of the mean covariance eigenvalue.
    RelativeToMean(f64),
}

impl Default for ZcaEpsilon {
    fn default() -> Self {
        ZcaEpsilon::RelativeToMean(1e-2)
    }
}

/// `x -> (x - mean) * whiten`, fit on the rows of a data matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ZcaTransform {
    pub mean: DVector<f64>,
    /// Symmetric D x D matrix `E diag((lambda + eps)^-1/2) E^T`.
    pub whiten: DMatrix<f64>,
    /// Resolved absolute floor.
    pub epsilon: f64,
}

fn flatten<T: Real>(frames: &Tensor4<T>) -> DMatrix<f64> {
    let s = frames.shape();
    DMatrix::from_row_iterator(s.n(), s.sample(), frames.data().iter().map(|v| v.as_f64()))
}

impl ZcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits on every sample of `frames`, each flattened to `C*H*W` values.
    pub fn fit<T: Real>(frames: &Tensor4<T>, epsilon: ZcaEpsilon) -> Result<Self> {
        if !frames.is_finite() {
            return Err(Error::Data("ZCA input contains non-finite values".into()));
        }
        Self::fit_matrix(&flatten(frames), epsilon)
    }

    /// Fits on the rows of `data` (samples x dims).
    pub fn fit_matrix(data: &DMatrix<f64>, epsilon: ZcaEpsilon) -> Result<Self> {
        let (n, d) = data.shape();
        if n == 0 || d == 0 {
            return Err(Error::Data("ZCA needs a nonempty data matrix".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("ZCA input contains non-finite values".into()));
        }
        let mean = data.row_mean().transpose();
        let mut centred = data.clone();
        for mut row in centred.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = centred.transpose() * &centred / n as f64;
        let eig = SymmetricEigen::new(cov);
        let eps = match epsilon {
            ZcaEpsilon::Absolute(e) => e,
            ZcaEpsilon::RelativeToMean(r) => r * eig.eigenvalues.mean(),
        };
        if eps <= 0.0 && n <= d {
            return Err(Error::config(format!(
                "{n} samples cannot whiten {d} dimensions without a positive epsilon"
            )));
        }
        let scales = eig.eigenvalues.map(|l| {
            let v = l.max(0.0) + eps;
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        });
        let e = &eig.eigenvectors;
        let mut whiten = e * DMatrix::from_diagonal(&scales) * e.transpose();
        // Symmetrise away rounding noise.
        whiten = (&whiten + whiten.transpose()) * 0.5;
        Ok(ZcaTransform {
            mean,
            whiten,
            epsilon: eps,
        })
    }

    pub fn apply_matrix(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::shape(format!(
                "data has {} dims, transform was fit on {}",
                data.ncols(),
                self.dim()
            )));
        }
        let mut centred = data.clone();
        for mut row in centred.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centred * &self.whiten)
    }

    /// Whitens each sample of `frames` and restores the frame layout.
    pub fn apply<T: Real>(&self, frames: &Tensor4<T>) -> Result<Tensor4<T>> {
        let s: Shape4 = frames.shape();
        let out = self.apply_matrix(&flatten(frames))?;
        let data = out.transpose().iter().map(|&v| T::lit(v)).collect();
        Tensor4::from_vec(s, data)
    }

    /// Whitens every frame of `ds` in place.
    pub fn apply_videos<T: Real>(&self, ds: &mut VideoDataset<T>) -> Result<()> {
        let white = self.apply(&ds.all_frames())?;
        ds.raw_mut().copy_from_slice(white.data());
        Ok(())
    }
}
