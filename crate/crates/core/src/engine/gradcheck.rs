use super::real::Real;
use super::rng::SeededRng;
use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates probed per tensor; tensors this small or smaller are checked exhaustively.
    pub samples_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            samples_per_tensor: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per parameter tensor.
    pub per_tensor: Vec<f64>,
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Coordinates passed over because the two probes straddled a kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` gradients against central differences of `loss`.
///
/// `loss` must be a deterministic function of the parameter list. Each probed
/// coordinate is perturbed by `±eps` in place and restored bit-exactly.
pub fn grad_check<T, F>(
    mut loss: F,
    params: &mut [Tensor4<T>],
    analytic: &[Tensor4<T>],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&[Tensor4<T>]) -> Result<T>,
{
    grad_check_piecewise(|p| Ok((loss(p)?, Vec::new())), params, analytic, cfg)
}

/// [`grad_check`] for piecewise-smooth losses. `loss` also returns a branch
/// pattern (see [`crate::engine::Tape::branch_pattern`]); a coordinate whose
/// `+eps` and `-eps` probes land on different pieces has no valid central
/// difference, so it is skipped and the next sampled coordinate takes its place.
pub fn grad_check_piecewise<T, F>(
    mut loss: F,
    params: &mut [Tensor4<T>],
    analytic: &[Tensor4<T>],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&[Tensor4<T>]) -> Result<(T, Vec<bool>)>,
{
    if params.len() != analytic.len() {
        return Err(Error::contract(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(analytic).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "parameter {i} is {} but its gradient is {}",
                p.shape(),
                g.shape()
            )));
        }
    }
    let mut rng = SeededRng::new(cfg.seed);
    let eps = T::lit(cfg.eps);
    let two_eps = T::lit(2.0 * cfg.eps);
    let mut per_tensor = Vec::with_capacity(params.len());
    let (mut coordinates, mut skipped) = (0, 0);

    for ti in 0..params.len() {
        let n = params[ti].len();
        let order = if n <= cfg.samples_per_tensor {
            (0..n).collect()
        } else {
            rng.permutation(n)
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        for c in order {
            if checked == cfg.samples_per_tensor {
                break;
            }
            let orig = params[ti].data()[c];
            params[ti].data_mut()[c] = orig + eps;
            let plus = loss(params);
            params[ti].data_mut()[c] = orig - eps;
            let minus = loss(params);
            params[ti].data_mut()[c] = orig;
            let ((plus, p_branch), (minus, m_branch)) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite loss while probing tensor {ti} coordinate {c}"
                )));
            }
            if p_branch != m_branch {
                skipped += 1;
                continue;
            }
            let numeric = ((plus - minus) / two_eps).as_f64();
            let a = analytic[ti].data()[c].as_f64();
            worst = worst.max(relative_error(a, numeric));
            checked += 1;
        }
        coordinates += checked;
        per_tensor.push(worst);
    }
    let max_rel_error = per_tensor.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_rel_error,
        coordinates,
        skipped,
    })
}
