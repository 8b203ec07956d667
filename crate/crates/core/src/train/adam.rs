use crate::engine::{Real, Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor4<T>>,
    pub v: Vec<Tensor4<T>>,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = Shape4>) -> Self {
        let m: Vec<Tensor4<T>> = shapes.into_iter().map(Tensor4::zeros).collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update. Nothing is modified when any gradient
    /// is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor4<T>], grads: &[Tensor4<T>], names: &[&str]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::shape(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).copied().unwrap_or("parameter");
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(format!(
                    "{name}: parameter {}, gradient {}, moments {}",
                    p.shape(),
                    g.shape(),
                    self.m[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient for {name}")));
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let corr1 = T::lit(1.0 / (1.0 - c.beta1.powi(t)));
        let corr2 = T::lit(1.0 / (1.0 - c.beta2.powi(t)));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &g), (m, v)) in it {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * corr1;
                let v_hat = *v * corr2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor4<T>],
    grads: &[Tensor4<T>],
    state: &mut AdamState<T>,
    names: &[&str],
) -> Result<()> {
    state.step(params, grads, names)
}

/// Global L2 norm of a gradient list.
pub fn global_norm<T: Real>(grads: &[Tensor4<T>]) -> f64 {
    grads.iter().map(|g| g.sum_sq().as_f64()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor4<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor4<f64> {
        Tensor4::full(Shape4::new(1, 1, 1, 1), v)
    }

    /// Independent scalar Adam.
    fn oracle(theta: f64, grads: &[f64], c: AdamConfig) -> f64 {
        let (mut m, mut v, mut th) = (0.0, 0.0, theta);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mh = m / (1.0 - c.beta1.powi(t));
            let vh = v / (1.0 - c.beta2.powi(t));
            th -= c.lr * mh / (vh.sqrt() + c.eps);
        }
        th
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar(0.7);
        let mut st = AdamState::new(AdamConfig::default(), [p.shape()]);
        st.step(&mut [&mut p], &[scalar(0.0)], &["p"]).unwrap();
        assert_eq!(p.data()[0], 0.7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(AdamConfig::default(), [p.shape()]);
        adam_step(&mut [&mut p], &[scalar(1.0)], &mut st, &["p"]).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn matches_scalar_oracle() {
        let c = AdamConfig::with_lr(0.01);
        for grads in [vec![0.5, 0.5], vec![2.0, -1.0, 0.25, 3.0]] {
            let mut p = scalar(1.5);
            let mut st = AdamState::new(c, [p.shape()]);
            for &g in &grads {
                st.step(&mut [&mut p], &[scalar(g)], &["p"]).unwrap();
            }
            assert!((p.data()[0] - oracle(1.5, &grads, c)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let mut a = scalar(1.0);
        let mut b = scalar(2.0);
        let mut st = AdamState::new(AdamConfig::default(), [a.shape(), b.shape()]);
        let err = st
            .step(&mut [&mut a, &mut b], &[scalar(1.0), scalar(f64::NAN)], &["a", "cell.w"])
            .unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains("cell.w")), "{err}");
        assert_eq!((a.data()[0], b.data()[0], st.t), (1.0, 2.0, 0));
    }

    #[test]
    fn update_is_per_tensor_independent() {
        // Order of registration does not leak between tensors.
        let c = AdamConfig::default();
        let (ga, gb) = (scalar(0.3), scalar(-2.0));
        let (mut a1, mut b1) = (scalar(1.0), scalar(-1.0));
        let mut s1 = AdamState::new(c, [a1.shape(), b1.shape()]);
        s1.step(&mut [&mut a1, &mut b1], &[ga.clone(), gb.clone()], &[]).unwrap();
        let (mut a2, mut b2) = (scalar(1.0), scalar(-1.0));
        let mut s2 = AdamState::new(c, [b2.shape(), a2.shape()]);
        s2.step(&mut [&mut b2, &mut a2], &[gb, ga], &[]).unwrap();
        assert_eq!((a1, b1), (a2, b2));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![scalar(3.0), scalar(4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let mut small = vec![scalar(0.1)];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data()[0], 0.1);
    }
}
