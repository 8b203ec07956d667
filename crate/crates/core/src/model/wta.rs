//! Spatial winner-take-all: keep one value per (sample, channel) map.

use crate::engine::{Real, Tensor4};
use crate::error::Result;

/// How gradients pass back through the winner-take-all layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WtaRule {
    /// Route the upstream gradient through the forward winner only.
    #[default]
    Mask,
    /// Apply winner-take-all to the upstream gradient itself.
    Literal,
}

impl WtaRule {
    pub fn as_str(self) -> &'static str {
        match self {
            WtaRule::Mask => "mask",
            WtaRule::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mask" => Some(WtaRule::Mask),
            "literal" => Some(WtaRule::Literal),
            _ => None,
        }
    }
}

/// Index of the first maximum in row-major order.
fn argmax<T: Real>(plane: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in plane.iter().enumerate().skip(1) {
        if v > plane[best] {
            best = i;
        }
    }
    best
}

/// Returns `(sparse, mask)`: each (sample, channel) plane keeps only its
/// spatial maximum (first in row-major order on ties), and `mask` is 1 at the
/// kept position.
pub fn wta<T: Real>(map: &Tensor4<T>) -> (Tensor4<T>, Tensor4<T>) {
    let shape = map.shape();
    let plane = shape.plane();
    let mut sparse = Tensor4::zeros(shape);
    let mut mask = Tensor4::zeros(shape);
    if plane == 0 {
        return (sparse, mask);
    }
    for (p, src) in map.data().chunks(plane).enumerate() {
        let k = argmax(src);
        sparse.data_mut()[p * plane + k] = src[k];
        mask.data_mut()[p * plane + k] = T::one();
    }
    (sparse, mask)
}

/// Mask-routed adjoint: `upstream * mask`.
pub fn wta_backward<T: Real>(mask: &Tensor4<T>, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
    mask.zip_map(upstream, |m, g| if m != T::zero() { g } else { T::zero() })
}

/// Literal adjoint: winner-take-all applied to the upstream gradient.
pub fn wta_backward_literal<T: Real>(upstream: &Tensor4<T>) -> Tensor4<T> {
    wta(upstream).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Shape4, SeededRng};
    use crate::error::Error;

    fn plane(vals: &[f64]) -> Tensor4<f64> {
        Tensor4::from_f64(Shape4::new(1, 1, 2, 2), vals).unwrap()
    }

    #[test]
    fn keeps_the_max() {
        let (s, m) = wta(&plane(&[1., 3., 2., 0.]));
        assert_eq!(s.data(), &[0., 3., 0., 0.]);
        assert_eq!(m.data(), &[0., 1., 0., 0.]);
    }

    #[test]
    fn ties_keep_first_in_row_major_order() {
        let (s, m) = wta(&plane(&[5., 5., 5., 5.]));
        assert_eq!(s.data(), &[5., 0., 0., 0.]);
        assert_eq!(m.sum(), 1.0);
    }

    #[test]
    fn backward_routes_through_winner() {
        let m = plane(&[0., 1., 0., 0.]);
        let g = wta_backward(&m, &plane(&[1., 1., 1., 1.])).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0.]);
        let z = wta_backward(&m, &plane(&[0., 0., 0., 0.])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_shape_mismatch() {
        let m = plane(&[0., 1., 0., 0.]);
        let g = Tensor4::zeros(Shape4::new(1, 1, 1, 4));
        assert!(matches!(wta_backward(&m, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn literal_rule_keeps_largest_gradient() {
        let g = wta_backward_literal(&plane(&[0.1, -2., 0.7, 0.3]));
        assert_eq!(g.data(), &[0., 0., 0.7, 0.]);
    }

    #[test]
    fn random_maps_match_brute_force() {
        let mut rng = SeededRng::new(17);
        for _ in 0..100 {
            let x = Tensor4::<f64>::from_fn(Shape4::new(2, 3, 4, 5), |_| rng.uniform(-1.0, 1.0));
            let (s, m) = wta(&x);
            for n in 0..2 {
                for c in 0..3 {
                    let mut best = f64::NEG_INFINITY;
                    let mut nz = 0;
                    let mut kept = 0.0;
                    for i in 0..4 {
                        for j in 0..5 {
                            best = best.max(x.get([n, c, i, j]));
                            if s.get([n, c, i, j]) != 0.0 {
                                nz += 1;
                                kept = s.get([n, c, i, j]);
                            }
                        }
                    }
                    assert!(nz <= 1);
                    assert_eq!(kept, best);
                    let ones: f64 = (0..4)
                        .flat_map(|i| (0..5).map(move |j| (i, j)))
                        .map(|(i, j)| m.get([n, c, i, j]))
                        .sum();
                    assert_eq!(ones, 1.0);
                }
            }
        }
    }
}
