use proptest::prelude::*;
use rwta::engine::{conv2d, conv2d_backward, Padding, Shape4, Tensor4};

/// Cross-correlation with an explicitly flipped kernel.
fn flipped_correlation(x: &Tensor4<f64>, k: &Tensor4<f64>, pad: usize) -> Tensor4<f64> {
    let [n, cin, h, w] = x.dims();
    let [cout, _, kh, kw] = k.dims();
    let flip = Tensor4::from_fn(k.shape(), |[f, a, u, v]| k.get([f, a, kh - 1 - u, kw - 1 - v]));
    let padded = Tensor4::from_fn(Shape4::new(n, cin, h + 2 * pad, w + 2 * pad), |[s, a, r, c]| {
        if r < pad || c < pad || r >= h + pad || c >= w + pad {
            0.0
        } else {
            x.get([s, a, r - pad, c - pad])
        }
    });
    let (oh, ow) = (h + 2 * pad + 1 - kh, w + 2 * pad + 1 - kw);
    Tensor4::from_fn(Shape4::new(n, cout, oh, ow), |[s, f, i, j]| {
        let mut acc = 0.0;
        for a in 0..cin {
            for u in 0..kh {
                for v in 0..kw {
                    acc += flip.get([f, a, u, v]) * padded.get([s, a, i + u, j + v]);
                }
            }
        }
        acc
    })
}

fn tensor(shape: Shape4, seed: u64) -> Tensor4<f64> {
    // Cheap deterministic fill so proptest shrinks over shapes, not values.
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    Tensor4::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 2001) as f64 / 1000.0 - 1.0
    })
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct Case {
    n: usize,
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    same: bool,
    seed: u64,
}

fn cases() -> impl Strategy<Value = Case> {
    (1usize..3, 1usize..4, 1usize..5, prop::sample::select(vec![1usize, 3, 5]), 0usize..6, 0usize..6, any::<bool>(), any::<u64>())
        .prop_map(|(n, cin, cout, k, dh, dw, same, seed)| Case { n, cin, cout, k, h: k + dh, w: k + dw, same, seed })
}

impl Case {
    fn padding(&self) -> (Padding, usize) {
        if self.same {
            (Padding::Same, self.k / 2)
        } else {
            (Padding::Valid, 0)
        }
    }
    fn input(&self, salt: u64) -> Tensor4<f64> {
        tensor(Shape4::new(self.n, self.cin, self.h, self.w), self.seed ^ salt)
    }
    fn kernel(&self) -> Tensor4<f64> {
        tensor(Shape4::new(self.cout, self.cin, self.k, self.k), self.seed.rotate_left(17))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_flipped_correlation(c in cases()) {
        let (padding, pad) = c.padding();
        let (x, k) = (c.input(1), c.kernel());
        let got = conv2d(&x, &k, None, padding).unwrap();
        let want = flipped_correlation(&x, &k, pad);
        prop_assert_eq!(got.dims(), want.dims());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn linear_in_the_input(c in cases(), alpha in -3.0f64..3.0) {
        let (padding, _) = c.padding();
        let (x, y, k) = (c.input(1), c.input(2), c.kernel());
        let mix = Tensor4::from_fn(x.shape(), |i| alpha * x.get(i) + y.get(i));
        let lhs = conv2d(&mix, &k, None, padding).unwrap();
        let (cx, cy) = (conv2d(&x, &k, None, padding).unwrap(), conv2d(&y, &k, None, padding).unwrap());
        for ((l, a), b) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            prop_assert!((l - (alpha * a + b)).abs() <= 1e-10);
        }
    }

    #[test]
    fn backward_is_the_adjoint(c in cases()) {
        let (padding, _) = c.padding();
        let (x, k) = (c.input(1), c.kernel());
        let out = conv2d(&x, &k, None, padding).unwrap();
        let dy = tensor(out.shape(), c.seed ^ 99);
        let g = conv2d_backward(&x, &k, &dy, padding, true, true, false).unwrap();
        // <conv(x, k), dy> is bilinear, so both gradients must reproduce it.
        let forward = dot(&out, &dy);
        prop_assert!((dot(&x, g.input.as_ref().unwrap()) - forward).abs() <= 1e-9 * (1.0 + forward.abs()));
        prop_assert!((dot(&k, g.kernel.as_ref().unwrap()) - forward).abs() <= 1e-9 * (1.0 + forward.abs()));
    }
}
