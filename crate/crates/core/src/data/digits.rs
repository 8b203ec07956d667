//! Procedural handwritten-style digits.
//!
//! Each class is a set of stroke templates in the unit square (x right,
//! y down). A sample jitters the control points, applies a random affine map
//! and rasterises the strokes with an anti-aliased pen. The output mimics the
//! layout of the 28x28 digit corpus (glyph inside a ~20 px box, centred).

use std::f64::consts::PI;

use crate::engine::{Real, SeededRng, Shape4, Tensor4};

type Pt = (f64, f64);

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Vec<Pt> {
    let steps = 16;
    (0..=steps)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// Stroke polylines for one digit class. Angles run clockwise on screen
/// because y points down.
fn glyph(class: usize) -> Vec<Vec<Pt>> {
    match class {
        0 => vec![arc(0.5, 0.5, 0.28, 0.42, 0.0, 360.0)],
        1 => vec![
            vec![(0.52, 0.08), (0.52, 0.92)],
            vec![(0.36, 0.24), (0.52, 0.08)],
        ],
        2 => {
            let mut top = arc(0.5, 0.3, 0.24, 0.22, 190.0, 360.0);
            top.extend([(0.7, 0.5), (0.26, 0.9), (0.78, 0.9)]);
            vec![top]
        }
        3 => vec![
            arc(0.46, 0.29, 0.24, 0.21, 200.0, 450.0),
            arc(0.46, 0.7, 0.27, 0.22, 270.0, 520.0),
        ],
        4 => vec![
            vec![(0.62, 0.92), (0.62, 0.08), (0.22, 0.64), (0.8, 0.64)],
        ],
        5 => {
            let mut s = vec![(0.74, 0.1), (0.32, 0.1), (0.29, 0.46)];
            s.extend(arc(0.48, 0.65, 0.26, 0.25, 230.0, 510.0));
            vec![s]
        }
        6 => vec![
            vec![(0.68, 0.1), (0.44, 0.3), (0.3, 0.55), (0.27, 0.7)],
            arc(0.5, 0.69, 0.23, 0.21, 0.0, 360.0),
        ],
        7 => vec![vec![(0.24, 0.1), (0.78, 0.1), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.29, 0.19, 0.19, 0.0, 360.0),
            arc(0.5, 0.7, 0.24, 0.22, 0.0, 360.0),
        ],
        9 => vec![
            arc(0.5, 0.31, 0.22, 0.21, 0.0, 360.0),
            vec![(0.72, 0.32), (0.68, 0.6), (0.6, 0.92)],
        ],
        _ => panic!("digit class {class} out of range"),
    }
}

/// Renders random digit images.
#[derive(Clone, Copy, Debug)]
pub struct DigitSynth {
    /// Canvas side in pixels.
    pub size: usize,
    /// Side of the box the glyph is scaled into.
    pub glyph_box: f64,
}

impl Default for DigitSynth {
    fn default() -> Self {
        DigitSynth {
            size: 28,
            glyph_box: 20.0,
        }
    }
}

impl DigitSynth {
    /// One `size x size` image in `[0, 1]` of digit `class`.
    pub fn render(&self, class: usize, rng: &mut SeededRng) -> Vec<f64> {
        let c = self.size as f64 / 2.0;
        self.render_at(class, rng, (c, c))
    }

    /// Like [`DigitSynth::render`] with the glyph centred near `centre` (x, y in pixels).
    pub fn render_at(&self, class: usize, rng: &mut SeededRng, centre: Pt) -> Vec<f64> {
        let strokes = glyph(class);
        let scale = self.glyph_box * rng.uniform(0.8, 1.1);
        let aspect = rng.uniform(0.8, 1.15);
        let shear = rng.uniform(-0.25, 0.25);
        let angle = rng.uniform(-12.0, 12.0) * PI / 180.0;
        let (sa, ca) = angle.sin_cos();
        let (tx, ty) = (
            centre.0 + rng.uniform(-1.5, 1.5),
            centre.1 + rng.uniform(-1.5, 1.5),
        );
        let pen = rng.uniform(0.9, 1.8);
        let jitter = 0.035;

        let segments: Vec<(Pt, Pt)> = strokes
            .iter()
            .flat_map(|poly| {
                // One offset per polyline plus a small per-point wobble.
                let (ox, oy) = (rng.uniform(-jitter, jitter), rng.uniform(-jitter, jitter));
                let pts: Vec<Pt> = poly
                    .iter()
                    .map(|&(x, y)| {
                        let x = x + ox + rng.uniform(-jitter, jitter) * 0.5 - 0.5;
                        let y = y + oy + rng.uniform(-jitter, jitter) * 0.5 - 0.5;
                        let (x, y) = (x * aspect + shear * y, y);
                        let (x, y) = (x * ca - y * sa, x * sa + y * ca);
                        (tx + scale * x, ty + scale * y)
                    })
                    .collect();
                pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
            })
            .collect();

        let n = self.size;
        let mut img = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let p = (j as f64 + 0.5, i as f64 + 0.5);
                let d = segments
                    .iter()
                    .map(|&(a, b)| segment_distance(p, a, b))
                    .fold(f64::INFINITY, f64::min);
                img[i * n + j] = (pen + 0.5 - d).clamp(0.0, 1.0);
            }
        }
        img
    }

    /// `count` images with balanced labels `i % 10`, as a (count, 1, size, size) tensor.
    pub fn dataset<T: Real>(&self, count: usize, seed: u64) -> (Tensor4<T>, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let mut data = Vec::with_capacity(count * self.size * self.size);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % 10;
            data.extend(self.render(class, &mut rng).into_iter().map(T::lit));
            labels.push(class);
        }
        let t = Tensor4::from_vec(Shape4::new(count, 1, self.size, self.size), data)
            .expect("sized above");
        (t, labels)
    }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}
