//! Binary greyscale PGM (P5) output for filter images.

use std::path::Path;

/// Encodes a `rows x cols` plane, min-max normalised to `0..=255`.
/// A constant plane maps to mid grey.
pub fn encode(values: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(values.len(), rows * cols, "plane size");
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    out
}

pub fn write(path: &Path, values: &[f64], rows: usize, cols: usize) -> std::io::Result<()> {
    std::fs::write(path, encode(values, rows, cols))
}

/// Tiles equally sized, already normalised planes into a grid with a
/// one-pixel black border. Returns the grid and its (rows, cols).
pub fn tile(planes: &[Vec<f64>], k: usize, per_row: usize) -> (Vec<f64>, usize, usize) {
    let per_row = per_row.max(1);
    let grid_rows = planes.len().div_ceil(per_row);
    let (rows, cols) = (grid_rows * (k + 1) + 1, per_row * (k + 1) + 1);
    let mut out = vec![0.0; rows * cols];
    for (i, p) in planes.iter().enumerate() {
        let (gr, gc) = (i / per_row, i % per_row);
        for r in 0..k {
            for c in 0..k {
                out[(gr * (k + 1) + 1 + r) * cols + gc * (k + 1) + 1 + c] = p[r * k + c];
            }
        }
    }
    (out, rows, cols)
}

/// Rescales a plane to `[0, 1]`; constant planes become 0.5.
pub fn normalise(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
        .collect()
}
