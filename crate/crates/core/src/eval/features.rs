use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::VideoDataset;
use crate::engine::{maxpool2d, Real, Tensor4};
use crate::error::{Error, Result};
use crate::model::TwoStreamNet;
use crate::par::{map_indexed, Execution};

/// How per-frame recurrent codes become one feature vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    /// Elementwise sum of the codes of every frame.
    #[default]
    SumCollapse,
    /// Code of the final frame.
    LastState,
    /// Final-frame code max-pooled with a (5, 5) window and (3, 3) stride.
    Pooled,
}

impl FeatureMode {
    pub const POOL_WINDOW: (usize, usize) = (5, 5);
    pub const POOL_STRIDE: (usize, usize) = (3, 3);

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::SumCollapse => "sum-collapse",
            FeatureMode::LastState => "last-state",
            FeatureMode::Pooled => "pooled",
        }
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-collapse" => Ok(FeatureMode::SumCollapse),
            "last-state" => Ok(FeatureMode::LastState),
            "pooled" => Ok(FeatureMode::Pooled),
            other => Err(Error::config(format!(
                "unknown feature mode '{other}' (expected sum-collapse, last-state or pooled)"
            ))),
        }
    }
}

/// Which recurrent maps feed the features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CodeSource {
    /// Winner-take-all codes that feed the decoder.
    #[default]
    Sparse,
    /// Dense states before winner-take-all.
    Dense,
}

/// A flat feature vector and the mode that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub mode: FeatureMode,
}

fn flatten<T: Real>(t: &Tensor4<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// Features of one video, frames given as (1, C, H, W) tensors.
pub fn extract_features<T: Real>(
    net: &TwoStreamNet<T>,
    video: &[Tensor4<T>],
    mode: FeatureMode,
    source: CodeSource,
) -> Result<FeatureVector> {
    if video.is_empty() {
        return Err(Error::contract("cannot extract features from an empty video"));
    }
    let out = net.recurrent_encode(video, None)?;
    let maps = match source {
        CodeSource::Sparse => &out.codes,
        CodeSource::Dense => &out.states,
    };
    let last = maps.last().expect("nonempty");
    let values = match mode {
        FeatureMode::SumCollapse => {
            let mut acc = maps[0].clone();
            for m in &maps[1..] {
                acc.add_assign(m)?;
            }
            flatten(&acc)
        }
        FeatureMode::LastState => flatten(last),
        FeatureMode::Pooled => flatten(&maxpool2d(last, FeatureMode::POOL_WINDOW, FeatureMode::POOL_STRIDE)?),
    };
    Ok(FeatureVector { values, mode })
}

/// Row-major feature matrix with one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::shape(format!(
                "feature row {i} has length {}, expected {dim}",
                r.len()
            )));
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV with header `video_id,label,f_0,...`.
    pub fn to_csv(&self, labels: &[usize]) -> Result<String> {
        if labels.len() != self.rows {
            return Err(Error::contract(format!(
                "{} labels for {} feature rows",
                labels.len(),
                self.rows
            )));
        }
        let mut s = String::from("video_id,label");
        for k in 0..self.dim {
            let _ = write!(s, ",f_{k}");
        }
        s.push('\n');
        for (i, &l) in labels.iter().enumerate() {
            let _ = write!(s, "{i},{l}");
            for v in self.row(i) {
                let _ = write!(s, ",{v:e}");
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_csv(&self, labels: &[usize], path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv(labels)?)?;
        Ok(())
    }
}

/// Features for every video of `ds`, using its first `frames` frames.
pub fn extract_dataset_features<T: Real>(
    net: &TwoStreamNet<T>,
    ds: &VideoDataset<T>,
    frames: usize,
    mode: FeatureMode,
    source: CodeSource,
    exec: Execution,
) -> Result<FeatureMatrix> {
    if frames == 0 || frames > ds.frames() {
        return Err(Error::config(format!(
            "cannot use {frames} frames of {}-frame videos",
            ds.frames()
        )));
    }
    let rows = map_indexed(ds.len(), exec, |i| {
        let video = ds.video(i);
        extract_features(net, &video[..frames], mode, source).map(|f| f.values)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_rows(rows)
}

/// Flattened raw pixels of frame `frame` of every video.
pub fn raw_frame_features<T: Real>(ds: &VideoDataset<T>, frame: usize) -> Result<FeatureMatrix> {
    if frame >= ds.frames() {
        return Err(Error::config(format!(
            "frame {frame} out of range for {}-frame videos",
            ds.frames()
        )));
    }
    FeatureMatrix::from_rows((0..ds.len()).map(|i| flatten(&ds.frame(i, frame))).collect())
}
