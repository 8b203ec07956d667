use crate::data::VideoDataset;
use crate::engine::{Real, SeededRng};
use crate::error::{Error, Result};
use crate::model::TwoStreamNet;
use crate::par::{map_indexed, Execution};

use super::features::CodeSource;

/// Mean code distances of consecutive frames and of random cross-video pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coherence {
    pub consecutive: f64,
    pub random: f64,
    /// `consecutive / random`.
    pub ratio: f64,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Compares Euclidean distances between recurrent codes of neighbouring
/// frames with distances between codes of frames from different videos.
/// One random pair is drawn per consecutive pair. `source` picks the
/// post-WTA codes or the dense states they are taken from.
pub fn temporal_coherence<T: Real>(
    net: &TwoStreamNet<T>,
    ds: &VideoDataset<T>,
    frames: usize,
    source: CodeSource,
    seed: u64,
    exec: Execution,
) -> Result<Coherence> {
    if ds.len() < 2 || frames < 2 || frames > ds.frames() {
        return Err(Error::config(
            "coherence needs at least two videos of at least two frames",
        ));
    }
    let codes: Vec<Vec<Vec<f64>>> = map_indexed(ds.len(), exec, |i| {
        let video = ds.video(i);
        net.recurrent_encode(&video[..frames], None).map(|out| {
            let maps = match source {
                CodeSource::Sparse => &out.codes,
                CodeSource::Dense => &out.states,
            };
            maps.iter()
                .map(|c| c.data().iter().map(|v| v.as_f64()).collect())
                .collect()
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut rng = SeededRng::new(seed);
    let (mut near, mut far, mut count) = (0.0, 0.0, 0usize);
    for (v, video) in codes.iter().enumerate() {
        for t in 0..frames - 1 {
            near += distance(&video[t], &video[t + 1]);
            let mut other = rng.index(ds.len() - 1);
            if other >= v {
                other += 1;
            }
            let (ta, tb) = (rng.index(frames), rng.index(frames));
            far += distance(&video[ta], &codes[other][tb]);
            count += 1;
        }
    }
    let (consecutive, random) = (near / count as f64, far / count as f64);
    if random == 0.0 {
        return Err(Error::Evaluation("all codes are identical".into()));
    }
    Ok(Coherence {
        consecutive,
        random,
        ratio: consecutive / random,
    })
}
