use crate::engine::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::model::TwoStreamNet;

use super::features::{extract_features, CodeSource, FeatureMode};
use super::svm::LinearClassifier;

/// Winning class and the full histogram of votes.
#[derive(Clone, Debug, PartialEq)]
pub struct Vote {
    pub class: usize,
    pub histogram: Vec<u64>,
}

/// Majority class of `predictions`; ties go to the lowest class.
pub fn majority_vote(predictions: &[usize], classes: usize) -> Result<Vote> {
    if predictions.is_empty() {
        return Err(Error::contract("no predictions to vote on"));
    }
    let mut histogram = vec![0u64; classes];
    for &p in predictions {
        *histogram
            .get_mut(p)
            .ok_or_else(|| Error::Data(format!("class {p} out of range for {classes} classes")))? += 1;
    }
    let mut class = 0;
    for (c, &n) in histogram.iter().enumerate() {
        if n > histogram[class] {
            class = c;
        }
    }
    Ok(Vote { class, histogram })
}

/// Classifies every length-`window` run of consecutive frames, advancing
/// one frame at a time, and returns the majority class.
pub fn sliding_window_vote<T: Real>(
    net: &TwoStreamNet<T>,
    classifier: &LinearClassifier,
    video: &[Tensor4<T>],
    window: usize,
    mode: FeatureMode,
) -> Result<Vote> {
    if window == 0 || video.len() < window {
        return Err(Error::contract(format!(
            "video of {} frames is shorter than the {window}-frame window",
            video.len()
        )));
    }
    let predictions = video
        .windows(window)
        .map(|w| {
            let f = extract_features(net, w, mode, CodeSource::Sparse)?;
            classifier.predict(&f.values)
        })
        .collect::<Result<Vec<_>>>()?;
    majority_vote(&predictions, classifier.svm.classes)
}
