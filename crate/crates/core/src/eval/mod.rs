//! Feature extraction, linear classification, voting and reports.

mod coherence;
mod features;
mod report;
mod svm;
mod vote;

pub use coherence::{temporal_coherence, Coherence};
pub use features::{
    extract_dataset_features, extract_features, raw_frame_features, CodeSource, FeatureMatrix,
    FeatureMode, FeatureVector,
};
pub use report::{report, EvalReport};
pub use svm::{
    argmax_f64, svm_predict, svm_train, LinearClassifier, LinearSvm, Standardizer, SvmConfig,
};
pub use vote::{majority_vote, sliding_window_vote, Vote};
