//! Sub-models and the weighted ensemble that combines them.
//!
//! Two [`SubModel`] implementations are provided: [`SyntheticLearner`], a
//! parametric stand-in whose errors have a controlled correlation structure,
//! and [`TinyMlp`], a one-hidden-layer classifier trained by mini-batch
//! gradient descent. [`ensemble`] holds soft voting, the error covariance
//! estimate and the minimum-variance weights.

mod convergence;
pub mod ensemble;
mod mlp;
mod synthetic;
mod task;

pub use convergence::ConvergenceTracker;
pub use ensemble::{
    ensemble_error, estimate_c, expected_ensemble_error, optimal_weights, soft_vote,
    soft_vote_vectors, CovMatrix, EnsembleWeights, WeightSolution,
};
pub use mlp::{MlpParams, TinyMlp};
pub use synthetic::{SyntheticLearner, SyntheticParams};
pub use task::{ClassTask, TaskParams};

use thiserror::Error;

/// One labelled input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Item identity; also the input identity `x` for counter-based noise.
    pub key: u64,
    pub label: usize,
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearningError {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("validation set is empty")]
    EmptyValidation,
}

/// A locally trained model that takes part in the ensemble.
///
/// `output` is the regression view: a score vector whose target for a sample
/// with label `c` is the one-hot vector `e_c` of length `output_dims()`.
pub trait SubModel: Send {
    /// Incorporate a batch. Deterministic for a given seed and input order.
    fn train(&mut self, batch: &[Sample]);

    fn output(&self, x: &Sample) -> Vec<f64>;

    fn output_dims(&self) -> usize;

    fn distinct_items_seen(&self) -> usize;

    fn predict_label(&self, x: &Sample) -> usize {
        argmax(&self.output(x))
    }

    /// Accuracy used by the convergence check. Defaults to measured
    /// classification accuracy on `validation`.
    fn validation_accuracy(&self, validation: &[Sample]) -> f64 {
        if validation.is_empty() {
            return 0.0;
        }
        let hits = validation
            .iter()
            .filter(|x| self.predict_label(x) == x.label)
            .count();
        hits as f64 / validation.len() as f64
    }
}

/// One-hot target for `label`.
pub fn target(label: usize, dims: usize) -> Vec<f64> {
    let mut t = vec![0.0; dims];
    if label < dims {
        t[label] = 1.0;
    }
    t
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
