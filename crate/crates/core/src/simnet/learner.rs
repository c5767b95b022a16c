use crate::learning::{Sample, SubModel, SyntheticLearner, TinyMlp};

/// The sub-model types a scenario can train. Cloneable so a converged model
/// can be frozen as the uploaded copy.
#[derive(Debug, Clone)]
pub enum Learner {
    Synthetic(SyntheticLearner),
    Mlp(TinyMlp),
}

impl Learner {
    fn inner(&self) -> &dyn SubModel {
        match self {
            Self::Synthetic(l) => l,
            Self::Mlp(l) => l,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SubModel {
        match self {
            Self::Synthetic(l) => l,
            Self::Mlp(l) => l,
        }
    }
}

impl SubModel for Learner {
    fn train(&mut self, batch: &[Sample]) {
        self.inner_mut().train(batch)
    }

    fn output(&self, x: &Sample) -> Vec<f64> {
        self.inner().output(x)
    }

    fn output_dims(&self) -> usize {
        self.inner().output_dims()
    }

    fn distinct_items_seen(&self) -> usize {
        self.inner().distinct_items_seen()
    }

    fn predict_label(&self, x: &Sample) -> usize {
        self.inner().predict_label(x)
    }

    fn validation_accuracy(&self, validation: &[Sample]) -> f64 {
        self.inner().validation_accuracy(validation)
    }
}
