use super::gradients::Gradients;
use crate::error::Result;
use crate::scalar::Scalar;

/// A trainable softmax classifier.
///
/// Parameter tensors are exposed in a fixed order that gradients and
/// optimizer state share.
pub trait Network<T: Scalar>: Clone + Send + Sync {
    type Input: Send + Sync;

    fn num_classes(&self) -> usize;

    fn probabilities(&self, input: &Self::Input) -> Result<Vec<T>>;

    /// Adds the gradient of the cross-entropy loss for one sample into
    /// `grads` and returns the loss. Inputs are assumed validated.
    fn accumulate_gradients(&self, input: &Self::Input, label: usize, grads: &mut Gradients<T>) -> T;

    fn parameters(&self) -> Vec<&[T]>;

    fn parameters_mut(&mut self) -> Vec<&mut [T]>;

    fn parameter_shapes(&self) -> Vec<usize> {
        self.parameters().iter().map(|p| p.len()).collect()
    }

    fn zero_gradients(&self) -> Gradients<T> {
        Gradients::zeros(self.parameter_shapes())
    }

    fn num_parameters(&self) -> usize {
        self.parameter_shapes().iter().sum()
    }
}
