//! Feed-forward classifier built from dense layers, trained with ADADELTA
//! on the cross-entropy loss.

mod activation;
mod adadelta;
mod gradients;
mod mlp;
mod network;
mod train;

pub use activation::{argmax, cross_entropy_from_logits, log_sum_exp, loss, relu, relu_grad, softmax, PROBABILITY_FLOOR};
pub use adadelta::{adadelta_update, AdadeltaState, DEFAULT_EPSILON, DEFAULT_RHO};
pub use gradients::Gradients;
pub use mlp::{DenseLayer, MlpModel, MAX_HIDDEN_WIDTH, MIN_HIDDEN_WIDTH};
pub use network::Network;
pub use train::{batch_gradient, history_csv, predict_classes, train, EpochRecord, TrainConfig, TrainOutcome};

use crate::label::BasisLabel;
use crate::Result;

/// Decodes the highest-probability class of `probabilities` into a label.
pub fn predict<T: crate::Scalar>(probabilities: &[T], num_qubits: usize) -> Result<BasisLabel> {
    BasisLabel::new(argmax(probabilities), num_qubits)
}
