use serde::{Deserialize, Serialize};

use super::gradients::Gradients;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_RHO: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Learning-rate-free optimizer state: decayed means of squared gradients
/// and of squared updates, one accumulator pair per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaState<T> {
    pub rho: T,
    pub epsilon: T,
    pub mean_sq_grad: Vec<Vec<T>>,
    pub mean_sq_update: Vec<Vec<T>>,
}

/// One scalar update. Returns the parameter increment.
pub fn adadelta_update<T: Scalar>(mean_sq_grad: &mut T, mean_sq_update: &mut T, g: T, rho: T, epsilon: T) -> T {
    let one = T::one();
    *mean_sq_grad = rho * *mean_sq_grad + (one - rho) * g * g;
    let delta = -((*mean_sq_update + epsilon).sqrt() / (*mean_sq_grad + epsilon).sqrt()) * g;
    *mean_sq_update = rho * *mean_sq_update + (one - rho) * delta * delta;
    delta
}

impl<T: Scalar> AdadeltaState<T> {
    pub fn new(shapes: impl IntoIterator<Item = usize>, rho: T, epsilon: T) -> Result<Self> {
        if !(rho > T::zero() && rho < T::one()) {
            return Err(Error::InvalidArgument(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
        }
        let zeros: Vec<Vec<T>> = shapes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Ok(Self { rho, epsilon, mean_sq_grad: zeros.clone(), mean_sq_update: zeros })
    }

    /// Applies one update to every parameter in place.
    pub fn step(&mut self, params: Vec<&mut [T]>, grads: &Gradients<T>) -> Result<()> {
        if params.len() != self.mean_sq_grad.len() || grads.tensors.len() != params.len() {
            return Err(Error::ShapeMismatch { expected: self.mean_sq_grad.len(), actual: params.len() });
        }
        for (k, (p, g)) in params.into_iter().zip(&grads.tensors).enumerate() {
            let (eg2, edx2) = (&mut self.mean_sq_grad[k], &mut self.mean_sq_update[k]);
            if p.len() != g.len() || p.len() != eg2.len() {
                return Err(Error::ShapeMismatch { expected: eg2.len(), actual: p.len() });
            }
            for i in 0..p.len() {
                p[i] += adadelta_update(&mut eg2[i], &mut edx2[i], g[i], self.rho, self.epsilon);
            }
        }
        Ok(())
    }
}
