use crate::scalar::Scalar;

/// Floor applied to the true-class probability in [`loss`].
pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub fn relu<T: Scalar>(z: T) -> T {
    if z > T::zero() { z } else { T::zero() }
}

/// Subgradient of the rectifier, taken as 0 at 0.
pub fn relu_grad<T: Scalar>(z: T) -> T {
    if z > T::zero() { T::one() } else { T::zero() }
}

/// Normalized exponentials, shifted by the maximum logit.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `ln Σ exp(z)`, shifted by the maximum logit.
pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln()
}

/// Cross-entropy `-ln p[label]` with the probability floored at 1e-12.
pub fn loss<T: Scalar>(probabilities: &[T], label: usize) -> T {
    -probabilities[label].max(T::of(PROBABILITY_FLOOR)).ln()
}

/// Cross-entropy evaluated from logits; exact where [`loss`] would clamp.
pub fn cross_entropy_from_logits<T: Scalar>(logits: &[T], label: usize) -> T {
    log_sum_exp(logits) - logits[label]
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
