use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::activation::argmax;
use super::adadelta::{AdadeltaState, DEFAULT_EPSILON, DEFAULT_RHO};
use super::gradients::Gradients;
use super::network::Network;
use crate::error::{Error, Result};
use crate::eval::{confusion_from_indices, fidelity, split};
use crate::label::BasisLabel;
use crate::scalar::Scalar;

/// Samples per gradient work unit. Units are summed in a fixed order, so the
/// batch gradient does not depend on the number of threads.
const GRADIENT_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Share of the dataset used for training; the rest is the test split.
    pub train_fraction: f64,
    /// Share of the training split held out to select the best epoch. Zero
    /// scores epochs on the training data itself.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 50,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_fidelity: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<N> {
    pub model: N,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,validation_fidelity\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.validation_fidelity));
    }
    out
}

/// Highest-probability class of every input.
pub fn predict_classes<T: Scalar, N: Network<T>>(model: &N, inputs: &[N::Input]) -> Result<Vec<usize>> {
    inputs.par_iter().map(|x| model.probabilities(x).map(|p| argmax(&p))).collect()
}

fn average_fidelity<T: Scalar, N: Network<T>>(model: &N, inputs: &[&N::Input], labels: &[usize], num_qubits: usize) -> Result<f64> {
    let predictions = inputs
        .par_iter()
        .map(|x| model.probabilities(x).map(|p| argmax(&p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(fidelity(&confusion_from_indices(num_qubits, &predictions, labels)?)?.average)
}

/// Summed loss and gradient over `indices`.
pub fn batch_gradient<T: Scalar, N: Network<T>>(
    model: &N,
    inputs: &[N::Input],
    labels: &[usize],
    indices: &[usize],
) -> (T, Gradients<T>) {
    let partials: Vec<(T, Gradients<T>)> = indices
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut g = model.zero_gradients();
            let loss = chunk
                .iter()
                .fold(T::zero(), |acc, &i| acc + model.accumulate_gradients(&inputs[i], labels[i], &mut g));
            (loss, g)
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().unwrap_or_else(|| (T::zero(), model.zero_gradients()));
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    (loss, grads)
}

/// Mini-batch ADADELTA on the mean cross-entropy.
///
/// `labels` are class indices of a `num_qubits` register. The returned model
/// is the one with the best validation fidelity over all epochs (earliest on
/// ties). Reproducible for a fixed `config.seed`.
pub fn train<T: Scalar, N: Network<T>>(
    initial: N,
    inputs: &[N::Input],
    labels: &[usize],
    num_qubits: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome<N>> {
    if inputs.len() != labels.len() {
        return Err(Error::ShapeMismatch { expected: labels.len(), actual: inputs.len() });
    }
    if inputs.is_empty() || config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument("training needs samples, a positive batch size and epochs".into()));
    }
    if labels.iter().any(|&l| l >= initial.num_classes()) {
        return Err(Error::InvalidArgument("label index exceeds the number of classes".into()));
    }
    for x in inputs {
        initial.probabilities(x)?;
    }

    let (fit_idx, val_idx) = if config.validation_fraction > 0.0 {
        let basis = labels
            .iter()
            .map(|&l| BasisLabel::new(l, num_qubits))
            .collect::<Result<Vec<_>>>()?;
        split(&basis, 1.0 - config.validation_fraction, config.seed ^ 0x7a11_da7e)?
    } else {
        ((0..inputs.len()).collect(), (0..inputs.len()).collect())
    };
    let val_inputs: Vec<&N::Input> = val_idx.iter().map(|&i| &inputs[i]).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let mut model = initial;
    let mut optimizer = AdadeltaState::new(model.parameter_shapes(), T::of(config.rho), T::of(config.epsilon))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = fit_idx.clone();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, N)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, mut grads) = batch_gradient(&model, inputs, labels, batch);
            let loss = loss.as_f64();
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            grads.scale(T::one() / T::of(batch.len() as f64));
            optimizer.step(model.parameters_mut(), &grads)?;
            epoch_loss += loss;
        }
        let validation_fidelity = average_fidelity(&model, &val_inputs, &val_labels, num_qubits)?;
        history.push(EpochRecord { epoch, train_loss: epoch_loss / order.len() as f64, validation_fidelity });
        if best.as_ref().is_none_or(|(f, _, _)| validation_fidelity > *f) {
            best = Some((validation_fidelity, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience > 0 && since_best >= config.patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, history, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpModel;

    fn xor() -> (Vec<Vec<f64>>, Vec<usize>) {
        (vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]], vec![0, 1, 1, 0])
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor();
        let config = TrainConfig { batch_size: 4, epochs: 2000, validation_fraction: 0.0, patience: 0, seed: 3, ..Default::default() };
        let model = MlpModel::new(2, [8, 8], 2, 3).unwrap();
        let out = train(model, &x, &y, 1, &config).unwrap();
        assert_eq!(predict_classes(&out.model, &x).unwrap(), y);
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 2) as f64, ((i / 2) % 5) as f64 / 5.0]).collect();
        let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let config = TrainConfig { batch_size: 16, epochs: 30, patience: 0, seed: 1, ..Default::default() };
        let out = train(MlpModel::new(2, [8, 8], 2, 1).unwrap(), &x, &y, 1, &config).unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
        assert_eq!(out.history.last().unwrap().validation_fidelity, 1.0);
    }

    #[test]
    fn training_is_reproducible() {
        let (x, y) = xor();
        let config = TrainConfig { batch_size: 2, epochs: 20, validation_fraction: 0.0, patience: 0, seed: 8, ..Default::default() };
        let a = train(MlpModel::<f64>::new(2, [8, 8], 2, 1).unwrap(), &x, &y, 1, &config).unwrap();
        let b = train(MlpModel::<f64>::new(2, [8, 8], 2, 1).unwrap(), &x, &y, 1, &config).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn batch_gradient_matches_sequential_sum() {
        let model = MlpModel::<f64>::new(3, [8, 8], 4, 2).unwrap();
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0, 0.3, -(i as f64) / 70.0]).collect();
        let y: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let idx: Vec<usize> = (0..50).collect();
        let (loss, g) = batch_gradient(&model, &x, &y, &idx);
        let mut seq = model.zero_gradients();
        let mut seq_loss = 0.0;
        for i in 0..50 {
            seq_loss += model.accumulate_gradients(&x[i], y[i], &mut seq);
        }
        assert!((loss - seq_loss).abs() < 1e-12);
        for (a, b) in g.tensors.iter().flatten().zip(seq.tensors.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (x, _) = xor();
        let config = TrainConfig::default();
        assert!(train(MlpModel::<f64>::new(2, [8, 8], 2, 0).unwrap(), &x, &[0, 1], 1, &config).is_err());
        assert!(train(MlpModel::<f64>::new(2, [8, 8], 2, 0).unwrap(), &x, &[0, 1, 2, 0], 1, &config).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let x = vec![vec![1e300, 1e300]; 4];
        let y = vec![0, 1, 0, 1];
        let config = TrainConfig { batch_size: 4, epochs: 2, validation_fraction: 0.0, ..Default::default() };
        let mut model = MlpModel::<f64>::new(2, [8, 8], 2, 0).unwrap();
        for p in model.parameters_mut() {
            p.iter_mut().for_each(|v| *v *= 1e10);
        }
        let err = train(model, &x, &y, 1, &config).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }), "{err:?}");
    }
}
