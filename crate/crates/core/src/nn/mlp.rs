use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{cross_entropy_from_logits, relu, relu_grad, softmax};
use super::gradients::Gradients;
use super::network::Network;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MIN_HIDDEN_WIDTH: usize = 8;
pub const MAX_HIDDEN_WIDTH: usize = 40;

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr<T>", into = "DenseRepr<T>")]
#[serde(bound = "T: Scalar")]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct DenseRepr<T> {
    weights: Vec<Vec<T>>,
    bias: Vec<T>,
}

impl<T: Scalar> From<DenseLayer<T>> for DenseRepr<T> {
    fn from(l: DenseLayer<T>) -> Self {
        Self { weights: l.weights.chunks(l.inputs).map(|r| r.to_vec()).collect(), bias: l.bias }
    }
}

impl<T: Scalar> TryFrom<DenseRepr<T>> for DenseLayer<T> {
    type Error = Error;

    fn try_from(r: DenseRepr<T>) -> Result<Self> {
        let outputs = r.weights.len();
        let inputs = r.weights.first().map_or(0, |row| row.len());
        if outputs == 0 || inputs == 0 || r.weights.iter().any(|row| row.len() != inputs) || r.bias.len() != outputs {
            return Err(Error::InvalidArgument("ragged or empty dense layer".into()));
        }
        Ok(Self { inputs, outputs, weights: r.weights.concat(), bias: r.bias })
    }
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    /// Uniform weights in ±√(6 / (fan_in + fan_out)), zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| T::of(rng.random_range(-limit..limit))).collect();
        Self { weights, ..Self::zeros(inputs, outputs) }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

/// Feed-forward classifier: rectifier hidden layers and a softmax output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MlpModel<T> {
    layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// Two hidden layers with widths in `[8, 40]`, Glorot-initialized from `seed`.
    pub fn new(input: usize, hidden: [usize; 2], classes: usize, seed: u64) -> Result<Self> {
        if hidden.iter().any(|h| !(MIN_HIDDEN_WIDTH..=MAX_HIDDEN_WIDTH).contains(h)) {
            return Err(Error::InvalidArgument(format!(
                "hidden widths must lie in [{MIN_HIDDEN_WIDTH}, {MAX_HIDDEN_WIDTH}], got {hidden:?}"
            )));
        }
        if input == 0 || classes < 2 {
            return Err(Error::InvalidArgument("need at least one input and two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [input, hidden[0], hidden[1], classes];
        let layers = sizes.windows(2).map(|w| DenseLayer::glorot(w[0], w[1], &mut rng)).collect();
        Ok(Self { layers })
    }

    /// All-zero parameters; outputs the uniform distribution for every input.
    pub fn zeros(input: usize, hidden: [usize; 2], classes: usize) -> Self {
        let sizes = [input, hidden[0], hidden[1], classes];
        Self { layers: sizes.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect() }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::InvalidArgument(format!("expected 3 dense layers, got {}", layers.len())));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::ShapeMismatch { expected: w[0].outputs, actual: w[1].inputs });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs).chain(self.layers.iter().map(|l| l.outputs)).collect()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    /// Pre-activations of every layer and post-activations feeding each layer.
    fn forward_cache(&self, x: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(activations.last().expect("non-empty"));
            if k + 1 < self.layers.len() {
                activations.push(z.iter().map(|&v| relu(v)).collect());
            }
            pre.push(z);
        }
        (pre, activations)
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.forward_cache(x).0.pop().expect("at least one layer")
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::ShapeMismatch { expected: self.input_width(), actual: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        Ok(())
    }

    /// Class probabilities for one input vector.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(softmax(&self.logits(x)))
    }

    /// Cross-entropy loss and its exact gradient with respect to every parameter.
    pub fn backward(&self, x: &[T], label: usize) -> Result<(T, Gradients<T>)> {
        self.check_input(x)?;
        let mut grads = self.zero_gradients();
        let loss = self.accumulate(x, label, &mut grads);
        Ok((loss, grads))
    }

    fn accumulate(&self, x: &[T], label: usize, grads: &mut Gradients<T>) -> T {
        let (pre, activations) = self.forward_cache(x);
        let logits = pre.last().expect("at least one layer");
        let loss = cross_entropy_from_logits(logits, label);
        // d loss / d logits = softmax - one_hot
        let mut delta = softmax(logits);
        delta[label] -= T::one();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &activations[k];
            {
                let gw = &mut grads.tensors[2 * k];
                for (o, &d) in delta.iter().enumerate() {
                    if d != T::zero() {
                        for (g, &a) in gw[o * layer.inputs..(o + 1) * layer.inputs].iter_mut().zip(input) {
                            *g += d * a;
                        }
                    }
                }
            }
            for (g, &d) in grads.tensors[2 * k + 1].iter_mut().zip(&delta) {
                *g += d;
            }
            if k > 0 {
                let mut upstream = vec![T::zero(); layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d != T::zero() {
                        for (u, &w) in upstream.iter_mut().zip(&layer.weights[o * layer.inputs..(o + 1) * layer.inputs]) {
                            *u += w * d;
                        }
                    }
                }
                delta = upstream.iter().zip(&pre[k - 1]).map(|(&u, &z)| u * relu_grad(z)).collect();
            }
        }
        loss
    }
}

impl<T: Scalar> Network<T> for MlpModel<T> {
    type Input = Vec<T>;

    fn num_classes(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    fn probabilities(&self, input: &Vec<T>) -> Result<Vec<T>> {
        self.forward(input)
    }

    fn accumulate_gradients(&self, input: &Vec<T>, label: usize, grads: &mut Gradients<T>) -> T {
        self.accumulate(input, label, grads)
    }

    fn parameters(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
