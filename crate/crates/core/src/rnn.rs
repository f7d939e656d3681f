//! LSTM sequence classifier over time-binned counts.
//!
//! Gates are stacked in the order input, forget, output, candidate; each
//! block has `hidden` rows. The final hidden state feeds a dense softmax
//! readout, so an empty sequence yields the readout of the zero state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::Normalizer;
use crate::nn::{cross_entropy_from_logits, softmax, DenseLayer, Gradients, Network};
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: usize = 32;
const GATES: usize = 4;
const GATE_NAMES: [&str; GATES] = ["input", "forget", "output", "candidate"];
const FORGET: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LstmRepr<T>", into = "LstmRepr<T>")]
#[serde(bound = "T: Scalar")]
pub struct LstmModel<T> {
    input: usize,
    hidden: usize,
    /// `4H × input`
    input_weights: Vec<T>,
    /// `4H × H`
    recurrent_weights: Vec<T>,
    /// `4H`
    bias: Vec<T>,
    readout: DenseLayer<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn matvec_add<T: Scalar>(out: &mut [T], matrix: &[T], x: &[T]) {
    let cols = x.len();
    if cols == 0 {
        return;
    }
    for (o, row) in out.iter_mut().zip(matrix.chunks(cols)) {
        *o += row.iter().zip(x).fold(T::zero(), |acc, (&w, &v)| acc + w * v);
    }
}

/// Adds `delta ⊗ x` into a row-major `delta.len() × x.len()` matrix.
fn outer_add<T: Scalar>(out: &mut [T], delta: &[T], x: &[T]) {
    let cols = x.len();
    if cols == 0 {
        return;
    }
    for (row, &d) in out.chunks_mut(cols).zip(delta) {
        if d != T::zero() {
            for (o, &v) in row.iter_mut().zip(x) {
                *o += d * v;
            }
        }
    }
}

/// Adds `matrixᵀ · delta` into `out`.
fn transpose_matvec_add<T: Scalar>(out: &mut [T], matrix: &[T], delta: &[T]) {
    let cols = out.len();
    if cols == 0 {
        return;
    }
    for (row, &d) in matrix.chunks(cols).zip(delta) {
        if d != T::zero() {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
    }
}

struct StepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// gate activations, stacked like the pre-activations
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

impl<T: Scalar> LstmModel<T> {
    /// Glorot-uniform weights, zero biases except the forget gate at 1.
    pub fn new(input: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || classes < 2 {
            return Err(Error::InvalidArgument("need a positive hidden width and at least two classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize, fan_out: usize| -> Vec<T> {
            let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            (0..n).map(|_| T::of(rng.random_range(-limit..limit))).collect()
        };
        let input_weights = uniform(GATES * hidden * input, input, hidden);
        let recurrent_weights = uniform(GATES * hidden * hidden, hidden, hidden);
        let mut bias = vec![T::zero(); GATES * hidden];
        bias[FORGET * hidden..(FORGET + 1) * hidden].fill(T::one());
        let readout = DenseLayer::glorot(hidden, classes, &mut rng);
        Ok(Self { input, hidden, input_weights, recurrent_weights, bias, readout })
    }

    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden,
            input_weights: vec![T::zero(); GATES * hidden * input],
            recurrent_weights: vec![T::zero(); GATES * hidden * hidden],
            bias: vec![T::zero(); GATES * hidden],
            readout: DenseLayer::zeros(hidden, classes),
        }
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn initial_state(&self) -> LstmState<T> {
        LstmState { hidden: vec![T::zero(); self.hidden], cell: vec![T::zero(); self.hidden] }
    }

    fn gate_activations(&self, state: &LstmState<T>, x: &[T]) -> Vec<T> {
        let h = self.hidden;
        let mut a = self.bias.clone();
        matvec_add(&mut a, &self.input_weights, x);
        matvec_add(&mut a, &self.recurrent_weights, &state.hidden);
        for (k, v) in a.iter_mut().enumerate() {
            *v = if k < 3 * h { sigmoid(*v) } else { v.tanh() };
        }
        a
    }

    fn advance(&self, state: &LstmState<T>, gates: &[T]) -> LstmState<T> {
        let h = self.hidden;
        let (i, f, o, g) = (&gates[..h], &gates[h..2 * h], &gates[2 * h..3 * h], &gates[3 * h..]);
        let cell: Vec<T> = (0..h).map(|k| f[k] * state.cell[k] + i[k] * g[k]).collect();
        let hidden = (0..h).map(|k| o[k] * cell[k].tanh()).collect();
        LstmState { hidden, cell }
    }

    /// One recurrence step.
    pub fn step(&self, state: &LstmState<T>, x: &[T]) -> Result<LstmState<T>> {
        self.check_step(x)?;
        Ok(self.advance(state, &self.gate_activations(state, x)))
    }

    /// Continues the recurrence from `state` over `sequence`.
    pub fn run_from(&self, state: LstmState<T>, sequence: &[Vec<T>]) -> Result<LstmState<T>> {
        sequence.iter().try_fold(state, |s, x| self.step(&s, x))
    }

    pub fn readout(&self, state: &LstmState<T>) -> Vec<T> {
        softmax(&self.readout_logits(state))
    }

    pub fn readout_logits(&self, state: &LstmState<T>) -> Vec<T> {
        self.readout.apply(&state.hidden)
    }

    /// Class probabilities after consuming the whole sequence.
    pub fn forward(&self, sequence: &[Vec<T>]) -> Result<Vec<T>> {
        Ok(self.readout(&self.run_from(self.initial_state(), sequence)?))
    }

    fn check_step(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch { expected: self.input, actual: x.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        Ok(())
    }

    /// Loss and gradients by backpropagation through time.
    pub fn backward(&self, sequence: &[Vec<T>], label: usize) -> Result<(T, Gradients<T>)> {
        for x in sequence {
            self.check_step(x)?;
        }
        let mut grads = self.zero_gradients();
        let loss = self.accumulate(sequence, label, &mut grads);
        Ok((loss, grads))
    }

    fn accumulate(&self, sequence: &[Vec<T>], label: usize, grads: &mut Gradients<T>) -> T {
        let h = self.hidden;
        let mut state = self.initial_state();
        let mut caches = Vec::with_capacity(sequence.len());
        for x in sequence {
            let gates = self.gate_activations(&state, x);
            let next = self.advance(&state, &gates);
            caches.push(StepCache {
                x: x.clone(),
                h_prev: state.hidden,
                c_prev: state.cell,
                gates,
                tanh_c: next.cell.iter().map(|c| c.tanh()).collect(),
            });
            state = next;
        }
        let logits = self.readout.apply(&state.hidden);
        let loss = cross_entropy_from_logits(&logits, label);
        let mut d_logits = softmax(&logits);
        d_logits[label] -= T::one();

        let [g_wx, g_wh, g_b, g_v, g_c] = &mut grads.tensors[..] else {
            unreachable!("LSTM has five parameter tensors")
        };
        outer_add(g_v, &d_logits, &state.hidden);
        for (g, &d) in g_c.iter_mut().zip(&d_logits) {
            *g += d;
        }
        let mut dh = vec![T::zero(); h];
        transpose_matvec_add(&mut dh, &self.readout.weights, &d_logits);
        let mut dc = vec![T::zero(); h];
        let mut da = vec![T::zero(); GATES * h];
        let one = T::one();
        for cache in caches.iter().rev() {
            let gates = &cache.gates;
            for k in 0..h {
                let (i, f, o, g) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let tc = cache.tanh_c[k];
                dc[k] += dh[k] * o * (one - tc * tc);
                let d_o = dh[k] * tc;
                let d_i = dc[k] * g;
                let d_g = dc[k] * i;
                let d_f = dc[k] * cache.c_prev[k];
                da[k] = d_i * i * (one - i);
                da[h + k] = d_f * f * (one - f);
                da[2 * h + k] = d_o * o * (one - o);
                da[3 * h + k] = d_g * (one - g * g);
                dc[k] *= f;
            }
            outer_add(g_wx, &da, &cache.x);
            outer_add(g_wh, &da, &cache.h_prev);
            for (g, &d) in g_b.iter_mut().zip(&da) {
                *g += d;
            }
            dh.fill(T::zero());
            transpose_matvec_add(&mut dh, &self.recurrent_weights, &da);
        }
        loss
    }
}

impl<T: Scalar> Network<T> for LstmModel<T> {
    type Input = Vec<Vec<T>>;

    fn num_classes(&self) -> usize {
        self.readout.outputs
    }

    fn probabilities(&self, input: &Vec<Vec<T>>) -> Result<Vec<T>> {
        self.forward(input)
    }

    fn accumulate_gradients(&self, input: &Vec<Vec<T>>, label: usize, grads: &mut Gradients<T>) -> T {
        self.accumulate(input, label, grads)
    }

    fn parameters(&self) -> Vec<&[T]> {
        vec![
            &self.input_weights,
            &self.recurrent_weights,
            &self.bias,
            &self.readout.weights,
            &self.readout.bias,
        ]
    }

    fn parameters_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.input_weights,
            &mut self.recurrent_weights,
            &mut self.bias,
            &mut self.readout.weights,
            &mut self.readout.bias,
        ]
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct GateRepr<T> {
    input_weights: Vec<Vec<T>>,
    recurrent_weights: Vec<Vec<T>>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LstmRepr<T> {
    input_width: usize,
    hidden_width: usize,
    gates: std::collections::BTreeMap<String, GateRepr<T>>,
    readout: DenseLayer<T>,
}

fn rows<T: Clone>(flat: &[T], cols: usize) -> Vec<Vec<T>> {
    if cols == 0 {
        return vec![Vec::new(); flat.len()];
    }
    flat.chunks(cols).map(|r| r.to_vec()).collect()
}

impl<T: Scalar> From<LstmModel<T>> for LstmRepr<T> {
    fn from(m: LstmModel<T>) -> Self {
        let h = m.hidden;
        let gates = GATE_NAMES
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let gate = GateRepr {
                    input_weights: rows(&m.input_weights[k * h * m.input..(k + 1) * h * m.input], m.input),
                    recurrent_weights: rows(&m.recurrent_weights[k * h * h..(k + 1) * h * h], h),
                    bias: m.bias[k * h..(k + 1) * h].to_vec(),
                };
                (name.to_string(), gate)
            })
            .collect();
        Self { input_width: m.input, hidden_width: h, gates, readout: m.readout }
    }
}

impl<T: Scalar> TryFrom<LstmRepr<T>> for LstmModel<T> {
    type Error = Error;

    fn try_from(mut r: LstmRepr<T>) -> Result<Self> {
        let (input, h) = (r.input_width, r.hidden_width);
        let mut model = Self::zeros(input, h, r.readout.outputs);
        for (k, name) in GATE_NAMES.iter().enumerate() {
            let gate = r.gates.remove(*name).ok_or_else(|| Error::InvalidArgument(format!("missing gate {name}")))?;
            let wx = gate.input_weights.concat();
            let wh = gate.recurrent_weights.concat();
            if gate.input_weights.len() != h
                || gate.recurrent_weights.len() != h
                || wx.len() != h * input
                || wh.len() != h * h
                || gate.bias.len() != h
            {
                return Err(Error::InvalidArgument(format!("gate {name} has the wrong shape")));
            }
            model.input_weights[k * h * input..(k + 1) * h * input].copy_from_slice(&wx);
            model.recurrent_weights[k * h * h..(k + 1) * h * h].copy_from_slice(&wh);
            model.bias[k * h..(k + 1) * h].copy_from_slice(&gate.bias);
        }
        if r.readout.inputs != h {
            return Err(Error::ShapeMismatch { expected: h, actual: r.readout.inputs });
        }
        model.readout = r.readout;
        Ok(model)
    }
}

/// Sum of the probability mass on labels where `ion` is bright.
pub fn bright_marginal<T: Scalar>(probabilities: &[T], ion: usize, num_qubits: usize) -> f64 {
    probabilities
        .iter()
        .enumerate()
        .filter(|(k, _)| (k >> (num_qubits - 1 - ion)) & 1 == 1)
        .map(|(_, p)| p.as_f64())
        .sum()
}

/// All-zero sequence of `num_bins` steps except one click at `bin` on feature row `row`.
pub fn single_photon_sequence(num_bins: usize, width: usize, bin: usize, row: usize) -> Vec<Vec<u32>> {
    let mut seq = vec![vec![0u32; width]; num_bins];
    seq[bin][row] = 1;
    seq
}

/// Probability that `ion` is bright given a single click at `bin` on feature row `row`.
pub fn probe_arrival_time<T: Scalar>(
    model: &LstmModel<T>,
    normalizer: &Normalizer,
    num_bins: usize,
    bin: usize,
    row: usize,
    ion: usize,
    num_qubits: usize,
) -> Result<f64> {
    if bin >= num_bins || row >= model.input_width() || ion >= num_qubits {
        return Err(Error::InvalidArgument(format!("probe position (bin {bin}, row {row}, ion {ion}) out of range")));
    }
    if model.num_classes() != 1 << num_qubits {
        return Err(Error::ShapeMismatch { expected: 1 << num_qubits, actual: model.num_classes() });
    }
    let seq: Vec<Vec<T>> = single_photon_sequence(num_bins, model.input_width(), bin, row)
        .iter()
        .map(|x| normalizer.apply_as(x))
        .collect();
    let p = model.forward(&seq)?;
    Ok(bright_marginal(&p, ion, num_qubits))
}
