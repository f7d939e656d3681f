//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ionreadout::nn::{cross_entropy_from_logits, DenseLayer, MlpModel, Network};
use ionreadout::rnn::LstmModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, DiscreteCDF, Poisson};

pub const FD_STEP: f64 = 1e-5;
pub const FD_MAX_RELATIVE_ERROR: f64 = 1e-4;

/// Worst relative error between `analytic` and central differences of `loss`
/// over every parameter. Gradients below 1e-6 × max(1, |loss|) are compared
/// against that floor, since difference-quotient round-off grows with the loss.
pub fn worst_fd_error<N, F>(model: &N, loss: F, analytic: &[Vec<f64>]) -> f64
where
    N: Network<f64>,
    F: Fn(&N) -> f64,
{
    let floor = 1e-6 * loss(model).abs().max(1.0);
    let mut worst: f64 = 0.0;
    for (t, &len) in model.parameter_shapes().iter().enumerate() {
        for i in 0..len {
            let mut plus = model.clone();
            plus.parameters_mut()[t][i] += FD_STEP;
            let mut minus = model.clone();
            minus.parameters_mut()[t][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let a = analytic[t][i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
    }
    worst
}

pub fn random_layer(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize, scale: f64) -> DenseLayer<f64> {
    let mut l = DenseLayer::zeros(inputs, outputs);
    l.weights.iter_mut().for_each(|w| *w = rng.random_range(-scale..scale));
    l.bias.iter_mut().for_each(|b| *b = rng.random_range(-scale..scale));
    l
}

/// True when no rectifier input lies within 1e-3 of its kink, so a finite
/// step cannot cross it.
pub fn clear_of_kinks(model: &MlpModel<f64>, x: &[f64]) -> bool {
    let mut a = x.to_vec();
    for layer in &model.layers()[..model.layers().len() - 1] {
        let z = layer.apply(&a);
        if z.iter().any(|v| v.abs() < 1e-3) {
            return false;
        }
        a = z.into_iter().map(|v| v.max(0.0)).collect();
    }
    true
}

/// Worst finite-difference error over `cases` random MLPs. Every fourth model
/// has its output layer scaled until the largest logit reaches ±50.
pub fn mlp_fd_sweep(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < cases {
        let input = rng.random_range(1..6);
        let hidden = [rng.random_range(8..12), rng.random_range(8..12)];
        let classes = [2, 4, 8][rng.random_range(0..3)];
        let mut model = MlpModel::from_layers(vec![
            random_layer(&mut rng, input, hidden[0], 1.0),
            random_layer(&mut rng, hidden[0], hidden[1], 1.0),
            random_layer(&mut rng, hidden[1], classes, 1.0),
        ])
        .unwrap();
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(0.0..2.0)).collect();
        if !clear_of_kinks(&model, &x) {
            continue;
        }
        if checked % 4 == 3 {
            let peak = model.logits(&x).iter().fold(0.0f64, |m, l| m.max(l.abs()));
            let out = &mut model.layers_mut()[2];
            out.weights.iter_mut().chain(out.bias.iter_mut()).for_each(|w| *w *= 50.0 / peak);
        }
        let label = rng.random_range(0..classes);
        let (_, grads) = model.backward(&x, label).unwrap();
        worst = worst.max(worst_fd_error(&model, |m| cross_entropy_from_logits(&m.logits(&x), label), &grads.tensors));
        checked += 1;
    }
    worst
}

pub fn lstm_loss(model: &LstmModel<f64>, seq: &[Vec<f64>], label: usize) -> f64 {
    let mut state = model.initial_state();
    for x in seq {
        state = model.step(&state, x).unwrap();
    }
    cross_entropy_from_logits(&model.readout_logits(&state), label)
}

/// Worst finite-difference error over `cases` random LSTMs with H ≤ 4, T ≤ 5.
pub fn lstm_fd_sweep(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let input = rng.random_range(1..4);
        let hidden = rng.random_range(1..=4);
        let steps = rng.random_range(0..=5);
        let classes = [2, 4, 8][rng.random_range(0..3)];
        let mut model = LstmModel::zeros(input, hidden, classes);
        for p in model.parameters_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let seq: Vec<Vec<f64>> = (0..steps).map(|_| (0..input).map(|_| rng.random_range(0.0..2.0)).collect()).collect();
        let label = rng.random_range(0..classes);
        let (_, grads) = model.backward(&seq, label).unwrap();
        worst = worst.max(worst_fd_error(&model, |m| lstm_loss(m, &seq, label), &grads.tensors));
    }
    worst
}

/// Straight transcription of the ADADELTA rule: returns (Δx, E[g²], E[Δx²]).
pub fn adadelta_reference(eg2: f64, edx2: f64, g: f64, rho: f64, eps: f64) -> (f64, f64, f64) {
    let eg2 = rho * eg2 + (1.0 - rho) * g * g;
    let dx = -((edx2 + eps).sqrt() / (eg2 + eps).sqrt()) * g;
    let edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    (dx, eg2, edx2)
}

/// argmin over θ of P(N_bright ≤ θ) + P(N_dark > θ); the smallest θ on ties.
pub fn poisson_threshold_oracle(bright_mean: f64, dark_mean: f64) -> u32 {
    let b = Poisson::new(bright_mean).unwrap();
    let d = Poisson::new(dark_mean).unwrap();
    let cost = |t: u64| b.cdf(t) + (1.0 - d.cdf(t));
    (0..200u64).min_by(|&x, &y| cost(x).partial_cmp(&cost(y)).unwrap()).unwrap() as u32
}

/// Histogram proportional to the Poisson pmf, scaled so rounding cannot move
/// the optimum.
pub fn scaled_poisson_histogram(mean: f64) -> Vec<u64> {
    let p = Poisson::new(mean).unwrap();
    let mut prev = 0.0;
    (0..200u64)
        .map(|k| {
            let c = p.cdf(k);
            let mass = c - prev;
            prev = c;
            (mass * 1e15).round() as u64
        })
        .collect()
}

/// Chi-square goodness-of-fit p-value of `counts` against Poisson(`mean`),
/// pooling cells until every expected count is at least 5.
pub fn poisson_chi_square_p(counts: &[usize], mean: f64) -> f64 {
    let poisson = Poisson::new(mean).unwrap();
    let n = counts.len() as f64;
    let max = *counts.iter().max().unwrap();
    let mut observed = vec![0f64; max + 1];
    for &c in counts {
        observed[c] += 1.0;
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for k in 0..=max {
        o_acc += observed[k];
        e_acc += n * poisson.pmf(k as u64);
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    let last = cells.last_mut().unwrap();
    last.0 += o_acc;
    last.1 += e_acc + n * (1.0 - poisson.cdf(max as u64));
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(stat)
}

/// Spearman rank correlation for samples without ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}
