//! Detection fidelity: confusion matrices, the unweighted mean of
//! p(measured i | prepared i) over all basis states, binomial errors, and
//! relative error reduction between strategies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::BasisLabel;

/// Rows are prepared states, columns measured states, both in label-index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_qubits: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_qubits: usize) -> Self {
        let k = 1usize << num_qubits;
        Self { num_qubits, counts: vec![0; k * k] }
    }

    pub fn from_rows(num_qubits: usize, rows: &[Vec<u64>]) -> Result<Self> {
        let k = 1usize << num_qubits;
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch { expected: k, actual: rows.len() });
        }
        Ok(Self { num_qubits, counts: rows.concat() })
    }

    pub fn num_states(&self) -> usize {
        1 << self.num_qubits
    }

    pub fn get(&self, prepared: usize, measured: usize) -> u64 {
        self.counts[prepared * self.num_states() + measured]
    }

    pub fn add(&mut self, prepared: usize, measured: usize) {
        let k = self.num_states();
        self.counts[prepared * k + measured] += 1;
    }

    pub fn row_sum(&self, prepared: usize) -> u64 {
        let k = self.num_states();
        self.counts[prepared * k..(prepared + 1) * k].iter().sum()
    }
}

pub fn confusion(predictions: &[BasisLabel], truths: &[BasisLabel]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch { expected: truths.len(), actual: predictions.len() });
    }
    let first = truths.first().ok_or(Error::InvalidArgument("no samples to tally".into()))?;
    let mut m = ConfusionMatrix::new(first.num_qubits());
    for (p, t) in predictions.iter().zip(truths) {
        if p.num_qubits() != m.num_qubits || t.num_qubits() != m.num_qubits {
            return Err(Error::InvalidLabel(format!("label length mismatch: {p} vs {t}")));
        }
        m.add(t.index(), p.index());
    }
    Ok(m)
}

/// Tally from class indices.
pub fn confusion_from_indices(num_qubits: usize, predictions: &[usize], truths: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::ShapeMismatch { expected: truths.len(), actual: predictions.len() });
    }
    let mut m = ConfusionMatrix::new(num_qubits);
    let k = m.num_states();
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= k || t >= k {
            return Err(Error::InvalidLabel(format!("class index out of range for {num_qubits} qubits")));
        }
        m.add(t, p);
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFidelity {
    pub state: BasisLabel,
    pub fidelity: f64,
    pub stderr: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub strategy: String,
    pub states: Vec<StateFidelity>,
    pub average: f64,
    pub average_stderr: f64,
}

pub fn fidelity(matrix: &ConfusionMatrix) -> Result<FidelityReport> {
    fidelity_for("", matrix)
}

pub fn fidelity_for(strategy: &str, matrix: &ConfusionMatrix) -> Result<FidelityReport> {
    let labels = BasisLabel::all(matrix.num_qubits)?;
    let states = labels
        .iter()
        .map(|&state| {
            let i = state.index();
            let n = matrix.row_sum(i);
            if n == 0 {
                return Err(Error::EmptyRow(state.to_string()));
            }
            let p = matrix.get(i, i) as f64 / n as f64;
            Ok(StateFidelity { state, fidelity: p, stderr: (p * (1.0 - p) / n as f64).sqrt(), samples: n })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = states.len() as f64;
    let average = states.iter().map(|s| s.fidelity).sum::<f64>() / k;
    let average_stderr = states.iter().map(|s| s.stderr * s.stderr).sum::<f64>().sqrt() / k;
    Ok(FidelityReport { strategy: strategy.to_string(), states, average, average_stderr })
}

impl FidelityReport {
    pub fn error(&self) -> f64 {
        1.0 - self.average
    }

    pub fn state(&self, label: &str) -> Option<&StateFidelity> {
        self.states.iter().find(|s| s.state.to_string() == label)
    }
}

/// Relative reduction of the average error, with its propagated uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub value: f64,
    pub stderr: f64,
}

pub fn improvement(baseline: &FidelityReport, candidate: &FidelityReport) -> Result<Improvement> {
    if baseline.states.len() != candidate.states.len() {
        return Err(Error::ShapeMismatch { expected: baseline.states.len(), actual: candidate.states.len() });
    }
    let e_base = baseline.error();
    let e_cand = candidate.error();
    if e_base <= 0.0 {
        return Err(Error::UndefinedImprovement);
    }
    let value = (e_base - e_cand) / e_base;
    // d/d(e_cand) = -1/e_base, d/d(e_base) = e_cand/e_base^2
    let stderr = ((candidate.average_stderr / e_base).powi(2)
        + (e_cand * baseline.average_stderr / (e_base * e_base)).powi(2))
    .sqrt();
    Ok(Improvement { value, stderr })
}

/// Stratified train/test split of sample indices.
///
/// Within each label, indices are shuffled with `seed` and the first
/// `round(fraction * n)` go to training. Both outputs are sorted.
pub fn split(labels: &[BasisLabel], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_label: std::collections::BTreeMap<BasisLabel, Vec<usize>> = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_label.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut idx) in by_label {
        idx.shuffle(&mut rng);
        let cut = (fraction * idx.len() as f64).round() as usize;
        if cut == 0 || cut == idx.len() {
            return Err(Error::InvalidArgument(format!(
                "fraction {fraction} leaves an empty split for label {label} ({} samples)",
                idx.len()
            )));
        }
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One CSV row per (strategy, state).
pub fn reports_csv(reports: &[FidelityReport]) -> String {
    let mut out = String::from("strategy,state,fidelity,stderr\n");
    for r in reports {
        for s in &r.states {
            out.push_str(&format!("{},{},{},{}\n", r.strategy, s.state, s.fidelity, s.stderr));
        }
        out.push_str(&format!("{},average,{},{}\n", r.strategy, r.average, r.average_stderr));
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn all(n: usize) -> Vec<BasisLabel> {
        BasisLabel::all(n).unwrap()
    }

    #[test]
    fn perfect_predictions_give_diagonal() {
        let truths: Vec<_> = all(2).into_iter().cycle().take(40).collect();
        let m = confusion(&truths, &truths).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.get(i, j), if i == j { 10 } else { 0 });
            }
        }
        let r = fidelity(&m).unwrap();
        assert_eq!(r.average, 1.0);
        assert_eq!(r.average_stderr, 0.0);
    }

    #[test]
    fn constant_predictor_fills_one_column() {
        let truths: Vec<_> = all(3).into_iter().cycle().take(80).collect();
        let preds = vec!["101".parse().unwrap(); 80];
        let m = confusion(&preds, &truths).unwrap();
        for i in 0..8 {
            assert_eq!(m.get(i, 5), 10);
            assert_eq!(m.row_sum(i), 10);
        }
        assert_eq!(fidelity(&m).unwrap().average, 1.0 / 8.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let a: Vec<BasisLabel> = vec!["01".parse().unwrap()];
        let b: Vec<BasisLabel> = vec!["011".parse().unwrap()];
        assert!(confusion(&a, &b).is_err());
        assert!(confusion(&a, &[]).is_err());
    }

    #[test]
    fn recount_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels = all(3);
        let truths: Vec<_> = (0..500).map(|_| labels[rng.random_range(0..8)]).collect();
        let preds: Vec<_> = (0..500).map(|_| labels[rng.random_range(0..8)]).collect();
        let m = confusion(&preds, &truths).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let n = truths.iter().zip(&preds).filter(|(t, p)| t.index() == i && p.index() == j).count();
                assert_eq!(m.get(i, j), n as u64);
            }
        }
    }

    #[test]
    fn hand_matrix() {
        let m = ConfusionMatrix::from_rows(1, &[vec![98, 2], vec![4, 96]]).unwrap();
        let r = fidelity(&m).unwrap();
        assert_eq!(r.states[0].fidelity, 0.98);
        assert_eq!(r.states[1].fidelity, 0.96);
        assert!((r.average - 0.97).abs() <= f64::EPSILON);
        assert!((r.states[0].stderr - (0.98f64 * 0.02 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn uniform_random_predictor_is_at_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels = all(3);
        let truths: Vec<_> = labels.iter().cycle().take(80_000).copied().collect();
        let preds: Vec<_> = (0..80_000).map(|_| labels[rng.random_range(0..8)]).collect();
        let r = fidelity(&confusion(&preds, &truths).unwrap()).unwrap();
        assert!((r.average - 0.125).abs() < 4.0 * r.average_stderr);
    }

    #[test]
    fn empty_row_rejected() {
        let m = ConfusionMatrix::from_rows(1, &[vec![5, 0], vec![0, 0]]).unwrap();
        assert!(matches!(fidelity(&m), Err(Error::EmptyRow(s)) if s == "1"));
    }

    fn report(average: f64, stderr: f64) -> FidelityReport {
        FidelityReport { strategy: String::new(), states: vec![], average, average_stderr: stderr }
    }

    #[test]
    fn improvement_arithmetic() {
        let i = improvement(&report(0.990, 0.0), &report(0.993, 0.0)).unwrap();
        assert!((i.value - 0.30).abs() < 1e-12);
        assert_eq!(improvement(&report(0.99, 0.001), &report(0.99, 0.001)).unwrap().value, 0.0);
        assert!(improvement(&report(0.993, 0.0), &report(0.990, 0.0)).unwrap().value < 0.0);
        assert!(matches!(improvement(&report(1.0, 0.0), &report(0.99, 0.0)), Err(Error::UndefinedImprovement)));
    }

    #[test]
    fn improvement_uncertainty_propagates() {
        let i = improvement(&report(0.99, 0.001), &report(0.995, 0.0005)).unwrap();
        let expected = ((0.0005f64 / 0.01).powi(2) + (0.005 * 0.001 / 1e-4f64).powi(2)).sqrt();
        assert!((i.stderr - expected).abs() < 1e-9);
    }

    #[test]
    fn split_is_stratified_and_reproducible() {
        let labels: Vec<_> = all(3).into_iter().flat_map(|l| [l, l]).collect();
        let (train, test) = split(&labels, 0.5, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 8));
        for l in all(3) {
            assert_eq!(train.iter().filter(|&&i| labels[i] == l).count(), 1);
            assert_eq!(test.iter().filter(|&&i| labels[i] == l).count(), 1);
        }
        assert_eq!(split(&labels, 0.5, 3).unwrap(), (train, test));
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let labels: Vec<_> = all(2).into_iter().cycle().take(1003).collect();
        let (train, test) = split(&labels, 0.8, 17).unwrap();
        let mut union: Vec<usize> = train.iter().chain(&test).copied().collect();
        union.sort_unstable();
        assert_eq!(union, (0..1003).collect::<Vec<_>>());
        assert!(split(&labels, 1.0, 0).is_err());
        assert!(split(&labels, 0.9999, 0).is_err());
    }
}
