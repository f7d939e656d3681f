//! Count-threshold discriminators.
//!
//! An ion is read as bright when the count on its own channel is strictly
//! greater than its threshold. The adaptive variant keeps one threshold per
//! joint state of the ion's chain neighbors and iterates synchronous updates
//! to a fixed point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::BasisLabel;

/// Minimum training samples a neighbor context needs before it gets its own threshold.
pub const DEFAULT_MIN_CONTEXT_SAMPLES: usize = 100;
pub const DEFAULT_MAX_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedThresholdModel {
    pub thresholds: Vec<u32>,
}

/// Threshold minimizing the sum of per-class error rates; ties go to the
/// smaller threshold. Histograms are indexed by count.
pub fn best_threshold(bright: &[u64], dark: &[u64]) -> Option<u32> {
    let n_bright: u64 = bright.iter().sum();
    let n_dark: u64 = dark.iter().sum();
    if n_bright == 0 || n_dark == 0 {
        return None;
    }
    let max_count = bright.len().max(dark.len()).saturating_sub(1);
    let mut bright_at_or_below = 0u64;
    let mut dark_at_or_below = 0u64;
    let mut best: Option<(u128, u32)> = None;
    for theta in 0..=max_count {
        bright_at_or_below += bright.get(theta).copied().unwrap_or(0);
        dark_at_or_below += dark.get(theta).copied().unwrap_or(0);
        let false_dark = bright_at_or_below as u128;
        let false_bright = (n_dark - dark_at_or_below) as u128;
        // error rates scaled by n_bright * n_dark so ties compare exactly
        let cost = false_dark * n_dark as u128 + false_bright * n_bright as u128;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, theta as u32));
        }
    }
    best.map(|(_, t)| t)
}

fn add_to_histogram(hist: &mut Vec<u64>, count: u32) {
    let i = count as usize;
    if hist.len() <= i {
        hist.resize(i + 1, 0);
    }
    hist[i] += 1;
}

fn check_inputs(counts: &[Vec<u32>], labels: &[BasisLabel]) -> Result<usize> {
    if counts.len() != labels.len() {
        return Err(Error::ShapeMismatch { expected: labels.len(), actual: counts.len() });
    }
    let first = labels.first().ok_or(Error::InvalidArgument("empty training set".into()))?;
    let n = first.num_qubits();
    for (c, l) in counts.iter().zip(labels) {
        if c.len() != n || l.num_qubits() != n {
            return Err(Error::ShapeMismatch { expected: n, actual: c.len() });
        }
    }
    Ok(n)
}

/// Fits one threshold per ion from its own-channel total counts.
pub fn fit_fixed(counts: &[Vec<u32>], labels: &[BasisLabel]) -> Result<FixedThresholdModel> {
    let n = check_inputs(counts, labels)?;
    let thresholds = (0..n)
        .map(|ion| {
            let (mut bright, mut dark) = (Vec::new(), Vec::new());
            for (c, l) in counts.iter().zip(labels) {
                add_to_histogram(if l.bit(ion) { &mut bright } else { &mut dark }, c[ion]);
            }
            best_threshold(&bright, &dark).ok_or(Error::SingleClass { ion })
        })
        .collect::<Result<_>>()?;
    Ok(FixedThresholdModel { thresholds })
}

impl FixedThresholdModel {
    pub fn classify_bits(&self, counts: &[u32]) -> Vec<bool> {
        counts.iter().zip(&self.thresholds).map(|(&c, &t)| c > t).collect()
    }

    pub fn classify(&self, counts: &[u32]) -> BasisLabel {
        BasisLabel::from_bits(&self.classify_bits(counts)).expect("threshold count matches register size")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdaptiveThresholdModel {
    pub fixed: FixedThresholdModel,
    /// `contexts[ion][k]`: threshold when the neighbors' bits, read in chain
    /// order as a binary number, equal `k`.
    pub contexts: Vec<Vec<u32>>,
    pub neighbors: Vec<Vec<usize>>,
    pub max_iterations: usize,
    /// Contexts that fell back to the fixed threshold for lack of data.
    pub starved: Vec<StarvedContext>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarvedContext {
    pub ion: usize,
    pub context: String,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaptiveOptions {
    pub min_context_samples: usize,
    pub max_iterations: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self { min_context_samples: DEFAULT_MIN_CONTEXT_SAMPLES, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

/// Adjacent ions in a linear chain.
pub fn chain_neighbors(num_ions: usize) -> Vec<Vec<usize>> {
    (0..num_ions)
        .map(|i| {
            let mut v = Vec::new();
            if i > 0 {
                v.push(i - 1);
            }
            if i + 1 < num_ions {
                v.push(i + 1);
            }
            v
        })
        .collect()
}

fn context_index(neighbors: &[usize], bits: &[bool]) -> usize {
    neighbors.iter().fold(0, |acc, &j| (acc << 1) | bits[j] as usize)
}

fn context_name(index: usize, width: usize) -> String {
    (0..width).map(|k| if (index >> (width - 1 - k)) & 1 == 1 { '1' } else { '0' }).collect()
}

/// Fits a fixed model, then a threshold per ion and neighbor context using
/// the true neighbor states of the training samples.
pub fn fit_adaptive(counts: &[Vec<u32>], labels: &[BasisLabel], options: AdaptiveOptions) -> Result<AdaptiveThresholdModel> {
    if options.max_iterations == 0 {
        return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
    }
    let fixed = fit_fixed(counts, labels)?;
    let n = fixed.thresholds.len();
    let neighbors = chain_neighbors(n);
    let mut starved = Vec::new();
    let mut contexts = Vec::with_capacity(n);
    for ion in 0..n {
        let num_contexts = 1 << neighbors[ion].len();
        let mut bright = vec![Vec::new(); num_contexts];
        let mut dark = vec![Vec::new(); num_contexts];
        for (c, l) in counts.iter().zip(labels) {
            let k = context_index(&neighbors[ion], &l.bits());
            add_to_histogram(if l.bit(ion) { &mut bright[k] } else { &mut dark[k] }, c[ion]);
        }
        let table = (0..num_contexts)
            .map(|k| {
                let samples = (bright[k].iter().sum::<u64>() + dark[k].iter().sum::<u64>()) as usize;
                match best_threshold(&bright[k], &dark[k]) {
                    Some(t) if samples >= options.min_context_samples => t,
                    _ => {
                        starved.push(StarvedContext {
                            ion,
                            context: context_name(k, neighbors[ion].len()),
                            samples,
                        });
                        fixed.thresholds[ion]
                    }
                }
            })
            .collect();
        contexts.push(table);
    }
    Ok(AdaptiveThresholdModel { fixed, contexts, neighbors, max_iterations: options.max_iterations, starved })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaptiveOutcome {
    pub label: BasisLabel,
    pub iterations: usize,
    pub converged: bool,
}

impl AdaptiveThresholdModel {
    /// Model whose every context uses the fixed threshold.
    pub fn from_fixed(fixed: FixedThresholdModel, max_iterations: usize) -> Self {
        let neighbors = chain_neighbors(fixed.thresholds.len());
        let contexts = neighbors
            .iter()
            .zip(&fixed.thresholds)
            .map(|(nb, &t)| vec![t; 1 << nb.len()])
            .collect();
        Self { fixed, contexts, neighbors, max_iterations, starved: Vec::new() }
    }

    /// One synchronous update of every bit given the current neighbor bits.
    pub fn update(&self, counts: &[u32], bits: &[bool]) -> Vec<bool> {
        (0..bits.len())
            .map(|ion| counts[ion] > self.contexts[ion][context_index(&self.neighbors[ion], bits)])
            .collect()
    }

    pub fn classify(&self, counts: &[u32]) -> AdaptiveOutcome {
        let mut bits = self.fixed.classify_bits(counts);
        for iteration in 1..=self.max_iterations {
            let next = self.update(counts, &bits);
            if next == bits {
                return AdaptiveOutcome { label: to_label(&bits), iterations: iteration, converged: true };
            }
            bits = next;
        }
        AdaptiveOutcome { label: to_label(&bits), iterations: self.max_iterations, converged: false }
    }
}

fn to_label(bits: &[bool]) -> BasisLabel {
    BasisLabel::from_bits(bits).expect("threshold count matches register size")
}

/// JSON form of fitted thresholds, keyed by ion index and context bitstring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub fixed: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<BTreeMap<String, BTreeMap<String, u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub starved: Vec<StarvedContext>,
}

impl From<&FixedThresholdModel> for ThresholdFile {
    fn from(m: &FixedThresholdModel) -> Self {
        Self {
            fixed: m.thresholds.iter().enumerate().map(|(i, &t)| (i.to_string(), t)).collect(),
            adaptive: None,
            max_iterations: None,
            starved: Vec::new(),
        }
    }
}

impl From<&AdaptiveThresholdModel> for ThresholdFile {
    fn from(m: &AdaptiveThresholdModel) -> Self {
        let adaptive = m
            .contexts
            .iter()
            .enumerate()
            .map(|(ion, table)| {
                let width = m.neighbors[ion].len();
                let entries = table.iter().enumerate().map(|(k, &t)| (context_name(k, width), t)).collect();
                (ion.to_string(), entries)
            })
            .collect();
        Self {
            adaptive: Some(adaptive),
            max_iterations: Some(m.max_iterations),
            starved: m.starved.clone(),
            ..Self::from(&m.fixed)
        }
    }
}

impl ThresholdFile {
    fn fixed_model(&self) -> Result<FixedThresholdModel> {
        let thresholds = (0..self.fixed.len())
            .map(|i| {
                self.fixed
                    .get(&i.to_string())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("missing fixed threshold for ion {i}")))
            })
            .collect::<Result<_>>()?;
        Ok(FixedThresholdModel { thresholds })
    }

    pub fn into_fixed(self) -> Result<FixedThresholdModel> {
        self.fixed_model()
    }

    pub fn into_adaptive(self) -> Result<AdaptiveThresholdModel> {
        let fixed = self.fixed_model()?;
        let adaptive = self.adaptive.as_ref().ok_or(Error::Config("no adaptive thresholds".into()))?;
        let mut model = AdaptiveThresholdModel::from_fixed(fixed, self.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS));
        for (ion, table) in model.contexts.iter_mut().enumerate() {
            let width = model.neighbors[ion].len();
            let entries = adaptive
                .get(&ion.to_string())
                .ok_or_else(|| Error::Config(format!("missing adaptive thresholds for ion {ion}")))?;
            for (k, t) in table.iter_mut().enumerate() {
                *t = *entries
                    .get(&context_name(k, width))
                    .ok_or_else(|| Error::Config(format!("missing context {} for ion {ion}", context_name(k, width))))?;
            }
        }
        model.starved = self.starved;
        Ok(model)
    }
}
