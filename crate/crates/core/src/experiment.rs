//! End-to-end runs: featurize a dataset, fit every requested strategy on a
//! shared split, score it on the held-out shots and write the artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Strategy};
use crate::error::{Error, Result};
use crate::eval::{confusion_from_indices, fidelity_for, improvement, reports_csv, split, FidelityReport, Improvement};
use crate::featurize::{bin_sample, flatten, image_columns, ion_totals, FeatureSpec, Normalizer};
use crate::label::BasisLabel;
use crate::nn::{argmax, history_csv, train, EpochRecord, MlpModel, Network, TrainConfig};
use crate::rnn::{bright_marginal, probe_arrival_time, LstmModel};
use crate::sim::{generate_dataset_with, Dataset, DetectorGeometry, ReadoutSample};
use crate::threshold::{fit_adaptive, fit_fixed, AdaptiveThresholdModel, FixedThresholdModel, ThresholdFile};

pub const ARTIFACT_FORMAT: &str = "ionreadout-model";
pub const ARTIFACT_VERSION: u32 = 1;

pub fn generate_from_config(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    generate_dataset_with(
        &config.geometry()?,
        &config.model()?,
        config.samples_per_label,
        config.seed,
        &config.generation_options(),
    )
}

/// Sample indices of the shared train/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split drawn from the data seed, so every strategy and every
/// training seed sees the same test shots.
pub fn split_dataset(dataset: &Dataset, train_fraction: f64) -> Result<Split> {
    let (train, test) = split(&dataset.labels(), train_fraction, dataset.seed)?;
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub data_seed: u64,
    pub train_seed: u64,
    pub train_samples: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArtifact {
    pub strategy: Strategy,
    pub num_qubits: usize,
    pub feature_spec: FeatureSpec,
    pub channel_ids: Vec<usize>,
    pub normalizer: Normalizer,
    pub model: MlpModel<f64>,
    pub metadata: TrainingMetadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmArtifact {
    pub num_qubits: usize,
    pub feature_spec: FeatureSpec,
    pub channel_ids: Vec<usize>,
    pub window_us: f64,
    /// One scale per channel, shared by all time steps.
    pub normalizer: Normalizer,
    pub model: LstmModel<f64>,
    pub metadata: TrainingMetadata,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Threshold { strategy: Strategy, num_qubits: usize, thresholds: ThresholdFile },
    Mlp(MlpArtifact),
    Lstm(LstmArtifact),
}

#[derive(Serialize, Deserialize)]
struct ArtifactFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    pub fn strategy(&self) -> Strategy {
        match self {
            Model::Threshold { strategy, .. } => *strategy,
            Model::Mlp(m) => m.strategy,
            Model::Lstm(_) => Strategy::Rnn,
        }
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            Model::Threshold { num_qubits, .. } => *num_qubits,
            Model::Mlp(m) => m.num_qubits,
            Model::Lstm(m) => m.num_qubits,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ArtifactFile { format: ARTIFACT_FORMAT.into(), version: ARTIFACT_VERSION, model: self.clone() };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ArtifactFile = serde_json::from_str(text)?;
        if file.format != ARTIFACT_FORMAT || file.version != ARTIFACT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported artifact {} v{}", file.format, file.version)));
        }
        file.model.check()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_json()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<()> {
        let classes = 1usize.checked_shl(self.num_qubits() as u32).unwrap_or(0);
        let bad = |what: String| Err(Error::InvalidModel(what));
        match self {
            Model::Threshold { strategy, thresholds, num_qubits } => {
                if thresholds.fixed.len() != *num_qubits {
                    return bad(format!("{} thresholds for {num_qubits} ions", thresholds.fixed.len()));
                }
                if *strategy == Strategy::AdaptiveThreshold {
                    thresholds.clone().into_adaptive()?;
                } else {
                    thresholds.clone().into_fixed()?;
                }
            }
            Model::Mlp(m) => {
                let width = m.channel_ids.len() * m.feature_spec.num_bins;
                if m.model.input_width() != width || m.normalizer.scale.len() != width {
                    return bad(format!("feature width {width} does not match the network"));
                }
                if m.model.num_classes() != classes {
                    return bad(format!("{} outputs for {} qubits", m.model.num_classes(), m.num_qubits));
                }
            }
            Model::Lstm(m) => {
                if m.model.input_width() != m.channel_ids.len() || m.normalizer.scale.len() != m.channel_ids.len() {
                    return bad("channel count does not match the network".into());
                }
                if m.model.num_classes() != classes {
                    return bad(format!("{} outputs for {} qubits", m.model.num_classes(), m.num_qubits));
                }
            }
        }
        Ok(())
    }

    /// Classifier ready to label samples from `geometry`.
    pub fn classifier<'a>(&'a self, geometry: &'a DetectorGeometry) -> Result<Classifier<'a>> {
        if geometry.num_ions != self.num_qubits() {
            return Err(Error::ShapeMismatch { expected: self.num_qubits(), actual: geometry.num_ions });
        }
        let kind = match self {
            Model::Threshold { strategy: Strategy::AdaptiveThreshold, thresholds, .. } => {
                ClassifierKind::Adaptive(thresholds.clone().into_adaptive()?)
            }
            Model::Threshold { thresholds, .. } => ClassifierKind::Fixed(thresholds.clone().into_fixed()?),
            Model::Mlp(m) => {
                if m.feature_spec.channels(geometry)? != m.channel_ids {
                    return Err(Error::InvalidGeometry("model channels differ from the detector layout".into()));
                }
                ClassifierKind::Mlp(m)
            }
            Model::Lstm(m) => {
                if m.feature_spec.channels(geometry)? != m.channel_ids {
                    return Err(Error::InvalidGeometry("model channels differ from the detector layout".into()));
                }
                ClassifierKind::Lstm(m)
            }
        };
        Ok(Classifier { geometry, kind })
    }
}

pub struct Classifier<'a> {
    geometry: &'a DetectorGeometry,
    kind: ClassifierKind<'a>,
}

enum ClassifierKind<'a> {
    Fixed(FixedThresholdModel),
    Adaptive(AdaptiveThresholdModel),
    Mlp(&'a MlpArtifact),
    Lstm(&'a LstmArtifact),
}

impl Classifier<'_> {
    /// Class index and, for adaptive thresholds, whether the update converged.
    fn classify_detailed(&self, sample: &ReadoutSample) -> Result<(usize, bool)> {
        Ok(match &self.kind {
            ClassifierKind::Fixed(m) => (m.classify(&ion_totals(sample, self.geometry)).index(), true),
            ClassifierKind::Adaptive(m) => {
                let out = m.classify(&ion_totals(sample, self.geometry));
                (out.label.index(), out.converged)
            }
            ClassifierKind::Mlp(m) => {
                let x = m.normalizer.apply(&flatten(&bin_sample(sample, &m.feature_spec, self.geometry)?));
                (argmax(&m.model.forward(&x)?), true)
            }
            ClassifierKind::Lstm(m) => (argmax(&m.model.forward(&lstm_input(m, sample, self.geometry)?)?), true),
        })
    }

    pub fn classify(&self, sample: &ReadoutSample) -> Result<BasisLabel> {
        BasisLabel::new(self.classify_detailed(sample)?.0, self.geometry.num_ions)
    }
}

fn lstm_input(m: &LstmArtifact, sample: &ReadoutSample, geometry: &DetectorGeometry) -> Result<Vec<Vec<f64>>> {
    let image = bin_sample(sample, &m.feature_spec, geometry)?;
    Ok(image_columns(&image).iter().map(|x| m.normalizer.apply(x)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: FidelityReport,
    /// Share of shots whose adaptive update reached a fixed point.
    pub converged_fraction: f64,
}

pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    let classifier = model.classifier(&dataset.geometry)?;
    let out = indices
        .par_iter()
        .map(|&i| classifier.classify_detailed(&dataset.samples[i]))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = out.iter().map(|o| o.0).collect();
    let truths: Vec<usize> = indices.iter().map(|&i| dataset.samples[i].label.index()).collect();
    let matrix = confusion_from_indices(dataset.num_ions(), &predictions, &truths)?;
    let converged = out.iter().filter(|o| o.1).count();
    Ok(Evaluation {
        report: fidelity_for(model.strategy().name(), &matrix)?,
        converged_fraction: converged as f64 / out.len().max(1) as f64,
    })
}

#[derive(Clone, Debug)]
pub struct StrategyResult {
    pub model: Model,
    pub evaluation: Evaluation,
    pub history: Vec<EpochRecord>,
}

pub fn feature_spec(strategy: Strategy, config: &ExperimentConfig) -> Option<FeatureSpec> {
    let spec = match strategy {
        Strategy::FixedThreshold | Strategy::AdaptiveThreshold => return None,
        Strategy::Nn => FeatureSpec::totals(false),
        Strategy::NnPlus => FeatureSpec::totals(true),
        Strategy::Tnn => FeatureSpec::binned(false, config.tnn_bins),
        Strategy::TnnPlus => FeatureSpec::binned(true, config.tnn_bins),
        Strategy::Rnn => FeatureSpec::binned(config.intermediate_channels_present, config.rnn_bins),
    };
    Some(FeatureSpec { normalization: config.normalization, ..spec })
}

/// Fits one strategy on `split.train` and scores it on `split.test`.
pub fn run_strategy(strategy: Strategy, config: &ExperimentConfig, dataset: &Dataset, split: &Split) -> Result<StrategyResult> {
    let geometry = &dataset.geometry;
    let num_qubits = dataset.num_ions();
    let labels: Vec<BasisLabel> = split.train.iter().map(|&i| dataset.samples[i].label).collect();
    let classes: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    let train_config = if strategy == Strategy::Rnn { config.rnn_train_config() } else { config.train_config() };
    let metadata = |best_epoch: usize, epochs_run: usize| TrainingMetadata {
        data_seed: dataset.seed,
        train_seed: config.train_seed,
        train_samples: split.train.len(),
        best_epoch,
        epochs_run,
        train_config: train_config.clone(),
    };

    let (model, history) = match strategy {
        Strategy::FixedThreshold | Strategy::AdaptiveThreshold => {
            let counts: Vec<Vec<u32>> = split.train.iter().map(|&i| ion_totals(&dataset.samples[i], geometry)).collect();
            let thresholds = if strategy == Strategy::FixedThreshold {
                ThresholdFile::from(&fit_fixed(&counts, &labels)?)
            } else {
                ThresholdFile::from(&fit_adaptive(&counts, &labels, config.adaptive_options())?)
            };
            (Model::Threshold { strategy, num_qubits, thresholds }, Vec::new())
        }
        Strategy::Rnn => {
            let spec = feature_spec(strategy, config).expect("network strategy");
            let channel_ids = spec.channels(geometry)?;
            let sequences = split
                .train
                .par_iter()
                .map(|&i| Ok(image_columns(&bin_sample(&dataset.samples[i], &spec, geometry)?)))
                .collect::<Result<Vec<_>>>()?;
            let normalizer = Normalizer::fit(
                channel_ids.len(),
                sequences.iter().flatten().map(Vec::as_slice),
                spec.normalization,
            );
            let inputs: Vec<Vec<Vec<f64>>> =
                sequences.iter().map(|s| s.iter().map(|x| normalizer.apply(x)).collect()).collect();
            drop(sequences);
            let initial = LstmModel::new(channel_ids.len(), config.lstm_hidden, 1 << num_qubits, config.train_seed)?;
            let out = train(initial, &inputs, &classes, num_qubits, &train_config)?;
            let artifact = LstmArtifact {
                num_qubits,
                feature_spec: spec,
                channel_ids,
                window_us: dataset.model.window_us,
                normalizer,
                model: out.model,
                metadata: metadata(out.best_epoch, out.history.len()),
            };
            (Model::Lstm(artifact), out.history)
        }
        _ => {
            let spec = feature_spec(strategy, config).expect("network strategy");
            let hidden = config.hidden_widths(strategy).expect("mlp strategy");
            let channel_ids = spec.channels(geometry)?;
            let rows = split
                .train
                .par_iter()
                .map(|&i| Ok(flatten(&bin_sample(&dataset.samples[i], &spec, geometry)?)))
                .collect::<Result<Vec<_>>>()?;
            let width = spec.width(geometry)?;
            let normalizer = Normalizer::fit(width, rows.iter().map(Vec::as_slice), spec.normalization);
            let inputs: Vec<Vec<f64>> = rows.iter().map(|r| normalizer.apply(r)).collect();
            let initial = MlpModel::new(width, hidden, 1 << num_qubits, config.train_seed)?;
            let out = train(initial, &inputs, &classes, num_qubits, &train_config)?;
            let artifact = MlpArtifact {
                strategy,
                num_qubits,
                feature_spec: spec,
                channel_ids,
                normalizer,
                model: out.model,
                metadata: metadata(out.best_epoch, out.history.len()),
            };
            (Model::Mlp(artifact), out.history)
        }
    };
    let evaluation = evaluate(&model, dataset, &split.test)?;
    Ok(StrategyResult { model, evaluation, history })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyFailure {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub data_seed: u64,
    pub train_seed: u64,
    pub num_qubits: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub average_fidelity: BTreeMap<String, f64>,
    pub average_stderr: BTreeMap<String, f64>,
    /// Relative error reduction of each strategy against FT, then AT.
    pub improvement_vs_ft: BTreeMap<String, Improvement>,
    pub improvement_vs_at: BTreeMap<String, Improvement>,
    #[serde(default)]
    pub adaptive_converged_fraction: Option<f64>,
    pub failures: BTreeMap<String, StrategyFailure>,
}

pub struct ExperimentOutcome {
    pub split: Split,
    pub results: Vec<(Strategy, Result<StrategyResult>)>,
}

impl ExperimentOutcome {
    pub fn get(&self, strategy: Strategy) -> Option<&StrategyResult> {
        self.results.iter().find(|(s, _)| *s == strategy).and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn reports(&self) -> Vec<FidelityReport> {
        self.results.iter().filter_map(|(_, r)| r.as_ref().ok()).map(|r| r.evaluation.report.clone()).collect()
    }

    pub fn summary(&self, config: &ExperimentConfig, dataset: &Dataset) -> Summary {
        let mut s = Summary {
            data_seed: dataset.seed,
            train_seed: config.train_seed,
            num_qubits: dataset.num_ions(),
            train_samples: self.split.train.len(),
            test_samples: self.split.test.len(),
            average_fidelity: BTreeMap::new(),
            average_stderr: BTreeMap::new(),
            improvement_vs_ft: BTreeMap::new(),
            improvement_vs_at: BTreeMap::new(),
            adaptive_converged_fraction: self
                .get(Strategy::AdaptiveThreshold)
                .map(|r| r.evaluation.converged_fraction),
            failures: BTreeMap::new(),
        };
        let ft = self.get(Strategy::FixedThreshold).map(|r| &r.evaluation.report);
        let at = self.get(Strategy::AdaptiveThreshold).map(|r| &r.evaluation.report);
        for (strategy, result) in &self.results {
            let name = strategy.name().to_string();
            match result {
                Ok(r) => {
                    let report = &r.evaluation.report;
                    s.average_fidelity.insert(name.clone(), report.average);
                    s.average_stderr.insert(name.clone(), report.average_stderr);
                    if let Some(Ok(i)) = ft.filter(|_| *strategy != Strategy::FixedThreshold).map(|b| improvement(b, report)) {
                        s.improvement_vs_ft.insert(name.clone(), i);
                    }
                    if let Some(Ok(i)) = at
                        .filter(|_| !matches!(strategy, Strategy::FixedThreshold | Strategy::AdaptiveThreshold))
                        .map(|b| improvement(b, report))
                    {
                        s.improvement_vs_at.insert(name, i);
                    }
                }
                Err(e) => {
                    s.failures.insert(name, StrategyFailure { kind: e.kind().into(), message: e.to_string() });
                }
            }
        }
        s
    }
}

/// Runs every configured strategy on one shared split. A strategy that fails
/// is recorded and the others still run.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentOutcome> {
    run_experiment_with(config, dataset, |_, _| {})
}

/// Like [`run_experiment`], calling `progress` after each strategy finishes.
pub fn run_experiment_with<F>(config: &ExperimentConfig, dataset: &Dataset, mut progress: F) -> Result<ExperimentOutcome>
where
    F: FnMut(Strategy, &Result<StrategyResult>),
{
    config.validate()?;
    let geometry = config.geometry()?;
    if geometry != dataset.geometry {
        return Err(Error::InvalidGeometry("dataset geometry differs from the configuration".into()));
    }
    let split = split_dataset(dataset, config.train_fraction)?;
    let mut results = Vec::new();
    for &strategy in &config.strategies {
        let r = run_strategy(strategy, config, dataset, &split);
        progress(strategy, &r);
        results.push((strategy, r));
    }
    Ok(ExperimentOutcome { split, results })
}

pub fn artifact_stem(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::FixedThreshold => "ft",
        Strategy::AdaptiveThreshold => "at",
        Strategy::Nn => "nn",
        Strategy::NnPlus => "nn_plus",
        Strategy::Tnn => "tnn",
        Strategy::TnnPlus => "tnn_plus",
        Strategy::Rnn => "rnn",
    }
}

/// Writes `summary.json`, `reports.csv`, the resolved `config.toml`, and a
/// model file plus training history per successful strategy.
pub fn write_outputs(outcome: &ExperimentOutcome, config: &ExperimentConfig, dataset: &Dataset, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    let summary = outcome.summary(config, dataset);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("reports.csv"), reports_csv(&outcome.reports()))?;
    fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
    for (strategy, result) in &outcome.results {
        if let Ok(r) = result {
            let stem = artifact_stem(*strategy);
            r.model.save(&dir.join(format!("{stem}.model.json")))?;
            if !r.history.is_empty() {
                fs::write(dir.join(format!("{stem}.history.csv")), history_csv(&r.history))?;
            }
        }
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub bins: usize,
    pub detection_time_us: f64,
    pub report: FidelityReport,
}

/// Test fidelity of an RNN that stops reading after each prefix of its
/// time bins. Zero bins reads out the initial state.
pub fn sweep_detection_time(model: &LstmArtifact, dataset: &Dataset, indices: &[usize]) -> Result<Vec<SweepPoint>> {
    let bins = model.feature_spec.num_bins;
    let predictions = indices
        .par_iter()
        .map(|&i| {
            let seq = lstm_input(model, &dataset.samples[i], &dataset.geometry)?;
            let mut state = model.model.initial_state();
            let mut out = Vec::with_capacity(bins + 1);
            out.push(argmax(&model.model.readout(&state)));
            for x in &seq {
                state = model.model.step(&state, x)?;
                out.push(argmax(&model.model.readout(&state)));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<usize> = indices.iter().map(|&i| dataset.samples[i].label.index()).collect();
    let bin_width = model.window_us / bins as f64;
    (0..=bins)
        .map(|t| {
            let at_t: Vec<usize> = predictions.iter().map(|p| p[t]).collect();
            let matrix = confusion_from_indices(model.num_qubits, &at_t, &truths)?;
            Ok(SweepPoint {
                bins: t,
                detection_time_us: t as f64 * bin_width,
                report: fidelity_for(Strategy::Rnn.name(), &matrix)?,
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("bins,detection_time_us,average_fidelity,stderr\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.bins, p.detection_time_us, p.report.average, p.report.average_stderr));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub bin: usize,
    /// Center of the bin.
    pub arrival_us: f64,
    pub ion: usize,
    pub p_bright: f64,
}

/// Bright probability the RNN assigns to `ion` after a lone click on feature
/// row `row`, for each arrival bin.
pub fn probe(model: &LstmArtifact, ion: usize, row: usize) -> Result<Vec<ProbePoint>> {
    let bins = model.feature_spec.num_bins;
    let width = model.window_us / bins as f64;
    (0..bins)
        .map(|bin| {
            Ok(ProbePoint {
                bin,
                arrival_us: (bin as f64 + 0.5) * width,
                ion,
                p_bright: probe_arrival_time(&model.model, &model.normalizer, bins, bin, row, ion, model.num_qubits)?,
            })
        })
        .collect()
}

/// Feature row of `ion`'s own channel.
pub fn ion_row(model: &LstmArtifact, geometry: &DetectorGeometry, ion: usize) -> Result<usize> {
    let channel = *geometry
        .ion_channel
        .get(ion)
        .ok_or_else(|| Error::InvalidArgument(format!("ion {ion} out of range")))?;
    model
        .channel_ids
        .iter()
        .position(|&c| c == channel)
        .ok_or_else(|| Error::InvalidGeometry(format!("channel {channel} is not a model input")))
}

pub fn probe_csv(points: &[ProbePoint]) -> String {
    let mut out = String::from("bin,arrival_us,ion,p_bright\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.bin, p.arrival_us, p.ion, p.p_bright));
    }
    out
}

/// Bright marginal of the model's prediction for one sample.
pub fn rnn_bright_probability(model: &LstmArtifact, sample: &ReadoutSample, geometry: &DetectorGeometry, ion: usize) -> Result<f64> {
    let p = model.model.forward(&lstm_input(model, sample, geometry)?)?;
    Ok(bright_marginal(&p, ion, model.num_qubits))
}
