//! Flat key-value experiment configuration (TOML syntax, no tables).
//!
//! Unknown keys are rejected. Every key has a default; the defaults describe
//! the three-ion alternating-channel experiment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::featurize::Normalization;
use crate::nn::{TrainConfig, DEFAULT_EPSILON, DEFAULT_RHO};
use crate::sim::{DetectorGeometry, EmissionModel, GenerationOptions, ADJACENT_KERNEL, ALTERNATING_KERNEL, DEFAULT_MAX_SAMPLES};
use crate::threshold::{AdaptiveOptions, DEFAULT_MAX_ITERATIONS, DEFAULT_MIN_CONTEXT_SAMPLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Fixed threshold per ion channel.
    FixedThreshold,
    /// Thresholds conditioned on the neighbors' inferred states.
    AdaptiveThreshold,
    /// MLP on ion-channel totals.
    Nn,
    /// MLP on totals of every channel, intermediate ones included.
    NnPlus,
    /// MLP on time-binned ion-channel counts.
    Tnn,
    /// MLP on time-binned counts of every channel.
    TnnPlus,
    /// LSTM on fine time bins of every recorded channel.
    Rnn,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::FixedThreshold,
        Strategy::AdaptiveThreshold,
        Strategy::Nn,
        Strategy::NnPlus,
        Strategy::Tnn,
        Strategy::TnnPlus,
        Strategy::Rnn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FixedThreshold => "FT",
            Strategy::AdaptiveThreshold => "AT",
            Strategy::Nn => "NN",
            Strategy::NnPlus => "NN+",
            Strategy::Tnn => "TNN",
            Strategy::TnnPlus => "TNN+",
            Strategy::Rnn => "RNN",
        }
    }

    pub fn uses_intermediate_channels(&self) -> bool {
        matches!(self, Strategy::NnPlus | Strategy::TnnPlus)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected one of FT, AT, NN, NN+, TNN, TNN+, RNN)")))
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated strategy list such as `FT,AT,TNN+`.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    let out = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::Config("strategy list is empty".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_ions: usize,
    pub n_channels: usize,
    pub ion_channels: Vec<usize>,
    /// Point-spread kernel over channel offsets, centered on the middle entry.
    pub crosstalk_row: Vec<f64>,
    pub intermediate_channels_present: bool,

    pub bright_rate: f64,
    pub pump_bright_to_dark_rate: f64,
    pub pump_dark_to_bright_rate: f64,
    pub background_scatter_rate: f64,
    pub detector_dark_rate: f64,
    pub window_us: f64,

    pub samples_per_label: usize,
    /// Data seed: dataset generation and the train/test split.
    pub seed: u64,
    pub pool_resampling: bool,
    pub max_samples: usize,

    pub strategies: Vec<Strategy>,
    pub tnn_bins: usize,
    pub rnn_bins: usize,
    pub normalization: Normalization,
    pub hidden_nn: [usize; 2],
    pub hidden_nn_plus: [usize; 2],
    pub hidden_tnn: [usize; 2],
    pub hidden_tnn_plus: [usize; 2],
    pub lstm_hidden: usize,

    /// Training seed: initialization, shuffling and validation hold-out.
    pub train_seed: u64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Early-stopping patience of the RNN; 0 trains for all `epochs`.
    pub rnn_patience: usize,
    pub rho: f64,
    pub epsilon: f64,

    pub min_context_samples: usize,
    pub adaptive_max_iterations: usize,

    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = EmissionModel::default();
        Self {
            n_ions: 3,
            n_channels: 5,
            ion_channels: vec![0, 2, 4],
            crosstalk_row: ALTERNATING_KERNEL.to_vec(),
            intermediate_channels_present: true,
            bright_rate: m.bright_rate,
            pump_bright_to_dark_rate: m.pump_bright_to_dark_rate,
            pump_dark_to_bright_rate: m.pump_dark_to_bright_rate,
            background_scatter_rate: m.background_scatter_rate,
            detector_dark_rate: m.detector_dark_rate,
            window_us: m.window_us,
            samples_per_label: 8000,
            seed: 2018,
            pool_resampling: false,
            max_samples: DEFAULT_MAX_SAMPLES,
            strategies: Strategy::ALL.to_vec(),
            tnn_bins: 5,
            rnn_bins: 15,
            normalization: Normalization::TrainMax,
            hidden_nn: [8, 8],
            hidden_nn_plus: [16, 16],
            hidden_tnn: [24, 24],
            hidden_tnn_plus: [40, 40],
            lstm_hidden: crate::rnn::DEFAULT_HIDDEN,
            train_seed: 7,
            train_fraction: 0.8,
            validation_fraction: 0.1,
            batch_size: 128,
            epochs: 50,
            patience: 5,
            rnn_patience: 0,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
            min_context_samples: DEFAULT_MIN_CONTEXT_SAMPLES,
            adaptive_max_iterations: DEFAULT_MAX_ITERATIONS,
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    /// Five ions on neighboring channels with stronger crosstalk and no
    /// intermediate channels.
    pub fn five_qubit_adjacent() -> Self {
        Self {
            n_ions: 5,
            n_channels: 5,
            ion_channels: (0..5).collect(),
            crosstalk_row: ADJACENT_KERNEL.to_vec(),
            intermediate_channels_present: false,
            samples_per_label: 2000,
            strategies: vec![Strategy::FixedThreshold, Strategy::AdaptiveThreshold, Strategy::Nn, Strategy::Tnn],
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn geometry(&self) -> Result<DetectorGeometry> {
        let g = DetectorGeometry::from_kernel(
            self.n_channels,
            self.ion_channels.clone(),
            &self.crosstalk_row,
            self.intermediate_channels_present,
        )?;
        if g.num_ions != self.n_ions {
            return Err(Error::Config(format!(
                "n_ions = {} but ion_channels lists {} channels",
                self.n_ions, g.num_ions
            )));
        }
        Ok(g)
    }

    pub fn model(&self) -> Result<EmissionModel> {
        let m = EmissionModel {
            bright_rate: self.bright_rate,
            pump_bright_to_dark_rate: self.pump_bright_to_dark_rate,
            pump_dark_to_bright_rate: self.pump_dark_to_bright_rate,
            background_scatter_rate: self.background_scatter_rate,
            detector_dark_rate: self.detector_dark_rate,
            window_us: self.window_us,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn generation_options(&self) -> GenerationOptions {
        GenerationOptions { pool_resampling: self.pool_resampling, max_samples: self.max_samples }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            rho: self.rho,
            epsilon: self.epsilon,
            seed: self.train_seed,
            train_fraction: self.train_fraction,
            validation_fraction: self.validation_fraction,
            patience: self.patience,
        }
    }

    pub fn rnn_train_config(&self) -> TrainConfig {
        TrainConfig { patience: self.rnn_patience, ..self.train_config() }
    }

    pub fn adaptive_options(&self) -> AdaptiveOptions {
        AdaptiveOptions { min_context_samples: self.min_context_samples, max_iterations: self.adaptive_max_iterations }
    }

    pub fn hidden_widths(&self, strategy: Strategy) -> Option<[usize; 2]> {
        match strategy {
            Strategy::Nn => Some(self.hidden_nn),
            Strategy::NnPlus => Some(self.hidden_nn_plus),
            Strategy::Tnn => Some(self.hidden_tnn),
            Strategy::TnnPlus => Some(self.hidden_tnn_plus),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        self.model()?;
        if self.strategies.is_empty() {
            return Err(Error::Config("strategies must not be empty".into()));
        }
        if !self.intermediate_channels_present {
            if let Some(s) = self.strategies.iter().find(|s| s.uses_intermediate_channels()) {
                return Err(Error::Config(format!("{s} needs intermediate_channels_present = true")));
            }
        }
        if self.samples_per_label == 0 {
            return Err(Error::Config("samples_per_label must be at least 1".into()));
        }
        if self.tnn_bins == 0 || self.rnn_bins == 0 {
            return Err(Error::Config("bin counts must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lstm_hidden == 0 || self.adaptive_max_iterations == 0 {
            return Err(Error::Config("batch_size, epochs, lstm_hidden and adaptive_max_iterations must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("rho must lie in (0, 1) and epsilon be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::five_qubit_adjacent().validate().unwrap();
    }

    #[test]
    fn round_trip_is_lossless() {
        for config in [ExperimentConfig::default(), ExperimentConfig::five_qubit_adjacent()] {
            let text = config.to_toml_string().unwrap();
            assert!(!text.contains('['.to_string().repeat(2).as_str()), "config must stay flat");
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), config);
        }
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = ExperimentConfig::from_toml_str("n_ions = 3\nbright_rte = 0.06\n").unwrap_err();
        assert!(err.to_string().contains("bright_rte"), "{err}");
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str("samples_per_label = 10\nstrategies = [\"FT\", \"TNN+\"]\n").unwrap();
        assert_eq!(c.samples_per_label, 10);
        assert_eq!(c.strategies, vec![Strategy::FixedThreshold, Strategy::TnnPlus]);
        assert_eq!(c.n_ions, 3);
    }

    #[test]
    fn intermediate_strategies_need_intermediate_channels() {
        let text = "intermediate_channels_present = false\nstrategies = [\"NN+\"]\n";
        assert!(ExperimentConfig::from_toml_str(text).is_err());
        assert!(ExperimentConfig::from_toml_str("strategies = []\n").is_err());
    }

    #[test]
    fn strategy_names_parse() {
        assert_eq!(parse_strategies("ft, tnn+,RNN").unwrap(), vec![Strategy::FixedThreshold, Strategy::TnnPlus, Strategy::Rnn]);
        assert!(parse_strategies("FT,XX").is_err());
        assert!(parse_strategies("").is_err());
    }

    #[test]
    fn inconsistent_ion_count_is_rejected() {
        assert!(ExperimentConfig::from_toml_str("n_ions = 2\n").is_err());
    }
}
