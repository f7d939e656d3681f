use serde::{Deserialize, Serialize};

use super::dataset::generate_dataset;
use super::geometry::DetectorGeometry;
use super::model::EmissionModel;
use crate::error::{Error, Result};
use crate::eval::{confusion, fidelity_for, FidelityReport};
use crate::featurize::ion_totals;
use crate::threshold::{fit_fixed, FixedThresholdModel};

/// Which pump rates the calibration multiplier scales.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpParams {
    BrightToDark,
    DarkToBright,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Starting model; its free pump rates fix the direction of the search.
    pub base: EmissionModel,
    pub free_params: PumpParams,
    /// Total single-ion shots per fidelity evaluation, split evenly between states.
    pub shots: usize,
    pub lower_multiplier: f64,
    pub upper_multiplier: f64,
    pub max_iterations: usize,
    /// Accepted deviation of the achieved average fidelity from the target.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            base: EmissionModel::default(),
            free_params: PumpParams::Both,
            shots: 100_000,
            lower_multiplier: 1e-3,
            upper_multiplier: 1e3,
            max_iterations: 60,
            tolerance: 1e-3,
            seed: 0x5eed_ca1b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub model: EmissionModel,
    pub multiplier: f64,
    pub report: FidelityReport,
    pub threshold: FixedThresholdModel,
    pub iterations: usize,
}

/// Fixed-threshold fidelity of a single ion, fitted and scored on one fresh dataset.
pub fn single_ion_fidelity(model: &EmissionModel, shots: usize, seed: u64) -> Result<(FidelityReport, FixedThresholdModel)> {
    let geometry = DetectorGeometry::single_ion();
    let dataset = generate_dataset(&geometry, model, (shots / 2).max(1), seed)?;
    let counts: Vec<Vec<u32>> = dataset.samples.iter().map(|s| ion_totals(s, &geometry)).collect();
    let labels = dataset.labels();
    let threshold = fit_fixed(&counts, &labels)?;
    let predictions: Vec<_> = counts.iter().map(|c| threshold.classify(c)).collect();
    let report = fidelity_for("FT", &confusion(&predictions, &labels)?)?;
    Ok((report, threshold))
}

pub fn scaled_model(base: &EmissionModel, free: PumpParams, multiplier: f64) -> EmissionModel {
    let mut m = base.clone();
    if matches!(free, PumpParams::BrightToDark | PumpParams::Both) {
        m.pump_bright_to_dark_rate *= multiplier;
    }
    if matches!(free, PumpParams::DarkToBright | PumpParams::Both) {
        m.pump_dark_to_bright_rate *= multiplier;
    }
    m
}

/// Finds a multiplier on the free pump rates whose single-ion fixed-threshold
/// fidelity matches `target`, by bisection in log-multiplier.
///
/// Every evaluation reuses `config.seed`, so each shot's flip time shrinks
/// monotonically as the multiplier grows and the fidelity curve is monotone
/// up to threshold refits.
pub fn calibrate_to_fidelity(target: f64, config: &CalibrationConfig) -> Result<Calibration> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!("target fidelity must lie in (0, 1], got {target}")));
    }
    if !(config.lower_multiplier > 0.0 && config.lower_multiplier < config.upper_multiplier) {
        return Err(Error::InvalidArgument("multiplier bounds must satisfy 0 < lower < upper".into()));
    }
    config.base.validate()?;
    let evaluate = |multiplier: f64| -> Result<Calibration> {
        let model = scaled_model(&config.base, config.free_params, multiplier);
        let (report, threshold) = single_ion_fidelity(&model, config.shots, config.seed)?;
        Ok(Calibration { model, multiplier, report, threshold, iterations: 0 })
    };
    let close_enough = |c: &Calibration| (c.report.average - target).abs() <= config.tolerance / 4.0;

    let low = evaluate(config.lower_multiplier)?;
    if close_enough(&low) {
        return Ok(Calibration { iterations: 1, ..low });
    }
    let high = evaluate(config.upper_multiplier)?;
    if close_enough(&high) {
        return Ok(Calibration { iterations: 2, ..high });
    }
    // fidelity falls as the multiplier grows
    if target > low.report.average || target < high.report.average {
        return Err(Error::TargetOutOfRange { target, low: high.report.average, high: low.report.average });
    }

    let (mut lo, mut hi) = (config.lower_multiplier.ln(), config.upper_multiplier.ln());
    let mut best = low;
    for iteration in 3..=config.max_iterations {
        let mid = evaluate(((lo + hi) / 2.0).exp())?;
        if (mid.report.average - target).abs() < (best.report.average - target).abs() {
            best = mid.clone();
        }
        if close_enough(&mid) {
            return Ok(Calibration { iterations: iteration, ..mid });
        }
        if mid.report.average > target {
            lo = mid.multiplier.ln();
        } else {
            hi = mid.multiplier.ln();
        }
    }
    if (best.report.average - target).abs() <= config.tolerance {
        return Ok(Calibration { iterations: config.max_iterations, ..best });
    }
    Err(Error::NoConvergence { iterations: config.max_iterations, best: best.report.average, target })
}
