use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Phenomenological fluorescence model for a single ion during detection.
///
/// All rates are per microsecond. Pumping is a single irreversible flip per
/// shot: a bright ion may go dark at an exponentially distributed time, and a
/// dark ion may turn bright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    pub bright_rate: f64,
    pub pump_bright_to_dark_rate: f64,
    pub pump_dark_to_bright_rate: f64,
    pub background_scatter_rate: f64,
    pub detector_dark_rate: f64,
    pub window_us: f64,
}

/// Detection window of the default calibration.
pub const DEFAULT_WINDOW_US: f64 = 150.0;
/// Mean detected photons from a bright ion over the default window.
pub const DEFAULT_BRIGHT_MEAN: f64 = 9.0;
/// Laser scatter into a detector channel: 20 counts per second.
pub const DEFAULT_BACKGROUND_SCATTER_RATE: f64 = 20e-6;
/// Detector dark counts: 2 counts per second.
pub const DEFAULT_DETECTOR_DARK_RATE: f64 = 2e-6;
/// Pump rates found by `calibrate_to_fidelity(0.995)` with the default
/// bright-to-dark : dark-to-bright ratio (see `DEFAULT_PUMP_RATIO`).
pub const DEFAULT_PUMP_BRIGHT_TO_DARK_RATE: f64 = 1.34e-4;
pub const DEFAULT_PUMP_DARK_TO_BRIGHT_RATE: f64 = 3.35e-5;
/// Bright-to-dark over dark-to-bright pump rate; reproduces the 99.4% / 99.6%
/// bright/dark single-ion fidelity split.
pub const DEFAULT_PUMP_RATIO: f64 = DEFAULT_PUMP_BRIGHT_TO_DARK_RATE / DEFAULT_PUMP_DARK_TO_BRIGHT_RATE;

impl Default for EmissionModel {
    fn default() -> Self {
        Self {
            bright_rate: DEFAULT_BRIGHT_MEAN / DEFAULT_WINDOW_US,
            pump_bright_to_dark_rate: DEFAULT_PUMP_BRIGHT_TO_DARK_RATE,
            pump_dark_to_bright_rate: DEFAULT_PUMP_DARK_TO_BRIGHT_RATE,
            background_scatter_rate: DEFAULT_BACKGROUND_SCATTER_RATE,
            detector_dark_rate: DEFAULT_DETECTOR_DARK_RATE,
            window_us: DEFAULT_WINDOW_US,
        }
    }
}

impl EmissionModel {
    /// Model with no pumping and no background: a bright ion is a pure
    /// Poisson source and a dark ion never clicks.
    pub fn ideal() -> Self {
        Self {
            pump_bright_to_dark_rate: 0.0,
            pump_dark_to_bright_rate: 0.0,
            background_scatter_rate: 0.0,
            detector_dark_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("bright_rate", self.bright_rate),
            ("pump_bright_to_dark_rate", self.pump_bright_to_dark_rate),
            ("pump_dark_to_bright_rate", self.pump_dark_to_bright_rate),
            ("background_scatter_rate", self.background_scatter_rate),
            ("detector_dark_rate", self.detector_dark_rate),
            ("window_us", self.window_us),
        ];
        for (name, value) in rates {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidModel(format!("{name} must be finite and non-negative, got {value}")));
            }
        }
        if self.bright_rate <= 0.0 {
            return Err(Error::InvalidModel("bright_rate must be positive".into()));
        }
        if self.window_us <= 0.0 {
            return Err(Error::InvalidModel("window_us must be positive".into()));
        }
        Ok(())
    }

    /// Background click rate per channel.
    pub fn background_rate(&self) -> f64 {
        self.background_scatter_rate + self.detector_dark_rate
    }

    /// Mean detected photons from an ion that stays bright for the whole window.
    pub fn bright_mean(&self) -> f64 {
        self.bright_rate * self.window_us
    }
}
