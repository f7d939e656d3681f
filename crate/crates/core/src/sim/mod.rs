//! Labeled photon-event data from a phenomenological fluorescence model.

mod calibrate;
mod dataset;
mod geometry;
mod model;
mod simulate;

pub use calibrate::{
    calibrate_to_fidelity, scaled_model, single_ion_fidelity, Calibration, CalibrationConfig, PumpParams,
};
pub use dataset::{
    generate_dataset, generate_dataset_with, Dataset, GenerationOptions, DATASET_FORMAT, DATASET_VERSION,
    DEFAULT_MAX_SAMPLES,
};
pub use geometry::{DetectorGeometry, ADJACENT_KERNEL, ALTERNATING_KERNEL};
pub use model::*;
pub use simulate::{route_events, simulate_ion, PhotonEvent, ReadoutSample, Router, TICKS_PER_US};
