use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::geometry::DetectorGeometry;
use super::model::EmissionModel;
use crate::error::{Error, Result};
use crate::label::BasisLabel;

/// Arrival times are recorded on a 0.1 μs grid.
pub const TICKS_PER_US: f64 = 10.0;

/// One detector click.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, f64)", into = "(usize, f64)")]
pub struct PhotonEvent {
    pub channel: usize,
    pub arrival_us: f64,
}

impl PhotonEvent {
    /// Event with the arrival time truncated to the recording grid.
    pub fn quantized(channel: usize, arrival_us: f64) -> Self {
        Self { channel, arrival_us: (arrival_us * TICKS_PER_US).floor() / TICKS_PER_US }
    }
}

impl From<(usize, f64)> for PhotonEvent {
    fn from((channel, arrival_us): (usize, f64)) -> Self {
        Self { channel, arrival_us }
    }
}

impl From<PhotonEvent> for (usize, f64) {
    fn from(e: PhotonEvent) -> Self {
        (e.channel, e.arrival_us)
    }
}

/// All clicks recorded in one detection shot, labeled by the prepared state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutSample {
    pub label: BasisLabel,
    pub window_us: f64,
    pub events: Vec<PhotonEvent>,
}

impl ReadoutSample {
    pub fn validate(&self, geometry: &DetectorGeometry) -> Result<()> {
        if self.label.num_qubits() != geometry.num_ions {
            return Err(Error::InvalidLabel(format!(
                "label {} has {} bits, geometry has {} ions",
                self.label,
                self.label.num_qubits(),
                geometry.num_ions
            )));
        }
        let mut last = 0.0;
        for e in &self.events {
            if e.channel >= geometry.num_channels {
                return Err(Error::InvalidArgument(format!("event on channel {} out of range", e.channel)));
            }
            if !(0.0..self.window_us).contains(&e.arrival_us) || e.arrival_us < last {
                return Err(Error::InvalidArgument(format!(
                    "event at {} μs is unsorted or outside the window",
                    e.arrival_us
                )));
            }
            last = e.arrival_us;
        }
        Ok(())
    }

    /// Number of clicks per channel.
    pub fn channel_counts(&self, num_channels: usize) -> Vec<u32> {
        let mut counts = vec![0u32; num_channels];
        for e in &self.events {
            counts[e.channel] += 1;
        }
        counts
    }
}

/// Appends the arrival times of a homogeneous Poisson process on `[start, end)`.
fn poisson_process<R: Rng + ?Sized>(rate: f64, start: f64, end: f64, rng: &mut R, out: &mut Vec<f64>) {
    if rate <= 0.0 || end <= start {
        return;
    }
    let mut t = start;
    loop {
        let gap: f64 = rng.sample(Exp1);
        t += gap / rate;
        if t >= end {
            break;
        }
        out.push(t);
    }
}

/// Signal photon arrival times for one ion prepared in `bright` (|1⟩) or dark (|0⟩).
///
/// The flip time is always drawn first so that scaling the pump rates moves
/// every shot's flip time monotonically for a fixed random stream.
pub fn simulate_ion<R: Rng + ?Sized>(bright: bool, model: &EmissionModel, rng: &mut R) -> Result<Vec<f64>> {
    model.validate()?;
    let unit: f64 = rng.sample(Exp1);
    let pump_rate = if bright { model.pump_bright_to_dark_rate } else { model.pump_dark_to_bright_rate };
    let flip = if pump_rate > 0.0 { unit / pump_rate } else { f64::INFINITY };
    let window = model.window_us;
    let mut times = Vec::new();
    if bright {
        poisson_process(model.bright_rate, 0.0, flip.min(window), rng, &mut times);
    } else if flip < window {
        poisson_process(model.bright_rate, flip, window, rng, &mut times);
    }
    Ok(times)
}

/// Precomputed per-ion channel distributions.
#[derive(Clone, Debug)]
pub struct Router {
    cumulative: Vec<Vec<f64>>,
    point_mass: Vec<Option<usize>>,
}

impl Router {
    pub fn new(geometry: &DetectorGeometry) -> Self {
        let cumulative = geometry
            .crosstalk
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let point_mass = geometry
            .crosstalk
            .iter()
            .map(|row| {
                let mut nonzero = row.iter().enumerate().filter(|(_, p)| **p > 0.0);
                match (nonzero.next(), nonzero.next()) {
                    (Some((c, _)), None) => Some(c),
                    _ => None,
                }
            })
            .collect();
        Self { cumulative, point_mass }
    }

    pub fn channel_for<R: Rng + ?Sized>(&self, ion: usize, rng: &mut R) -> usize {
        if let Some(c) = self.point_mass[ion] {
            return c;
        }
        let cum = &self.cumulative[ion];
        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
        cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1)
    }

    /// Routes signal photons and adds background on every channel, keeping
    /// events on unrecorded channels. Output is sorted by time, then channel,
    /// then insertion order.
    pub fn route_all<R: Rng + ?Sized>(
        &self,
        signal_times: &[Vec<f64>],
        geometry: &DetectorGeometry,
        model: &EmissionModel,
        rng: &mut R,
    ) -> Vec<PhotonEvent> {
        let mut events: Vec<PhotonEvent> = Vec::new();
        for (ion, times) in signal_times.iter().enumerate() {
            for &t in times {
                events.push(PhotonEvent::quantized(self.channel_for(ion, rng), t));
            }
        }
        let mut background = Vec::new();
        for channel in 0..geometry.num_channels {
            background.clear();
            poisson_process(model.background_rate(), 0.0, model.window_us, rng, &mut background);
            events.extend(background.iter().map(|&t| PhotonEvent::quantized(channel, t)));
        }
        events.sort_by(|a, b| a.arrival_us.total_cmp(&b.arrival_us).then(a.channel.cmp(&b.channel)));
        events
    }
}

/// Assigns each signal photon a channel from its ion's crosstalk row, adds
/// per-channel background, and drops channels that are not recorded.
pub fn route_events<R: Rng + ?Sized>(
    signal_times: &[Vec<f64>],
    geometry: &DetectorGeometry,
    model: &EmissionModel,
    rng: &mut R,
) -> Result<Vec<PhotonEvent>> {
    if signal_times.len() != geometry.num_ions {
        return Err(Error::ShapeMismatch { expected: geometry.num_ions, actual: signal_times.len() });
    }
    let mut events = Router::new(geometry).route_all(signal_times, geometry, model, rng);
    events.retain(|e| geometry.is_recorded(e.channel));
    Ok(events)
}
