use std::io::{BufRead, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geometry::DetectorGeometry;
use super::model::EmissionModel;
use super::simulate::{simulate_ion, ReadoutSample, Router};
use crate::error::{Error, Result};
use crate::label::{BasisLabel, MAX_QUBITS};

pub const DATASET_FORMAT: &str = "ionreadout-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Default cap on the number of generated samples.
pub const DEFAULT_MAX_SAMPLES: usize = 4_000_000;

const POOL_STREAM_FLAG: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    /// Build each multi-ion shot by superimposing recorded single-ion shots
    /// drawn from per-(ion, state) pools instead of simulating every ion afresh.
    pub pool_resampling: bool,
    pub max_samples: usize,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self { pool_resampling: false, max_samples: DEFAULT_MAX_SAMPLES }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ReadoutSample>,
    pub geometry: DetectorGeometry,
    pub model: EmissionModel,
    pub seed: u64,
    pub samples_per_label: usize,
    pub pool_resampling: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    samples_per_label: usize,
    pool_resampling: bool,
    geometry: DetectorGeometry,
    model: EmissionModel,
}

/// Random stream for one `(stream id)` of a dataset seed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_stream(label: usize, index: usize) -> u64 {
    ((label as u64) << 40) | index as u64
}

fn pool_stream(ion: usize, bright: bool, index: usize) -> u64 {
    POOL_STREAM_FLAG | ((ion as u64) << 48) | ((bright as u64) << 47) | index as u64
}

/// Simulates one shot. Each ion gets its own child stream, so an ion's
/// photons depend only on its own bit and rates.
fn simulate_shot(
    label: BasisLabel,
    geometry: &DetectorGeometry,
    model: &EmissionModel,
    router: &Router,
    rng: &mut ChaCha8Rng,
) -> Result<ReadoutSample> {
    let mut ion_rngs: Vec<ChaCha8Rng> =
        (0..geometry.num_ions).map(|_| ChaCha8Rng::seed_from_u64(rng.next_u64())).collect();
    let signal = ion_rngs
        .iter_mut()
        .enumerate()
        .map(|(ion, r)| simulate_ion(label.bit(ion), model, r))
        .collect::<Result<Vec<_>>>()?;
    let mut events = router.route_all(&signal, geometry, model, rng);
    events.retain(|e| geometry.is_recorded(e.channel));
    Ok(ReadoutSample { label, window_us: model.window_us, events })
}

/// One single-ion record as seen by the full detector: signal from `ion` only,
/// plus background on every channel.
fn simulate_single_ion_record(
    ion: usize,
    bright: bool,
    geometry: &DetectorGeometry,
    model: &EmissionModel,
    router: &Router,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<super::simulate::PhotonEvent>> {
    let mut ion_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let mut signal = vec![Vec::new(); geometry.num_ions];
    signal[ion] = simulate_ion(bright, model, &mut ion_rng)?;
    let mut events = router.route_all(&signal, geometry, model, rng);
    events.retain(|e| geometry.is_recorded(e.channel));
    Ok(events)
}

/// Generates `samples_per_label` shots for every basis state of the register.
///
/// Samples are ordered by label index, then sample index. Every sample draws
/// from its own stream derived from `(seed, label, index)`, so the output does
/// not depend on generation order or thread count.
pub fn generate_dataset(
    geometry: &DetectorGeometry,
    model: &EmissionModel,
    samples_per_label: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with(geometry, model, samples_per_label, seed, &GenerationOptions::default())
}

pub fn generate_dataset_with(
    geometry: &DetectorGeometry,
    model: &EmissionModel,
    samples_per_label: usize,
    seed: u64,
    options: &GenerationOptions,
) -> Result<Dataset> {
    if geometry.num_ions > MAX_QUBITS {
        return Err(Error::TooManyIons { num_ions: geometry.num_ions, max: MAX_QUBITS });
    }
    geometry.validate()?;
    model.validate()?;
    if samples_per_label == 0 {
        return Err(Error::InvalidArgument("samples_per_label must be at least 1".into()));
    }
    if samples_per_label >= 1 << 40 {
        return Err(Error::InvalidArgument("samples_per_label must be below 2^40".into()));
    }
    let labels = BasisLabel::all(geometry.num_ions)?;
    let total = labels
        .len()
        .checked_mul(samples_per_label)
        .filter(|&t| t <= options.max_samples)
        .ok_or(Error::DatasetTooLarge {
            requested: labels.len().saturating_mul(samples_per_label),
            budget: options.max_samples,
        })?;
    let router = Router::new(geometry);

    let samples = if options.pool_resampling {
        // pools[ion][bright][k]
        let pools: Vec<[Vec<Vec<_>>; 2]> = (0..geometry.num_ions)
            .map(|ion| {
                let make = |bright: bool| {
                    (0..samples_per_label)
                        .into_par_iter()
                        .map(|k| {
                            let mut rng = stream_rng(seed, pool_stream(ion, bright, k));
                            simulate_single_ion_record(ion, bright, geometry, model, &router, &mut rng)
                        })
                        .collect::<Result<Vec<_>>>()
                };
                Ok([make(false)?, make(true)?])
            })
            .collect::<Result<_>>()?;
        (0..total)
            .into_par_iter()
            .map(|k| {
                let label = labels[k / samples_per_label];
                let mut rng = stream_rng(seed, sample_stream(label.index(), k % samples_per_label));
                let mut events = Vec::new();
                for (ion, pool) in pools.iter().enumerate() {
                    let pick = rng.random_range(0..samples_per_label);
                    events.extend_from_slice(&pool[label.bit(ion) as usize][pick]);
                }
                events.sort_by(|a, b| a.arrival_us.total_cmp(&b.arrival_us).then(a.channel.cmp(&b.channel)));
                ReadoutSample { label, window_us: model.window_us, events }
            })
            .collect()
    } else {
        (0..total)
            .into_par_iter()
            .map(|k| {
                let label = labels[k / samples_per_label];
                let mut rng = stream_rng(seed, sample_stream(label.index(), k % samples_per_label));
                simulate_shot(label, geometry, model, &router, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?
    };

    Ok(Dataset {
        samples,
        geometry: geometry.clone(),
        model: model.clone(),
        seed,
        samples_per_label,
        pool_resampling: options.pool_resampling,
    })
}

impl Dataset {
    pub fn labels(&self) -> Vec<BasisLabel> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn num_ions(&self) -> usize {
        self.geometry.num_ions
    }

    /// Writes the line format: one JSON metadata header, then one JSON object per sample.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: self.seed,
            samples_per_label: self.samples_per_label,
            pool_resampling: self.pool_resampling,
            geometry: self.geometry.clone(),
            model: self.model.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for sample in &self.samples {
            serde_json::to_writer(&mut out, sample)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse { line: 1, message: "empty dataset file".into() })?;
        let header: Header =
            serde_json::from_str(&first?).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported format {} v{}", header.format, header.version),
            });
        }
        header.geometry.validate()?;
        header.model.validate()?;
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: ReadoutSample =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            sample
                .validate(&header.geometry)
                .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
            samples.push(sample);
        }
        let expected = header.samples_per_label << header.geometry.num_ions;
        if samples.len() != expected {
            return Err(Error::Parse {
                line: samples.len() + 1,
                message: format!("expected {expected} samples, found {}", samples.len()),
            });
        }
        Ok(Self {
            samples,
            geometry: header.geometry,
            model: header.model,
            seed: header.seed,
            samples_per_label: header.samples_per_label,
            pool_resampling: header.pool_resampling,
        })
    }
}
