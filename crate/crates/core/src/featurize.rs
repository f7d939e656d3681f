//! Fixed-shape classifier inputs built from raw event samples.
//!
//! A [`CountImage`] holds per-channel, per-time-bin click counts. Bins are
//! left-closed and right-open, except the last one, which also absorbs events
//! at the window edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{DetectorGeometry, ReadoutSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Divide each feature by its maximum over the training split.
    TrainMax,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub include_intermediate: bool,
    pub num_bins: usize,
    pub normalization: Normalization,
}

impl FeatureSpec {
    pub fn totals(include_intermediate: bool) -> Self {
        Self { include_intermediate, num_bins: 1, normalization: Normalization::TrainMax }
    }

    pub fn binned(include_intermediate: bool, num_bins: usize) -> Self {
        Self { include_intermediate, num_bins, normalization: Normalization::TrainMax }
    }

    /// Channels that feed the classifier, in order: ion channels in ion order,
    /// or every recorded channel in detector order.
    pub fn channels(&self, geometry: &DetectorGeometry) -> Result<Vec<usize>> {
        if self.num_bins == 0 {
            return Err(Error::InvalidArgument("num_bins must be at least 1".into()));
        }
        if self.include_intermediate {
            if !geometry.intermediate_channels_present {
                return Err(Error::InvalidArgument(
                    "intermediate channels requested but the geometry does not record them".into(),
                ));
            }
            Ok((0..geometry.num_channels).collect())
        } else {
            Ok(geometry.ion_channel.clone())
        }
    }

    pub fn width(&self, geometry: &DetectorGeometry) -> Result<usize> {
        Ok(self.channels(geometry)?.len() * self.num_bins)
    }
}

/// Channel × time-bin count matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountImage {
    pub counts: Vec<u32>,
    pub channel_ids: Vec<usize>,
    pub num_bins: usize,
    pub bin_width_us: f64,
}

impl CountImage {
    pub fn num_rows(&self) -> usize {
        self.channel_ids.len()
    }

    pub fn get(&self, row: usize, bin: usize) -> u32 {
        self.counts[row * self.num_bins + bin]
    }

    pub fn row_sums(&self) -> Vec<u32> {
        self.counts.chunks(self.num_bins).map(|r| r.iter().sum()).collect()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Time bin of an arrival, with the last bin right-closed.
pub fn bin_index(arrival_us: f64, bin_width_us: f64, num_bins: usize) -> usize {
    ((arrival_us / bin_width_us).floor().max(0.0) as usize).min(num_bins - 1)
}

pub fn bin_sample(sample: &ReadoutSample, spec: &FeatureSpec, geometry: &DetectorGeometry) -> Result<CountImage> {
    let channel_ids = spec.channels(geometry)?;
    let mut row_of = vec![None; geometry.num_channels];
    for (row, &c) in channel_ids.iter().enumerate() {
        row_of[c] = Some(row);
    }
    let bin_width_us = sample.window_us / spec.num_bins as f64;
    let mut counts = vec![0u32; channel_ids.len() * spec.num_bins];
    for e in &sample.events {
        if let Some(row) = row_of.get(e.channel).copied().flatten() {
            counts[row * spec.num_bins + bin_index(e.arrival_us, bin_width_us, spec.num_bins)] += 1;
        }
    }
    Ok(CountImage { counts, channel_ids, num_bins: spec.num_bins, bin_width_us })
}

/// Per-bin count vectors in time order (the columns of [`bin_sample`]).
pub fn to_sequence(sample: &ReadoutSample, spec: &FeatureSpec, geometry: &DetectorGeometry) -> Result<Vec<Vec<u32>>> {
    let image = bin_sample(sample, spec, geometry)?;
    Ok(image_columns(&image))
}

pub fn image_columns(image: &CountImage) -> Vec<Vec<u32>> {
    (0..image.num_bins)
        .map(|t| (0..image.num_rows()).map(|r| image.get(r, t)).collect())
        .collect()
}

/// Row-major flattening: all bins of the first channel, then the next channel.
pub fn flatten(image: &CountImage) -> Vec<u32> {
    image.counts.clone()
}

pub fn unflatten(values: &[u32], channel_ids: Vec<usize>, num_bins: usize, bin_width_us: f64) -> Result<CountImage> {
    if values.len() != channel_ids.len() * num_bins {
        return Err(Error::ShapeMismatch { expected: channel_ids.len() * num_bins, actual: values.len() });
    }
    Ok(CountImage { counts: values.to_vec(), channel_ids, num_bins, bin_width_us })
}

/// Total clicks on each ion's own channel, in ion order.
pub fn ion_totals(sample: &ReadoutSample, geometry: &DetectorGeometry) -> Vec<u32> {
    let counts = sample.channel_counts(geometry.num_channels);
    geometry.ion_channel.iter().map(|&c| counts[c]).collect()
}

/// Per-feature scale factors learned from training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Self { scale: vec![1.0; width] }
    }

    /// Maximum of each feature over `rows`; identically-zero features get scale 1.
    pub fn fit<'a, I>(width: usize, rows: I, normalization: Normalization) -> Self
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        if normalization == Normalization::None {
            return Self::identity(width);
        }
        let mut max = vec![0u32; width];
        for row in rows {
            for (m, &v) in max.iter_mut().zip(row) {
                *m = (*m).max(v);
            }
        }
        Self { scale: max.into_iter().map(|m| if m == 0 { 1.0 } else { m as f64 }).collect() }
    }

    pub fn apply(&self, row: &[u32]) -> Vec<f64> {
        row.iter().zip(&self.scale).map(|(&v, s)| v as f64 / s).collect()
    }

    pub fn apply_as<T: crate::Scalar>(&self, row: &[u32]) -> Vec<T> {
        row.iter().zip(&self.scale).map(|(&v, s)| T::of(v as f64 / s)).collect()
    }
}

/// Debug dump line: the dataset sample format plus a `features` array.
pub fn feature_dump_line(sample: &ReadoutSample, features: &[f64]) -> Result<String> {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(flatten)]
        sample: &'a ReadoutSample,
        features: &'a [f64],
    }
    Ok(serde_json::to_string(&Line { sample, features })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_dataset, EmissionModel, PhotonEvent, ALTERNATING_KERNEL};

    fn sample_on_channel(channel: usize, times: &[f64]) -> ReadoutSample {
        ReadoutSample {
            label: "1".parse().unwrap(),
            window_us: 150.0,
            events: times.iter().map(|&t| PhotonEvent { channel, arrival_us: t }).collect(),
        }
    }

    #[test]
    fn direct_binning() {
        let g = DetectorGeometry::single_ion();
        let s = sample_on_channel(0, &[10.0, 40.0, 149.9]);
        let image = bin_sample(&s, &FeatureSpec::binned(false, 5), &g).unwrap();
        assert_eq!(image.counts, vec![1, 1, 0, 0, 1]);
        assert_eq!(image.bin_width_us, 30.0);
    }

    #[test]
    fn bin_edges_are_left_closed() {
        assert_eq!(bin_index(30.0, 30.0, 5), 1);
        assert_eq!(bin_index(29.9, 30.0, 5), 0);
        assert_eq!(bin_index(150.0, 30.0, 5), 4);
        assert_eq!(bin_index(90.0, 10.0, 15), 9);
    }

    #[test]
    fn single_bin_is_total_count() {
        let g = DetectorGeometry::single_ion();
        let s = sample_on_channel(0, &[1.0, 2.0, 100.0]);
        let image = bin_sample(&s, &FeatureSpec::totals(false), &g).unwrap();
        assert_eq!(image.counts, vec![3]);
    }

    #[test]
    fn empty_sample_is_zero_image() {
        let g = DetectorGeometry::alternating(2, &ALTERNATING_KERNEL, true).unwrap();
        let s = ReadoutSample { label: "00".parse().unwrap(), window_us: 150.0, events: vec![] };
        let image = bin_sample(&s, &FeatureSpec::binned(true, 5), &g).unwrap();
        assert_eq!(image.counts, vec![0; 15]);
    }

    #[test]
    fn intermediate_channels_require_geometry_support() {
        let g = DetectorGeometry::adjacent(2, &[1.0]).unwrap();
        assert!(FeatureSpec::binned(true, 5).channels(&g).is_err());
        assert!(FeatureSpec { num_bins: 0, ..FeatureSpec::totals(false) }.channels(&g).is_err());
    }

    #[test]
    fn flattened_three_qubit_image_has_25_features() {
        let g = DetectorGeometry::alternating(3, &ALTERNATING_KERNEL, true).unwrap();
        assert_eq!(FeatureSpec::binned(true, 5).width(&g).unwrap(), 25);
        assert_eq!(FeatureSpec::binned(false, 5).width(&g).unwrap(), 15);
    }

    #[test]
    fn flatten_is_row_major() {
        let image = unflatten(&[1, 2, 3, 4, 5, 6], vec![0, 1], 3, 50.0).unwrap();
        assert_eq!(image.get(0, 2), 3);
        assert_eq!(image.get(1, 0), 4);
        assert_eq!(flatten(&image), vec![1, 2, 3, 4, 5, 6]);
        assert!(unflatten(&[1, 2], vec![0, 1], 3, 50.0).is_err());
    }

    #[test]
    fn sequence_columns_reproduce_image() {
        let g = DetectorGeometry::alternating(3, &ALTERNATING_KERNEL, true).unwrap();
        let d = generate_dataset(&g, &EmissionModel::default(), 20, 1).unwrap();
        let spec = FeatureSpec::binned(true, 15);
        for s in &d.samples {
            let image = bin_sample(s, &spec, &g).unwrap();
            let seq = to_sequence(s, &spec, &g).unwrap();
            assert_eq!(seq.len(), 15);
            for (t, column) in seq.iter().enumerate() {
                for (r, &v) in column.iter().enumerate() {
                    assert_eq!(v, image.get(r, t));
                }
            }
        }
    }

    #[test]
    fn row_sums_match_independent_recount() {
        let g = DetectorGeometry::alternating(3, &ALTERNATING_KERNEL, true).unwrap();
        let d = generate_dataset(&g, &EmissionModel::default(), 30, 2).unwrap();
        let spec = FeatureSpec::binned(true, 7);
        for s in &d.samples {
            let image = bin_sample(s, &spec, &g).unwrap();
            let mut recount = vec![0u32; 5];
            for e in &s.events {
                recount[e.channel] += 1;
            }
            assert_eq!(image.row_sums(), recount);
            assert_eq!(image.total() as usize, s.events.len());
        }
    }

    #[test]
    fn normalizer_uses_training_max_and_guards_zero() {
        let rows: Vec<Vec<u32>> = vec![vec![2, 0, 5], vec![4, 0, 1]];
        let n = Normalizer::fit(3, rows.iter().map(|r| r.as_slice()), Normalization::TrainMax);
        assert_eq!(n.scale, vec![4.0, 1.0, 5.0]);
        assert_eq!(n.apply(&[8, 3, 5]), vec![2.0, 3.0, 1.0]);
        let raw = Normalizer::fit(3, rows.iter().map(|r| r.as_slice()), Normalization::None);
        assert_eq!(raw.apply(&[8, 3, 5]), vec![8.0, 3.0, 5.0]);
    }

    #[test]
    fn feature_dump_extends_sample_line() {
        let s = sample_on_channel(0, &[1.5]);
        let line = feature_dump_line(&s, &[1.0, 0.5]).unwrap();
        assert_eq!(line, r#"{"label":"1","window_us":150.0,"events":[[0,1.5]],"features":[1.0,0.5]}"#);
    }
}
