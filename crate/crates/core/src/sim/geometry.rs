use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MAX_QUBITS;

const ROW_TOLERANCE: f64 = 1e-12;

/// Ion-to-detector layout and per-photon crosstalk.
///
/// `crosstalk[i][m]` is the probability that a photon emitted by ion `i` is
/// registered on channel `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorGeometry {
    pub num_ions: usize,
    pub num_channels: usize,
    pub ion_channel: Vec<usize>,
    pub crosstalk: Vec<Vec<f64>>,
    pub intermediate_channels_present: bool,
}

/// Point spread of the default alternating layout, indexed by channel offset
/// -2..=2: 5% onto each adjacent (unused) channel, 4% onto the next ion's channel.
pub const ALTERNATING_KERNEL: [f64; 5] = [0.04, 0.05, 0.82, 0.05, 0.04];
/// Point spread of the default adjacent layout, offsets -2..=2.
pub const ADJACENT_KERNEL: [f64; 5] = [0.01, 0.12, 0.74, 0.12, 0.01];

impl DetectorGeometry {
    /// Builds crosstalk rows from a point-spread kernel centered on each ion's
    /// channel. `kernel[k]` applies to channel offset `k - kernel.len() / 2`.
    /// Mass that would land outside the detector array is kept on the ion's own channel.
    pub fn from_kernel(
        num_channels: usize,
        ion_channel: Vec<usize>,
        kernel: &[f64],
        intermediate_channels_present: bool,
    ) -> Result<Self> {
        if kernel.len().is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!(
                "crosstalk kernel must have odd length, got {}",
                kernel.len()
            )));
        }
        let half = (kernel.len() / 2) as isize;
        let crosstalk = ion_channel
            .iter()
            .map(|&own| {
                let mut row = vec![0.0; num_channels];
                for (k, &p) in kernel.iter().enumerate() {
                    let target = own as isize + k as isize - half;
                    if (0..num_channels as isize).contains(&target) {
                        row[target as usize] += p;
                    } else if own < num_channels {
                        row[own] += p;
                    }
                }
                row
            })
            .collect();
        let geometry = Self {
            num_ions: ion_channel.len(),
            num_channels,
            ion_channel,
            crosstalk,
            intermediate_channels_present,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Ions imaged onto every other channel (`0, 2, 4, …`), leaving unused
    /// intermediate channels in between.
    pub fn alternating(num_ions: usize, kernel: &[f64], intermediate_channels_present: bool) -> Result<Self> {
        if num_ions == 0 {
            return Err(Error::InvalidGeometry("num_ions must be at least 1".into()));
        }
        let ion_channel = (0..num_ions).map(|i| 2 * i).collect();
        Self::from_kernel(2 * num_ions - 1, ion_channel, kernel, intermediate_channels_present)
    }

    /// Ions imaged onto neighboring channels; no intermediate channels exist.
    pub fn adjacent(num_ions: usize, kernel: &[f64]) -> Result<Self> {
        Self::from_kernel(num_ions, (0..num_ions).collect(), kernel, false)
    }

    /// Single ion on a single channel with no crosstalk.
    pub fn single_ion() -> Self {
        Self::from_kernel(1, vec![0], &[1.0], false).expect("valid by construction")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ions == 0 {
            return Err(Error::InvalidGeometry("num_ions must be at least 1".into()));
        }
        if self.num_ions > MAX_QUBITS {
            return Err(Error::TooManyIons { num_ions: self.num_ions, max: MAX_QUBITS });
        }
        if self.num_channels < self.num_ions {
            return Err(Error::InvalidGeometry(format!(
                "{} channels cannot host {} ions",
                self.num_channels, self.num_ions
            )));
        }
        if self.ion_channel.len() != self.num_ions || self.crosstalk.len() != self.num_ions {
            return Err(Error::InvalidGeometry("ion_channel and crosstalk need one entry per ion".into()));
        }
        let mut seen = vec![false; self.num_channels];
        for &c in &self.ion_channel {
            if c >= self.num_channels {
                return Err(Error::InvalidGeometry(format!("ion channel {c} out of range")));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidGeometry(format!("channel {c} assigned to two ions")));
            }
        }
        for (i, row) in self.crosstalk.iter().enumerate() {
            if row.len() != self.num_channels {
                return Err(Error::InvalidGeometry(format!("crosstalk row {i} has wrong length")));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidGeometry(format!("crosstalk row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::InvalidGeometry(format!("crosstalk row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Whether events on `channel` are recorded.
    pub fn is_recorded(&self, channel: usize) -> bool {
        self.intermediate_channels_present || self.ion_channel.contains(&channel)
    }

    /// Channels that are not assigned to any ion.
    pub fn intermediate_channels(&self) -> Vec<usize> {
        (0..self.num_channels).filter(|c| !self.ion_channel.contains(c)).collect()
    }

    /// Indices of the ions adjacent to `ion` in the chain.
    pub fn neighbors(&self, ion: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        if ion > 0 {
            out.push(ion - 1);
        }
        if ion + 1 < self.num_ions {
            out.push(ion + 1);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_layout() {
        let g = DetectorGeometry::alternating(3, &ALTERNATING_KERNEL, true).unwrap();
        assert_eq!(g.num_channels, 5);
        assert_eq!(g.ion_channel, vec![0, 2, 4]);
        assert_eq!(g.intermediate_channels(), vec![1, 3]);
        // middle ion keeps the full kernel
        assert_eq!(g.crosstalk[1], ALTERNATING_KERNEL.to_vec());
        // edge ion folds the off-array mass back onto its own channel
        let folded = ALTERNATING_KERNEL[0] + ALTERNATING_KERNEL[1] + ALTERNATING_KERNEL[2];
        assert!((g.crosstalk[0][0] - folded).abs() < 1e-12);
        assert_eq!(g.neighbors(0), vec![1]);
        assert_eq!(g.neighbors(1), vec![0, 2]);
    }

    #[test]
    fn rows_must_be_stochastic() {
        let mut g = DetectorGeometry::adjacent(2, &[0.1, 0.8, 0.1]).unwrap();
        g.crosstalk[0][0] += 1e-9;
        assert!(g.validate().is_err());
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(DetectorGeometry::from_kernel(3, vec![0, 0], &[1.0], false).is_err());
        assert!(DetectorGeometry::from_kernel(3, vec![0, 3], &[1.0], false).is_err());
        assert!(DetectorGeometry::from_kernel(1, vec![0, 1], &[1.0], false).is_err());
        assert!(DetectorGeometry::from_kernel(3, vec![0], &[0.5, 0.5], false).is_err());
        assert!(DetectorGeometry::adjacent(13, &[1.0]).is_err());
    }

    #[test]
    fn recorded_channels_follow_flag() {
        let g = DetectorGeometry::alternating(2, &[0.1, 0.8, 0.1], false).unwrap();
        assert!(g.is_recorded(0) && g.is_recorded(2));
        assert!(!g.is_recorded(1));
    }
}
