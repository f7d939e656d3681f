use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported register; the classifiers carry one output per basis state.
pub const MAX_QUBITS: usize = 12;

/// A computational basis state of an `num_qubits`-ion register.
///
/// Ion 0 is the leftmost character of the bitstring and the most significant
/// bit of [`BasisLabel::index`], so indices enumerate labels in the order
/// `00…0, 00…1, …, 11…1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisLabel {
    index: u32,
    num_qubits: u8,
}

impl BasisLabel {
    pub fn new(index: usize, num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 || num_qubits > MAX_QUBITS {
            return Err(Error::TooManyIons { num_ions: num_qubits, max: MAX_QUBITS });
        }
        if index >= 1 << num_qubits {
            return Err(Error::InvalidLabel(format!(
                "index {index} out of range for {num_qubits} qubits"
            )));
        }
        Ok(Self { index: index as u32, num_qubits: num_qubits as u8 })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let index = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        Self::new(index, bits.len())
    }

    pub fn index(&self) -> usize {
        self.index as usize
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits as usize
    }

    pub fn bit(&self, ion: usize) -> bool {
        debug_assert!(ion < self.num_qubits());
        (self.index >> (self.num_qubits() - 1 - ion)) & 1 == 1
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.num_qubits()).map(|i| self.bit(i)).collect()
    }

    /// All `2^n` labels in index order.
    pub fn all(num_qubits: usize) -> Result<Vec<Self>> {
        let first = Self::new(0, num_qubits)?;
        Ok((0..1usize << num_qubits)
            .map(|index| Self { index: index as u32, ..first })
            .collect())
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.num_qubits() {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BasisLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidLabel(format!("unexpected character {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bits(&bits)
    }
}

impl Serialize for BasisLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BasisLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_order_is_big_endian_in_ion_index() {
        let label: BasisLabel = "011".parse().unwrap();
        assert_eq!(label.index(), 3);
        assert_eq!(label.bits(), vec![false, true, true]);
        assert_eq!(label.to_string(), "011");
    }

    #[test]
    fn all_labels_enumerate_lexicographically() {
        let names: Vec<String> = BasisLabel::all(2).unwrap().iter().map(|l| l.to_string()).collect();
        assert_eq!(names, ["00", "01", "10", "11"]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!("01x".parse::<BasisLabel>().is_err());
        assert!("".parse::<BasisLabel>().is_err());
        assert!(BasisLabel::new(4, 2).is_err());
        assert!(BasisLabel::new(0, 13).is_err());
    }
}
