use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Fixed-length vector of binary values. Serializes as a `"0110..."` string.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Bits(Vec<bool>);

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        Bits(vec![true; len])
    }

    pub fn from_slice(bits: &[bool]) -> Self {
        Bits(bits.to_vec())
    }

    /// Bits set at the given indices, everything else zero.
    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut bits = Bits::zeros(len);
        for &i in indices {
            bits.set(i, true);
        }
        bits
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.0[i] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn iter_zeros(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (!b).then_some(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn hamming(&self, other: &Bits) -> usize {
        debug_assert_eq!(self.len(), other.len());
        self.0
            .iter()
            .zip(other.0.iter())
            .filter(|(a, b)| a != b)
            .count()
    }

    /// Mask of positions where the two bit vectors differ.
    pub fn diff_mask(&self, other: &Bits) -> Bits {
        debug_assert_eq!(self.len(), other.len());
        Bits(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a != b)
                .collect(),
        )
    }

    pub fn to_bitstring(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!(
                    "invalid character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<bool>>>()
            .map(Bits)
    }

    /// Decodes the low `len` bits of `value`, index 0 = least significant bit.
    pub fn from_u64(value: u64, len: usize) -> Self {
        Bits((0..len).map(|i| (value >> i) & 1 == 1).collect())
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits({})", self.to_bitstring())
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bitstring())
    }
}

impl Serialize for Bits {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_bitstring())
    }
}

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Bits::from_bitstring(&s).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bitstring_round_trip() {
        let b = Bits::from_bitstring("01101").unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.count_ones(), 3);
        assert_eq!(b.to_bitstring(), "01101");
        assert_eq!(b.iter_ones().collect::<Vec<_>>(), vec![1, 2, 4]);
    }

    #[test]
    fn rejects_non_binary_characters() {
        assert!(Bits::from_bitstring("0120").is_err());
    }

    #[test]
    fn hamming_and_diff() {
        let a = Bits::from_bitstring("0110").unwrap();
        let b = Bits::from_bitstring("1100").unwrap();
        assert_eq!(a.hamming(&b), 2);
        assert_eq!(a.diff_mask(&b).to_bitstring(), "1010");
    }

    #[test]
    fn u64_low_bit_first() {
        let b = Bits::from_u64(0b101, 4);
        assert_eq!(b.to_bitstring(), "1010");
    }
}
