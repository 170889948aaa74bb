use std::fmt;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Flat model parameters, one `f64` per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_len(&self, n: usize, what: &str) -> Result<()> {
        if self.0.len() != n {
            return Err(Error::Dimension(format!(
                "{what}: expected {n} coordinates, got {}",
                self.0.len()
            )));
        }
        Ok(())
    }

    /// `self ⊙ mask`: pruned coordinates become exactly zero.
    pub fn masked(&self, mask: &Mask) -> Result<ParamVector> {
        self.check_len(mask.len(), "mask")?;
        let mut out = vec![0.0; self.0.len()];
        for i in mask.iter_ones() {
            out[i] = self.0[i];
        }
        Ok(ParamVector(out))
    }

    /// True when every coordinate outside `mask` is zero.
    pub fn respects_mask(&self, mask: &Mask) -> bool {
        self.0.len() == mask.len() && self.0.iter().enumerate().all(|(i, v)| mask.get(i) || *v == 0.0)
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Binary coordinate mask; bit `n` set means coordinate `n` is retained.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: BitVec<u64, Lsb0>,
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Mask(n={}, ones={}, density={:.4})",
            self.len(),
            self.count_ones(),
            self.density()
        )
    }
}

impl Mask {
    pub fn full(n: usize) -> Self {
        Mask {
            bits: BitVec::repeat(true, n),
        }
    }

    pub fn empty(n: usize) -> Self {
        Mask {
            bits: BitVec::repeat(false, n),
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Mask {
            bits: bits.iter().copied().collect(),
        }
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Mask::empty(n);
        for i in indices {
            m.bits.set(i, true);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, value: bool) {
        self.bits.set(i, value);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones()
    }

    /// Fraction of retained coordinates, `popcount / N`.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.len() as f64
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.len() == other.len() && self.bits.iter_ones().all(|i| other.bits[i])
    }

    /// Coordinates in `self` but not in `other`.
    pub fn difference(&self, other: &Mask) -> Mask {
        let mut bits = self.bits.clone();
        for i in other.bits.iter_ones() {
            if i < bits.len() {
                bits.set(i, false);
            }
        }
        Mask { bits }
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter_ones().any(|i| i < other.len() && other.bits[i])
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.bits.iter().by_vals().collect()
    }
}
