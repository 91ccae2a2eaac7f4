//! Acquisition masks at superfeature granularity and distributions over them.

use serde::{Deserialize, Serialize};

use crate::error::{AfapeError, Result};

/// Largest number of superfeatures for which masks are enumerated.
pub const MAX_SUPERFEATURES: usize = 12;

/// Grouping of subfeature columns into jointly acquired superfeatures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperfeatureMap {
    groups: Vec<Vec<usize>>,
    free: Vec<bool>,
    column_owner: Vec<usize>,
}

impl SuperfeatureMap {
    pub fn new(groups: Vec<Vec<usize>>, free_set: &[usize]) -> Result<Self> {
        if groups.is_empty() || groups.len() > MAX_SUPERFEATURES {
            return Err(AfapeError::invalid(format!(
                "need 1..={MAX_SUPERFEATURES} superfeatures, got {}",
                groups.len()
            )));
        }
        let n_sub: usize = groups.iter().map(Vec::len).sum();
        let mut column_owner = vec![usize::MAX; n_sub];
        for (k, cols) in groups.iter().enumerate() {
            if cols.is_empty() {
                return Err(AfapeError::invalid(format!("superfeature {k} has no columns")));
            }
            for &c in cols {
                if c >= n_sub || column_owner[c] != usize::MAX {
                    return Err(AfapeError::invalid(format!(
                        "column {c} is out of range or assigned twice"
                    )));
                }
                column_owner[c] = k;
            }
        }
        let mut free = vec![false; groups.len()];
        for &k in free_set {
            if k >= groups.len() {
                return Err(AfapeError::invalid(format!("free superfeature {k} out of range")));
            }
            free[k] = true;
        }
        Ok(Self {
            groups,
            free,
            column_owner,
        })
    }

    /// `{0:[0], 1:[1], 2:[2,3]}` with superfeature 0 free.
    pub fn experiment_default() -> Self {
        Self::new(vec![vec![0], vec![1], vec![2, 3]], &[0]).expect("valid default map")
    }

    /// Number of superfeatures (K).
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of subfeature columns.
    pub fn n_sub(&self) -> usize {
        self.column_owner.len()
    }

    pub fn columns(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn owner(&self, col: usize) -> usize {
        self.column_owner[col]
    }

    pub fn is_free(&self, k: usize) -> bool {
        self.free[k]
    }

    pub fn costly(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| !self.free[k])
    }

    pub fn free_mask(&self) -> StepMask {
        let mut m = StepMask::zeros(self.len());
        for k in 0..self.len() {
            if self.free[k] {
                m = m.with(k, true);
            }
        }
        m
    }
}

/// Acquisition decision for one step: bit `k` set means superfeature `k` is acquired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepMask {
    bits: u32,
    len: u8,
}

impl StepMask {
    pub fn zeros(len: usize) -> Self {
        assert!(len <= MAX_SUPERFEATURES);
        Self { bits: 0, len: len as u8 }
    }

    pub fn ones(len: usize) -> Self {
        assert!(len <= MAX_SUPERFEATURES);
        Self {
            bits: (1u32 << len) - 1,
            len: len as u8,
        }
    }

    pub fn from_bits(bits: u32, len: usize) -> Self {
        assert!(len <= MAX_SUPERFEATURES);
        Self {
            bits: bits & ((1u32 << len) - 1),
            len: len as u8,
        }
    }

    pub fn from_bools(bools: &[bool]) -> Self {
        let mut m = Self::zeros(bools.len());
        for (k, &b) in bools.iter().enumerate() {
            m = m.with(k, b);
        }
        m
    }

    pub fn len(self) -> usize {
        self.len as usize
    }

    pub fn is_empty(self) -> bool {
        self.len == 0
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn get(self, k: usize) -> bool {
        debug_assert!(k < self.len());
        self.bits >> k & 1 == 1
    }

    #[must_use]
    pub fn with(self, k: usize, on: bool) -> Self {
        debug_assert!(k < self.len());
        let bits = if on {
            self.bits | 1 << k
        } else {
            self.bits & !(1 << k)
        };
        Self { bits, len: self.len }
    }

    pub fn count(self) -> u32 {
        self.bits.count_ones()
    }

    pub fn is_all_ones(self) -> bool {
        self.bits == (1u32 << self.len) - 1
    }

    /// Element-wise `self <= other`. Lengths must agree.
    pub fn leq(self, other: StepMask) -> bool {
        debug_assert_eq!(self.len, other.len);
        self.bits & !other.bits == 0
    }

    pub fn iter(self) -> impl Iterator<Item = bool> {
        (0..self.len()).map(move |k| self.get(k))
    }

    /// All masks of this length, in increasing bit order.
    pub fn all(len: usize) -> impl Iterator<Item = StepMask> {
        (0..1u32 << len).map(move |b| StepMask::from_bits(b, len))
    }
}

impl std::fmt::Display for StepMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for k in 0..self.len() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", u8::from(self.get(k)))?;
        }
        write!(f, ")")
    }
}

/// `a_prime <= a` with a length check.
pub fn mask_leq(a_prime: StepMask, a: StepMask) -> Result<bool> {
    if a_prime.len() != a.len() {
        return Err(AfapeError::invalid(format!(
            "mask lengths differ: {} vs {}",
            a_prime.len(),
            a.len()
        )));
    }
    Ok(a_prime.leq(a))
}

/// Masks for steps `1..=T`; `steps[t - 1]` is the mask at step `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskTrajectory {
    steps: Vec<StepMask>,
}

impl MaskTrajectory {
    pub fn new(steps: Vec<StepMask>) -> Result<Self> {
        if let Some(first) = steps.first() {
            if steps.iter().any(|m| m.len() != first.len()) {
                return Err(AfapeError::invalid("mask trajectory has mixed widths"));
            }
        }
        Ok(Self { steps })
    }

    pub fn constant(mask: StepMask, horizon: usize) -> Self {
        Self {
            steps: vec![mask; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Mask at step `t` (1-based).
    pub fn at(&self, t: usize) -> StepMask {
        self.steps[t - 1]
    }

    /// Masks for steps `1..=t`.
    pub fn prefix(&self, t: usize) -> &[StepMask] {
        &self.steps[..t]
    }

    pub fn steps(&self) -> &[StepMask] {
        &self.steps
    }

    pub fn is_complete(&self) -> bool {
        self.steps.iter().all(|m| m.is_all_ones())
    }

    /// Complete through step `t` (steps `1..=t` all ones).
    pub fn is_complete_through(&self, t: usize) -> bool {
        self.steps[..t].iter().all(|m| m.is_all_ones())
    }

    pub fn leq(&self, other: &MaskTrajectory) -> bool {
        self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| a.leq(*b))
    }
}

/// A finite distribution over step masks, stored as its support.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDist {
    support: Vec<(StepMask, f64)>,
}

impl MaskDist {
    /// Builds a distribution, dropping zero-mass entries. Entries must be distinct.
    pub fn from_support(entries: Vec<(StepMask, f64)>) -> Self {
        let support = entries.into_iter().filter(|&(_, p)| p > 0.0).collect();
        Self { support }
    }

    pub fn point(mask: StepMask) -> Self {
        Self {
            support: vec![(mask, 1.0)],
        }
    }

    /// Independent Bernoulli bits.
    pub fn factorized(probs: &[f64]) -> Self {
        let k = probs.len();
        let mut support = Vec::new();
        for m in StepMask::all(k) {
            let mut p = 1.0;
            for (i, &q) in probs.iter().enumerate() {
                p *= if m.get(i) { q } else { 1.0 - q };
                if p == 0.0 {
                    break;
                }
            }
            if p > 0.0 {
                support.push((m, p));
            }
        }
        Self { support }
    }

    pub fn support(&self) -> &[(StepMask, f64)] {
        &self.support
    }

    pub fn prob(&self, mask: StepMask) -> f64 {
        self.support
            .iter()
            .find(|(m, _)| *m == mask)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn total(&self) -> f64 {
        self.support.iter().map(|&(_, p)| p).sum()
    }

    pub fn is_point_mass(&self) -> bool {
        self.support.len() == 1
    }

    /// Inverse-CDF draw from a uniform `u` in [0, 1).
    pub fn sample_with(&self, u: f64) -> StepMask {
        let total = self.total();
        let mut acc = 0.0;
        for &(m, p) in &self.support {
            acc += p / total;
            if u < acc {
                return m;
            }
        }
        self.support.last().expect("non-empty distribution").0
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> StepMask {
        let u: f64 = rng.random();
        self.sample_with(u)
    }
}
