//! Conversion between continuous actions and multi-level coarse-to-fine
//! discrete actions.
//!
//! Each action dimension is cut into `bins_per_level^levels` uniform fine
//! bins. A fine bin index decomposes into base-`bins_per_level` digits, one
//! per level, coarse first. Encoding picks the fine bin whose center is
//! nearest to the continuous value; decoding returns that center.

use crate::error::{ArsqError, Result};

/// Geometry of the discretization lattice shared by all model components.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpec {
    pub dims: usize,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub bins_per_level: usize,
    pub levels: usize,
}

impl ActionSpec {
    pub fn new(low: Vec<f64>, high: Vec<f64>, bins_per_level: usize, levels: usize) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(ArsqError::InvalidConfig(format!(
                "action bounds must be non-empty and of equal length (got {} and {})",
                low.len(),
                high.len()
            )));
        }
        if bins_per_level < 2 {
            return Err(ArsqError::InvalidConfig(format!(
                "bins_per_level must be >= 2, got {bins_per_level}"
            )));
        }
        if levels < 1 {
            return Err(ArsqError::InvalidConfig("levels must be >= 1".into()));
        }
        for d in 0..low.len() {
            if !low[d].is_finite() || !high[d].is_finite() || low[d] >= high[d] {
                return Err(ArsqError::InvalidConfig(format!(
                    "low[{d}] = {} must be < high[{d}] = {}",
                    low[d], high[d]
                )));
            }
        }
        Ok(Self {
            dims: low.len(),
            low,
            high,
            bins_per_level,
            levels,
        })
    }

    pub fn symmetric(dims: usize, bound: f64, bins_per_level: usize, levels: usize) -> Result<Self> {
        Self::new(vec![-bound; dims], vec![bound; dims], bins_per_level, levels)
    }

    /// Total fine bins per dimension, `B^L`.
    pub fn fine_bins(&self) -> usize {
        self.bins_per_level.pow(self.levels as u32)
    }

    fn fine_width(&self, dim: usize) -> f64 {
        (self.high[dim] - self.low[dim]) / self.fine_bins() as f64
    }

    /// Center of fine bin `k` in dimension `dim`.
    pub fn fine_center(&self, dim: usize, k: usize) -> f64 {
        self.low[dim] + (k as f64 + 0.5) * self.fine_width(dim)
    }

    /// Center of the cell selected by the first `digits.len()` levels in
    /// dimension `dim` (a coarse cell when fewer than `levels` digits are
    /// given).
    pub fn partial_center(&self, dim: usize, digits: &[usize]) -> f64 {
        let cells = self.bins_per_level.pow(digits.len() as u32) as f64;
        let mut idx = 0usize;
        for &g in digits {
            idx = idx * self.bins_per_level + g;
        }
        self.low[dim] + (idx as f64 + 0.5) * (self.high[dim] - self.low[dim]) / cells
    }

    /// Nearest fine bin to `x` in dimension `dim`; input is clamped to the
    /// bounds first, and a value exactly on a bin boundary goes to the lower
    /// bin.
    pub fn fine_index(&self, dim: usize, x: f64) -> usize {
        let x = x.clamp(self.low[dim], self.high[dim]);
        let t = (x - self.low[dim]) / self.fine_width(dim);
        let k = t.floor();
        let mut k = if t == k && k >= 1.0 { k - 1.0 } else { k } as usize;
        if k >= self.fine_bins() {
            k = self.fine_bins() - 1;
        }
        k
    }

    /// Base-B digit expansion of a per-dimension fine index, coarse level
    /// first.
    pub fn level_decompose(&self, global_index: usize) -> Result<Vec<usize>> {
        if global_index >= self.fine_bins() {
            return Err(ArsqError::IndexOutOfRange {
                what: "global fine index",
                got: global_index,
                limit: self.fine_bins(),
            });
        }
        let mut digits = vec![0usize; self.levels];
        let mut rest = global_index;
        for l in (0..self.levels).rev() {
            digits[l] = rest % self.bins_per_level;
            rest /= self.bins_per_level;
        }
        Ok(digits)
    }

    /// Inverse of [`level_decompose`][Self::level_decompose].
    pub fn level_recompose(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.levels {
            return Err(ArsqError::DimensionMismatch {
                expected: self.levels,
                got: digits.len(),
            });
        }
        let mut idx = 0usize;
        for &g in digits {
            if g >= self.bins_per_level {
                return Err(ArsqError::IndexOutOfRange {
                    what: "level digit",
                    got: g,
                    limit: self.bins_per_level,
                });
            }
            idx = idx * self.bins_per_level + g;
        }
        Ok(idx)
    }
}

/// A multi-level discrete action: one digit in `[0, B)` per (dimension,
/// level) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteAction {
    /// `indices[d][l]` is the level-`l` digit of dimension `d`.
    pub indices: Vec<Vec<usize>>,
}

impl DiscreteAction {
    pub fn new(indices: Vec<Vec<usize>>) -> Self {
        Self { indices }
    }

    pub fn validate(&self, spec: &ActionSpec) -> Result<()> {
        if self.indices.len() != spec.dims {
            return Err(ArsqError::DimensionMismatch {
                expected: spec.dims,
                got: self.indices.len(),
            });
        }
        for row in &self.indices {
            if row.len() != spec.levels {
                return Err(ArsqError::DimensionMismatch {
                    expected: spec.levels,
                    got: row.len(),
                });
            }
            for &g in row {
                if g >= spec.bins_per_level {
                    return Err(ArsqError::IndexOutOfRange {
                        what: "level digit",
                        got: g,
                        limit: spec.bins_per_level,
                    });
                }
            }
        }
        Ok(())
    }

    /// Per-dimension fine index implied by the digits.
    pub fn fine_index(&self, spec: &ActionSpec, dim: usize) -> Result<usize> {
        spec.level_recompose(&self.indices[dim])
    }
}

/// A continuous action, one real per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAction {
    pub values: Vec<f64>,
}

impl ContinuousAction {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Discretize a continuous action to the nearest fine bin per dimension.
/// Out-of-bounds values are clamped; midpoint ties go to the lower bin.
pub fn encode(spec: &ActionSpec, a: &ContinuousAction) -> Result<DiscreteAction> {
    if a.values.len() != spec.dims {
        return Err(ArsqError::DimensionMismatch {
            expected: spec.dims,
            got: a.values.len(),
        });
    }
    let mut indices = Vec::with_capacity(spec.dims);
    for (d, &x) in a.values.iter().enumerate() {
        indices.push(spec.level_decompose(spec.fine_index(d, x))?);
    }
    Ok(DiscreteAction { indices })
}

/// Return the center of the fine bin selected by `d` in every dimension.
pub fn decode(spec: &ActionSpec, d: &DiscreteAction) -> Result<ContinuousAction> {
    d.validate(spec)?;
    let mut values = Vec::with_capacity(spec.dims);
    for dim in 0..spec.dims {
        values.push(spec.fine_center(dim, d.fine_index(spec, dim)?));
    }
    Ok(ContinuousAction { values })
}
