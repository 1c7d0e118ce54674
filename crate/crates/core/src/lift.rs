//! Polynomial lifting of projected observables.
//!
//! A lifted state is `z = [y; f(y)]` where `f` enumerates monomials of the
//! first `subset_size` coordinates of `y`. Monomials of total degree
//! `2..=max_degree` are listed in graded-lexicographic order: by degree, then
//! lexicographically by their non-decreasing index tuple, so for two variables
//! and degree 2 the block is `(y0^2, y0*y1, y1^2)`. An optional constant `1`
//! precedes them. The order is part of the model file contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DEGREE: u32 = 2;
pub const MAX_DEGREE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftConfig {
    pub subset_size: usize,
    pub max_degree: u32,
    pub include_constant: bool,
}

impl Default for LiftConfig {
    fn default() -> Self {
        Self {
            subset_size: 5,
            max_degree: 4,
            include_constant: false,
        }
    }
}

impl LiftConfig {
    pub fn new(subset_size: usize, max_degree: u32, include_constant: bool) -> Result<Self> {
        let config = Self {
            subset_size,
            max_degree,
            include_constant,
        };
        config.validate()?;
        Ok(config)
    }

    /// No lift at all: `z = y`.
    pub fn identity() -> Self {
        Self {
            subset_size: 0,
            max_degree: MIN_DEGREE,
            include_constant: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&self.max_degree) {
            return Err(Error::InvalidConfig(format!(
                "lift max_degree must be in [{MIN_DEGREE}, {MAX_DEGREE}], got {}",
                self.max_degree
            )));
        }
        Ok(())
    }

    /// Checks the lift against the rank of the observable map it will be used with.
    pub fn validate_for_rank(&self, rank: usize) -> Result<()> {
        self.validate()?;
        if self.subset_size > rank {
            return Err(Error::DimensionMismatch {
                context: "lift subset size exceeds observable rank".into(),
                expected: rank,
                found: self.subset_size,
            });
        }
        Ok(())
    }

    /// Number of lifted coordinates appended to `y` (gamma).
    pub fn lift_dim(&self) -> usize {
        let d = self.subset_size;
        let monomials: usize = (MIN_DEGREE..=self.max_degree)
            .map(|k| multiset_count(d, k as usize))
            .sum();
        monomials + usize::from(self.include_constant)
    }

    /// Monomials as non-decreasing index tuples, in output order.
    pub fn monomials(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        if self.subset_size == 0 {
            return out;
        }
        for degree in MIN_DEGREE..=self.max_degree {
            let mut idx = vec![0usize; degree as usize];
            loop {
                out.push(idx.clone());
                // Advance to the next non-decreasing tuple in lex order.
                let Some(pos) = idx.iter().rposition(|&i| i + 1 < self.subset_size) else {
                    break;
                };
                let next = idx[pos] + 1;
                for slot in &mut idx[pos..] {
                    *slot = next;
                }
            }
        }
        out
    }

    pub fn lifter(&self) -> PolynomialLift {
        PolynomialLift {
            config: *self,
            monomials: self.monomials(),
        }
    }
}

/// C(d + k - 1, k): multisets of size k drawn from d symbols.
fn multiset_count(d: usize, k: usize) -> usize {
    if d == 0 {
        return 0;
    }
    let (n, k) = (d + k - 1, k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// A lifting map from `r` observables to `r + gamma` lifted coordinates.
///
/// Only the polynomial dictionary is implemented; other dictionaries can
/// implement this trait without changing the fitting or scoring code.
pub trait Lift {
    fn lift_dim(&self) -> usize;

    /// Writes `f(y)` into `out`, which has length `lift_dim()`.
    fn lift_block(&self, y: &[f64], out: &mut [f64]);

    fn lift(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// [`LiftConfig`] with its monomial list precomputed.
#[derive(Debug, Clone)]
pub struct PolynomialLift {
    config: LiftConfig,
    monomials: Vec<Vec<usize>>,
}

impl PolynomialLift {
    pub fn config(&self) -> &LiftConfig {
        &self.config
    }
}

impl Lift for PolynomialLift {
    fn lift_dim(&self) -> usize {
        self.monomials.len() + usize::from(self.config.include_constant)
    }

    fn lift_block(&self, y: &[f64], out: &mut [f64]) {
        let mut slots = out.iter_mut();
        if self.config.include_constant {
            *slots.next().expect("lift block sized by lift_dim") = 1.0;
        }
        for (slot, mono) in slots.zip(&self.monomials) {
            *slot = mono.iter().map(|&i| y[i]).product();
        }
    }

    fn lift(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() < self.config.subset_size {
            return Err(Error::DimensionMismatch {
                context: "observable shorter than lift subset".into(),
                expected: self.config.subset_size,
                found: y.len(),
            });
        }
        let r = y.len();
        let mut out = vec![0.0; r + self.lift_dim()];
        out[..r].copy_from_slice(y);
        self.lift_block(y, &mut out[r..]);
        Ok(out)
    }
}

/// Lifts a single observable vector. Prefer [`LiftConfig::lifter`] in loops.
pub fn lift(config: &LiftConfig, y: &[f64]) -> Result<Vec<f64>> {
    config.lifter().lift(y)
}
