//! Weighted empirical quantiles with a point mass at infinity.
//!
//! Every calibrator reduces to queries of the form
//! `Quantile(level; Σ p_i δ_{s_i} + p_∞ δ_∞)`. The convention used
//! throughout is "the smallest atom value whose normalized cumulative
//! mass reaches `level`"; when only the infinity atom reaches it the
//! result is [`Threshold::Infinite`].
//!
//! [`SortedAtoms`] sorts and merges the finite atoms once so the same
//! score distribution can be queried against many test weights, which is
//! what WCP, PCP and Two-Staged all do.

use crate::data::Threshold;
use crate::error::{Error, Result};

/// Absolute slack on normalized cumulative mass when testing whether an
/// atom reaches the requested level.
pub const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedAtom {
    pub value: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDistribution {
    pub atoms: Vec<WeightedAtom>,
    pub inf_mass: f64,
}

impl WeightedDistribution {
    pub fn new(atoms: Vec<WeightedAtom>, inf_mass: f64) -> Result<Self> {
        for a in &atoms {
            if !a.value.is_finite() || !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(Error::BadAtom {
                    value: a.value,
                    mass: a.mass,
                });
            }
        }
        if !(inf_mass >= 0.0) || !inf_mass.is_finite() {
            return Err(Error::BadAtom {
                value: f64::INFINITY,
                mass: inf_mass,
            });
        }
        let dist = Self { atoms, inf_mass };
        if !(dist.total_mass() > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(dist)
    }

    /// Atoms with unit mass each and the given infinity mass.
    pub fn uniform(values: &[f64], inf_mass: f64) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&value| WeightedAtom { value, mass: 1.0 })
                .collect(),
            inf_mass,
        )
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum::<f64>() + self.inf_mass
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level <= 1.0 {
        Ok(())
    } else {
        Err(Error::BadLevel(level))
    }
}

/// Finite atoms sorted by value with ties merged, plus their running mass.
#[derive(Debug, Clone)]
pub struct SortedAtoms {
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl SortedAtoms {
    pub fn new(atoms: &[WeightedAtom]) -> Self {
        let mut sorted = atoms.to_vec();
        sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut cumulative: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut running = 0.0;
        for atom in sorted {
            running += atom.mass;
            if values.last() == Some(&atom.value) {
                *cumulative.last_mut().unwrap() = running;
            } else {
                values.push(atom.value);
                cumulative.push(running);
            }
        }
        Self { values, cumulative }
    }

    pub fn finite_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Quantile at `level` with `inf_mass` placed on the infinity atom.
    pub fn quantile(&self, level: f64, inf_mass: f64) -> Result<Threshold> {
        check_level(level)?;
        if inf_mass == f64::INFINITY {
            return Ok(Threshold::Infinite);
        }
        let total = self.finite_mass() + inf_mass;
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        let target = (level - MASS_SLACK) * total;
        let idx = self.cumulative.partition_point(|&c| c < target);
        Ok(match self.values.get(idx) {
            Some(&v) => Threshold::Finite(v),
            None => Threshold::Infinite,
        })
    }
}

/// Weighted quantile of `dist` at `level ∈ (0, 1]`.
pub fn weighted_quantile(level: f64, dist: &WeightedDistribution) -> Result<Threshold> {
    check_level(level)?;
    SortedAtoms::new(&dist.atoms).quantile(level, dist.inf_mass)
}

/// Brute-force reference for [`weighted_quantile`]: every candidate value
/// gets its cumulative mass recomputed from scratch.
pub fn weighted_quantile_oracle(level: f64, dist: &WeightedDistribution) -> Result<Threshold> {
    check_level(level)?;
    let total = dist.total_mass();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut best: Option<f64> = None;
    for candidate in dist.atoms.iter().map(|a| a.value) {
        let mut below = 0.0;
        for atom in &dist.atoms {
            if atom.value <= candidate {
                below += atom.mass;
            }
        }
        if below >= (level - MASS_SLACK) * total && best.is_none_or(|b| candidate < b) {
            best = Some(candidate);
        }
    }
    Ok(best.map_or(Threshold::Infinite, Threshold::Finite))
}

/// Split-conformal threshold: the `⌈(n+1)(1-α)⌉`-th smallest score, or
/// `Infinite` when that rank exceeds `n`.
pub fn cp_quantile(scores: &[f64], alpha: f64) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    let n = scores.len();
    let rank = (((1.0 - alpha) - MASS_SLACK) * (n + 1) as f64)
        .ceil()
        .max(1.0) as usize;
    if rank > n {
        return Ok(Threshold::Infinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Threshold::Finite(sorted[rank - 1]))
}
