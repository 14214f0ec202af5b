//! Non-conformity scores and their inversion into prediction sets.

use std::collections::BTreeSet;

use crate::data::{PredictionSet, Response, Threshold};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// `|f(x) - y|` for a point predictor.
    AbsResidual,
    /// Conformalized quantile regression, `max(q_lo - y, y - q_hi)`.
    Cqr,
    /// Homogeneous prediction sets, `1 - p_y`.
    Hps,
}

/// What a base model emits for one input.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput {
    Point(f64),
    Band { lo: f64, hi: f64 },
    Probs(Vec<f64>),
}

pub fn abs_residual(pred: f64, y: f64) -> f64 {
    (pred - y).abs()
}

pub fn cqr_score(q_lo: f64, q_hi: f64, y: f64) -> Result<f64> {
    if q_lo > q_hi {
        return Err(Error::InvalidBand { lo: q_lo, hi: q_hi });
    }
    Ok((q_lo - y).max(y - q_hi))
}

pub fn hps_score(probs: &[f64], y: usize) -> Result<f64> {
    check_simplex(probs)?;
    probs.get(y).map(|p| 1.0 - p).ok_or(Error::BadClassIndex {
        index: y,
        num_classes: probs.len(),
    })
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::NotSimplex(sum));
    }
    Ok(())
}

/// Score of response `y` under `output`.
pub fn score(kind: ScoreKind, output: &ModelOutput, y: &Response) -> Result<f64> {
    match (kind, output, y) {
        (ScoreKind::AbsResidual, ModelOutput::Point(p), Response::Value(v)) => {
            Ok(abs_residual(*p, *v))
        }
        (ScoreKind::Cqr, ModelOutput::Band { lo, hi }, Response::Value(v)) => {
            cqr_score(*lo, *hi, *v)
        }
        (ScoreKind::Hps, ModelOutput::Probs(p), Response::Class(c)) => hps_score(p, *c),
        _ => Err(Error::ShapeMismatch),
    }
}

/// The set `{y : score(output, y) <= threshold}`.
///
/// An interval whose lower end would pass its upper end collapses to the
/// degenerate interval at the band midpoint instead of an empty set.
pub fn invert(
    kind: ScoreKind,
    output: &ModelOutput,
    threshold: Threshold,
) -> Result<PredictionSet> {
    let (lo, hi) = match (kind, output) {
        (ScoreKind::AbsResidual, ModelOutput::Point(p)) => (*p, *p),
        (ScoreKind::Cqr, ModelOutput::Band { lo, hi }) => {
            if lo > hi {
                return Err(Error::InvalidBand { lo: *lo, hi: *hi });
            }
            (*lo, *hi)
        }
        (ScoreKind::Hps, ModelOutput::Probs(probs)) => {
            check_simplex(probs)?;
            let Threshold::Finite(q) = threshold else {
                return Ok(PredictionSet::FullSpace);
            };
            let labels: BTreeSet<usize> = probs
                .iter()
                .enumerate()
                .filter(|(_, p)| 1.0 - *p <= q)
                .map(|(y, _)| y)
                .collect();
            return Ok(PredictionSet::LabelSet(labels));
        }
        _ => return Err(Error::ShapeMismatch),
    };
    let Threshold::Finite(q) = threshold else {
        return Ok(PredictionSet::FullSpace);
    };
    let (a, b) = (lo - q, hi + q);
    if a > b {
        let mid = 0.5 * (lo + hi);
        return Ok(PredictionSet::Interval { lo: mid, hi: mid });
    }
    Ok(PredictionSet::Interval { lo: a, hi: b })
}
