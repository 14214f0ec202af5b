//! Calibration schemes: naive split CP, weighted CP, Two-Staged, PCP in
//! its quadratic and linear forms, and leave-one-out PCP.
//!
//! Split-based calibrators consume a [`CalibInput`]: one
//! `(score, weight, corrupted)` entry per calibration sample. Scores of
//! corrupted entries only matter to the naive scheme that uses them;
//! every weighted scheme calibrates on the clean entries.
//!
//! PCP replaces the unknown test weight by the `(1-β)` quantile of the
//! calibration weights (with a point at infinity). Because the weighted
//! score quantile is non-decreasing in the test weight, thresholding each
//! calibration point and taking the `(1-β)` quantile of those thresholds
//! gives the same answer as plugging the quantile weight in once:
//! [`calibrate_pcp_naive`] and [`calibrate_pcp_efficient`] agree exactly.

use std::collections::BTreeSet;

use crate::data::{PredictionSet, Threshold};
use crate::error::{Error, Result};
use crate::scores::{self, ModelOutput, ScoreKind};
use crate::wquantile::{cp_quantile, SortedAtoms, WeightedAtom};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcpVariant {
    Naive,
    Efficient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibEntry {
    pub score: f64,
    pub weight: f64,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibInput {
    pub entries: Vec<CalibEntry>,
    pub alpha: f64,
    pub beta: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::BadAlpha(alpha))
    }
}

fn check_beta(beta: f64, upper: f64) -> Result<()> {
    if beta > 0.0 && beta < upper {
        Ok(())
    } else {
        Err(Error::BadBeta { beta, upper })
    }
}

impl CalibInput {
    pub fn new(entries: Vec<CalibEntry>, alpha: f64, beta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        for e in &entries {
            if !(e.weight > 0.0) || !e.weight.is_finite() {
                return Err(Error::WeightUndefined(e.weight));
            }
            if !e.score.is_finite() {
                return Err(Error::BadAtom {
                    value: e.score,
                    mass: e.weight,
                });
            }
        }
        Ok(Self {
            entries,
            alpha,
            beta,
        })
    }

    pub fn clean_entries(&self) -> impl Iterator<Item = &CalibEntry> {
        self.entries.iter().filter(|e| !e.corrupted)
    }

    pub fn clean_scores(&self) -> CleanScores {
        CleanScores::new(self.clean_entries().map(|e| (e.score, e.weight)))
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }
}

/// Weighted clean calibration scores, sorted once and queried per test weight.
#[derive(Debug, Clone)]
pub struct CleanScores {
    atoms: SortedAtoms,
}

impl CleanScores {
    pub fn new(scores_and_weights: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let atoms: Vec<WeightedAtom> = scores_and_weights
            .into_iter()
            .map(|(value, mass)| WeightedAtom { value, mass })
            .collect();
        Self {
            atoms: SortedAtoms::new(&atoms),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `Quantile(level; Σ p_j δ_{S_j} + p_test δ_∞)`; `Infinite` when there
    /// are no clean scores.
    pub fn threshold(&self, test_weight: f64, level: f64) -> Result<Threshold> {
        if !(test_weight > 0.0) {
            return Err(Error::WeightUndefined(test_weight));
        }
        if self.is_empty() {
            return Ok(Threshold::Infinite);
        }
        self.atoms.quantile(level, test_weight)
    }
}

/// Split CP on the clean scores, or on every score if `use_corrupted`.
pub fn calibrate_naive(input: &CalibInput, use_corrupted: bool) -> Result<Threshold> {
    let scores: Vec<f64> = input
        .entries
        .iter()
        .filter(|e| use_corrupted || !e.corrupted)
        .map(|e| e.score)
        .collect();
    cp_quantile(&scores, input.alpha)
}

/// Weighted CP at `level` with the given test weight, on clean entries.
pub fn calibrate_wcp(input: &CalibInput, test_weight: f64, level: f64) -> Result<Threshold> {
    input.clean_scores().threshold(test_weight, level)
}

/// `Quantile(1-β; Σ δ_{w_i}/(n+1) + δ_∞/(n+1))`, the conservative stand-in
/// for the unknown test weight.
pub fn conservative_test_weight(weights: &[f64], beta: f64) -> Result<Threshold> {
    let atoms: Vec<WeightedAtom> = weights
        .iter()
        .map(|&value| WeightedAtom { value, mass: 1.0 })
        .collect();
    SortedAtoms::new(&atoms).quantile(1.0 - beta, 1.0)
}

/// PCP by thresholding every calibration point as if it were the test
/// point, then taking the `(1-β)` quantile of those thresholds.
pub fn calibrate_pcp_naive(input: &CalibInput) -> Result<Threshold> {
    check_beta(input.beta, input.alpha)?;
    let clean = input.clean_scores();
    if clean.is_empty() {
        return Ok(Threshold::Infinite);
    }
    let level = 1.0 - input.alpha + input.beta;
    let mut finite = Vec::with_capacity(input.entries.len());
    let mut infinite_count = 0usize;
    for e in &input.entries {
        match clean.threshold(e.weight, level)? {
            Threshold::Finite(q) => finite.push(WeightedAtom {
                value: q,
                mass: 1.0,
            }),
            Threshold::Infinite => infinite_count += 1,
        }
    }
    SortedAtoms::new(&finite).quantile(1.0 - input.beta, 1.0 + infinite_count as f64)
}

/// PCP in linear time: one weighted quantile at the conservative test weight.
pub fn calibrate_pcp_efficient(input: &CalibInput) -> Result<Threshold> {
    check_beta(input.beta, input.alpha)?;
    let clean = input.clean_scores();
    if clean.is_empty() {
        return Ok(Threshold::Infinite);
    }
    match conservative_test_weight(&input.weights(), input.beta)? {
        Threshold::Infinite => Ok(Threshold::Infinite),
        Threshold::Finite(w) => clean.threshold(w, 1.0 - input.alpha + input.beta),
    }
}

pub fn calibrate_pcp(input: &CalibInput, variant: PcpVariant) -> Result<Threshold> {
    match variant {
        PcpVariant::Naive => calibrate_pcp_naive(input),
        PcpVariant::Efficient => calibrate_pcp_efficient(input),
    }
}

/// Evenly spaced points spanning `[lo, hi]`, both ends included.
pub fn uniform_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size <= 1 || lo == hi {
        return vec![lo, hi];
    }
    (0..size)
        .map(|k| {
            if k + 1 == size {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (size - 1) as f64
            }
        })
        .collect()
}

/// Two-Staged threshold for one test point.
///
/// `pi_interval` is the conformal interval for the (scalar) privileged
/// information at level `1-β`, `None` when unbounded. The test weight is the
/// largest weight on a uniform grid over that interval, and WCP runs at
/// level `1-α+β`.
pub fn calibrate_two_staged(
    clean: &CleanScores,
    pi_interval: Option<(f64, f64)>,
    weight_of: impl Fn(f64) -> Result<f64>,
    alpha: f64,
    beta: f64,
    grid_size: usize,
) -> Result<Threshold> {
    check_alpha(alpha)?;
    check_beta(beta, alpha)?;
    let Some((lo, hi)) = pi_interval else {
        return Ok(Threshold::Infinite);
    };
    if lo > hi {
        return Err(Error::InvalidBand { lo, hi });
    }
    let w_cons = max_weight_on_grid(lo, hi, grid_size, weight_of)?;
    clean.threshold(w_cons, 1.0 - alpha + beta)
}

pub fn max_weight_on_grid(
    lo: f64,
    hi: f64,
    grid_size: usize,
    weight_of: impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for z in uniform_grid(lo, hi, grid_size) {
        best = best.max(weight_of(z)?);
    }
    Ok(best)
}

pub fn predict_set(
    output: &ModelOutput,
    kind: ScoreKind,
    threshold: Threshold,
) -> Result<PredictionSet> {
    scores::invert(kind, output, threshold)
}

/// Inputs of leave-one-out PCP for one test point.
#[derive(Debug, Clone)]
pub struct LooPcpInput<'a> {
    /// Output of the model trained without sample `i`, evaluated at the test point.
    pub loo_outputs: &'a [ModelOutput],
    /// `S_i`, the score of sample `i` under its own leave-one-out model.
    pub loo_scores: &'a [f64],
    pub weights: &'a [f64],
    pub corrupted: &'a [bool],
    pub alpha: f64,
    pub beta: f64,
}

impl LooPcpInput<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        for len in [
            self.loo_outputs.len(),
            self.loo_scores.len(),
            self.corrupted.len(),
        ] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        check_alpha(self.alpha)?;
        check_beta(self.beta, 2.0 * self.alpha)?;
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::WeightUndefined(
                self.weights.iter().copied().fold(f64::INFINITY, f64::min),
            ));
        }
        Ok(())
    }

    /// `1 - γ` with `γ = α - β/2`.
    pub fn acceptance_level(&self) -> f64 {
        1.0 - (self.alpha - 0.5 * self.beta)
    }

    /// Normalized clean masses `p_i`, or `None` when the guessed test weight
    /// is infinite (every `p_i` vanishes).
    pub fn clean_masses(&self) -> Result<Option<Vec<(usize, f64)>>> {
        let Threshold::Finite(w_test) = conservative_test_weight(self.weights, self.beta)? else {
            return Ok(None);
        };
        let clean: Vec<usize> = (0..self.weights.len())
            .filter(|&i| !self.corrupted[i])
            .collect();
        let denom: f64 = clean.iter().map(|&i| self.weights[i]).sum::<f64>() + w_test;
        Ok(Some(
            clean
                .into_iter()
                .map(|i| (i, self.weights[i] / denom))
                .collect(),
        ))
    }
}

/// Leave-one-out PCP prediction set
/// `{y : Σ_{clean i} p_i 1{S_i < S(x, y; f^{-i})} < 1 - γ}`.
///
/// For regression the set is a finite union of intervals whose
/// breakpoints are `lo_i - S_i` and `hi_i + S_i`; the returned interval is
/// its exact hull. When no point is accepted the result is the degenerate
/// interval at the least-rejected breakpoint.
pub fn loo_pcp_predict(input: &LooPcpInput<'_>, kind: ScoreKind) -> Result<PredictionSet> {
    input.validate()?;
    let Some(masses) = input.clean_masses()? else {
        return Ok(PredictionSet::FullSpace);
    };
    if masses.is_empty() {
        return Ok(PredictionSet::FullSpace);
    }
    let accept = input.acceptance_level();
    match kind {
        ScoreKind::Hps => loo_label_set(input, &masses, accept),
        ScoreKind::AbsResidual | ScoreKind::Cqr => loo_interval(input, &masses, kind, accept),
    }
}

fn loo_label_set(
    input: &LooPcpInput<'_>,
    masses: &[(usize, f64)],
    accept: f64,
) -> Result<PredictionSet> {
    let num_classes = match &input.loo_outputs[masses[0].0] {
        ModelOutput::Probs(p) => p.len(),
        _ => return Err(Error::ShapeMismatch),
    };
    let mut labels = BTreeSet::new();
    for y in 0..num_classes {
        let mut mass = 0.0;
        for &(i, p) in masses {
            let ModelOutput::Probs(probs) = &input.loo_outputs[i] else {
                return Err(Error::ShapeMismatch);
            };
            if input.loo_scores[i] < scores::hps_score(probs, y)? {
                mass += p;
            }
        }
        if mass < accept {
            labels.insert(y);
        }
    }
    Ok(PredictionSet::LabelSet(labels))
}

/// Masses sorted by a key, with prefix sums for "key > t" and "key < t" queries.
struct SortedMasses {
    keys: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedMasses {
    fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let keys = pairs.iter().map(|p| p.0).collect();
        let mut prefix = Vec::with_capacity(pairs.len() + 1);
        prefix.push(0.0);
        let mut run = 0.0;
        for (_, m) in &pairs {
            run += m;
            prefix.push(run);
        }
        Self { keys, prefix }
    }

    fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    fn below(&self, t: f64) -> f64 {
        self.prefix[self.keys.partition_point(|&k| k < t)]
    }

    fn at_or_below(&self, t: f64) -> f64 {
        self.prefix[self.keys.partition_point(|&k| k <= t)]
    }

    fn above(&self, t: f64) -> f64 {
        self.total() - self.at_or_below(t)
    }
}

fn loo_interval(
    input: &LooPcpInput<'_>,
    masses: &[(usize, f64)],
    kind: ScoreKind,
    accept: f64,
) -> Result<PredictionSet> {
    // y is rejected by model i when y < a_i or y > b_i
    let mut lower = Vec::with_capacity(masses.len());
    let mut upper = Vec::with_capacity(masses.len());
    let mut always = 0.0;
    for &(i, p) in masses {
        let (lo, hi) = match (kind, &input.loo_outputs[i]) {
            (ScoreKind::AbsResidual, ModelOutput::Point(v)) => (*v, *v),
            (ScoreKind::Cqr, ModelOutput::Band { lo, hi }) => (*lo, *hi),
            _ => return Err(Error::ShapeMismatch),
        };
        let s = input.loo_scores[i];
        let (a, b) = (lo - s, hi + s);
        if a > b {
            always += p;
        } else {
            lower.push((a, p));
            upper.push((b, p));
        }
    }
    let breakpoints: Vec<f64> = {
        let mut pts: Vec<f64> = lower.iter().chain(&upper).map(|(t, _)| *t).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    };
    let lower = SortedMasses::new(lower);
    let upper = SortedMasses::new(upper);

    // beyond every breakpoint all remaining models reject
    if lower.total() + always < accept {
        return Ok(PredictionSet::FullSpace);
    }
    let at_point = |t: f64| lower.above(t) + upper.below(t) + always;
    let on_segment_after = |t: f64| lower.above(t) + upper.at_or_below(t) + always;

    let mut hull: Option<(f64, f64)> = None;
    let mut extend = |from: f64, to: f64| {
        hull = Some(match hull {
            None => (from, to),
            Some((a, b)) => (a.min(from), b.max(to)),
        });
    };
    let mut least = (f64::INFINITY, f64::NAN);
    for (k, &t) in breakpoints.iter().enumerate() {
        let f = at_point(t);
        if f < least.0 {
            least = (f, t);
        }
        if f < accept {
            extend(t, t);
        }
        if let Some(&next) = breakpoints.get(k + 1) {
            if on_segment_after(t) < accept {
                extend(t, next);
            }
        }
    }
    Ok(match hull {
        Some((lo, hi)) => PredictionSet::Interval { lo, hi },
        None => PredictionSet::Interval {
            lo: least.1,
            hi: least.1,
        },
    })
}
