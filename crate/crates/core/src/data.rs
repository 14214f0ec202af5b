//! Domain types shared by every calibrator: samples, datasets, splits,
//! thresholds, prediction sets and the per-trial evaluation metrics.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An observed response. Classification labels are class indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Response {
    Value(f64),
    Class(usize),
    Missing,
}

impl Response {
    pub fn is_missing(&self) -> bool {
        matches!(self, Response::Missing)
    }

    /// Real value of a regression response, `None` for missing or class labels.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Response::Value(v) => Some(v),
            _ => None,
        }
    }
}

/// One training record. Missing feature cells are stored as `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x_obs: Vec<f64>,
    pub y_obs: Response,
    /// Privileged information, always observed.
    pub z: Vec<f64>,
    /// Corruption indicator.
    pub m: bool,
}

impl Sample {
    pub fn new(x_obs: Vec<f64>, y_obs: Response, z: Vec<f64>, m: bool) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(
                "privileged information must be finite".into(),
            ));
        }
        if y_obs.is_missing() && !m {
            return Err(Error::Config(
                "a missing response must be flagged as corrupted".into(),
            ));
        }
        Ok(Self { x_obs, y_obs, z, m })
    }

    pub fn has_missing_features(&self) -> bool {
        self.x_obs.iter().any(|v| v.is_nan())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification { num_classes: usize },
}

impl TaskKind {
    pub fn classification(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        Ok(TaskKind::Classification { num_classes })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub task: TaskKind,
    /// Clean responses, known only for synthetic data.
    pub ground_truth_y: Option<Vec<Response>>,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        task: TaskKind,
        ground_truth_y: Option<Vec<Response>>,
    ) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (dx, dz) = (first.x_obs.len(), first.z.len());
            for s in &samples {
                if s.x_obs.len() != dx {
                    return Err(Error::DimensionMismatch {
                        expected: dx,
                        got: s.x_obs.len(),
                    });
                }
                if s.z.len() != dz {
                    return Err(Error::DimensionMismatch {
                        expected: dz,
                        got: s.z.len(),
                    });
                }
            }
        }
        if let Some(truth) = &ground_truth_y {
            if truth.len() != samples.len() {
                return Err(Error::LengthMismatch {
                    expected: samples.len(),
                    got: truth.len(),
                });
            }
        }
        Ok(Self {
            samples,
            task,
            ground_truth_y,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x_obs.len())
    }

    pub fn pi_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.z.len())
    }

    pub fn corruption_bits(&self) -> Vec<bool> {
        self.samples.iter().map(|s| s.m).collect()
    }
}

/// Disjoint index sets produced by [`split_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split fractions in the order train, valid, calib, test.
pub type SplitFractions = [f64; 4];

/// Randomly partition `n` indices. Valid, calibration and test sizes are
/// `floor(fraction * n)`; the remainder goes to train.
pub fn split_indices(n: usize, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::BadFractions(format!(
            "{fractions:?} has negative entries"
        )));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(format!(
            "{fractions:?} sums to {total}"
        )));
    }
    let sizes: Vec<usize> = fractions[1..]
        .iter()
        .map(|f| (f * n as f64).floor() as usize)
        .collect();
    let rest: usize = sizes.iter().sum();
    let train_size = n - rest;

    let names = ["train", "valid", "calib", "test"];
    let all_sizes = [train_size, sizes[0], sizes[1], sizes[2]];
    for ((&f, &size), name) in fractions.iter().zip(&all_sizes).zip(names) {
        if f > 0.0 && size == 0 {
            return Err(Error::EmptyPart { part: name });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = all_sizes.iter().scan(0usize, |start, &size| {
        let part = order[*start..*start + size].to_vec();
        *start += size;
        Some(part)
    });
    Ok(SplitIndices {
        train: parts.next().unwrap(),
        valid: parts.next().unwrap(),
        calib: parts.next().unwrap(),
        test: parts.next().unwrap(),
    })
}

pub fn split_dataset(
    dataset: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitIndices> {
    split_indices(dataset.len(), fractions, seed)
}

/// A score cutoff. `Infinite` orders above every finite value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Threshold::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Threshold::Finite(q) => Some(q),
            Threshold::Infinite => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet {
    Interval { lo: f64, hi: f64 },
    LabelSet(BTreeSet<usize>),
    FullSpace,
}

impl PredictionSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidBand { lo, hi });
        }
        Ok(PredictionSet::Interval { lo, hi })
    }

    pub fn contains(&self, y: &Response) -> bool {
        match (self, y) {
            (PredictionSet::FullSpace, _) => true,
            (PredictionSet::Interval { lo, hi }, Response::Value(v)) => *lo <= *v && *v <= *hi,
            (PredictionSet::LabelSet(labels), Response::Class(c)) => labels.contains(c),
            _ => false,
        }
    }

    /// Interval length or label count; `FullSpace` counts as `length_cap`
    /// for regression and `num_classes` for classification.
    pub fn size(&self, task: TaskKind, length_cap: f64) -> f64 {
        match self {
            PredictionSet::Interval { lo, hi } => hi - lo,
            PredictionSet::LabelSet(labels) => labels.len() as f64,
            PredictionSet::FullSpace => match task {
                TaskKind::Regression => length_cap,
                TaskKind::Classification { num_classes } => num_classes as f64,
            },
        }
    }

    /// `self ⊆ other`, for sets of the same kind.
    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        match (self, other) {
            (_, PredictionSet::FullSpace) => true,
            (PredictionSet::FullSpace, _) => false,
            (
                PredictionSet::Interval { lo: a, hi: b },
                PredictionSet::Interval { lo: c, hi: d },
            ) => c <= a && b <= d,
            (PredictionSet::LabelSet(a), PredictionSet::LabelSet(b)) => a.is_subset(b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub coverage: f64,
    pub avg_size: f64,
    pub n_test: usize,
}

/// Coverage and mean set size of `sets` against the clean responses.
pub fn evaluate(
    sets: &[PredictionSet],
    truths: &[Response],
    task: TaskKind,
    length_cap: f64,
) -> Result<TrialMetrics> {
    if sets.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: sets.len(),
            got: truths.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let covered = sets
        .iter()
        .zip(truths)
        .filter(|(s, y)| s.contains(y))
        .count();
    let total_size: f64 = sets.iter().map(|s| s.size(task, length_cap)).sum();
    let n = sets.len();
    Ok(TrialMetrics {
        coverage: covered as f64 / n as f64,
        avg_size: total_size / n as f64,
        n_test: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dummy_dataset(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample::new(vec![i as f64], Response::Value(0.0), vec![0.0], false).unwrap())
            .collect();
        Dataset::new(samples, TaskKind::Regression, None).unwrap()
    }

    #[test]
    fn split_sizes_follow_floor_allocation() {
        let ds = dummy_dataset(10);
        let split = split_dataset(&ds, [0.5, 0.1, 0.2, 0.2], 7).unwrap();
        assert_eq!(
            (
                split.train.len(),
                split.valid.len(),
                split.calib.len(),
                split.test.len()
            ),
            (5, 1, 2, 2)
        );
    }

    #[test]
    fn degenerate_fraction_puts_everything_in_train() {
        let split = split_indices(10, [1.0, 0.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(split.train.len(), 10);
        assert!(split.valid.is_empty() && split.calib.is_empty() && split.test.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_indices(50, [0.5, 0.1, 0.2, 0.2], 11).unwrap();
        let b = split_indices(50, [0.5, 0.1, 0.2, 0.2], 11).unwrap();
        assert_eq!(a, b);
        let c = split_indices(50, [0.5, 0.1, 0.2, 0.2], 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_empty_parts_and_bad_fractions() {
        assert_eq!(
            split_indices(3, [0.5, 0.1, 0.2, 0.2], 0),
            Err(Error::EmptyPart { part: "valid" })
        );
        assert!(matches!(
            split_indices(10, [0.5, 0.5, 0.5, 0.0], 0),
            Err(Error::BadFractions(_))
        ));
        assert!(matches!(
            split_indices(10, [1.1, -0.1, 0.0, 0.0], 0),
            Err(Error::BadFractions(_))
        ));
        assert_eq!(
            split_indices(0, [1.0, 0.0, 0.0, 0.0], 0),
            Err(Error::EmptyDataset)
        );
    }

    #[test]
    fn evaluate_counts_interval_coverage() {
        let sets = [
            PredictionSet::Interval { lo: 0.0, hi: 2.0 },
            PredictionSet::Interval { lo: 0.0, hi: 1.0 },
        ];
        let truths = [Response::Value(1.0), Response::Value(3.0)];
        let m = evaluate(&sets, &truths, TaskKind::Regression, 10.0).unwrap();
        assert_eq!(m.coverage, 0.5);
        assert_eq!(m.avg_size, 1.5);
        assert_eq!(m.n_test, 2);
    }

    #[test]
    fn full_space_uses_length_cap() {
        let m = evaluate(
            &[PredictionSet::FullSpace],
            &[Response::Value(42.0)],
            TaskKind::Regression,
            10.0,
        )
        .unwrap();
        assert_eq!((m.coverage, m.avg_size), (1.0, 10.0));
        let task = TaskKind::classification(10).unwrap();
        let m = evaluate(
            &[PredictionSet::FullSpace],
            &[Response::Class(3)],
            task,
            99.0,
        )
        .unwrap();
        assert_eq!(m.avg_size, 10.0);
    }

    #[test]
    fn label_set_coverage() {
        let set = PredictionSet::LabelSet([0, 1].into_iter().collect());
        let task = TaskKind::classification(10).unwrap();
        let m = evaluate(&[set], &[Response::Class(1)], task, 0.0).unwrap();
        assert_eq!((m.coverage, m.avg_size), (1.0, 2.0));
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let err =
            evaluate(&[PredictionSet::FullSpace], &[], TaskKind::Regression, 1.0).unwrap_err();
        assert_eq!(
            err,
            Error::LengthMismatch {
                expected: 1,
                got: 0
            }
        );
    }

    #[test]
    fn sample_invariants() {
        assert!(Sample::new(vec![], Response::Missing, vec![0.0], false).is_err());
        assert!(Sample::new(vec![], Response::Value(1.0), vec![f64::NAN], false).is_err());
        assert!(TaskKind::classification(1).is_err());
    }

    #[test]
    fn threshold_ordering_puts_infinite_last() {
        assert!(Threshold::Infinite > Threshold::Finite(1e300));
        assert!(Threshold::Finite(1.0) < Threshold::Finite(2.0));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 20usize..200, seed in any::<u64>()) {
            let split = split_indices(n, [0.5, 0.1, 0.2, 0.2], seed).unwrap();
            let mut all: Vec<usize> = split.train.iter()
                .chain(&split.valid).chain(&split.calib).chain(&split.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn coverage_is_permutation_invariant(
            rows in proptest::collection::vec((-5.0f64..5.0, 0.0f64..3.0, -6.0f64..6.0), 1..30),
            seed in any::<u64>(),
        ) {
            let sets: Vec<_> = rows.iter().map(|(c, r, _)| PredictionSet::Interval { lo: c - r, hi: c + r }).collect();
            let truths: Vec<_> = rows.iter().map(|(_, _, y)| Response::Value(*y)).collect();
            let base = evaluate(&sets, &truths, TaskKind::Regression, 1.0).unwrap();
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let sets2: Vec<_> = idx.iter().map(|&i| sets[i].clone()).collect();
            let truths2: Vec<_> = idx.iter().map(|&i| truths[i]).collect();
            let perm = evaluate(&sets2, &truths2, TaskKind::Regression, 1.0).unwrap();
            prop_assert_eq!(base.coverage, perm.coverage);
        }

        #[test]
        fn member_of_set_is_covered(lo in -5.0f64..5.0, width in 0.0f64..4.0, t in 0.0f64..=1.0) {
            let set = PredictionSet::Interval { lo, hi: lo + width };
            let y = Response::Value(lo + t * width);
            if set.contains(&y) {
                let m = evaluate(&[set], &[y], TaskKind::Regression, 1.0).unwrap();
                prop_assert_eq!(m.coverage, 1.0);
            }
        }
    }
}
