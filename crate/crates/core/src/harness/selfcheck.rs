//! Property suites run by `privcal selfcheck`.
//!
//! The quantile-based suites take the quantile routine as a parameter so a
//! deliberately broken implementation can be fed in to confirm that they
//! catch it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Threshold;
use crate::error::Result;
use crate::models::{pinball_loss_and_grad, softmax_loss_and_grad};
use crate::optim::{numerical_gradient, relative_error};
use crate::weights::logistic_loss_and_grad;
use crate::wquantile::{
    cp_quantile, weighted_quantile, weighted_quantile_oracle, WeightedAtom, WeightedDistribution,
    MASS_SLACK,
};

pub type QuantileFn = fn(f64, &WeightedDistribution) -> Result<Threshold>;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    detail: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            cases: 0,
            failures: 0,
            detail: None,
        }
    }

    fn check(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.detail.is_none() {
                self.detail = Some(describe());
            }
        }
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            cases: self.cases,
            failures: self.failures,
            detail: self.detail,
        }
    }
}

/// Random atoms with frequent ties, up to `max_atoms` of them.
pub fn random_atoms(rng: &mut impl Rng, max_atoms: usize) -> Vec<WeightedAtom> {
    let n = rng.gen_range(0..=max_atoms);
    let tied = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            let value = if tied {
                f64::from(rng.gen_range(0..6))
            } else {
                rng.gen_range(-10.0..10.0)
            };
            let mass = if rng.gen_bool(0.3) {
                1.0
            } else {
                rng.gen_range(0.01..3.0)
            };
            WeightedAtom { value, mass }
        })
        .collect()
}

/// A level in `(0, 1]`, sometimes exactly on a cumulative-mass boundary.
fn random_level(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..4) {
        0 => 1.0,
        1 => f64::from(rng.gen_range(1..10)) / 10.0,
        _ => rng.gen_range(1e-3..1.0),
    }
}

fn random_inf_mass(rng: &mut impl Rng, atoms: &[WeightedAtom]) -> f64 {
    if !atoms.is_empty() && rng.gen_bool(0.2) {
        0.0
    } else {
        rng.gen_range(0.01..5.0)
    }
}

pub fn oracle_equivalence_suite(quantile: QuantileFn, cases: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("oracle equivalence");
    for _ in 0..cases {
        let atoms = random_atoms(&mut rng, 20);
        let inf = random_inf_mass(&mut rng, &atoms);
        let level = random_level(&mut rng);
        let dist = WeightedDistribution::new(atoms, inf).expect("valid random distribution");
        let got = quantile(level, &dist);
        let want = weighted_quantile_oracle(level, &dist);
        tally.check(got == want, || {
            format!("level {level}, {dist:?}: got {got:?}, want {want:?}")
        });
    }
    tally.finish()
}

/// The quantile is non-decreasing in the mass placed at infinity.
pub fn monotonicity_suite(quantile: QuantileFn, cases: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("monotone in test weight");
    for _ in 0..cases {
        let mut atoms = random_atoms(&mut rng, 20);
        if atoms.is_empty() {
            atoms.push(WeightedAtom {
                value: 0.0,
                mass: 1.0,
            });
        }
        let level = random_level(&mut rng);
        let a = if rng.gen_bool(0.2) {
            0.0
        } else {
            rng.gen_range(0.0..5.0)
        };
        let b = rng.gen_range(0.0..5.0);
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let q_small = quantile(
            level,
            &WeightedDistribution::new(atoms.clone(), small).expect("valid"),
        );
        let q_large = quantile(
            level,
            &WeightedDistribution::new(atoms, large).expect("valid"),
        );
        let ok = matches!((&q_small, &q_large), (Ok(s), Ok(l)) if l >= s);
        tally.check(ok, || {
            format!("level {level}: Q({large}) = {q_large:?} < Q({small}) = {q_small:?}")
        });
    }
    tally.finish()
}

/// Equal weights reproduce the split-conformal rank rule.
pub fn uniform_reduction_suite(quantile: QuantileFn, cases: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("uniform-weight reduction");
    for _ in 0..cases {
        let n = rng.gen_range(1..=60);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let alpha = rng.gen_range(0.01..0.5);
        let w = rng.gen_range(0.1..10.0);
        let atoms = scores
            .iter()
            .map(|&value| WeightedAtom { value, mass: w })
            .collect();
        let got = quantile(
            1.0 - alpha,
            &WeightedDistribution::new(atoms, w).expect("valid"),
        );
        let want = cp_quantile(&scores, alpha);
        tally.check(got == want, || {
            format!("n {n}, alpha {alpha}: got {got:?}, want {want:?}")
        });
    }
    tally.finish()
}

/// Analytic gradients of the training losses against central differences.
pub fn gradient_suite(cases: usize, seed: u64) -> SuiteResult {
    const H: f64 = 1e-6;
    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::new("loss gradients");
    for _ in 0..cases {
        let n = rng.gen_range(5..30);
        let d = rng.gen_range(1..5);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let params: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tau = rng.gen_range(0.05..0.95);
        let (_, g) = pinball_loss_and_grad(&params, &xs, &ys, tau);
        let num = numerical_gradient(|p| pinball_loss_and_grad(p, &xs, &ys, tau).0, &params, H);
        let err = relative_error(&g, &num);
        tally.check(err < TOL, || {
            format!("pinball gradient relative error {err}")
        });

        let k = rng.gen_range(2..5);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let params: Vec<f64> = (0..k * (d + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = softmax_loss_and_grad(&params, &xs, &labels, k, 0.01);
        let num = numerical_gradient(
            |p| softmax_loss_and_grad(p, &xs, &labels, k, 0.01).0,
            &params,
            H,
        );
        let err = relative_error(&g, &num);
        tally.check(err < TOL, || {
            format!("cross-entropy gradient relative error {err}")
        });

        let targets: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.5))))
            .collect();
        let params: Vec<f64> = (0..=d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, g) = logistic_loss_and_grad(&params, &xs, &targets, 0.01);
        let num = numerical_gradient(
            |p| logistic_loss_and_grad(p, &xs, &targets, 0.01).0,
            &params,
            H,
        );
        let err = relative_error(&g, &num);
        tally.check(err < TOL, || {
            format!("logistic gradient relative error {err}")
        });
    }
    tally.finish()
}

/// Fault injection: a quantile that orders the infinity atom before every
/// finite atom.
pub fn infinity_first_quantile(level: f64, dist: &WeightedDistribution) -> Result<Threshold> {
    weighted_quantile(level, dist)?;
    let total = dist.total_mass();
    let target = (level - MASS_SLACK) * total;
    if dist.inf_mass >= target {
        return Ok(Threshold::Infinite);
    }
    let mut atoms = dist.atoms.clone();
    atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut cum = dist.inf_mass;
    for a in &atoms {
        cum += a.mass;
        if cum >= target {
            return Ok(Threshold::Finite(a.value));
        }
    }
    Ok(Threshold::Infinite)
}

pub const DEFAULT_SEED: u64 = 20_240_601;

/// All suites against `quantile`.
pub fn run_suites(quantile: QuantileFn, seed: u64) -> Vec<SuiteResult> {
    vec![
        oracle_equivalence_suite(quantile, 1000, seed),
        monotonicity_suite(quantile, 1000, seed + 1),
        gradient_suite(50, seed + 2),
        uniform_reduction_suite(quantile, 200, seed + 3),
    ]
}

pub fn run_selfcheck() -> Vec<SuiteResult> {
    run_suites(weighted_quantile, DEFAULT_SEED)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for r in run_selfcheck() {
            assert!(r.passed(), "{}: {:?}", r.name, r.detail);
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn injected_fault_breaks_monotonicity() {
        let r = monotonicity_suite(infinity_first_quantile, 1000, DEFAULT_SEED + 1);
        assert!(!r.passed());
        assert!(!oracle_equivalence_suite(infinity_first_quantile, 1000, DEFAULT_SEED).passed());
    }
}
