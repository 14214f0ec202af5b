//! Synthetic data with privileged information, the corruption-probability
//! recipe, and the corruption modes applied on top of clean data.
//!
//! The generator draws, per sample,
//!
//! ```text
//! X ~ Uni(1,5)^10
//! E1 ~ N(0,1)   (drawn and discarded)
//! E2 ~ Uni(-1,1),  E3 ~ N(0,1)
//! P  = Pois(cos(E2 + 0.1)) * E2
//! Z  = P + 2 E3
//! U  = 1{Z < -3} + 2·1{-3 <= Z <= 1} + 8·1{Z > 1}
//! Y  = 0.3 <X[0..5], b> + 0.8 Z + 0.2 + U E,   E ~ N(0,1)
//! ```
//!
//! with `b ~ Uni(0,1)^5` normalized to unit L1 norm, drawn once per dataset.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};

use crate::data::{Dataset, Response, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::weights::{Conditioning, WeightModel};

pub const FEATURE_DIM: usize = 10;
const COEF_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionMode {
    MissingResponse,
    DispersiveNoise,
    ContractiveNoise,
    MissingFeatures,
}

impl CorruptionMode {
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionMode::MissingResponse => "missing_response",
            CorruptionMode::DispersiveNoise => "dispersive_noise",
            CorruptionMode::ContractiveNoise => "contractive_noise",
            CorruptionMode::MissingFeatures => "missing_features",
        }
    }
}

impl std::str::FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "missing_response" => CorruptionMode::MissingResponse,
            "dispersive_noise" => CorruptionMode::DispersiveNoise,
            "contractive_noise" => CorruptionMode::ContractiveNoise,
            "missing_features" => CorruptionMode::MissingFeatures,
            other => return Err(Error::Config(format!("unknown corruption mode `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub target_corruption_mean: f64,
    pub corruption_mode: CorruptionMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            seed: 0,
            target_corruption_mean: 0.2,
            corruption_mode: CorruptionMode::MissingResponse,
        }
    }
}

/// Clean synthetic data plus its corruption mechanism.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    /// Uncorrupted samples (`m = 0`, `y_obs = Y(0)`).
    pub dataset: Dataset,
    /// `P(M=1 | Z_i)` for every sample.
    pub probs: Vec<f64>,
    pub curve: CorruptionCurve,
    /// Poisson rates `cos(E2 + 0.1)` used for each sample.
    pub poisson_rates: Vec<f64>,
}

impl SyntheticData {
    /// Exact likelihood-ratio weights `P(M=0) / P(M=0 | z)`; the marginal is
    /// the mean clean probability over the generated data.
    pub fn oracle_weights(&self) -> Result<WeightModel> {
        let marginal = 1.0 - self.probs.iter().sum::<f64>() / self.probs.len() as f64;
        let curve = self.curve;
        WeightModel::oracle(
            marginal,
            Conditioning::Privileged,
            Arc::new(move |z: &[f64]| 1.0 - curve.eval(z[0])),
        )
    }
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<SyntheticData> {
    if config.n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let raw: Vec<f64> = (0..COEF_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
    let l1: f64 = raw.iter().sum();
    let coef: Vec<f64> = raw.iter().map(|b| b / l1).collect();

    let feature = Uniform::new(1.0, 5.0);
    let unit = Uniform::new(-1.0, 1.0);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let mut samples = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);
    let mut zs = Vec::with_capacity(config.n);
    let mut rates = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x: Vec<f64> = (0..FEATURE_DIM).map(|_| feature.sample(&mut rng)).collect();
        let _e1: f64 = normal.sample(&mut rng);
        let e2 = unit.sample(&mut rng);
        let e3: f64 = normal.sample(&mut rng);
        let rate = (e2 + 0.1f64).cos();
        let count: f64 = Poisson::new(rate)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng);
        let z = count * e2 + 2.0 * e3;
        let u = if z < -3.0 {
            1.0
        } else if z <= 1.0 {
            2.0
        } else {
            8.0
        };
        let e: f64 = normal.sample(&mut rng);
        let linear: f64 = x[..COEF_DIM].iter().zip(&coef).map(|(a, b)| a * b).sum();
        let y = 0.3 * linear + 0.8 * z + 0.2 + u * e;
        samples.push(Sample {
            x_obs: x,
            y_obs: Response::Value(y),
            z: vec![z],
            m: false,
        });
        truth.push(Response::Value(y));
        zs.push(z);
        rates.push(rate);
    }
    let (curve, probs) = corruption_probabilities(&zs, config.target_corruption_mean)?;
    let dataset = Dataset::new(samples, TaskKind::Regression, Some(truth))?;
    Ok(SyntheticData {
        dataset,
        probs,
        curve,
        poisson_rates: rates,
    })
}

/// Linear-interpolation sample quantile (the usual "type 7" definition).
pub fn sample_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted_quantile(&sorted, q)
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Maps an initial score to a corruption probability:
/// `v = min(s, cap) / divisor`, zeroed when `v < zero_below`, clamped to
/// `[0, 1]` and raised to `exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionCurve {
    pub cap: f64,
    pub divisor: f64,
    pub zero_below: f64,
    pub exponent: f64,
}

impl CorruptionCurve {
    fn base(&self, s: f64) -> f64 {
        let v = s.min(self.cap) / self.divisor;
        if v < self.zero_below {
            0.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        raise(self.base(s), self.exponent)
    }
}

fn raise(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.powf(e)
    }
}

const BISECTION_TOL: f64 = 1e-6;
const BISECTION_ITERS: usize = 200;

/// Turn initial scores into corruption probabilities with mean `target_mean`.
///
/// Values are capped at their 85% quantile, divided by the 90% quantile,
/// zeroed strictly below their own 75% quantile and clamped to `[0, 1]`;
/// the exponent that hits the target mean is found by bisection.
pub fn corruption_probabilities(
    initial: &[f64],
    target_mean: f64,
) -> Result<(CorruptionCurve, Vec<f64>)> {
    if initial.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(Error::Config(format!(
            "target corruption mean {target_mean} is outside (0, 1)"
        )));
    }
    let cap = sample_quantile(initial, 0.85);
    let divisor = sample_quantile(initial, 0.90);
    if !(divisor > 0.0) {
        return Err(Error::Config(format!(
            "90% quantile {divisor} of the initial values must be positive"
        )));
    }
    let scaled: Vec<f64> = initial.iter().map(|s| s.min(cap) / divisor).collect();
    let zero_below = sample_quantile(&scaled, 0.75);
    let mut curve = CorruptionCurve {
        cap,
        divisor,
        zero_below,
        exponent: 1.0,
    };
    let base: Vec<f64> = initial.iter().map(|&s| curve.base(s)).collect();

    let n = base.len() as f64;
    let positive = base.iter().filter(|v| **v > 0.0).count() as f64 / n;
    let saturated = base.iter().filter(|v| **v >= 1.0).count() as f64 / n;
    if !(target_mean < positive && target_mean > saturated) {
        return Err(Error::TargetUnreachable {
            target: target_mean,
            positive,
        });
    }
    let mean_at = |e: f64| base.iter().map(|&v| raise(v, e)).sum::<f64>() / n;
    let (mut lo, mut hi) = (1e-3, 1e3);
    if mean_at(lo) < target_mean || mean_at(hi) > target_mean {
        return Err(Error::TargetUnreachable {
            target: target_mean,
            positive,
        });
    }
    let mut exponent = 0.5 * (lo + hi);
    for _ in 0..BISECTION_ITERS {
        exponent = 0.5 * (lo + hi);
        let m = mean_at(exponent);
        if (m - target_mean).abs() <= BISECTION_TOL {
            break;
        }
        // the mean decreases as the exponent grows
        if m > target_mean {
            lo = exponent;
        } else {
            hi = exponent;
        }
    }
    curve.exponent = exponent;
    let probs = base.iter().map(|&v| raise(v, exponent)).collect();
    Ok((curve, probs))
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va.sqrt() * vb.sqrt())
    }
}

/// Feature indices hidden by [`CorruptionMode::MissingFeatures`]: the
/// `ceil(0.2 d)` columns most correlated (in absolute value) with `Y(0)`.
pub fn most_correlated_features(dataset: &Dataset, truth: &[f64]) -> Vec<usize> {
    let d = dataset.feature_dim();
    let k = ((0.2 * d as f64).ceil() as usize).min(d);
    let mut ranked: Vec<(usize, f64)> = (0..d)
        .map(|j| {
            let col: Vec<f64> = dataset.samples.iter().map(|s| s.x_obs[j]).collect();
            (j, correlation(&col, truth).abs())
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.into_iter().take(k).map(|(j, _)| j).collect();
    chosen.sort_unstable();
    chosen
}

/// Draw `M_i ~ Bernoulli(probs_i)` and corrupt the flagged samples.
/// Ground-truth responses are left untouched.
pub fn apply_corruption(
    dataset: &Dataset,
    probs: &[f64],
    mode: CorruptionMode,
    seed: u64,
) -> Result<Dataset> {
    if probs.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            expected: dataset.len(),
            got: probs.len(),
        });
    }
    let truth: Vec<f64> = match &dataset.ground_truth_y {
        Some(t) => t
            .iter()
            .map(|r| r.value().ok_or(Error::ShapeMismatch))
            .collect::<Result<_>>()?,
        None => dataset
            .samples
            .iter()
            .map(|s| s.y_obs.value().ok_or(Error::ShapeMismatch))
            .collect::<Result<_>>()?,
    };
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let sd = (truth.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let hidden = if mode == CorruptionMode::MissingFeatures {
        most_correlated_features(dataset, &truth)
    } else {
        Vec::new()
    };
    let noise = Normal::new(0.0, (5.0 * sd).max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(dataset.len());
    for ((sample, &p), &y) in dataset.samples.iter().zip(probs).zip(&truth) {
        let corrupted = rng.gen::<f64>() < p;
        // one noise draw per sample keeps the stream aligned across modes
        let eps: f64 = noise.sample(&mut rng);
        let mut s = sample.clone();
        s.m = corrupted;
        if corrupted {
            match mode {
                CorruptionMode::MissingResponse => s.y_obs = Response::Missing,
                CorruptionMode::DispersiveNoise => s.y_obs = Response::Value(y + eps),
                CorruptionMode::ContractiveNoise => s.y_obs = Response::Value(0.5 * (y + mean)),
                CorruptionMode::MissingFeatures => {
                    for &j in &hidden {
                        s.x_obs[j] = f64::NAN;
                    }
                }
            }
        }
        samples.push(s);
    }
    let truth_responses = dataset
        .ground_truth_y
        .clone()
        .or_else(|| Some(truth.iter().map(|&y| Response::Value(y)).collect()));
    Dataset::new(samples, dataset.task, truth_responses)
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// Write a regression dataset as CSV with columns
/// `x_0..x_{d-1}, z_0..z_{k-1}, y_obs, m, y_clean, prob`. Missing cells are empty.
pub fn write_dataset_csv<W: Write>(
    writer: W,
    dataset: &Dataset,
    probs: Option<&[f64]>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let (d, k) = (dataset.feature_dim(), dataset.pi_dim());
    let header: Vec<String> = (0..d)
        .map(|j| format!("x_{j}"))
        .chain((0..k).map(|j| format!("z_{j}")))
        .chain(["y_obs", "m", "y_clean", "prob"].map(String::from))
        .collect();
    out.write_record(&header)?;
    for (i, s) in dataset.samples.iter().enumerate() {
        let mut row: Vec<String> = s.x_obs.iter().chain(&s.z).map(|&v| fmt_cell(v)).collect();
        row.push(s.y_obs.value().map_or(String::new(), |v| v.to_string()));
        row.push(u8::from(s.m).to_string());
        let clean = dataset.ground_truth_y.as_ref().and_then(|t| t[i].value());
        row.push(clean.map_or(String::new(), |v| v.to_string()));
        row.push(probs.map_or(String::new(), |p| p[i].to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a CSV written by [`write_dataset_csv`]; returns the probabilities
/// when that column is filled in.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<(Dataset, Option<Vec<f64>>)> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers()?.clone();
    let d = header.iter().filter(|h| h.starts_with("x_")).count();
    let k = header.iter().filter(|h| h.starts_with("z_")).count();
    if header.len() != d + k + 4 {
        return Err(Error::Io(format!(
            "unexpected header with {} columns",
            header.len()
        )));
    }
    let parse = |cell: &str| -> Result<f64> {
        if cell.is_empty() {
            Ok(f64::NAN)
        } else {
            cell.parse::<f64>()
                .map_err(|e| Error::Io(format!("bad number `{cell}`: {e}")))
        }
    };
    let mut samples = Vec::new();
    let mut truth = Vec::new();
    let mut probs = Vec::new();
    for record in input.records() {
        let record = record?;
        let cells: Vec<f64> = record.iter().map(parse).collect::<Result<_>>()?;
        let y = cells[d + k];
        let m = cells[d + k + 1] != 0.0;
        let y_obs = if y.is_nan() {
            Response::Missing
        } else {
            Response::Value(y)
        };
        samples.push(Sample::new(
            cells[..d].to_vec(),
            y_obs,
            cells[d..d + k].to_vec(),
            m,
        )?);
        truth.push(cells[d + k + 2]);
        probs.push(cells[d + k + 3]);
    }
    let truth = if truth.iter().all(|v| !v.is_nan()) {
        Some(truth.into_iter().map(Response::Value).collect())
    } else {
        None
    };
    let probs = if probs.iter().all(|v| !v.is_nan()) {
        Some(probs)
    } else {
        None
    };
    Ok((Dataset::new(samples, TaskKind::Regression, truth)?, probs))
}
