//! One trial: generate, corrupt, split, impute, fit, weigh, calibrate and
//! evaluate every configured method on the same split and base model.

use std::sync::Arc;

use rayon::prelude::*;

use crate::calibrators::{
    self, calibrate_naive, calibrate_pcp, calibrate_two_staged, CalibEntry, CalibInput,
    LooPcpInput, PcpVariant,
};
use crate::data::{evaluate, split_dataset, Dataset, PredictionSet, Response, Threshold};
use crate::error::{Error, Result};
use crate::models::{
    self, fit_linear_imputer, fit_loo_bank, fit_quantile_regressor, LinearRegressor, QuantileModel,
};
use crate::scores::{self, ModelOutput, ScoreKind};
use crate::synth::{apply_corruption, gen_synthetic, SynthConfig, SyntheticData};
use crate::weights::{fit_corruption_classifier, Conditioning, WeightModel};
use crate::wquantile::cp_quantile;

use super::config::{ExperimentConfig, MethodKind, WeightSource};
use super::report::ReportRow;

const CORRUPTION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const SCORE: ScoreKind = ScoreKind::Cqr;

/// Run every trial of `config` in parallel. Rows are ordered by trial,
/// then by the configured method order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let per_trial = (0..config.n_trials)
        .into_par_iter()
        .map(|t| run_trial(config, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// One run per `beta` (applied to `beta_pcp`) with shared seeds.
pub fn ablate_beta(config: &ExperimentConfig, betas: &[f64]) -> Result<Vec<ReportRow>> {
    if betas.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    if let Some(&bad) = betas.iter().find(|&&b| !(b > 0.0 && b < config.alpha)) {
        return Err(Error::BadBeta {
            beta: bad,
            upper: config.alpha,
        });
    }
    let mut rows = Vec::new();
    for &beta in betas {
        let mut c = config.clone();
        c.beta_pcp = beta;
        rows.extend(run_experiment(&c)?);
    }
    Ok(rows)
}

/// A split's rows after imputation. Test rows stay clean.
struct Part {
    xs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    corrupted: Vec<bool>,
}

impl Part {
    fn len(&self) -> usize {
        self.xs.len()
    }
}

struct Prepared {
    train: Part,
    valid: Part,
    calib: Part,
    test: Part,
    length_cap: f64,
}

fn response_value(r: &Response) -> f64 {
    r.value().unwrap_or(f64::NAN)
}

/// Impute missing cells of the non-test rows from the always-observed
/// columns of `[X | Z | Y]`, fitting on train and validation rows.
fn prepare(
    clean: &Dataset,
    corrupted: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Prepared> {
    let split = split_dataset(corrupted, config.fractions, seed)?;
    let d = corrupted.feature_dim();
    let k = corrupted.pi_dim();
    let fitted: Vec<usize> = split.train.iter().chain(&split.valid).copied().collect();
    let rows: Vec<usize> = fitted.iter().chain(&split.calib).copied().collect();
    let table: Vec<Vec<f64>> = rows
        .iter()
        .map(|&i| {
            let s = &corrupted.samples[i];
            s.x_obs
                .iter()
                .chain(&s.z)
                .copied()
                .chain([response_value(&s.y_obs)])
                .collect()
        })
        .collect();
    let imputer = fit_linear_imputer(&table, &(0..fitted.len()).collect::<Vec<_>>())?;
    let imputed: Vec<Vec<f64>> = table.iter().map(|r| imputer.impute(r)).collect();

    let mut lookup = vec![usize::MAX; corrupted.len()];
    for (pos, &i) in rows.iter().enumerate() {
        lookup[i] = pos;
    }
    let part = |idx: &[usize]| Part {
        xs: idx
            .iter()
            .map(|&i| imputed[lookup[i]][..d].to_vec())
            .collect(),
        zs: idx
            .iter()
            .map(|&i| imputed[lookup[i]][d..d + k].to_vec())
            .collect(),
        ys: idx.iter().map(|&i| imputed[lookup[i]][d + k]).collect(),
        corrupted: idx.iter().map(|&i| corrupted.samples[i].m).collect(),
    };
    let truth = clean.ground_truth_y.as_ref().ok_or(Error::ShapeMismatch)?;
    let test = Part {
        xs: split
            .test
            .iter()
            .map(|&i| clean.samples[i].x_obs.clone())
            .collect(),
        zs: split
            .test
            .iter()
            .map(|&i| clean.samples[i].z.clone())
            .collect(),
        ys: split
            .test
            .iter()
            .map(|&i| response_value(&truth[i]))
            .collect(),
        corrupted: vec![false; split.test.len()],
    };
    let observed: Vec<f64> = split
        .train
        .iter()
        .filter_map(|&i| corrupted.samples[i].y_obs.value())
        .collect();
    let (lo, hi) = observed
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
            (a.min(y), b.max(y))
        });
    let length_cap = if hi > lo { hi - lo } else { 0.0 };
    Ok(Prepared {
        train: part(&split.train),
        valid: part(&split.valid),
        calib: part(&split.calib),
        test,
        length_cap,
    })
}

struct TrialWeights {
    model: WeightModel,
    /// Weight model on the privileged information, used by Two-Staged.
    privileged: WeightModel,
}

impl TrialWeights {
    fn weight(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.model
            .likelihood_ratio(&self.model.conditioning.input(x, z))
    }
}

/// Oracle weights, or a corruption classifier fitted on the training and
/// validation rows.
fn build_weights(
    config: &ExperimentConfig,
    synth: &SyntheticData,
    data: &Prepared,
) -> Result<TrialWeights> {
    if config.target_corruption_mean == 0.0 {
        let unit = WeightModel::oracle(1.0, Conditioning::Privileged, Arc::new(|_: &[f64]| 1.0))?;
        return Ok(TrialWeights {
            model: unit.clone(),
            privileged: unit,
        });
    }
    let (train, valid) = (&data.train, &data.valid);
    let stack = |a: &[Vec<f64>], b: &[Vec<f64>]| a.iter().chain(b).cloned().collect::<Vec<_>>();
    let bits: Vec<bool> = train
        .corrupted
        .iter()
        .chain(&valid.corrupted)
        .copied()
        .collect();
    let (zs, xs) = (stack(&train.zs, &valid.zs), stack(&train.xs, &valid.xs));
    let from_z = || fit_corruption_classifier(&zs, &bits, Conditioning::Privileged, &config.train);
    Ok(match config.weight_source {
        WeightSource::Oracle => {
            let oracle = synth.oracle_weights()?;
            TrialWeights {
                model: oracle.clone(),
                privileged: oracle,
            }
        }
        WeightSource::EstimatedFromZ => {
            let model = from_z()?;
            TrialWeights {
                model: model.clone(),
                privileged: model,
            }
        }
        WeightSource::EstimatedFromX => {
            let model =
                fit_corruption_classifier(&xs, &bits, Conditioning::Features, &config.train)?;
            let privileged = if config.methods.contains(&MethodKind::TwoStaged) {
                from_z()?
            } else {
                model.clone()
            };
            TrialWeights { model, privileged }
        }
    })
}

/// Clean synthetic data for `trial` and its corrupted copy, as used by
/// the experiment.
pub fn trial_data(config: &ExperimentConfig, trial: usize) -> Result<(SyntheticData, Dataset)> {
    generate(config, config.seed.wrapping_add(trial as u64))
}

fn generate(config: &ExperimentConfig, seed: u64) -> Result<(SyntheticData, Dataset)> {
    let corrupt = config.target_corruption_mean > 0.0;
    let synth_config = SynthConfig {
        n: config.n_samples,
        seed,
        target_corruption_mean: if corrupt {
            config.target_corruption_mean
        } else {
            0.2
        },
        corruption_mode: config.corruption_mode,
    };
    let mut synth = gen_synthetic(&synth_config)?;
    if !corrupt {
        synth.probs = vec![0.0; synth.probs.len()];
    }
    let corrupted = apply_corruption(
        &synth.dataset,
        &synth.probs,
        config.corruption_mode,
        seed ^ CORRUPTION_STREAM,
    )?;
    Ok((synth, corrupted))
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<ReportRow>> {
    let seed = config.seed.wrapping_add(trial as u64);
    let (synth, corrupted) = generate(config, seed)?;
    let data = prepare(&synth.dataset, &corrupted, config, seed)?;
    let weights = build_weights(config, &synth, &data)?;
    let valid =
        (!data.valid.xs.is_empty()).then_some((data.valid.xs.as_slice(), data.valid.ys.as_slice()));

    let split_methods = config
        .methods
        .iter()
        .any(MethodKind::needs_calibration_split);
    let base = if split_methods {
        Some(fit_quantile_regressor(
            &data.train.xs,
            &data.train.ys,
            valid,
            &models::DEFAULT_TAUS,
            &config.train,
        )?)
    } else {
        None
    };
    let truths: Vec<Response> = data.test.ys.iter().map(|&y| Response::Value(y)).collect();

    let mut rows = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let sets = match (method, &base) {
            (MethodKind::LooPcp, _) => loo_pcp_sets(config, &data, &weights, valid)?,
            (_, Some(base)) => split_sets(config, method, base, &data, &weights)?,
            (_, None) => unreachable!("split methods always fit a base model"),
        };
        let metrics = evaluate(&sets, &truths, synth.dataset.task, data.length_cap)?;
        rows.push(ReportRow {
            trial,
            method: method.report_name(config.weight_source).to_string(),
            coverage: metrics.coverage,
            avg_size: metrics.avg_size,
            alpha: config.alpha,
            beta: config.beta_for(method),
            seed: config.seed,
        });
    }
    Ok(rows)
}

fn split_sets(
    config: &ExperimentConfig,
    method: MethodKind,
    base: &QuantileModel,
    data: &Prepared,
    weights: &TrialWeights,
) -> Result<Vec<PredictionSet>> {
    let calib = &data.calib;
    let entries = (0..calib.len())
        .map(|i| {
            let band = base.predict_band(&calib.xs[i]);
            Ok(CalibEntry {
                score: scores::score(SCORE, &band, &Response::Value(calib.ys[i]))?,
                weight: weights.weight(&calib.xs[i], &calib.zs[i])?,
                corrupted: calib.corrupted[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let input = CalibInput::new(entries, config.alpha, config.beta_for(method))?;
    let bands: Vec<ModelOutput> = data.test.xs.iter().map(|x| base.predict_band(x)).collect();
    let shared = |threshold: Threshold| -> Result<Vec<PredictionSet>> {
        bands
            .iter()
            .map(|b| calibrators::predict_set(b, SCORE, threshold))
            .collect()
    };

    match method {
        MethodKind::NaiveCpClean => shared(calibrate_naive(&input, false)?),
        MethodKind::NaiveCpAll => shared(calibrate_naive(&input, true)?),
        MethodKind::Pcp => shared(calibrate_pcp(&input, PcpVariant::Efficient)?),
        MethodKind::PcpNaive => shared(calibrate_pcp(&input, PcpVariant::Naive)?),
        MethodKind::Wcp => {
            let clean = input.clean_scores();
            let test = &data.test;
            (0..test.len())
                .map(|j| {
                    let w = weights.weight(&test.xs[j], &test.zs[j])?;
                    let threshold = clean.threshold(w, 1.0 - config.alpha)?;
                    calibrators::predict_set(&bands[j], SCORE, threshold)
                })
                .collect()
        }
        MethodKind::TwoStaged => two_staged_sets(config, data, weights, &input, &bands),
        MethodKind::LooPcp => unreachable!("handled by loo_pcp_sets"),
    }
}

/// Two-Staged: bound each test point's privileged information with a
/// conformal interval around a least-squares prediction from the features.
fn two_staged_sets(
    config: &ExperimentConfig,
    data: &Prepared,
    weights: &TrialWeights,
    input: &CalibInput,
    bands: &[ModelOutput],
) -> Result<Vec<PredictionSet>> {
    let pi_model = LinearRegressor::fit(
        &data.train.xs,
        &data.train.zs.iter().map(|z| z[0]).collect::<Vec<_>>(),
    )?;
    let residuals: Vec<f64> = data
        .calib
        .xs
        .iter()
        .zip(&data.calib.zs)
        .map(|(x, z)| scores::abs_residual(pi_model.predict(x), z[0]))
        .collect();
    let radius = cp_quantile(&residuals, config.beta_two_staged)?;
    let clean = input.clean_scores();
    let privileged = &weights.privileged;
    data.test
        .xs
        .iter()
        .zip(bands)
        .map(|(x, band)| {
            let centre = pi_model.predict(x);
            let interval = radius.finite().map(|r| (centre - r, centre + r));
            let weight_of = |z: f64| {
                let input = privileged.conditioning.input(x, &[z]);
                privileged.likelihood_ratio(&input)
            };
            let threshold = calibrate_two_staged(
                &clean,
                interval,
                weight_of,
                config.alpha,
                config.beta_two_staged,
                config.grid_size,
            )?;
            calibrators::predict_set(band, SCORE, threshold)
        })
        .collect()
}

/// Leave-one-out PCP calibrated on the training split itself.
fn loo_pcp_sets(
    config: &ExperimentConfig,
    data: &Prepared,
    weights: &TrialWeights,
    valid: Option<(&[Vec<f64>], &[f64])>,
) -> Result<Vec<PredictionSet>> {
    let train = &data.train;
    let bank = fit_loo_bank(
        &train.xs,
        &train.ys,
        valid,
        &models::DEFAULT_TAUS,
        &config.train,
        config.loo_cap,
    )?;
    let loo_scores = (0..train.len())
        .map(|i| {
            scores::score(
                SCORE,
                &bank.models[i].predict_band(&train.xs[i]),
                &Response::Value(train.ys[i]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let w = (0..train.len())
        .map(|i| weights.weight(&train.xs[i], &train.zs[i]))
        .collect::<Result<Vec<_>>>()?;
    data.test
        .xs
        .iter()
        .map(|x| {
            let outputs = bank.predict_bands(x);
            let input = LooPcpInput {
                loo_outputs: &outputs,
                loo_scores: &loo_scores,
                weights: &w,
                corrupted: &train.corrupted,
                alpha: config.alpha,
                beta: config.beta_pcp,
            };
            calibrators::loo_pcp_predict(&input, SCORE)
        })
        .collect()
}
