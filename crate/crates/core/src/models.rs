//! Linear base learners: pinball-loss quantile regression, softmax
//! classification, ordinary least squares and the linear imputer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optim::{self, dot, Standardizer, TrainConfig};
use crate::scores::ModelOutput;

pub const DEFAULT_TAUS: [f64; 2] = [0.05, 0.95];
pub const DEFAULT_LOO_CAP: usize = 500;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::BadTau(tau))
    }
}

pub fn pinball_loss(pred: f64, y: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(if y >= pred {
        tau * (y - pred)
    } else {
        (1.0 - tau) * (pred - y)
    })
}

/// Mean pinball loss of the linear predictor `params = [w_1..w_d, b]` and
/// its gradient.
pub fn pinball_loss_and_grad(
    params: &[f64],
    xs: &[Vec<f64>],
    ys: &[f64],
    tau: f64,
) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (x, &y) in xs.iter().zip(ys) {
        let pred = dot(w, x) + b;
        let slope = if y > pred {
            loss += tau * (y - pred);
            -tau
        } else {
            loss += (1.0 - tau) * (pred - y);
            1.0 - tau
        };
        for k in 0..d {
            grad[k] += slope * x[k] / n;
        }
        grad[d] += slope / n;
    }
    (loss / n, grad)
}

fn mean_pinball(params: &[f64], xs: &[Vec<f64>], ys: &[f64], tau: f64) -> f64 {
    let d = params.len() - 1;
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| {
            let pred = dot(&params[..d], x) + params[d];
            if y >= pred {
                tau * (y - pred)
            } else {
                (1.0 - tau) * (pred - y)
            }
        })
        .sum();
    total / xs.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileHead {
    pub tau: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Linear conditional-quantile model, one head per level, fitted on
/// standardized features and response.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileModel {
    pub x_scaler: Standardizer,
    pub y_mean: f64,
    pub y_scale: f64,
    pub heads: Vec<QuantileHead>,
}

impl QuantileModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let xs = self.x_scaler.transform(x);
        self.heads
            .iter()
            .map(|h| self.y_mean + self.y_scale * (dot(&h.weights, &xs) + h.bias))
            .collect()
    }

    /// Lowest and highest quantile heads, swapped if they cross.
    pub fn predict_band(&self, x: &[f64]) -> ModelOutput {
        let preds = self.predict(x);
        let (a, b) = (preds[0], preds[preds.len() - 1]);
        ModelOutput::Band {
            lo: a.min(b),
            hi: a.max(b),
        }
    }
}

fn check_xy(xs: &[Vec<f64>], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Config("training data must be finite".into()));
    }
    Ok(())
}

fn empirical_quantile(sorted: &[f64], tau: f64) -> f64 {
    let idx = ((sorted.len() as f64 * tau).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Fit one linear quantile head per `tau` by Adam on the mean pinball loss.
/// With `valid` data each head keeps the parameters with the best
/// validation loss. A constant response yields a constant model.
pub fn fit_quantile_regressor(
    xs: &[Vec<f64>],
    ys: &[f64],
    valid: Option<(&[Vec<f64>], &[f64])>,
    taus: &[f64],
    config: &TrainConfig,
) -> Result<QuantileModel> {
    if xs.len() < 2 {
        return Err(Error::EmptyInput);
    }
    check_xy(xs, ys)?;
    for &tau in taus {
        check_tau(tau)?;
    }
    if taus.is_empty() {
        return Err(Error::EmptyInput);
    }
    let x_scaler = Standardizer::fit(xs);
    let d = x_scaler.mean.len();
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let y_var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n;
    if y_var <= 1e-24 {
        let heads = taus
            .iter()
            .map(|&tau| QuantileHead {
                tau,
                weights: vec![0.0; d],
                bias: 0.0,
            })
            .collect();
        return Ok(QuantileModel {
            x_scaler,
            y_mean,
            y_scale: 1.0,
            heads,
        });
    }
    let y_scale = y_var.sqrt();
    let txs = x_scaler.transform_all(xs);
    let tys: Vec<f64> = ys.iter().map(|y| (y - y_mean) / y_scale).collect();
    let tvalid = valid.filter(|(vx, _)| !vx.is_empty()).map(|(vx, vy)| {
        (
            x_scaler.transform_all(vx),
            vy.iter()
                .map(|y| (y - y_mean) / y_scale)
                .collect::<Vec<f64>>(),
        )
    });
    let mut sorted = tys.clone();
    sorted.sort_by(f64::total_cmp);

    let heads = taus
        .iter()
        .map(|&tau| {
            let mut init = vec![0.0; d + 1];
            init[d] = empirical_quantile(&sorted, tau);
            let params = match &tvalid {
                Some((vx, vy)) => optim::minimize(
                    init,
                    config,
                    |p| pinball_loss_and_grad(p, &txs, &tys, tau),
                    Some(|p: &[f64]| mean_pinball(p, vx, vy, tau)),
                ),
                None => optim::minimize(
                    init,
                    config,
                    |p| pinball_loss_and_grad(p, &txs, &tys, tau),
                    None::<fn(&[f64]) -> f64>,
                ),
            };
            QuantileHead {
                tau,
                weights: params[..d].to_vec(),
                bias: params[d],
            }
        })
        .collect();
    Ok(QuantileModel {
        x_scaler,
        y_mean,
        y_scale,
        heads,
    })
}

/// Leave-one-out models: entry `i` is fitted without training sample `i`.
#[derive(Debug, Clone)]
pub struct LooModelBank {
    pub models: Vec<QuantileModel>,
}

impl LooModelBank {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Band predicted at `x` by every leave-one-out model.
    pub fn predict_bands(&self, x: &[f64]) -> Vec<ModelOutput> {
        self.models.iter().map(|m| m.predict_band(x)).collect()
    }
}

pub fn fit_loo_bank(
    xs: &[Vec<f64>],
    ys: &[f64],
    valid: Option<(&[Vec<f64>], &[f64])>,
    taus: &[f64],
    config: &TrainConfig,
    cap: usize,
) -> Result<LooModelBank> {
    let n = xs.len();
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    check_xy(xs, ys)?;
    let models = (0..n)
        .into_par_iter()
        .map(|i| {
            let (bx, by): (Vec<Vec<f64>>, Vec<f64>) = xs
                .iter()
                .zip(ys)
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (x, y))| (x.clone(), *y))
                .unzip();
            fit_quantile_regressor(&bx, &by, valid, taus, config)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooModelBank { models })
}

/// Multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub scaler: Standardizer,
    /// One row per class.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ClassifierModel {
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let xs = self.scaler.transform(x);
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, &xs) + b)
            .collect();
        softmax(&logits)
    }

    pub fn predict_output(&self, x: &[f64]) -> ModelOutput {
        ModelOutput::Probs(self.predict_proba(x))
    }
}

/// Mean softmax cross-entropy plus L2 on weights. `params` holds, per
/// class, `d` weights followed by a bias.
pub fn softmax_loss_and_grad(
    params: &[f64],
    xs: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let stride = params.len() / num_classes;
    let d = stride - 1;
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (x, &label) in xs.iter().zip(labels) {
        let logits: Vec<f64> = (0..num_classes)
            .map(|c| dot(&params[c * stride..c * stride + d], x) + params[c * stride + d])
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += log_z - logits[label];
        for c in 0..num_classes {
            let r = (logits[c] - log_z).exp() - if c == label { 1.0 } else { 0.0 };
            for k in 0..d {
                grad[c * stride + k] += r * x[k] / n;
            }
            grad[c * stride + d] += r / n;
        }
    }
    loss /= n;
    for c in 0..num_classes {
        for k in 0..d {
            let w = params[c * stride + k];
            loss += 0.5 * l2 * w * w;
            grad[c * stride + k] += l2 * w;
        }
    }
    (loss, grad)
}

pub fn fit_classifier(
    xs: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    valid: Option<(&[Vec<f64>], &[usize])>,
    config: &TrainConfig,
) -> Result<ClassifierModel> {
    if xs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::BadClassIndex {
            index: bad,
            num_classes,
        });
    }
    let scaler = Standardizer::fit(xs);
    let txs = scaler.transform_all(xs);
    let d = scaler.mean.len();
    let stride = d + 1;
    let init = vec![0.0; num_classes * stride];
    let objective = |p: &[f64]| softmax_loss_and_grad(p, &txs, labels, num_classes, config.l2);
    let params = match valid.filter(|(vx, _)| !vx.is_empty()) {
        Some((vx, vl)) => {
            let tvx = scaler.transform_all(vx);
            optim::minimize(
                init,
                config,
                objective,
                Some(|p: &[f64]| softmax_loss_and_grad(p, &tvx, vl, num_classes, 0.0).0),
            )
        }
        None => optim::minimize(init, config, objective, None::<fn(&[f64]) -> f64>),
    };
    let weights = (0..num_classes)
        .map(|c| params[c * stride..c * stride + d].to_vec())
        .collect();
    let bias = (0..num_classes).map(|c| params[c * stride + d]).collect();
    Ok(ClassifierModel {
        scaler,
        weights,
        bias,
    })
}

/// Ordinary least squares with intercept, solved on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    pub scaler: Standardizer,
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearRegressor {
    pub fn fit(xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_xy(xs, ys)?;
        let scaler = Standardizer::fit(xs);
        let txs = scaler.transform_all(xs);
        let d = scaler.mean.len();
        let n = ys.len() as f64;
        let y_mean = ys.iter().sum::<f64>() / n;
        // centered design: the intercept decouples and equals the mean
        let mut gram = vec![vec![0.0; d]; d];
        let mut rhs = vec![0.0; d];
        for (x, y) in txs.iter().zip(ys) {
            for a in 0..d {
                rhs[a] += x[a] * (y - y_mean);
                for b in 0..d {
                    gram[a][b] += x[a] * x[b];
                }
            }
        }
        for (a, row) in gram.iter_mut().enumerate() {
            row[a] += 1e-10 * n;
        }
        let coef = solve(gram, rhs);
        Ok(Self {
            scaler,
            coef,
            intercept: y_mean,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.coef, &self.scaler.transform(x)) + self.intercept
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        if p.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..d {
            let f = a[row][col] / p;
            if f != 0.0 {
                for k in col..d {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let s: f64 = (row + 1..d).map(|k| a[row][k] * x[k]).sum();
        x[row] = if a[row][row].abs() < 1e-300 {
            0.0
        } else {
            (b[row] - s) / a[row][row]
        };
    }
    x
}

/// Fills `NaN` cells by regressing each incomplete column on the columns
/// that are observed in every row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImputer {
    pub observed: Vec<usize>,
    pub fills: Vec<(usize, LinearRegressor)>,
}

/// Fit on `fit_rows` of `table`; the always-observed columns are determined
/// over the whole table so they are available wherever imputation runs.
pub fn fit_linear_imputer(table: &[Vec<f64>], fit_rows: &[usize]) -> Result<LinearImputer> {
    let width = table.first().map_or(0, Vec::len);
    if table.iter().any(|r| r.len() != width) {
        return Err(Error::DimensionMismatch {
            expected: width,
            got: 0,
        });
    }
    let (observed, incomplete): (Vec<usize>, Vec<usize>) =
        (0..width).partition(|&c| table.iter().all(|r| !r[c].is_nan()));
    if incomplete.is_empty() {
        return Ok(LinearImputer {
            observed,
            fills: Vec::new(),
        });
    }
    if observed.is_empty() {
        return Err(Error::NoObservedColumns);
    }
    let fills = incomplete
        .into_iter()
        .map(|col| {
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = fit_rows
                .iter()
                .map(|&i| &table[i])
                .filter(|r| !r[col].is_nan())
                .map(|r| (observed.iter().map(|&c| r[c]).collect(), r[col]))
                .unzip();
            LinearRegressor::fit(&xs, &ys).map(|reg| (col, reg))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearImputer { observed, fills })
}

impl LinearImputer {
    pub fn impute(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        let inputs: Vec<f64> = self.observed.iter().map(|&c| row[c]).collect();
        for (col, reg) in &self.fills {
            if out[*col].is_nan() {
                out[*col] = reg.predict(&inputs);
            }
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        self.fills.is_empty()
    }
}
