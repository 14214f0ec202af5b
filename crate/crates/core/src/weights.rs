//! Likelihood-ratio weights `w = P(M=0) / P(M=0 | input)`.
//!
//! The conditioning input is the privileged information `z` for the
//! standard weights, the features `x` for the "naive" estimate, or the
//! concatenation `x ‖ z` for the dependence-robust variant. Calibrators
//! only ever see the resulting scalar weight.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::optim::{self, dot, Standardizer, TrainConfig};

/// Floor applied to estimated clean probabilities.
pub const DEFAULT_P_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// `P(M=0 | Z)`.
    Privileged,
    /// `P(M=0 | X)`; ignores the privileged information.
    Features,
    /// `P(M=0 | X, Z)`.
    Joint,
}

impl Conditioning {
    /// Assemble the model input for one sample.
    pub fn input(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        match self {
            Conditioning::Privileged => z.to_vec(),
            Conditioning::Features => x.to_vec(),
            Conditioning::Joint => x.iter().chain(z).copied().collect(),
        }
    }
}

pub type CleanProbabilityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum CleanProbability {
    /// Exact `P(M=0 | input)`, e.g. from a known corruption mechanism.
    Oracle(CleanProbabilityFn),
    Logistic(LogisticModel),
    Constant(f64),
}

impl fmt::Debug for CleanProbability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CleanProbability::Oracle(_) => f.write_str("Oracle(..)"),
            CleanProbability::Logistic(m) => f.debug_tuple("Logistic").field(m).finish(),
            CleanProbability::Constant(p) => f.debug_tuple("Constant").field(p).finish(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeightModel {
    pub marginal_clean: f64,
    pub conditional: CleanProbability,
    pub conditioning: Conditioning,
    pub p_floor: f64,
}

impl WeightModel {
    /// Weights from a known clean-probability function. No floor is applied;
    /// a zero probability makes the weight undefined.
    pub fn oracle(
        marginal_clean: f64,
        conditioning: Conditioning,
        clean_prob: CleanProbabilityFn,
    ) -> Result<Self> {
        check_marginal(marginal_clean)?;
        Ok(Self {
            marginal_clean,
            conditional: CleanProbability::Oracle(clean_prob),
            conditioning,
            p_floor: 0.0,
        })
    }

    pub fn constant(
        marginal_clean: f64,
        clean_prob: f64,
        conditioning: Conditioning,
    ) -> Result<Self> {
        check_marginal(marginal_clean)?;
        Ok(Self {
            marginal_clean,
            conditional: CleanProbability::Constant(clean_prob),
            conditioning,
            p_floor: DEFAULT_P_FLOOR,
        })
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self.conditional, CleanProbability::Oracle(_))
    }

    /// Clamped clean probability for `input`.
    pub fn clean_probability(&self, input: &[f64]) -> Result<f64> {
        let raw = match &self.conditional {
            CleanProbability::Oracle(f) => f(input),
            CleanProbability::Logistic(m) => m.predict_proba(input),
            CleanProbability::Constant(p) => *p,
        };
        if self.is_oracle() {
            if !(raw > 0.0) {
                return Err(Error::WeightUndefined(raw));
            }
            return Ok(raw.min(1.0));
        }
        Ok(raw.clamp(self.p_floor, 1.0))
    }

    pub fn likelihood_ratio(&self, input: &[f64]) -> Result<f64> {
        Ok(self.marginal_clean / self.clean_probability(input)?)
    }
}

fn check_marginal(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "marginal clean rate {p} is outside (0, 1]"
        )))
    }
}

/// Empirical clean fraction `(1/n) Σ (1 - m_i)`.
pub fn estimate_marginal_clean_rate(m_bits: &[bool]) -> Result<f64> {
    if m_bits.is_empty() {
        return Err(Error::EmptyInput);
    }
    let clean = m_bits.iter().filter(|m| !**m).count();
    Ok(clean as f64 / m_bits.len() as f64)
}

/// Binary logistic regression `σ(w·x + b)` on standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub scaler: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, &self.scaler.transform(x)) + self.bias)
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy with L2 penalty on the weights (not the bias).
/// `params = [w_1..w_d, b]`; `targets` are in {0, 1}.
pub fn logistic_loss_and_grad(
    params: &[f64],
    xs: &[Vec<f64>],
    targets: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = params.len() - 1;
    let (w, b) = (&params[..d], params[d]);
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (x, &t) in xs.iter().zip(targets) {
        let logit = dot(w, x) + b;
        // log(1 + e^l) - t·l, computed stably
        loss += logit.max(0.0) + (-logit.abs()).exp().ln_1p() - t * logit;
        let r = sigmoid(logit) - t;
        for k in 0..d {
            grad[k] += r * x[k] / n;
        }
        grad[d] += r / n;
    }
    loss /= n;
    for k in 0..d {
        loss += 0.5 * l2 * w[k] * w[k];
        grad[k] += l2 * w[k];
    }
    (loss, grad)
}

/// Fit `P(M=0 | input)` with logistic regression and pair it with the
/// empirical clean rate.
///
/// All-clean labels give the constant model `P(M=0 | ·) ≡ 1`; all-corrupted
/// labels leave no clean mass and are rejected.
pub fn fit_corruption_classifier(
    features: &[Vec<f64>],
    m_bits: &[bool],
    conditioning: Conditioning,
    config: &TrainConfig,
) -> Result<WeightModel> {
    if features.len() != m_bits.len() {
        return Err(Error::LengthMismatch {
            expected: features.len(),
            got: m_bits.len(),
        });
    }
    let marginal = estimate_marginal_clean_rate(m_bits)?;
    if marginal == 0.0 {
        return Err(Error::DegenerateLabels);
    }
    if marginal == 1.0 {
        return WeightModel::constant(1.0, 1.0, conditioning);
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(
            "corruption classifier features must be finite".into(),
        ));
    }
    let scaler = Standardizer::fit(features);
    let xs = scaler.transform_all(features);
    let targets: Vec<f64> = m_bits.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
    let d = xs.first().map_or(0, Vec::len);
    let mut init = vec![0.0; d + 1];
    init[d] = (marginal / (1.0 - marginal)).ln();
    let params = optim::minimize(
        init,
        config,
        |p| logistic_loss_and_grad(p, &xs, &targets, config.l2),
        None::<fn(&[f64]) -> f64>,
    );
    let model = LogisticModel {
        scaler,
        weights: params[..d].to_vec(),
        bias: params[d],
    };
    Ok(WeightModel {
        marginal_clean: marginal,
        conditional: CleanProbability::Logistic(model),
        conditioning,
        p_floor: DEFAULT_P_FLOOR,
    })
}
