//! Experiment configuration as a flat `key = value` file.
//!
//! Lines starting with `#` are comments. The `preset` and `scarce_mode`
//! keys are applied before every other key, so a file (or command line)
//! can pick a preset and then override individual values.

use std::fmt;
use std::str::FromStr;

use crate::data::SplitFractions;
use crate::error::{Error, Result};
use crate::optim::TrainConfig;
use crate::synth::CorruptionMode;

/// Calibration methods the harness can run within a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    /// Split CP on the clean calibration samples.
    NaiveCpClean,
    /// Split CP on every calibration sample, with imputed values.
    NaiveCpAll,
    /// Weighted CP using the test point's own weight.
    Wcp,
    TwoStaged,
    Pcp,
    /// PCP through the quadratic-time construction; must match [`MethodKind::Pcp`].
    PcpNaive,
    LooPcp,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::NaiveCpClean,
        MethodKind::NaiveCpAll,
        MethodKind::Wcp,
        MethodKind::TwoStaged,
        MethodKind::Pcp,
        MethodKind::PcpNaive,
        MethodKind::LooPcp,
    ];

    fn key(&self) -> &'static str {
        match self {
            MethodKind::NaiveCpClean => "naive_cp_clean",
            MethodKind::NaiveCpAll => "naive_cp_all",
            MethodKind::Wcp => "wcp",
            MethodKind::TwoStaged => "two_staged",
            MethodKind::Pcp => "pcp",
            MethodKind::PcpNaive => "pcp_naive",
            MethodKind::LooPcp => "loo_pcp",
        }
    }

    /// Name written to the report. WCP reads the test point's privileged
    /// information unless its weights condition on the features alone, and
    /// is labeled infeasible in that case.
    pub fn report_name(&self, source: WeightSource) -> &'static str {
        match (self, source) {
            (MethodKind::Wcp, WeightSource::Oracle) => "wcp_oracle_infeasible",
            (MethodKind::Wcp, WeightSource::EstimatedFromZ) => "wcp_z_infeasible",
            (MethodKind::Wcp, WeightSource::EstimatedFromX) => "wcp_x",
            (other, _) => other.key(),
        }
    }

    /// Whether the method calibrates on a held-out calibration split.
    pub fn needs_calibration_split(&self) -> bool {
        !matches!(self, MethodKind::LooPcp)
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        MethodKind::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Where the likelihood-ratio weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    /// The generator's exact corruption probabilities.
    Oracle,
    /// Logistic regression of the corruption bit on the privileged information.
    EstimatedFromZ,
    /// Logistic regression of the corruption bit on the (imputed) features.
    EstimatedFromX,
}

impl FromStr for WeightSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "oracle" => Ok(WeightSource::Oracle),
            "z" | "estimated_from_z" => Ok(WeightSource::EstimatedFromZ),
            "x" | "estimated_from_x" => Ok(WeightSource::EstimatedFromX),
            other => Err(Error::Config(format!("unknown weight source `{other}`"))),
        }
    }
}

impl fmt::Display for WeightSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightSource::Oracle => "oracle",
            WeightSource::EstimatedFromZ => "z",
            WeightSource::EstimatedFromX => "x",
        })
    }
}

pub const DEFAULT_FRACTIONS: SplitFractions = [0.5, 0.1, 0.2, 0.2];
pub const SCARCE_FRACTIONS: SplitFractions = [0.3, 0.1, 0.0, 0.6];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corruption_mode: CorruptionMode,
    pub methods: Vec<MethodKind>,
    pub alpha: f64,
    pub beta_pcp: f64,
    pub beta_two_staged: f64,
    pub n_trials: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub weight_source: WeightSource,
    /// Train, validation, calibration and test fractions.
    pub fractions: SplitFractions,
    pub scarce_mode: bool,
    /// Mean corruption probability; `0` disables corruption entirely.
    pub target_corruption_mean: f64,
    pub train: TrainConfig,
    /// Grid resolution for the Two-Staged weight maximization.
    pub grid_size: usize,
    pub loo_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corruption_mode: CorruptionMode::MissingResponse,
            methods: vec![
                MethodKind::NaiveCpClean,
                MethodKind::NaiveCpAll,
                MethodKind::Wcp,
                MethodKind::TwoStaged,
                MethodKind::Pcp,
            ],
            alpha: 0.1,
            beta_pcp: 0.005,
            beta_two_staged: 0.05,
            n_trials: 20,
            n_samples: 5000,
            seed: 0,
            weight_source: WeightSource::Oracle,
            fractions: DEFAULT_FRACTIONS,
            scarce_mode: false,
            target_corruption_mean: 0.2,
            train: TrainConfig::default(),
            grid_size: 201,
            loo_cap: crate::models::DEFAULT_LOO_CAP,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("bad value `{other}` for `{key}`"))),
    }
}

/// Parse a comma-separated list of numbers.
pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Named starting points: `default`, `causal` (50 trials) and `scarce`
    /// (100 trials of 200 samples with leave-one-out PCP).
    pub fn preset(name: &str) -> Result<Self> {
        let mut config = Self::default();
        match name.trim() {
            "default" => {}
            "causal" => config.n_trials = 50,
            "scarce" => {
                config.enable_scarce_mode();
                config.n_trials = 100;
                config.n_samples = 200;
            }
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        }
        Ok(config)
    }

    fn enable_scarce_mode(&mut self) {
        self.scarce_mode = true;
        self.fractions = SCARCE_FRACTIONS;
        self.methods = vec![MethodKind::LooPcp];
    }

    /// Set one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "preset" => *self = Self::preset(value)?,
            "scarce_mode" => {
                if parse_bool(key, value)? {
                    self.enable_scarce_mode();
                } else {
                    self.scarce_mode = false;
                }
            }
            "corruption_mode" => self.corruption_mode = value.parse()?,
            "methods" => {
                self.methods = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta_pcp" => self.beta_pcp = parse_num(key, value)?,
            "beta_two_staged" => self.beta_two_staged = parse_num(key, value)?,
            "n_trials" => self.n_trials = parse_num(key, value)?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "weight_source" => self.weight_source = value.parse()?,
            "split_fractions" => {
                let parts = parse_list(key, value)?;
                self.fractions = parts.try_into().map_err(|_| {
                    Error::Config("split_fractions needs four comma-separated values".into())
                })?;
            }
            "target_corruption_mean" => self.target_corruption_mean = parse_num(key, value)?,
            "epochs" => self.train.epochs = parse_num(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_num(key, value)?,
            "patience" => self.train.patience = parse_num(key, value)?,
            "grid_size" => self.grid_size = parse_num(key, value)?,
            "loo_cap" => self.loo_cap = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `(key, value)` pairs, `preset` first, then `scarce_mode`, then
    /// the rest in order.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().map(|(k, v)| (k.trim(), v)).collect();
        for rank in 0..3 {
            for &(k, v) in &pairs {
                let this = match k {
                    "preset" => 0,
                    "scarce_mode" => 1,
                    _ => 2,
                };
                if this == rank {
                    self.set(k, v)?;
                }
            }
        }
        Ok(())
    }

    /// Parse the text of a config file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            pairs.push((k, v));
        }
        let mut config = Self::default();
        config.apply(pairs)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::BadAlpha(self.alpha));
        }
        if !(self.beta_pcp > 0.0 && self.beta_pcp < self.alpha) {
            return Err(Error::BadBeta {
                beta: self.beta_pcp,
                upper: self.alpha,
            });
        }
        if self.methods.contains(&MethodKind::TwoStaged)
            && !(self.beta_two_staged > 0.0 && self.beta_two_staged < self.alpha)
        {
            return Err(Error::BadBeta {
                beta: self.beta_two_staged,
                upper: self.alpha,
            });
        }
        if self.fractions.iter().any(|f| !(*f >= 0.0))
            || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::BadFractions(format!(
                "{:?} must be non-negative and sum to 1",
                self.fractions
            )));
        }
        if self.fractions[0] <= 0.0 || self.fractions[3] <= 0.0 {
            return Err(Error::BadFractions(
                "train and test fractions must be positive".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if self.fractions[2] <= 0.0 && self.methods.iter().any(MethodKind::needs_calibration_split)
        {
            return Err(Error::Config(
                "split-based methods need a positive calibration fraction".into(),
            ));
        }
        if !(self.target_corruption_mean >= 0.0 && self.target_corruption_mean < 1.0) {
            return Err(Error::Config(format!(
                "target_corruption_mean {} is outside [0, 1)",
                self.target_corruption_mean
            )));
        }
        if self.n_trials == 0 || self.n_samples == 0 {
            return Err(Error::Config(
                "n_trials and n_samples must be positive".into(),
            ));
        }
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        Ok(())
    }

    /// Beta reported (and used) for `method`.
    pub fn beta_for(&self, method: MethodKind) -> f64 {
        match method {
            MethodKind::TwoStaged => self.beta_two_staged,
            _ => self.beta_pcp,
        }
    }
}
