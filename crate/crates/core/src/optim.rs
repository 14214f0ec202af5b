//! Full-batch Adam with optional early stopping, shared by the linear learners.

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop when the validation loss has not improved for this many epochs.
    pub patience: usize,
    /// L2 penalty added to the training objective.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 500,
            patience: 100,
            l2: 0.0,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Minimize `objective` (returning loss and gradient) from `init`.
///
/// The step size decays linearly to 1% of `learning_rate` over the run.
/// With a validation closure the parameters with the lowest validation
/// loss are returned.
pub fn minimize<F, V>(
    init: Vec<f64>,
    config: &TrainConfig,
    mut objective: F,
    mut validation: Option<V>,
) -> Vec<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    V: FnMut(&[f64]) -> f64,
{
    let dim = init.len();
    let mut params = init;
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut best = params.clone();
    let mut best_valid = f64::INFINITY;
    let mut since_best = 0usize;
    let epochs = config.epochs.max(1);

    for t in 1..=epochs {
        let (_, grad) = objective(&params);
        let lr = config.learning_rate * (1.0 - 0.99 * (t - 1) as f64 / epochs as f64);
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        for k in 0..dim {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * grad[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * grad[k] * grad[k];
            params[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + EPS);
        }
        if let Some(valid) = validation.as_mut() {
            let loss = valid(&params);
            if loss < best_valid {
                best_valid = loss;
                best.clone_from(&params);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if validation.is_some() {
        best
    } else {
        params
    }
}

/// Column means and standard deviations; constant columns get unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for row in rows {
            for ((s, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|s| if s > 1e-24 { s.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn transform_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform(r)).collect()
    }
}

pub(crate) fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Central finite-difference gradient, used to check analytic gradients.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..at.len())
        .map(|k| {
            p[k] = at[k] + h;
            let up = f(&p);
            p[k] = at[k] - h;
            let down = f(&p);
            p[k] = at[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, tiny)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(1e-300)
}
