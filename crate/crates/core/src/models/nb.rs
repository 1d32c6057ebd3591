//! DP Gaussian Naive Bayes via Laplace-perturbed sufficient statistics.
//!
//! Three statistic families are perturbed under sequential composition:
//! class counts, per-class feature sums, and per-class squared deviations
//! from the (already noised, clamped) means. A row lands in exactly one
//! class, so the per-class draws compose in parallel and the budget is
//! split only across families and features.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelDump, ModelError, Prediction, TrainConfig};
use crate::data::{Dataset, Task, Targets};
use crate::mech::laplace_noise;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNbModel {
    pub class_priors: Vec<f64>,
    /// means[class][feature]
    pub means: Vec<Vec<f64>>,
    /// variances[class][feature], floored strictly above zero
    pub variances: Vec<Vec<f64>>,
    #[serde(with = "super::eps_serde")]
    pub epsilon0: f64,
    pub n_cols: usize,
}

/// Per-statistic budget allocation; the entries sum to epsilon0.
pub fn nb_budget_allocation(cfg: &TrainConfig, n_cols: usize) -> Vec<(String, f64)> {
    let mut out = vec![("counts".to_string(), cfg.epsilon0 * cfg.nb_split[0])];
    for j in 0..n_cols {
        out.push((format!("mean[{j}]"), cfg.epsilon0 * cfg.nb_split[1] / n_cols as f64));
    }
    for j in 0..n_cols {
        out.push((format!("var[{j}]"), cfg.epsilon0 * cfg.nb_split[2] / n_cols as f64));
    }
    out
}

pub fn train_dp_gaussian_nb(
    d: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianNbModel, ModelError> {
    cfg.validate()?;
    let labels = match d.targets() {
        Targets::Labels { values, n_classes } => (values, *n_classes),
        Targets::Values(_) => {
            return Err(ModelError::TaskMismatch {
                expected: Task::Classification,
                found: Task::Regression,
            })
        }
    };
    let (labels, n_classes) = labels;
    let n_cols = d.n_cols();
    let private = cfg.is_private();

    let mut counts = vec![0usize; n_classes];
    for &c in labels {
        counts[c] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(ModelError::MissingClass(missing));
    }

    let eps_counts = cfg.epsilon0 * cfg.nb_split[0];
    let eps_mean = cfg.epsilon0 * cfg.nb_split[1] / n_cols as f64;
    let eps_var = cfg.epsilon0 * cfg.nb_split[2] / n_cols as f64;

    // Noisy class counts, floored at 1 so priors stay valid.
    let mut noisy_counts = vec![0.0f64; n_classes];
    for (c, count) in counts.iter().enumerate() {
        let mut v = *count as f64;
        if private {
            v += laplace_noise(1.0 / eps_counts, rng).expect("positive scale");
        }
        noisy_counts[c] = v.max(1.0);
    }

    // Per-class feature sums -> noisy means, clamped into the column
    // bounds so the deviation sensitivity stays width^2.
    let mut sums = vec![vec![0.0f64; n_cols]; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        for (j, x) in d.row(i).iter().enumerate() {
            sums[c][j] += x;
        }
    }
    let mut means = vec![vec![0.0f64; n_cols]; n_classes];
    for c in 0..n_classes {
        for j in 0..n_cols {
            let mut s = sums[c][j];
            if private {
                let sens = d.bounds()[j].abs_max().max(f64::MIN_POSITIVE);
                s += laplace_noise(sens / eps_mean, rng).expect("positive scale");
            }
            means[c][j] = d.bounds()[j].clamp(s / noisy_counts[c]);
        }
    }

    // Squared deviations from the noisy means.
    let mut sqdev = vec![vec![0.0f64; n_cols]; n_classes];
    for (i, &c) in labels.iter().enumerate() {
        for (j, x) in d.row(i).iter().enumerate() {
            let delta = x - means[c][j];
            sqdev[c][j] += delta * delta;
        }
    }
    let mut variances = vec![vec![0.0f64; n_cols]; n_classes];
    for c in 0..n_classes {
        for j in 0..n_cols {
            let width = d.bounds()[j].width();
            let mut v = sqdev[c][j];
            if private {
                let sens = (width * width).max(f64::MIN_POSITIVE);
                v += laplace_noise(sens / eps_var, rng).expect("positive scale");
            }
            let floor = (cfg.variance_floor * width * width).max(1e-12);
            variances[c][j] = (v / noisy_counts[c]).max(floor);
        }
    }

    let total: f64 = noisy_counts.iter().sum();
    let class_priors = noisy_counts.iter().map(|c| c / total).collect();

    Ok(GaussianNbModel {
        class_priors,
        means,
        variances,
        epsilon0: cfg.epsilon0,
        n_cols,
    })
}

impl GaussianNbModel {
    /// Log joint score per class: log prior + sum of log Gaussian
    /// densities. Ties break toward the lowest class index.
    pub fn log_scores(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.n_cols, "feature count mismatch");
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.class_priors
            .iter()
            .enumerate()
            .map(|(c, prior)| {
                let mut score = prior.ln();
                for (j, x) in row.iter().enumerate() {
                    let var = self.variances[c][j];
                    let delta = x - self.means[c][j];
                    score += -0.5 * (ln_2pi + var.ln()) - delta * delta / (2.0 * var);
                }
                score
            })
            .collect()
    }
}

impl Model for GaussianNbModel {
    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn predict_row(&self, row: &[f64]) -> Prediction {
        let scores = self.log_scores(row);
        let mut best = 0;
        for (c, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = c;
            }
        }
        Prediction::Label(best)
    }

    fn class_log_scores(&self, row: &[f64]) -> Option<Vec<f64>> {
        Some(self.log_scores(row))
    }

    fn dump(&self) -> ModelDump {
        ModelDump::GaussianNb(self.clone())
    }
}
