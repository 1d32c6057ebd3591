//! DP linear regression by sufficient-statistics perturbation: Laplace
//! noise on the upper triangle of the (intercept-augmented) Gram matrix
//! and on the moment vector, then a ridge-regularized normal-equations
//! solve. The ridge weight doubles until the system is numerically
//! well-posed.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelDump, ModelError, Prediction, TrainConfig};
use crate::data::{Dataset, Task, Targets};
use crate::mech::laplace_noise;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    #[serde(with = "super::eps_serde")]
    pub epsilon0: f64,
    /// Ridge weight actually used by the solve.
    pub ridge: f64,
}

/// Per-entry budget allocation; the entries sum to epsilon0.
pub fn linreg_budget_allocation(cfg: &TrainConfig, n_cols: usize) -> Vec<(String, f64)> {
    let p1 = n_cols + 1;
    let m1 = p1 * (p1 + 1) / 2;
    let m2 = p1;
    let mut out = Vec::with_capacity(m1 + m2);
    for i in 0..p1 {
        for j in i..p1 {
            out.push((
                format!("gram[{i},{j}]"),
                cfg.epsilon0 * cfg.linreg_split[0] / m1 as f64,
            ));
        }
    }
    for i in 0..p1 {
        out.push((
            format!("moment[{i}]"),
            cfg.epsilon0 * cfg.linreg_split[1] / m2 as f64,
        ));
    }
    out
}

/// Default augmented row-norm bound from the column bounds: no actual
/// scaling happens at this bound, but the sensitivity it implies is valid.
fn default_clip_norm(d: &Dataset) -> f64 {
    let sq: f64 = d.bounds().iter().map(|b| b.abs_max() * b.abs_max()).sum();
    (sq + 1.0).sqrt()
}

pub fn train_dp_linreg(
    d: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LinRegModel, ModelError> {
    cfg.validate()?;
    let targets = match d.targets() {
        Targets::Values(v) => v,
        Targets::Labels { .. } => {
            return Err(ModelError::TaskMismatch {
                expected: Task::Regression,
                found: Task::Classification,
            })
        }
    };
    let p = d.n_cols();
    let p1 = p + 1;
    let private = cfg.is_private();

    let clip = cfg.clip_norm.unwrap_or_else(|| default_clip_norm(d));
    let feat_budget = (clip * clip - 1.0).max(0.0);
    let y_max = d.target_bounds().abs_max().max(f64::MIN_POSITIVE);

    // Accumulate the augmented Gram matrix and moment vector over
    // norm-clipped rows.
    let mut gram = vec![vec![0.0f64; p1]; p1];
    let mut moment = vec![0.0f64; p1];
    let mut scaled = vec![0.0f64; p1];
    for (i, row) in d.rows().enumerate() {
        let norm_sq: f64 = row.iter().map(|x| x * x).sum();
        let factor = if norm_sq > feat_budget && norm_sq > 0.0 {
            (feat_budget / norm_sq).sqrt()
        } else {
            1.0
        };
        for (j, x) in row.iter().enumerate() {
            scaled[j] = x * factor;
        }
        scaled[p] = 1.0;
        let y = targets[i].clamp(-y_max, y_max);
        for a in 0..p1 {
            for b in a..p1 {
                gram[a][b] += scaled[a] * scaled[b];
            }
            moment[a] += scaled[a] * y;
        }
    }

    // Laplace noise per upper-triangle entry (mirrored) and per moment
    // entry, drawn in a fixed statistic order.
    if private {
        let m1 = (p1 * (p1 + 1) / 2) as f64;
        let m2 = p1 as f64;
        let scale_gram = (clip * clip) * m1 / (cfg.epsilon0 * cfg.linreg_split[0]);
        let scale_moment = (clip * y_max) * m2 / (cfg.epsilon0 * cfg.linreg_split[1]);
        for a in 0..p1 {
            for b in a..p1 {
                gram[a][b] += laplace_noise(scale_gram, rng).expect("positive scale");
            }
        }
        for m in moment.iter_mut() {
            *m += laplace_noise(scale_moment, rng).expect("positive scale");
        }
    }
    for a in 0..p1 {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
    }

    let a = DMatrix::from_fn(p1, p1, |i, j| gram[i][j]);
    let b = DVector::from_iterator(p1, moment.iter().copied());
    let (w, lambda) = solve_with_escalating_ridge(&a, &b, cfg.ridge)?;

    Ok(LinRegModel {
        weights: w.iter().take(p).copied().collect(),
        intercept: w[p],
        epsilon0: cfg.epsilon0,
        ridge: lambda,
    })
}

/// Solve (A + lambda I) w = b, doubling lambda until the solution is
/// finite with a small residual.
fn solve_with_escalating_ridge(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<(DVector<f64>, f64), ModelError> {
    let p1 = a.nrows();
    let scale = a.iter().map(|x| x.abs()).sum::<f64>() / (p1 * p1) as f64;
    let base = (1e-10 * scale).max(1e-12);
    let mut lambda = ridge;
    let mut last_residual = f64::INFINITY;
    for _ in 0..64 {
        let mut reg = a.clone();
        for i in 0..p1 {
            reg[(i, i)] += lambda;
        }
        if let Some(w) = reg.clone().lu().solve(b) {
            if w.iter().all(|x| x.is_finite()) {
                let residual = (&reg * &w - b).norm();
                let tol = 1e-6 * (reg.norm() * w.norm() + b.norm() + 1e-30);
                if residual <= tol {
                    return Ok((w, lambda));
                }
                last_residual = residual;
            }
        }
        lambda = if lambda == 0.0 { base } else { lambda * 2.0 };
    }
    Err(ModelError::IllConditioned {
        lambda,
        residual: last_residual,
    })
}

impl Model for LinRegModel {
    fn n_cols(&self) -> usize {
        self.weights.len()
    }

    fn predict_row(&self, row: &[f64]) -> Prediction {
        assert_eq!(row.len(), self.weights.len(), "feature count mismatch");
        let dot: f64 = self.weights.iter().zip(row).map(|(w, x)| w * x).sum();
        Prediction::Value(dot + self.intercept)
    }

    fn class_log_scores(&self, _row: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn dump(&self) -> ModelDump {
        ModelDump::Linreg(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn line_data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 * 0.5]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap()
    }

    /// Independent normal-equations solve by Gauss-Jordan elimination.
    fn oracle_ridge_solve(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Vec<f64> {
        let p1 = xs[0].len() + 1;
        let mut a = vec![vec![0.0; p1 + 1]; p1];
        for (x, y) in xs.iter().zip(ys) {
            let mut aug: Vec<f64> = x.clone();
            aug.push(1.0);
            for i in 0..p1 {
                for j in 0..p1 {
                    a[i][j] += aug[i] * aug[j];
                }
                a[i][p1] += aug[i] * y;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lambda;
        }
        for col in 0..p1 {
            let pivot = (col..p1)
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let pv = a[col][col];
            for j in col..=p1 {
                a[col][j] /= pv;
            }
            for r in 0..p1 {
                if r != col {
                    let f = a[r][col];
                    for j in col..=p1 {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..p1).map(|i| a[i][p1]).collect()
    }

    #[test]
    fn noiseless_line_recovers_slope() {
        let d = line_data();
        let m = train_dp_linreg(&d, &TrainConfig::default(), &mut rng(0)).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-9, "w={:?}", m.weights);
        assert!(m.intercept.abs() < 1e-9);
    }

    #[test]
    fn non_private_matches_oracle_ridge_solution() {
        let mut r = rng(5);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| r.random::<f64>()).collect())
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 1.5 * x[0] - 0.7 * x[1] + 0.2 * x[2] + 0.05 + 0.01 * x[0] * x[1])
            .collect();
        let lambda = 0.1;
        let d = Dataset::from_rows(xs.clone(), Targets::Values(ys.clone()), vec![], "y".into())
            .unwrap();
        let cfg = TrainConfig {
            ridge: lambda,
            ..TrainConfig::default()
        };
        let m = train_dp_linreg(&d, &cfg, &mut rng(1)).unwrap();
        let oracle = oracle_ridge_solve(&xs, &ys, lambda);
        for j in 0..3 {
            assert!(
                (m.weights[j] - oracle[j]).abs() < 1e-8,
                "weight {j}: {} vs {}",
                m.weights[j],
                oracle[j]
            );
        }
        assert!((m.intercept - oracle[3]).abs() < 1e-8);
    }

    #[test]
    fn large_budget_close_to_non_private() {
        let mut r = rng(6);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![r.random::<f64>(), r.random::<f64>()])
            .collect();
        let ys: Vec<f64> = rows.iter().map(|x| 0.8 * x[0] + 0.4 * x[1] + 0.1).collect();
        let d = Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap();
        let exact = train_dp_linreg(&d, &TrainConfig::default(), &mut rng(2)).unwrap();
        let noisy =
            train_dp_linreg(&d, &TrainConfig::with_epsilon(1000.0), &mut rng(2)).unwrap();
        for j in 0..2 {
            let rel = (noisy.weights[j] - exact.weights[j]).abs() / exact.weights[j].abs();
            assert!(rel < 0.01, "weight {j} off by {rel}");
        }
    }

    #[test]
    fn prediction_arithmetic() {
        let m = LinRegModel {
            weights: vec![0.0],
            intercept: 3.5,
            epsilon0: f64::INFINITY,
            ridge: 0.0,
        };
        assert_eq!(m.predict_row(&[100.0]), Prediction::Value(3.5));
        let m = LinRegModel {
            weights: vec![2.0],
            intercept: 1.0,
            epsilon0: f64::INFINITY,
            ridge: 0.0,
        };
        assert_eq!(m.predict_row(&[3.0]), Prediction::Value(7.0));
    }

    #[test]
    fn batch_matches_elementwise_dot() {
        let m = LinRegModel {
            weights: vec![1.0, -2.0],
            intercept: 0.25,
            epsilon0: f64::INFINITY,
            ridge: 0.0,
        };
        for row in [[1.0, 1.0], [0.5, -0.5], [3.0, 2.0]] {
            let expected = row[0] - 2.0 * row[1] + 0.25;
            assert_eq!(m.predict_row(&row), Prediction::Value(expected));
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let d = line_data();
        let cfg = TrainConfig::with_epsilon(50.0);
        let a = train_dp_linreg(&d, &cfg, &mut rng(9)).unwrap();
        let b = train_dp_linreg(&d, &cfg, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_allocation_sums_to_epsilon0() {
        let cfg = TrainConfig::with_epsilon(2.0);
        let total: f64 = linreg_budget_allocation(&cfg, 4).iter().map(|(_, e)| e).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn classification_dataset_rejected() {
        let d = Dataset::from_rows(
            vec![vec![1.0]],
            Targets::Labels {
                values: vec![0],
                n_classes: 1,
            },
            vec![],
            "y".into(),
        )
        .unwrap();
        assert!(matches!(
            train_dp_linreg(&d, &TrainConfig::default(), &mut rng(0)),
            Err(ModelError::TaskMismatch { .. })
        ));
    }
}
