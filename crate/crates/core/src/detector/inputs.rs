//! Candidate input generation: which row groups to remove, and which
//! test points the mechanism should predict on.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CandidateInput, DetectError};
use crate::data::{AdjacencySpec, Dataset, Targets, Task};
use crate::models::{Prediction, Trainer};
use crate::resample::{split_minority, ImbalanceSpec};

/// Removal-group selection strategy, chosen by name from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Uniform k-subsets of all rows.
    #[default]
    Random,
    /// Rows with the largest feature norm (classification) or the target
    /// farthest from the median (regression), in sliding rank windows.
    Extreme,
    /// Uniform k-subsets of the imbalance minority.
    Minority,
    /// Union of the other strategies.
    Mixed,
}

impl Strategy {
    pub fn names() -> &'static [&'static str] {
        &["random", "extreme", "minority", "mixed"]
    }
}

fn sample_subset(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool = pool.to_vec();
    for i in 0..k {
        let j = i + rng.random_range(0..pool.len() - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn push_unique(
    out: &mut Vec<CandidateInput>,
    seen: &mut std::collections::BTreeSet<AdjacencySpec>,
    spec: AdjacencySpec,
    args: &[usize],
) {
    if seen.insert(spec.clone()) {
        out.push(CandidateInput::new(
            AdjacencySpec::full(),
            spec,
            args.to_vec(),
        ));
    }
}

fn extreme_ranking(d: &Dataset) -> Vec<usize> {
    let scores: Vec<f64> = match d.targets() {
        Targets::Values(v) => {
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            v.iter().map(|t| (t - median).abs()).collect()
        }
        Targets::Labels { .. } => d
            .rows()
            .map(|row| row.iter().map(|x| x * x).sum::<f64>())
            .collect(),
    };
    let mut order: Vec<usize> = (0..d.n_rows()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
}

/// Generate candidate adjacent-dataset inputs: each pairs the full
/// dataset against a k-row removal chosen per the strategy. Deduplicated,
/// deterministic order for a given rng state.
pub fn generate_inputs(
    d: &Dataset,
    k: usize,
    n_candidates: usize,
    strategy: Strategy,
    imbalance: &ImbalanceSpec,
    args: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CandidateInput>, DetectError> {
    if k < 1 {
        return Err(DetectError::BadInputs("group size k must be >= 1".into()));
    }
    if k >= d.n_rows() {
        return Err(DetectError::BadInputs(format!(
            "group size k={k} must be smaller than the dataset ({} rows)",
            d.n_rows()
        )));
    }
    if n_candidates < 1 {
        return Err(DetectError::BadInputs("n_candidates must be >= 1".into()));
    }
    if args.is_empty() {
        return Err(DetectError::BadInputs("args must be non-empty".into()));
    }

    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();

    let add_random = |target: usize,
                      out: &mut Vec<CandidateInput>,
                      seen: &mut std::collections::BTreeSet<AdjacencySpec>,
                      rng: &mut ChaCha8Rng| {
        let pool: Vec<usize> = (0..d.n_rows()).collect();
        for _ in 0..target.saturating_mul(4) {
            if out.len() >= target {
                break;
            }
            let subset = sample_subset(&pool, k, rng);
            push_unique(out, seen, AdjacencySpec::removing(subset), args);
        }
    };

    let add_extreme = |budget: usize,
                       out: &mut Vec<CandidateInput>,
                       seen: &mut std::collections::BTreeSet<AdjacencySpec>| {
        let ranking = extreme_ranking(d);
        for start in 0..=(ranking.len() - k) {
            if out.len() >= budget {
                break;
            }
            let group: Vec<usize> = ranking[start..start + k].to_vec();
            push_unique(out, seen, AdjacencySpec::removing(group), args);
        }
    };

    let add_minority = |budget: usize,
                        out: &mut Vec<CandidateInput>,
                        seen: &mut std::collections::BTreeSet<AdjacencySpec>,
                        rng: &mut ChaCha8Rng|
     -> Result<(), DetectError> {
        let (minority, _) = split_minority(d, imbalance)?;
        if minority.len() < k {
            return Err(DetectError::BadInputs(format!(
                "minority has {} rows, cannot remove groups of k={k}",
                minority.len()
            )));
        }
        for _ in 0..budget.saturating_mul(2) {
            if out.len() >= budget {
                break;
            }
            let subset = sample_subset(&minority, k, rng);
            push_unique(out, seen, AdjacencySpec::removing(subset), args);
        }
        Ok(())
    };

    match strategy {
        Strategy::Random => add_random(n_candidates, &mut out, &mut seen, rng),
        Strategy::Extreme => add_extreme(n_candidates, &mut out, &mut seen),
        Strategy::Minority => add_minority(n_candidates, &mut out, &mut seen, rng)?,
        Strategy::Mixed => {
            let third = n_candidates.div_ceil(3);
            add_extreme(third, &mut out, &mut seen);
            // Minority is only definable for regression; fall back to
            // random when it is not.
            if d.task() == Task::Regression {
                let target = (out.len() + third).min(n_candidates);
                let _ = add_minority(target, &mut out, &mut seen, rng);
            }
            add_random(n_candidates, &mut out, &mut seen, rng);
        }
    }

    out.truncate(n_candidates);
    if out.is_empty() {
        return Err(DetectError::EmptyInputs);
    }
    Ok(out)
}

/// Reference-mechanism candidates: sliding k-windows of flipped entries
/// over an m-entry database. Args carry a single placeholder position.
pub fn reference_inputs(m_entries: usize, k: usize, n_candidates: usize) -> Vec<CandidateInput> {
    assert!(k >= 1 && k < m_entries);
    (0..n_candidates.min(m_entries - k + 1))
        .map(|start| {
            CandidateInput::new(
                AdjacencySpec::full(),
                AdjacencySpec::removing(start..start + k),
                vec![0],
            )
        })
        .collect()
}

/// Select the m highest-leverage test rows. Classification: smallest
/// margin between the top-2 class log-scores of one non-private model.
/// Regression: highest prediction variance across bootstrap-trained
/// non-private models. Ties break by row index.
pub fn select_test_points(
    d: &Dataset,
    trainer: &dyn Trainer,
    m: usize,
    n_bootstrap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, DetectError> {
    if m < 1 {
        return Err(DetectError::BadInputs("batch size m must be >= 1".into()));
    }
    if m > d.n_rows() {
        return Err(DetectError::BadInputs(format!(
            "batch size m={m} exceeds the dataset ({} rows)",
            d.n_rows()
        )));
    }
    let scores: Vec<f64> = match d.task() {
        Task::Classification => {
            let model = trainer.train(d, rng)?;
            (0..d.n_rows())
                .map(|i| {
                    let mut s = model
                        .class_log_scores(d.row(i))
                        .expect("classification model provides class scores");
                    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if s.len() > 1 {
                        s[0] - s[1]
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        Task::Regression => {
            if n_bootstrap < 2 {
                return Err(DetectError::BadInputs(
                    "regression test-point selection needs n_bootstrap >= 2".into(),
                ));
            }
            let mut preds = vec![Vec::with_capacity(n_bootstrap); d.n_rows()];
            for _ in 0..n_bootstrap {
                let sample: Vec<Vec<f64>>;
                let targets: Vec<f64>;
                {
                    let values = match d.targets() {
                        Targets::Values(v) => v,
                        Targets::Labels { .. } => unreachable!("regression task"),
                    };
                    let picks: Vec<usize> = (0..d.n_rows())
                        .map(|_| rng.random_range(0..d.n_rows()))
                        .collect();
                    sample = picks.iter().map(|&i| d.row(i).to_vec()).collect();
                    targets = picks.iter().map(|&i| values[i]).collect();
                }
                let boot = Dataset::from_rows(
                    sample,
                    Targets::Values(targets),
                    d.feature_names().to_vec(),
                    d.target_name().to_string(),
                )
                .expect("bootstrap keeps the row count")
                .inherit_bounds(d);
                let model = trainer.train(&boot, rng)?;
                for (i, p) in preds.iter_mut().enumerate() {
                    match model.predict_row(d.row(i)) {
                        Prediction::Value(v) => p.push(v),
                        Prediction::Label(_) => unreachable!("regression model"),
                    }
                }
            }
            preds
                .iter()
                .map(|p| {
                    let mean = p.iter().sum::<f64>() / p.len() as f64;
                    // Negated variance: selection below takes the smallest.
                    -(p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p.len() as f64)
                })
                .collect()
        }
    };

    let mut order: Vec<usize> = (0..d.n_rows()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    order.truncate(m);
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{trainer_from_name, TrainConfig};
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn regression_1_to_100() -> Dataset {
        let rows: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap()
    }

    #[test]
    fn random_candidates_distinct_full_vs_removal() {
        let d = regression_1_to_100();
        let inputs = generate_inputs(
            &d,
            1,
            100,
            Strategy::Random,
            &ImbalanceSpec::default(),
            &[0],
            &mut rng(1),
        )
        .unwrap();
        assert!(inputs.len() <= 100);
        let mut seen = std::collections::BTreeSet::new();
        for c in &inputs {
            assert!(c.d1.is_full());
            assert_eq!(c.d2.k(), 1);
            assert!(seen.insert(c.d2.clone()), "duplicate candidate");
        }
    }

    #[test]
    fn extreme_strategy_removes_most_extreme_first() {
        let d = regression_1_to_100();
        let inputs = generate_inputs(
            &d,
            1,
            5,
            Strategy::Extreme,
            &ImbalanceSpec::default(),
            &[0],
            &mut rng(2),
        )
        .unwrap();
        // Row 99 holds target 100, the farthest from the median.
        assert!(inputs[0].d2.contains(99));
    }

    #[test]
    fn minority_strategy_stays_inside_minority() {
        let d = regression_1_to_100();
        let spec = ImbalanceSpec::default();
        let (minority, _) = split_minority(&d, &spec).unwrap();
        let minority: std::collections::BTreeSet<usize> = minority.into_iter().collect();
        let inputs =
            generate_inputs(&d, 2, 20, Strategy::Minority, &spec, &[0], &mut rng(3)).unwrap();
        for c in &inputs {
            for ix in c.d2.removed() {
                assert!(minority.contains(&ix), "row {ix} is not minority");
            }
        }
    }

    #[test]
    fn mixed_strategy_dedups() {
        let d = regression_1_to_100();
        let inputs = generate_inputs(
            &d,
            1,
            30,
            Strategy::Mixed,
            &ImbalanceSpec::default(),
            &[0],
            &mut rng(4),
        )
        .unwrap();
        let specs: std::collections::BTreeSet<_> = inputs.iter().map(|c| c.d2.clone()).collect();
        assert_eq!(specs.len(), inputs.len());
    }

    #[test]
    fn oversized_k_errors() {
        let d = regression_1_to_100();
        assert!(generate_inputs(
            &d,
            100,
            5,
            Strategy::Random,
            &ImbalanceSpec::default(),
            &[0],
            &mut rng(5),
        )
        .is_err());
    }

    #[test]
    fn reference_inputs_shape() {
        let inputs = reference_inputs(8, 2, 3);
        assert_eq!(inputs.len(), 3);
        assert!(inputs[0].d2.contains(0) && inputs[0].d2.contains(1));
        assert!(inputs[2].d2.contains(2) && inputs[2].d2.contains(3));
    }

    #[test]
    fn boundary_rows_selected_for_classification() {
        // Two blobs at 0 and 10 plus rows near the midline at 5.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            rows.push(vec![i as f64 * 0.1]);
            labels.push(0);
            rows.push(vec![10.0 - i as f64 * 0.1]);
            labels.push(1);
        }
        rows.push(vec![4.9]);
        labels.push(0);
        rows.push(vec![5.1]);
        labels.push(1);
        let d = Dataset::from_rows(
            rows,
            Targets::Labels {
                values: labels,
                n_classes: 2,
            },
            vec![],
            "y".into(),
        )
        .unwrap();
        let trainer = trainer_from_name("gaussian-nb", TrainConfig::default()).unwrap();
        let picked = select_test_points(&d, &*trainer, 2, 10, &mut rng(6)).unwrap();
        // The two rows closest to the midline between the blobs.
        assert_eq!(picked, vec![20, 21]);
    }

    #[test]
    fn full_batch_returns_all_rows_by_score() {
        let d = regression_1_to_100();
        let trainer = trainer_from_name("linreg", TrainConfig::default()).unwrap();
        let picked =
            select_test_points(&d, &*trainer, d.n_rows(), 5, &mut rng(7)).unwrap();
        assert_eq!(picked.len(), 100);
        let unique: std::collections::BTreeSet<_> = picked.iter().collect();
        assert_eq!(unique.len(), 100);
    }

    #[test]
    fn batch_larger_than_dataset_errors() {
        let d = regression_1_to_100();
        let trainer = trainer_from_name("linreg", TrainConfig::default()).unwrap();
        assert!(select_test_points(&d, &*trainer, 101, 5, &mut rng(8)).is_err());
    }

    #[test]
    fn selection_is_deterministic() {
        let d = regression_1_to_100();
        let trainer = trainer_from_name("linreg", TrainConfig::default()).unwrap();
        let a = select_test_points(&d, &*trainer, 3, 8, &mut rng(9)).unwrap();
        let b = select_test_points(&d, &*trainer, 3, 8, &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }
}
