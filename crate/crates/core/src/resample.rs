//! Resampling preprocessors for imbalanced regression, applied inside
//! the audited mechanism after adjacency removal and before training.
//!
//! Each method sits behind the `Resampler` trait and is selected by its
//! registered name from the audit config. The ratio is always the
//! post-sampling minority/majority size ratio.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Targets};

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("imbalance split requires a regression dataset")]
    NotRegression,
    #[error("all targets are equal; no imbalance is definable")]
    DegenerateTargets,
    #[error("quantile must lie strictly between 0 and 1, got {0}")]
    BadQuantile(f64),
    #[error("ratio must lie in (0, 1], got {0}")]
    BadRatio(f64),
    #[error("ratio {requested} below the current minority/majority ratio {current}")]
    RatioBelowCurrent { requested: f64, current: f64 },
    #[error("minority class is empty at the configured split")]
    EmptyMinority,
    #[error("smote needs at least two minority rows, found {0}")]
    SingletonMinority(usize),
    #[error("unknown resampling method '{0}' (expected one of {1})")]
    UnknownMethod(String, String),
}

/// Which tail of the target distribution holds the minority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    #[default]
    Upper,
    Lower,
}

/// One-tailed quantile split defining the minority/majority partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImbalanceSpec {
    pub quantile: f64,
    pub tail: Tail,
}

impl Default for ImbalanceSpec {
    fn default() -> Self {
        ImbalanceSpec {
            quantile: 0.9,
            tail: Tail::Upper,
        }
    }
}

/// How SMOTE assigns targets to synthetic rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmoteTarget {
    /// Interpolate the target with the same coefficient as the features.
    #[default]
    Interpolate,
    /// Copy the base row's target verbatim.
    Copy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMethod {
    None,
    RandomOver,
    RandomUnder,
    Smote,
}

impl ResampleMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ResampleMethod::None => "none",
            ResampleMethod::RandomOver => "random-over",
            ResampleMethod::RandomUnder => "random-under",
            ResampleMethod::Smote => "smote",
        }
    }
}

/// Full resampling configuration as read from the audit config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResampleConfig {
    pub method: ResampleMethod,
    /// Target post-sampling minority/majority size ratio.
    pub ratio: f64,
    /// Neighbor count for SMOTE, clamped to |minority| - 1.
    pub k_neighbors: usize,
    pub quantile: f64,
    pub tail: Tail,
    pub smote_target: SmoteTarget,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        ResampleConfig {
            method: ResampleMethod::None,
            ratio: 1.0,
            k_neighbors: 5,
            quantile: 0.9,
            tail: Tail::Upper,
            smote_target: SmoteTarget::Interpolate,
        }
    }
}

impl ResampleConfig {
    pub fn imbalance(&self) -> ImbalanceSpec {
        ImbalanceSpec {
            quantile: self.quantile,
            tail: self.tail,
        }
    }
}

/// Linear-interpolation quantile of the sorted values.
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Partition rows into (minority, majority) index lists. The minority is
/// the set of rows whose target lies strictly beyond the interpolated
/// quantile threshold on the chosen tail.
pub fn split_minority(
    d: &Dataset,
    spec: &ImbalanceSpec,
) -> Result<(Vec<usize>, Vec<usize>), ResampleError> {
    if !(0.0 < spec.quantile && spec.quantile < 1.0) {
        return Err(ResampleError::BadQuantile(spec.quantile));
    }
    let targets = match d.targets() {
        Targets::Values(v) => v,
        Targets::Labels { .. } => return Err(ResampleError::NotRegression),
    };
    let mut sorted = targets.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.first() == sorted.last() {
        return Err(ResampleError::DegenerateTargets);
    }
    let q = match spec.tail {
        Tail::Upper => spec.quantile,
        Tail::Lower => 1.0 - spec.quantile,
    };
    let threshold = interpolated_quantile(&sorted, q);
    let mut minority = Vec::new();
    let mut majority = Vec::new();
    for (i, &t) in targets.iter().enumerate() {
        let is_minority = match spec.tail {
            Tail::Upper => t > threshold,
            Tail::Lower => t < threshold,
        };
        if is_minority {
            minority.push(i);
        } else {
            majority.push(i);
        }
    }
    Ok((minority, majority))
}

/// A named resampling strategy operating on a full dataset.
pub trait Resampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn resample(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset, ResampleError>;
}

/// Registered method names.
pub fn method_names() -> &'static [&'static str] {
    &["none", "random-over", "random-under", "smote"]
}

/// Look up a resampler by its registered name.
pub fn resampler_from_name(
    name: &str,
    cfg: &ResampleConfig,
) -> Result<Box<dyn Resampler>, ResampleError> {
    let method = match name {
        "none" => ResampleMethod::None,
        "random-over" => ResampleMethod::RandomOver,
        "random-under" => ResampleMethod::RandomUnder,
        "smote" => ResampleMethod::Smote,
        other => {
            return Err(ResampleError::UnknownMethod(
                other.to_string(),
                method_names().join(", "),
            ))
        }
    };
    resampler_from_config(&ResampleConfig {
        method,
        ..cfg.clone()
    })
}

/// Build the configured resampler.
pub fn resampler_from_config(
    cfg: &ResampleConfig,
) -> Result<Box<dyn Resampler>, ResampleError> {
    if !(0.0 < cfg.ratio && cfg.ratio <= 1.0) {
        return Err(ResampleError::BadRatio(cfg.ratio));
    }
    Ok(match cfg.method {
        ResampleMethod::None => Box::new(Identity),
        ResampleMethod::RandomOver => Box::new(RandomOver { cfg: cfg.clone() }),
        ResampleMethod::RandomUnder => Box::new(RandomUnder { cfg: cfg.clone() }),
        ResampleMethod::Smote => Box::new(Smote { cfg: cfg.clone() }),
    })
}

struct Identity;

impl Resampler for Identity {
    fn name(&self) -> &'static str {
        "none"
    }

    fn resample(&self, d: &Dataset, _rng: &mut ChaCha8Rng) -> Result<Dataset, ResampleError> {
        Ok(d.clone())
    }
}

fn rebuild(d: &Dataset, keep: &[usize], extra: Vec<(Vec<f64>, f64)>) -> Dataset {
    let values = match d.targets() {
        Targets::Values(v) => v,
        Targets::Labels { .. } => unreachable!("resampling is regression-only"),
    };
    let mut rows: Vec<Vec<f64>> = keep.iter().map(|&i| d.row(i).to_vec()).collect();
    let mut targets: Vec<f64> = keep.iter().map(|&i| values[i]).collect();
    for (row, t) in extra {
        rows.push(row);
        targets.push(t);
    }
    let rebuilt = Dataset::from_rows(
        rows,
        Targets::Values(targets),
        d.feature_names().to_vec(),
        d.target_name().to_string(),
    )
    .expect("resampled dataset is non-empty");
    // Bounds describe the original full dataset, not the resample.
    rebuilt.inherit_bounds(d)
}

fn check_ratio(
    cfg: &ResampleConfig,
    n_minority: usize,
    n_majority: usize,
) -> Result<f64, ResampleError> {
    if !(0.0 < cfg.ratio && cfg.ratio <= 1.0) {
        return Err(ResampleError::BadRatio(cfg.ratio));
    }
    if n_minority == 0 {
        return Err(ResampleError::EmptyMinority);
    }
    let current = n_minority as f64 / n_majority as f64;
    if cfg.ratio < current - 1e-12 {
        return Err(ResampleError::RatioBelowCurrent {
            requested: cfg.ratio,
            current,
        });
    }
    Ok(current)
}

struct RandomOver {
    cfg: ResampleConfig,
}

impl Resampler for RandomOver {
    fn name(&self) -> &'static str {
        "random-over"
    }

    fn resample(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset, ResampleError> {
        let (minority, majority) = split_minority(d, &self.cfg.imbalance())?;
        check_ratio(&self.cfg, minority.len(), majority.len())?;
        let target_count = (self.cfg.ratio * majority.len() as f64).round() as usize;
        let n_new = target_count.saturating_sub(minority.len());
        let values = match d.targets() {
            Targets::Values(v) => v,
            _ => unreachable!(),
        };
        let keep: Vec<usize> = (0..d.n_rows()).collect();
        let mut extra = Vec::with_capacity(n_new);
        for _ in 0..n_new {
            let pick = minority[rng.random_range(0..minority.len())];
            extra.push((d.row(pick).to_vec(), values[pick]));
        }
        Ok(rebuild(d, &keep, extra))
    }
}

struct RandomUnder {
    cfg: ResampleConfig,
}

impl Resampler for RandomUnder {
    fn name(&self) -> &'static str {
        "random-under"
    }

    fn resample(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset, ResampleError> {
        let (minority, majority) = split_minority(d, &self.cfg.imbalance())?;
        check_ratio(&self.cfg, minority.len(), majority.len())?;
        let target_majority =
            ((minority.len() as f64 / self.cfg.ratio).round() as usize).min(majority.len());
        // Partial Fisher-Yates over the majority to draw without
        // replacement, then restore original row order.
        let mut pool = majority.clone();
        for i in 0..target_majority {
            let j = i + rng.random_range(0..pool.len() - i);
            pool.swap(i, j);
        }
        let mut survivors: Vec<usize> = pool[..target_majority].to_vec();
        survivors.extend_from_slice(&minority);
        survivors.sort_unstable();
        Ok(rebuild(d, &survivors, Vec::new()))
    }
}

struct Smote {
    cfg: ResampleConfig,
}

impl Smote {
    /// k nearest minority neighbors per minority row, exact O(n^2)
    /// Euclidean scan with ties broken by lower row index.
    fn neighbors(d: &Dataset, minority: &[usize], k: usize) -> Vec<Vec<usize>> {
        minority
            .iter()
            .map(|&a| {
                let mut dists: Vec<(f64, usize)> = minority
                    .iter()
                    .filter(|&&b| b != a)
                    .map(|&b| {
                        let dist: f64 = d
                            .row(a)
                            .iter()
                            .zip(d.row(b))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        (dist, b)
                    })
                    .collect();
                dists.sort_by(|(da, ia), (db, ib)| {
                    da.partial_cmp(db).unwrap().then(ia.cmp(ib))
                });
                dists.truncate(k);
                dists.into_iter().map(|(_, ix)| ix).collect()
            })
            .collect()
    }
}

impl Resampler for Smote {
    fn name(&self) -> &'static str {
        "smote"
    }

    fn resample(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset, ResampleError> {
        let (minority, majority) = split_minority(d, &self.cfg.imbalance())?;
        check_ratio(&self.cfg, minority.len(), majority.len())?;
        if minority.len() < 2 {
            return Err(ResampleError::SingletonMinority(minority.len()));
        }
        let k = self.cfg.k_neighbors.max(1).min(minority.len() - 1);
        let neighbor_table = Self::neighbors(d, &minority, k);
        let values = match d.targets() {
            Targets::Values(v) => v,
            _ => unreachable!(),
        };

        let target_count = (self.cfg.ratio * majority.len() as f64).round() as usize;
        let n_new = target_count.saturating_sub(minority.len());
        let keep: Vec<usize> = (0..d.n_rows()).collect();
        let mut extra = Vec::with_capacity(n_new);
        for _ in 0..n_new {
            let base_ix = rng.random_range(0..minority.len());
            let base = minority[base_ix];
            let nn = neighbor_table[base_ix][rng.random_range(0..k)];
            let u: f64 = rng.random();
            let row: Vec<f64> = d
                .row(base)
                .iter()
                .zip(d.row(nn))
                .map(|(x, xn)| x + u * (xn - x))
                .collect();
            let t = match self.cfg.smote_target {
                SmoteTarget::Interpolate => values[base] + u * (values[nn] - values[base]),
                SmoteTarget::Copy => values[base],
            };
            extra.push((row, t));
        }
        Ok(rebuild(d, &keep, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// 10/90-style data: 90 rows with small targets, 10 with large.
    fn imbalanced(n_major: usize, n_minor: usize) -> Dataset {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n_major {
            rows.push(vec![i as f64 * 0.01, 1.0]);
            ys.push(i as f64 * 0.001);
        }
        for i in 0..n_minor {
            rows.push(vec![10.0 + i as f64 * 0.1, 2.0]);
            ys.push(100.0 + i as f64);
        }
        Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap()
    }

    /// Count rows against the original partition threshold; re-splitting
    /// the resampled data would move the quantile.
    fn counts(d: &Dataset, threshold: f64) -> (usize, usize) {
        let minority = (0..d.n_rows()).filter(|&i| d.value(i) > threshold).count();
        (minority, d.n_rows() - minority)
    }

    #[test]
    fn order_statistics_split() {
        let rows: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let d = Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap();
        let (minority, majority) =
            split_minority(&d, &ImbalanceSpec::default()).unwrap();
        // Threshold is 90.1; the top ten rows (targets 91..=100) are minority.
        assert_eq!(minority.len(), 10);
        assert_eq!(majority.len(), 90);
        assert!(minority.iter().all(|&i| d.value(i) > 90.1));
    }

    #[test]
    fn median_split_is_half() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let d = Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap();
        let spec = ImbalanceSpec {
            quantile: 0.5,
            tail: Tail::Upper,
        };
        let (minority, majority) = split_minority(&d, &spec).unwrap();
        assert!((minority.len() as i64 - 50).abs() <= 1);
        assert_eq!(minority.len() + majority.len(), 100);
    }

    #[test]
    fn lower_tail_split() {
        let rows: Vec<Vec<f64>> = (1..=100).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let d = Dataset::from_rows(rows, Targets::Values(ys), vec![], "y".into()).unwrap();
        let spec = ImbalanceSpec {
            quantile: 0.9,
            tail: Tail::Lower,
        };
        let (minority, _) = split_minority(&d, &spec).unwrap();
        assert_eq!(minority.len(), 10);
        assert!(minority.iter().all(|&i| d.value(i) < 10.9));
    }

    #[test]
    fn degenerate_targets_error() {
        let d = Dataset::from_rows(
            vec![vec![1.0], vec![2.0]],
            Targets::Values(vec![5.0, 5.0]),
            vec![],
            "y".into(),
        )
        .unwrap();
        assert!(matches!(
            split_minority(&d, &ImbalanceSpec::default()),
            Err(ResampleError::DegenerateTargets)
        ));
    }

    #[test]
    fn oversample_reaches_target_ratio() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomOver,
            ratio: 0.5,
            ..Default::default()
        };
        let r = resampler_from_config(&cfg).unwrap();
        let out = r.resample(&d, &mut rng(1)).unwrap();
        assert_eq!(out.n_rows(), 135);
        assert_eq!(counts(&out, 50.0), (45, 90));
    }

    #[test]
    fn oversample_at_current_ratio_is_identity() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomOver,
            ratio: 10.0 / 90.0,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(2))
            .unwrap();
        assert_eq!(out.n_rows(), 100);
    }

    #[test]
    fn oversample_appends_exact_copies() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomOver,
            ratio: 0.4,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(3))
            .unwrap();
        let originals: Vec<&[f64]> = (90..100).map(|i| d.row(i)).collect();
        for i in 100..out.n_rows() {
            assert!(
                originals.iter().any(|r| *r == out.row(i)),
                "appended row {i} is not a minority copy"
            );
        }
        // Majority rows untouched, in place.
        for i in 0..90 {
            assert_eq!(out.row(i), d.row(i));
        }
    }

    #[test]
    fn oversample_rejects_ratio_below_current() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomOver,
            ratio: 0.05,
            ..Default::default()
        };
        assert!(matches!(
            resampler_from_config(&cfg).unwrap().resample(&d, &mut rng(4)),
            Err(ResampleError::RatioBelowCurrent { .. })
        ));
    }

    #[test]
    fn undersample_shrinks_majority() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomUnder,
            ratio: 0.5,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(5))
            .unwrap();
        assert_eq!(out.n_rows(), 30);
        assert_eq!(counts(&out, 50.0), (10, 20));
    }

    #[test]
    fn undersample_survivors_are_unique_subset() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::RandomUnder,
            ratio: 0.25,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(6))
            .unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..out.n_rows() {
            let row = out.row(i);
            let found = (0..d.n_rows()).find(|&j| d.row(j) == row).unwrap();
            assert!(seen.insert(found), "row {found} appears twice");
        }
    }

    #[test]
    fn smote_segment_membership_two_points() {
        let d = Dataset::from_rows(
            vec![
                vec![0.0, 0.0],
                vec![0.1, 0.0],
                vec![0.2, 0.0],
                vec![0.0, 10.0],
                vec![4.0, 10.0],
            ],
            Targets::Values(vec![0.0, 0.1, 0.2, 100.0, 104.0]),
            vec![],
            "y".into(),
        )
        .unwrap();
        let cfg = ResampleConfig {
            method: ResampleMethod::Smote,
            ratio: 1.0,
            k_neighbors: 1,
            quantile: 0.5,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(7))
            .unwrap();
        // Synthetic rows lie on the segment between the two minority
        // points with targets interpolated by the same coefficient.
        for i in 5..out.n_rows() {
            let row = out.row(i);
            assert_eq!(row[1], 10.0);
            let u = (row[0] - 0.0) / 4.0;
            assert!((0.0..=1.0).contains(&u));
            assert!((out.value(i) - (100.0 + u * 4.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn smote_singleton_minority_errors() {
        let d = imbalanced(9, 1);
        let cfg = ResampleConfig {
            method: ResampleMethod::Smote,
            ratio: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            resampler_from_config(&cfg).unwrap().resample(&d, &mut rng(8)),
            Err(ResampleError::SingletonMinority(1))
        ));
    }

    #[test]
    fn smote_counts_and_bounding_box() {
        let d = imbalanced(90, 10);
        let cfg = ResampleConfig {
            method: ResampleMethod::Smote,
            ratio: 0.75,
            k_neighbors: 3,
            ..Default::default()
        };
        let out = resampler_from_config(&cfg)
            .unwrap()
            .resample(&d, &mut rng(9))
            .unwrap();
        let (n_min, n_maj) = counts(&out, 50.0);
        assert_eq!(n_maj, 90);
        assert!((n_min as i64 - 68).abs() <= 1, "minority {n_min}");
        // All synthetic features inside the minority bounding box.
        for i in 100..out.n_rows() {
            let x = out.row(i)[0];
            assert!((10.0..=10.9).contains(&x));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let d = imbalanced(90, 10);
        for method in [
            ResampleMethod::RandomOver,
            ResampleMethod::RandomUnder,
            ResampleMethod::Smote,
        ] {
            let cfg = ResampleConfig {
                method,
                ratio: 0.5,
                ..Default::default()
            };
            let r = resampler_from_config(&cfg).unwrap();
            let a = r.resample(&d, &mut rng(10)).unwrap();
            let b = r.resample(&d, &mut rng(10)).unwrap();
            assert_eq!(a, b, "{method:?} not reproducible");
        }
    }

    #[test]
    fn registry_rejects_unknown_names() {
        assert!(matches!(
            resampler_from_name("smogn", &ResampleConfig::default()),
            Err(ResampleError::UnknownMethod(..))
        ));
        for name in method_names() {
            assert!(resampler_from_name(name, &ResampleConfig::default()).is_ok());
        }
    }
}
