//! Exact small-sample statistics backing the hypothesis test: one-sided
//! Fisher exact test, binomial thinning, and the composed DP p-value.
//!
//! The null hypothesis P(M(D1) in E) <= e^eps * P(M(D2) in E) is reduced
//! to an equality null by thinning the first count with keep probability
//! e^(-eps), then applying the one-sided Fisher exact test and averaging
//! over Monte-Carlo thinnings.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("{name} out of range: {value} (limit {limit})")]
    OutOfRange {
        name: &'static str,
        value: u64,
        limit: u64,
    },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
}

/// Event-membership counts from paired mechanism runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountPair {
    /// Runs with M(D1) in E.
    pub c1: u64,
    /// Runs with M(D2) in E.
    pub c2: u64,
    /// Iterations per side.
    pub n: u64,
}

impl CountPair {
    pub fn new(c1: u64, c2: u64, n: u64) -> Self {
        assert!(n >= 1 && c1 <= n && c2 <= n, "counts must lie within totals");
        CountPair { c1, c2, n }
    }

    /// The same counts with the dataset roles exchanged.
    pub fn swapped(self) -> Self {
        CountPair {
            c1: self.c2,
            c2: self.c1,
            n: self.n,
        }
    }
}

/// A p-value together with the number of Monte-Carlo thinnings averaged.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PValue {
    pub value: f64,
    pub mc_draws: u32,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos, g = 7, 9 terms),
/// accurate to ~1e-15 relative for the x >= 0.5 range used here.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Hypergeometric pmf: probability of drawing `k` marked items in `n`
/// draws without replacement from a population of `big_n` items of which
/// `big_k` are marked.
pub fn hypergeometric_pmf(k: u64, big_k: u64, n: u64, big_n: u64) -> Result<f64, StatsError> {
    if big_k > big_n {
        return Err(StatsError::OutOfRange {
            name: "big_k",
            value: big_k,
            limit: big_n,
        });
    }
    if n > big_n {
        return Err(StatsError::OutOfRange {
            name: "n",
            value: n,
            limit: big_n,
        });
    }
    let lo = big_k.saturating_sub(big_n - n);
    let hi = big_k.min(n);
    if k < lo || k > hi {
        return Ok(0.0);
    }
    let ln_p = ln_choose(big_k, k) + ln_choose(big_n - big_k, n - k) - ln_choose(big_n, n);
    Ok(ln_p.exp())
}

/// Ratio pmf(k+1)/pmf(k) for the hypergeometric walk.
fn step_up_ratio(k: u64, big_k: u64, n: u64, big_n: u64) -> f64 {
    // big_n - big_k - n + k + 1 >= 1 on the support; group to avoid
    // intermediate u64 underflow.
    let num = (big_k - k) as f64 * (n - k) as f64;
    let den = (k + 1) as f64 * ((big_n + k + 1) - (big_k + n)) as f64;
    num / den
}

/// Ratio pmf(k-1)/pmf(k) for the downward walk.
fn step_down_ratio(k: u64, big_k: u64, n: u64, big_n: u64) -> f64 {
    let num = k as f64 * ((big_n + k) - (big_k + n)) as f64;
    let den = (big_k - k + 1) as f64 * (n - k + 1) as f64;
    num / den
}

/// Sum pmf(k) for k from `start` walking in one direction until the
/// remaining mass is provably negligible. `hi`/`lo` bound the support.
fn tail_sum(start: u64, lo: u64, hi: u64, big_k: u64, n: u64, big_n: u64, upward: bool) -> f64 {
    let mut term = hypergeometric_pmf(start, big_k, n, big_n).expect("validated support");
    let mut acc = term;
    let mut k = start;
    loop {
        let done = if upward { k >= hi } else { k <= lo };
        if done || term == 0.0 {
            break;
        }
        let ratio = if upward {
            step_up_ratio(k, big_k, n, big_n)
        } else {
            step_down_ratio(k, big_k, n, big_n)
        };
        term *= ratio;
        k = if upward { k + 1 } else { k - 1 };
        acc += term;
        // Once the walk is in the decaying regime the ratios shrink
        // monotonically, so the remaining mass is below term*r/(1-r).
        if ratio < 1.0 && term * ratio / (1.0 - ratio) < acc * 1e-17 {
            break;
        }
    }
    acc
}

/// One-sided Fisher exact test: probability, under the equal-rate null
/// conditioned on the table margins, of a first-group success count at
/// least as large as the observed `c1`. Exact, no asymptotics.
pub fn fisher_one_sided(c1: u64, n1: u64, c2: u64, n2: u64) -> PValue {
    assert!(c1 <= n1 && c2 <= n2, "counts must lie within totals");
    let big_n = n1 + n2;
    let big_k = c1 + c2;
    let lo = big_k.saturating_sub(n2);
    let hi = big_k.min(n1);
    if c1 <= lo {
        return PValue {
            value: 1.0,
            mc_draws: 1,
        };
    }
    // Mode of the hypergeometric; pick the summation direction that keeps
    // every term representable.
    let mode = (((n1 + 1) as u128 * (big_k + 1) as u128) / (big_n + 2) as u128) as u64;
    let value = if c1 > mode {
        tail_sum(c1, lo, hi, big_k, n1, big_n, true)
    } else {
        1.0 - tail_sum(c1 - 1, lo, hi, big_k, n1, big_n, false)
    };
    PValue {
        value: value.clamp(0.0, 1.0),
        mc_draws: 1,
    }
}

/// Exact binomial draw as a sum of Bernoulli trials. Consumes exactly
/// `trials` uniforms, so draws at different success probabilities from
/// identically seeded streams are monotonically coupled.
pub fn binomial_sample(trials: u64, p: f64, rng: &mut ChaCha8Rng) -> Result<u64, StatsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(StatsError::BadProbability(p));
    }
    let mut count = 0;
    for _ in 0..trials {
        if rng.random::<f64>() < p {
            count += 1;
        }
    }
    Ok(count)
}

/// Thin a count with keep probability e^(-epsilon), reducing the
/// inflated null P1 <= e^eps * P2 to an equality null.
pub fn subsample_count(c1: u64, epsilon: f64, rng: &mut ChaCha8Rng) -> u64 {
    assert!(epsilon >= 0.0, "epsilon must be non-negative");
    binomial_sample(c1, (-epsilon).exp(), rng).expect("keep probability in [0,1]")
}

/// Composed test p-value: average over `mc_draws` thinnings of the
/// one-sided Fisher p-value for (thinned c1, c2). Deterministic given
/// the rng state.
pub fn dp_test_pvalue(
    counts: CountPair,
    epsilon: f64,
    mc_draws: u32,
    rng: &mut ChaCha8Rng,
) -> PValue {
    assert!(mc_draws >= 1, "mc_draws must be at least 1");
    // Fisher p depends only on the thinned count; memoize per value.
    let mut cache: Vec<Option<f64>> = vec![None; counts.c1 as usize + 1];
    let mut acc = 0.0;
    for _ in 0..mc_draws {
        let thinned = subsample_count(counts.c1, epsilon, rng);
        let p = *cache[thinned as usize].get_or_insert_with(|| {
            fisher_one_sided(thinned, counts.n, counts.c2, counts.n).value
        });
        acc += p;
    }
    PValue {
        value: acc / mc_draws as f64,
        mc_draws,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Exact u128 binomial coefficients, valid for n <= 128.
    fn choose_exact(n: u64, k: u64) -> u128 {
        let mut row = vec![0u128; k as usize + 1];
        row[0] = 1;
        for _ in 0..n {
            for j in (1..row.len()).rev() {
                row[j] += row[j - 1];
            }
        }
        row[k as usize]
    }

    /// Independent oracle: enumerate every fixed-margin table and sum
    /// exact hypergeometric masses of tables with first cell >= c1.
    fn fisher_oracle(c1: u64, n1: u64, c2: u64, n2: u64) -> f64 {
        let big_n = n1 + n2;
        let big_k = c1 + c2;
        let lo = big_k.saturating_sub(n2);
        let hi = big_k.min(n1);
        let mut num = 0u128;
        for j in lo..=hi {
            if j >= c1 {
                num += choose_exact(big_k, j) * choose_exact(big_n - big_k, n1 - j);
            }
        }
        num as f64 / (choose_exact(big_n, n1) as f64)
    }

    #[test]
    fn upper_tail_from_zero_is_one() {
        for k in 0..=10 {
            assert_eq!(fisher_one_sided(0, 10, k, 10).value, 1.0);
        }
    }

    #[test]
    fn single_most_extreme_table() {
        let p = fisher_one_sided(10, 10, 0, 10).value;
        let expected = 1.0 / choose_exact(20, 10) as f64;
        assert!((p - expected).abs() < 1e-15, "p={p} expected={expected}");
    }

    #[test]
    fn derived_table_matches_enumeration_oracle() {
        let p = fisher_one_sided(3, 5, 1, 5).value;
        assert!((p - fisher_oracle(3, 5, 1, 5)).abs() < 1e-12);
    }

    #[test]
    fn fisher_matches_oracle_on_larger_tables() {
        for &(c1, n1, c2, n2) in &[
            (40u64, 64u64, 12u64, 64u64),
            (5, 64, 60, 64),
            (33, 60, 31, 64),
            (0, 30, 30, 30),
            (17, 40, 17, 40),
        ] {
            let p = fisher_one_sided(c1, n1, c2, n2).value;
            let oracle = fisher_oracle(c1, n1, c2, n2);
            assert!(
                (p - oracle).abs() <= 1e-12,
                "({c1},{n1},{c2},{n2}): {p} vs {oracle}"
            );
        }
    }

    #[test]
    fn pmf_normalizes() {
        let (big_k, n, big_n) = (12u64, 20u64, 50u64);
        let lo = big_k.saturating_sub(big_n - n);
        let hi = big_k.min(n);
        let total: f64 = (lo..=hi)
            .map(|k| hypergeometric_pmf(k, big_k, n, big_n).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pmf_direct_value() {
        // C(5,2)*C(5,3)/C(10,5) = 100/252
        let p = hypergeometric_pmf(2, 5, 5, 10).unwrap();
        assert!((p - 100.0 / 252.0).abs() < 1e-14);
    }

    #[test]
    fn pmf_rejects_bad_parameters() {
        assert!(hypergeometric_pmf(0, 11, 5, 10).is_err());
        assert!(hypergeometric_pmf(0, 5, 11, 10).is_err());
        assert_eq!(hypergeometric_pmf(9, 5, 5, 10), Ok(0.0));
    }

    #[test]
    fn binomial_edge_probabilities() {
        let mut r = rng(1);
        assert_eq!(binomial_sample(25, 1.0, &mut r).unwrap(), 25);
        assert_eq!(binomial_sample(25, 0.0, &mut r).unwrap(), 0);
        assert!(binomial_sample(5, 1.5, &mut r).is_err());
    }

    #[test]
    fn subsample_identity_at_zero_epsilon() {
        let mut r = rng(2);
        assert_eq!(subsample_count(137, 0.0, &mut r), 137);
        assert_eq!(subsample_count(0, 3.0, &mut r), 0);
    }

    #[test]
    fn subsample_mean_tracks_thinning() {
        // c1 = 1000, eps = 1: mean over 1e4 draws within 3 sigma of 1000/e.
        let mut r = rng(3);
        let draws = 10_000u64;
        let total: u64 = (0..draws).map(|_| subsample_count(1000, 1.0, &mut r)).sum();
        let mean = total as f64 / draws as f64;
        let p = (-1.0f64).exp();
        let sigma = (1000.0 * p * (1.0 - p) / draws as f64).sqrt();
        assert!(
            (mean - 1000.0 * p).abs() < 3.0 * sigma,
            "mean={mean}, expected={}",
            1000.0 * p
        );
    }

    #[test]
    fn dp_test_equal_saturated_counts_is_large() {
        for eps in [0.0, 0.5, 2.0] {
            let p = dp_test_pvalue(CountPair::new(50, 50, 50), eps, 100, &mut rng(4));
            assert!(p.value >= 0.5, "eps={eps} p={}", p.value);
        }
    }

    #[test]
    fn dp_test_reduces_to_fisher_at_zero_epsilon() {
        let p = dp_test_pvalue(CountPair::new(30, 11, 40), 0.0, 1, &mut rng(5));
        let direct = fisher_one_sided(30, 40, 11, 40);
        assert_eq!(p.value, direct.value);
    }

    #[test]
    fn dp_test_monotone_in_epsilon() {
        // Same seed per epsilon couples the thinning uniforms, so the
        // averaged p-value is non-decreasing.
        let counts = CountPair::new(310, 120, 400);
        let mut prev = -1.0;
        for i in 0..=20 {
            let eps = i as f64 * 0.15;
            let p = dp_test_pvalue(counts, eps, 500, &mut rng(6));
            assert!(
                p.value >= prev,
                "inversion at eps={eps}: {} < {prev}",
                p.value
            );
            prev = p.value;
        }
    }

    #[test]
    fn dp_test_detects_strong_violation() {
        // counts (900, 100, 1000) at eps = 0.1 must reject decisively.
        let p = dp_test_pvalue(CountPair::new(900, 100, 1000), 0.1, 100, &mut rng(7));
        assert!(p.value < 0.05, "p={}", p.value);
    }

    #[test]
    fn boundary_null_rejection_rate_controlled() {
        // Draw counts at the exact null boundary P1 = e^eps * P2 and check
        // the rejection rate at alpha = 0.05 stays within 0.05 + 0.02.
        let eps: f64 = 0.5;
        let p2 = 0.2;
        let p1 = eps.exp() * p2;
        let n = 1000;
        let trials = 200;
        let mut rejections = 0;
        for t in 0..trials {
            let mut r = rng(1000 + t);
            let c1 = binomial_sample(n, p1, &mut r).unwrap();
            let c2 = binomial_sample(n, p2, &mut r).unwrap();
            let p = dp_test_pvalue(CountPair::new(c1, c2, n), eps, 100, &mut r);
            if p.value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / trials as f64;
        assert!(rate <= 0.07, "rejection rate {rate} above calibration band");
    }

    #[test]
    fn pvalues_stay_in_unit_interval() {
        let mut r = rng(8);
        for _ in 0..200 {
            let n = 1 + (r.random::<u64>() % 60);
            let c1 = r.random::<u64>() % (n + 1);
            let c2 = r.random::<u64>() % (n + 1);
            let eps = (r.random::<f64>() * 3.0).abs();
            let p = dp_test_pvalue(CountPair::new(c1, c2, n), eps, 20, &mut r);
            assert!((0.0..=1.0).contains(&p.value));
        }
    }
}
