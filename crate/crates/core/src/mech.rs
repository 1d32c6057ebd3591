//! Randomized mechanisms under audit: the common trait, the Laplace
//! primitive, and reference mechanisms with analytically known privacy
//! levels (correct, tight, and deliberately broken) used to calibrate
//! the detector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::AdjacencySpec;

#[derive(Debug, Error)]
pub enum MechError {
    #[error("laplace scale must be positive, got {0}")]
    BadScale(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("infeasible bernoulli pair: e^{epsilon} * {p0} exceeds 1")]
    InfeasiblePair { epsilon: f64, p0: f64 },
    #[error("adjacency index {index} out of range for database of {len} entries")]
    BadAdjacency { index: usize, len: usize },
    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

/// One mechanism output: a label vector (classification) or a real
/// vector (regression / scalar queries).
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Labels(Vec<usize>),
    Values(Vec<f64>),
}

/// Kind of output a mechanism produces; fixed per mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputKind {
    Labels,
    Values,
}

/// A randomized procedure run repeatedly on a pair of adjacent inputs.
/// The adjacency spec selects the input variant: the empty spec is the
/// base input, a non-empty spec identifies the removed/flipped group.
pub trait Mechanism: Send + Sync {
    fn run(&self, spec: &AdjacencySpec, args: &[usize], rng: &mut ChaCha8Rng)
        -> Result<Output, MechError>;
    fn output_kind(&self) -> OutputKind;
    fn claimed_epsilon(&self) -> f64;
}

/// Laplace(0, scale) inverse CDF at u in (0, 1).
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    let centered = u - 0.5;
    let inner = 1.0 - 2.0 * centered.abs();
    // Guard the open-interval endpoints: ln(0) would yield an infinity.
    let inner = inner.max(f64::MIN_POSITIVE);
    -scale * centered.signum() * inner.ln()
}

/// Laplace(0, scale) CDF, used by calibration oracles.
pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// Draw Laplace(0, scale) noise by inverse-CDF sampling, so a fixed rng
/// stream gives bit-reproducible outputs.
pub fn laplace_noise(scale: f64, rng: &mut ChaCha8Rng) -> Result<f64, MechError> {
    if !(scale > 0.0) {
        return Err(MechError::BadScale(scale));
    }
    Ok(laplace_inverse_cdf(rng.random::<f64>(), scale))
}

/// Laplace-noised population count over a bit vector. Exactly eps-DP for
/// single-entry adjacency and k*eps-DP for k-entry groups.
pub struct NoisyCount {
    base: Vec<bool>,
    scale: f64,
    claimed: f64,
}

impl NoisyCount {
    /// Correctly calibrated: noise scale 1/eps.
    pub fn correct(db: Vec<bool>, epsilon: f64) -> Result<Self, MechError> {
        if !(epsilon > 0.0) {
            return Err(MechError::BadEpsilon(epsilon));
        }
        Ok(NoisyCount {
            base: db,
            scale: 1.0 / epsilon,
            claimed: epsilon,
        })
    }

    /// Known violator: noise scale halved, so the true privacy level is
    /// exactly twice the claimed epsilon.
    pub fn broken(db: Vec<bool>, claimed_epsilon: f64) -> Result<Self, MechError> {
        if !(claimed_epsilon > 0.0) {
            return Err(MechError::BadEpsilon(claimed_epsilon));
        }
        Ok(NoisyCount {
            base: db,
            scale: 1.0 / (2.0 * claimed_epsilon),
            claimed: claimed_epsilon,
        })
    }

    /// Count of ones after flipping the spec's entries.
    fn count(&self, spec: &AdjacencySpec) -> Result<f64, MechError> {
        let mut count = self.base.iter().filter(|&&b| b).count() as i64;
        for ix in spec.removed() {
            if ix >= self.base.len() {
                return Err(MechError::BadAdjacency {
                    index: ix,
                    len: self.base.len(),
                });
            }
            count += if self.base[ix] { -1 } else { 1 };
        }
        Ok(count as f64)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Mechanism for NoisyCount {
    fn run(
        &self,
        spec: &AdjacencySpec,
        _args: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Output, MechError> {
        let count = self.count(spec)?;
        let noise = laplace_noise(self.scale, rng)?;
        Ok(Output::Values(vec![count + noise]))
    }

    fn output_kind(&self) -> OutputKind {
        OutputKind::Values
    }

    fn claimed_epsilon(&self) -> f64 {
        self.claimed
    }
}

/// Tight calibration mechanism: P(1 | base) = p0 and
/// P(1 | modified) = e^epsilon_true * p0, so the exact privacy level on
/// the event {output = 1} is epsilon_true.
pub struct BernoulliPair {
    p_base: f64,
    p_modified: f64,
    epsilon_true: f64,
}

impl BernoulliPair {
    pub fn new(epsilon_true: f64, p0: f64) -> Result<Self, MechError> {
        if epsilon_true < 0.0 {
            return Err(MechError::BadEpsilon(epsilon_true));
        }
        let p_modified = epsilon_true.exp() * p0;
        if !(0.0..=1.0).contains(&p0) || p_modified > 1.0 {
            return Err(MechError::InfeasiblePair {
                epsilon: epsilon_true,
                p0,
            });
        }
        Ok(BernoulliPair {
            p_base: p0,
            p_modified,
            epsilon_true,
        })
    }

    pub fn probabilities(&self) -> (f64, f64) {
        (self.p_base, self.p_modified)
    }
}

impl Mechanism for BernoulliPair {
    fn run(
        &self,
        spec: &AdjacencySpec,
        _args: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Output, MechError> {
        let p = if spec.is_full() {
            self.p_base
        } else {
            self.p_modified
        };
        let bit = usize::from(rng.random::<f64>() < p);
        Ok(Output::Labels(vec![bit]))
    }

    fn output_kind(&self) -> OutputKind {
        OutputKind::Labels
    }

    fn claimed_epsilon(&self) -> f64 {
        self.epsilon_true
    }
}
