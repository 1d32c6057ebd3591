//! The counterexample generator adapted to ML pipelines: candidate
//! adjacent-input generation, high-power event selection, the two-sided
//! hypothesis test, and the epsilon sweep that produces the measured
//! privacy level.

mod events;
mod inputs;
mod sweep;

pub use events::{enumerate_events, select_event};
pub use inputs::{generate_inputs, reference_inputs, select_test_points, Strategy};
pub use sweep::{
    audit_ml_pipeline, epsilon_sweep, run_hypothesis_test, FixedInputs, InputProvider,
    MlAuditOptions, MlInputProvider, PipelineMech,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::AdjacencySpec;
use crate::mech::Output;
use crate::stats::PValue;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid sweep settings: {0}")]
    BadSettings(String),
    #[error("invalid input generation: {0}")]
    BadInputs(String),
    #[error("candidate input list is empty")]
    EmptyInputs,
    #[error("at epsilon={epsilon}: {source}")]
    AtEpsilon {
        epsilon: f64,
        #[source]
        source: Box<DetectError>,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Mechanism(#[from] crate::mech::MechError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Resample(#[from] crate::resample::ResampleError),
}

impl DetectError {
    pub(crate) fn at_epsilon(self, epsilon: f64) -> DetectError {
        DetectError::AtEpsilon {
            epsilon,
            source: Box::new(self),
        }
    }
}

/// One candidate counterexample input: a pair of adjacent dataset
/// variants plus the test-row batch handed to the mechanism.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateInput {
    pub d1: AdjacencySpec,
    pub d2: AdjacencySpec,
    pub args: Vec<usize>,
}

impl CandidateInput {
    pub fn new(d1: AdjacencySpec, d2: AdjacencySpec, args: Vec<usize>) -> Self {
        assert_ne!(d1, d2, "candidate sides must differ");
        assert!(!args.is_empty(), "args must be non-empty");
        CandidateInput { d1, d2, args }
    }

    /// The same candidate with the dataset roles exchanged.
    pub fn swapped(&self) -> Self {
        CandidateInput {
            d1: self.d2.clone(),
            d2: self.d1.clone(),
            args: self.args.clone(),
        }
    }
}

impl std::fmt::Display for CandidateInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let ids: Vec<String> = self.args.iter().map(|a| a.to_string()).collect();
        write!(f, "{} vs {}; args [{}]", self.d1, self.d2, ids.join(","))
    }
}

/// Direction of a one-sided interval constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Lt,
    Ge,
}

/// A measurable subset of the mechanism's output space: a per-position
/// label pattern with wildcards, or a conjunction of half-open interval
/// constraints over output positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Event {
    LabelPattern(Vec<Option<usize>>),
    Intervals(Vec<(usize, Orientation, f64)>),
}

impl Event {
    /// Pure membership predicate over one mechanism output.
    pub fn matches(&self, output: &Output) -> bool {
        match (self, output) {
            (Event::LabelPattern(pattern), Output::Labels(labels)) => pattern
                .iter()
                .zip(labels)
                .all(|(want, got)| want.is_none_or(|w| w == *got)),
            (Event::Intervals(constraints), Output::Values(values)) => {
                constraints.iter().all(|(pos, orient, threshold)| {
                    let v = values[*pos];
                    match orient {
                        Orientation::Lt => v < *threshold,
                        Orientation::Ge => v >= *threshold,
                    }
                })
            }
            _ => false,
        }
    }

    /// Number of constrained positions; always at least one.
    pub fn arity(&self) -> usize {
        match self {
            Event::LabelPattern(p) => p.iter().filter(|c| c.is_some()).count(),
            Event::Intervals(c) => c.len(),
        }
    }
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Event::LabelPattern(pattern) => {
                let parts: Vec<String> = pattern
                    .iter()
                    .enumerate()
                    .filter_map(|(i, c)| c.map(|l| format!("out[{i}]={l}")))
                    .collect();
                write!(f, "{}", parts.join(" & "))
            }
            Event::Intervals(constraints) => {
                let parts: Vec<String> = constraints
                    .iter()
                    .map(|(i, o, t)| match o {
                        Orientation::Lt => format!("out[{i}] < {t}"),
                        Orientation::Ge => format!("out[{i}] >= {t}"),
                    })
                    .collect();
                write!(f, "{}", parts.join(" & "))
            }
        }
    }
}

/// Outcome of one hypothesis test at one epsilon: p-values for both
/// dataset orderings plus the underlying counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub epsilon: f64,
    /// Ordering D1 -> D2.
    pub p_top: PValue,
    /// Ordering D2 -> D1.
    pub p_bottom: PValue,
    pub c1: u64,
    pub c2: u64,
    pub n: u64,
    pub event: Event,
    pub input: CandidateInput,
}

impl TestResult {
    pub fn min_p(&self) -> f64 {
        self.p_top.value.min(self.p_bottom.value)
    }
}

/// The sweep's reading of the privacy level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasuredEpsilon {
    /// No grid point was rejected; the level is at or below the grid
    /// start (rendered as 0, the "looks private" reading).
    BelowGrid,
    /// First grid epsilon whose p-value rises above alpha.
    Value(f64),
    /// Every grid point was rejected.
    AboveGrid,
}

impl MeasuredEpsilon {
    /// Numeric rendering: below-grid reads as 0.
    pub fn as_f64(&self) -> f64 {
        match self {
            MeasuredEpsilon::BelowGrid => 0.0,
            MeasuredEpsilon::Value(v) => *v,
            MeasuredEpsilon::AboveGrid => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for MeasuredEpsilon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasuredEpsilon::BelowGrid => write!(f, "0 (no rejection on the grid)"),
            MeasuredEpsilon::Value(v) => write!(f, "{v}"),
            MeasuredEpsilon::AboveGrid => write!(f, "above grid end"),
        }
    }
}

impl Serialize for MeasuredEpsilon {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            MeasuredEpsilon::BelowGrid => ser.serialize_str("below-grid"),
            MeasuredEpsilon::AboveGrid => ser.serialize_str("above-grid"),
            MeasuredEpsilon::Value(v) => ser.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for MeasuredEpsilon {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(MeasuredEpsilon::Value(v)),
            Raw::Text(s) if s == "below-grid" => Ok(MeasuredEpsilon::BelowGrid),
            Raw::Text(s) if s == "above-grid" => Ok(MeasuredEpsilon::AboveGrid),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number, \"below-grid\" or \"above-grid\", got \"{s}\""
            ))),
        }
    }
}

/// Knobs governing one epsilon sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Strictly increasing epsilon grid.
    pub grid: Vec<f64>,
    /// Significance level.
    pub alpha: f64,
    /// Fresh mechanism runs per side in the reported test.
    pub n_iterations: u64,
    /// Exploratory runs per side during event selection.
    pub n_explore: u64,
    /// Monte-Carlo thinnings per p-value.
    pub mc_draws: u32,
    /// Re-run event selection at every grid epsilon (the selector's
    /// score depends on epsilon); false reuses the first selection.
    pub reselect_events: bool,
    /// Master seed; every stream in the audit derives from it.
    pub seed: u64,
    /// Worker cap; None uses the rayon default.
    pub workers: Option<usize>,
    /// Adjacency group size k; with k > 1 the measured value is a
    /// k*epsilon bound.
    pub group_size: usize,
    /// Run provenance embedded into the report.
    pub snapshot: serde_json::Value,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            grid: Vec::new(),
            alpha: 0.05,
            n_iterations: 50_000,
            n_explore: 200,
            mc_draws: 100,
            reselect_events: true,
            seed: 0,
            workers: None,
            group_size: 1,
            snapshot: serde_json::Value::Null,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.grid.is_empty() {
            return Err(DetectError::BadSettings("epsilon grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DetectError::BadSettings(
                "epsilon grid must be strictly increasing".into(),
            ));
        }
        if self.grid[0] < 0.0 {
            return Err(DetectError::BadSettings(
                "epsilon grid must be non-negative".into(),
            ));
        }
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(DetectError::BadSettings(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_iterations < 100 {
            return Err(DetectError::BadSettings(format!(
                "n_iterations must be at least 100, got {}",
                self.n_iterations
            )));
        }
        if self.n_explore < 10 {
            return Err(DetectError::BadSettings(format!(
                "n_explore must be at least 10, got {}",
                self.n_explore
            )));
        }
        if self.mc_draws < 1 {
            return Err(DetectError::BadSettings("mc_draws must be >= 1".into()));
        }
        if self.group_size < 1 {
            return Err(DetectError::BadSettings("group_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Default grid: 20 evenly spaced points spanning [0.1, 2] * epsilon0.
    pub fn default_grid(epsilon0: f64) -> Vec<f64> {
        let lo = 0.1 * epsilon0;
        let hi = 2.0 * epsilon0;
        (0..20)
            .map(|i| lo + (hi - lo) * i as f64 / 19.0)
            .collect()
    }
}

/// Full record of one sweep: per-epsilon results, the measured level,
/// and run provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub epsilon_grid: Vec<f64>,
    pub results: Vec<TestResult>,
    pub measured_epsilon: MeasuredEpsilon,
    pub alpha: f64,
    pub seed: u64,
    pub group_size: usize,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
}

impl SweepReport {
    /// Human-readable label for what the sweep measured; a k-row group
    /// adjacency bounds k*epsilon, not epsilon itself.
    pub fn measured_label(&self) -> String {
        if self.group_size > 1 {
            format!("measured {}*epsilon bound (group size k={})", self.group_size, self.group_size)
        } else {
            "measured epsilon".to_string()
        }
    }
}
