//! The learners audited by the framework, behind a common trait so the
//! pipeline mechanism can swap them by name at runtime.
//!
//! Prediction never adds noise: privacy is spent entirely at training
//! time and prediction is post-processing. That is enforced structurally
//! by `Model::predict_row` taking no rng.

mod linreg;
mod nb;

pub use linreg::{train_dp_linreg, LinRegModel};
pub use nb::{train_dp_gaussian_nb, GaussianNbModel};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Task};
use crate::mech::Output;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("expected a {expected} dataset, got {found}")]
    TaskMismatch { expected: Task, found: Task },
    #[error("class {0} is absent from the training data")]
    MissingClass(usize),
    #[error("feature count mismatch: model has {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(
        "normal equations stay ill-conditioned up to ridge {lambda:.3e} (residual {residual:.3e})"
    )]
    IllConditioned { lambda: f64, residual: f64 },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("unknown model '{0}' (expected one of {1})")]
    UnknownModel(String, String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Serialize non-finite budgets as the string "inf" (JSON has no
/// infinity literal).
pub mod eps_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            ser.serialize_f64(*value)
        } else {
            ser.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(x) => Ok(x),
            Raw::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

/// Training-time knobs shared by both learners.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total privacy budget; infinity marks the non-private baseline.
    #[serde(with = "eps_serde")]
    pub epsilon0: f64,
    /// Budget fractions over (counts, means, variances) for the
    /// Gaussian NB learner.
    pub nb_split: [f64; 3],
    /// Budget fractions over (gram matrix, moment vector) for linear
    /// regression.
    pub linreg_split: [f64; 2],
    /// Bound on the augmented row norm; derived from the column bounds
    /// when absent.
    pub clip_norm: Option<f64>,
    /// Ridge weight; raised by doubling until the solve is well-posed.
    pub ridge: f64,
    /// Variance floor relative to the squared column width.
    pub variance_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon0: f64::INFINITY,
            nb_split: [1.0 / 3.0; 3],
            linreg_split: [0.5; 2],
            clip_norm: None,
            ridge: 0.0,
            variance_floor: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn with_epsilon(epsilon0: f64) -> Self {
        TrainConfig {
            epsilon0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epsilon0 <= 0.0 {
            return Err(ModelError::BadConfig(
                "epsilon0 must be positive".to_string(),
            ));
        }
        for (name, split) in [
            ("nb_split", &self.nb_split[..]),
            ("linreg_split", &self.linreg_split[..]),
        ] {
            if split.iter().any(|f| *f <= 0.0) {
                return Err(ModelError::BadConfig(format!(
                    "{name} fractions must be positive"
                )));
            }
            let total: f64 = split.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(ModelError::BadConfig(format!(
                    "{name} fractions must sum to 1, got {total}"
                )));
            }
        }
        if self.ridge < 0.0 {
            return Err(ModelError::BadConfig("ridge must be >= 0".to_string()));
        }
        if self.variance_floor <= 0.0 {
            return Err(ModelError::BadConfig(
                "variance_floor must be positive".to_string(),
            ));
        }
        if let Some(b) = self.clip_norm {
            if b <= 1.0 {
                return Err(ModelError::BadConfig(
                    "clip_norm must exceed 1 (the intercept column)".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn is_private(&self) -> bool {
        self.epsilon0.is_finite()
    }
}

/// A single prediction; no rng parameter, so post-processing cannot
/// spend privacy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prediction {
    Label(usize),
    Value(f64),
}

/// A trained model queried by the pipeline mechanism.
pub trait Model: Send + Sync {
    fn n_cols(&self) -> usize;
    fn predict_row(&self, row: &[f64]) -> Prediction;
    /// Per-class log scores; None for regression models.
    fn class_log_scores(&self, row: &[f64]) -> Option<Vec<f64>>;
    fn dump(&self) -> ModelDump;
}

/// Batch prediction over dataset rows selected by index.
pub fn predict_rows(
    model: &dyn Model,
    d: &Dataset,
    args: &[usize],
) -> Result<Output, ModelError> {
    if d.n_cols() != model.n_cols() {
        return Err(ModelError::DimensionMismatch {
            expected: model.n_cols(),
            found: d.n_cols(),
        });
    }
    let preds: Vec<Prediction> = args.iter().map(|&i| model.predict_row(d.row(i))).collect();
    Ok(match preds.first() {
        Some(Prediction::Label(_)) | None => Output::Labels(
            preds
                .iter()
                .map(|p| match p {
                    Prediction::Label(l) => *l,
                    Prediction::Value(_) => unreachable!("mixed prediction kinds"),
                })
                .collect(),
        ),
        Some(Prediction::Value(_)) => Output::Values(
            preds
                .iter()
                .map(|p| match p {
                    Prediction::Value(v) => *v,
                    Prediction::Label(_) => unreachable!("mixed prediction kinds"),
                })
                .collect(),
        ),
    })
}

/// A named training strategy; the registry hands these out by name.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &'static str;
    fn task(&self) -> Task;
    fn config(&self) -> &TrainConfig;
    fn train(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Box<dyn Model>, ModelError>;
    /// The same strategy with an unlimited budget, used by the detector
    /// for boundary scoring.
    fn non_private_twin(&self) -> Box<dyn Trainer>;
}

struct NbTrainer {
    cfg: TrainConfig,
}

impl Trainer for NbTrainer {
    fn name(&self) -> &'static str {
        "gaussian-nb"
    }

    fn task(&self) -> Task {
        Task::Classification
    }

    fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn train(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Box<dyn Model>, ModelError> {
        Ok(Box::new(train_dp_gaussian_nb(d, &self.cfg, rng)?))
    }

    fn non_private_twin(&self) -> Box<dyn Trainer> {
        Box::new(NbTrainer {
            cfg: TrainConfig {
                epsilon0: f64::INFINITY,
                ..self.cfg.clone()
            },
        })
    }
}

struct LinRegTrainer {
    cfg: TrainConfig,
}

impl Trainer for LinRegTrainer {
    fn name(&self) -> &'static str {
        "linreg"
    }

    fn task(&self) -> Task {
        Task::Regression
    }

    fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn train(&self, d: &Dataset, rng: &mut ChaCha8Rng) -> Result<Box<dyn Model>, ModelError> {
        Ok(Box::new(train_dp_linreg(d, &self.cfg, rng)?))
    }

    fn non_private_twin(&self) -> Box<dyn Trainer> {
        Box::new(LinRegTrainer {
            cfg: TrainConfig {
                epsilon0: f64::INFINITY,
                ..self.cfg.clone()
            },
        })
    }
}

/// Registered model names.
pub fn model_names() -> &'static [&'static str] {
    &["gaussian-nb", "linreg"]
}

/// Look up a training strategy by its registered name.
pub fn trainer_from_name(name: &str, cfg: TrainConfig) -> Result<Box<dyn Trainer>, ModelError> {
    cfg.validate()?;
    match name {
        "gaussian-nb" => Ok(Box::new(NbTrainer { cfg })),
        "linreg" => Ok(Box::new(LinRegTrainer { cfg })),
        other => Err(ModelError::UnknownModel(
            other.to_string(),
            model_names().join(", "),
        )),
    }
}

/// Serialized model with enough context to rehydrate it for debugging;
/// not used anywhere in the audit loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelDump {
    GaussianNb(GaussianNbModel),
    Linreg(LinRegModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDumpFile {
    pub schema_version: u32,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub model: ModelDump,
}

pub fn save_model(path: &std::path::Path, dump: &ModelDumpFile) -> Result<(), ModelError> {
    let mut bytes = serde_json::to_vec_pretty(dump)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<ModelDumpFile, ModelError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
