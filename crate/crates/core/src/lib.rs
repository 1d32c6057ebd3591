//! Statistical privacy auditor core: adjacent-dataset construction,
//! exact hypothesis testing, reference mechanisms, DP learners,
//! resampling preprocessors, and the epsilon-sweep detector.

pub mod data;
pub mod detector;
pub mod mech;
pub mod models;
pub mod resample;
pub mod rngstream;
pub mod stats;
