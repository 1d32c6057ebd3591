//! The hypothesis-test driver: fresh-sample counting, the two-ordering
//! test, the epsilon sweep, and the ML pipeline wrapped as a mechanism.

use std::sync::Arc;

use rayon::prelude::*;

use super::{
    generate_inputs, select_event, select_test_points, CandidateInput, DetectError, Event,
    MeasuredEpsilon, Strategy, SweepReport, SweepSettings, TestResult,
};
use crate::data::{remove_rows, AdjacencySpec, Dataset, Task};
use crate::mech::{MechError, Mechanism, Output, OutputKind};
use crate::models::{predict_rows, trainer_from_name, TrainConfig, Trainer};
use crate::resample::{resampler_from_config, ImbalanceSpec, ResampleConfig, ResampleMethod, Resampler};
use crate::rngstream::{Phase, SeedSchedule};
use crate::stats::{dp_test_pvalue, CountPair};

/// Supplies candidate inputs for each grid point.
pub trait InputProvider: Send + Sync {
    fn generate(
        &self,
        grid_ix: usize,
        sched: &SeedSchedule,
    ) -> Result<Vec<CandidateInput>, DetectError>;
}

/// A static candidate list (reference mechanisms).
pub struct FixedInputs(pub Vec<CandidateInput>);

impl InputProvider for FixedInputs {
    fn generate(
        &self,
        _grid_ix: usize,
        _sched: &SeedSchedule,
    ) -> Result<Vec<CandidateInput>, DetectError> {
        if self.0.is_empty() {
            return Err(DetectError::EmptyInputs);
        }
        Ok(self.0.clone())
    }
}

/// Strategy-driven candidate generation over a dataset.
pub struct MlInputProvider {
    pub dataset: Arc<Dataset>,
    pub k: usize,
    pub n_candidates: usize,
    pub strategy: Strategy,
    pub imbalance: ImbalanceSpec,
    pub args: Vec<usize>,
}

impl InputProvider for MlInputProvider {
    fn generate(
        &self,
        grid_ix: usize,
        sched: &SeedSchedule,
    ) -> Result<Vec<CandidateInput>, DetectError> {
        let mut rng = sched.rng(Phase::InputGen, grid_ix as u64, 0, 0);
        generate_inputs(
            &self.dataset,
            self.k,
            self.n_candidates,
            self.strategy,
            &self.imbalance,
            &self.args,
            &mut rng,
        )
    }
}

/// Draw fresh samples for both sides (a private stream per iteration,
/// keyed to the dataset role) and compute the p-values of both dataset
/// orderings.
pub fn run_hypothesis_test(
    mech: &dyn Mechanism,
    input: &CandidateInput,
    event: &Event,
    epsilon: f64,
    n_iterations: u64,
    mc_draws: u32,
    sched: &SeedSchedule,
    grid_ix: usize,
) -> Result<TestResult, DetectError> {
    assert!(n_iterations >= 100, "n_iterations must be at least 100");
    let count_side = |spec: &AdjacencySpec| -> Result<u64, DetectError> {
        let tag = spec.stream_tag();
        (0..n_iterations)
            .into_par_iter()
            .map(|i| {
                let mut rng = sched.rng(Phase::Test, grid_ix as u64, tag, i);
                mech.run(spec, &input.args, &mut rng)
                    .map(|o| u64::from(event.matches(&o)))
                    .map_err(DetectError::from)
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    };
    let c1 = count_side(&input.d1)?;
    let c2 = count_side(&input.d2)?;
    let counts = CountPair::new(c1, c2, n_iterations);

    // The thinning stream follows the ordering's first dataset, so
    // swapping the candidate swaps (p_top, p_bottom) exactly.
    let mut rng_top = sched.rng(Phase::TestMc, grid_ix as u64, input.d1.stream_tag(), 0);
    let mut rng_bottom = sched.rng(Phase::TestMc, grid_ix as u64, input.d2.stream_tag(), 0);
    let p_top = dp_test_pvalue(counts, epsilon, mc_draws, &mut rng_top);
    let p_bottom = dp_test_pvalue(counts.swapped(), epsilon, mc_draws, &mut rng_bottom);

    Ok(TestResult {
        epsilon,
        p_top,
        p_bottom,
        c1,
        c2,
        n: n_iterations,
        event: event.clone(),
        input: input.clone(),
    })
}

fn build_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, DetectError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| DetectError::BadSettings(format!("thread pool: {e}")))
}

/// Sweep the epsilon grid: per grid point, (re)generate candidate
/// inputs, select the highest-power event, and run the hypothesis test
/// on fresh samples. The measured level is the first grid epsilon whose
/// p-value rises above alpha.
pub fn epsilon_sweep(
    mech: &dyn Mechanism,
    provider: &dyn InputProvider,
    settings: &SweepSettings,
) -> Result<SweepReport, DetectError> {
    settings.validate()?;
    let sched = SeedSchedule::new(settings.seed);
    let pool = build_pool(settings.workers)?;

    let results: Result<Vec<TestResult>, DetectError> = pool.install(|| {
        let mut results = Vec::with_capacity(settings.grid.len());
        let mut reused: Option<(Event, CandidateInput)> = None;
        for (g, &eps) in settings.grid.iter().enumerate() {
            let (event, input) = match (&reused, settings.reselect_events) {
                (Some(sel), false) => sel.clone(),
                _ => {
                    let inputs = provider
                        .generate(g, &sched)
                        .map_err(|e| e.at_epsilon(eps))?;
                    let sel = select_event(
                        mech,
                        eps,
                        &inputs,
                        settings.n_explore,
                        settings.mc_draws,
                        &sched,
                        g,
                    )
                    .map_err(|e| e.at_epsilon(eps))?;
                    if !settings.reselect_events {
                        reused = Some(sel.clone());
                    }
                    sel
                }
            };
            let result = run_hypothesis_test(
                mech,
                &input,
                &event,
                eps,
                settings.n_iterations,
                settings.mc_draws,
                &sched,
                g,
            )
            .map_err(|e| e.at_epsilon(eps))?;
            log::debug!(
                "eps={eps}: p_top={:.4} p_bottom={:.4} c1={} c2={} event `{event}`",
                result.p_top.value,
                result.p_bottom.value,
                result.c1,
                result.c2,
            );
            results.push(result);
        }
        Ok(results)
    });
    let results = results?;

    let first_pass = results.iter().position(|r| r.min_p() > settings.alpha);
    let measured = match first_pass {
        None => MeasuredEpsilon::AboveGrid,
        Some(0) if results.iter().all(|r| r.min_p() > settings.alpha) => {
            MeasuredEpsilon::BelowGrid
        }
        Some(ix) => MeasuredEpsilon::Value(settings.grid[ix]),
    };

    let mut warnings = Vec::new();
    let min_useful = (2.0 / settings.alpha).ceil() as u64;
    if settings.n_iterations < min_useful {
        warnings.push(format!(
            "n_iterations={} is too small to resolve alpha={}; achievable power is limited",
            settings.n_iterations, settings.alpha
        ));
    }

    Ok(SweepReport {
        epsilon_grid: settings.grid.clone(),
        results,
        measured_epsilon: measured,
        alpha: settings.alpha,
        seed: settings.seed,
        group_size: settings.group_size,
        warnings,
        config: settings.snapshot.clone(),
    })
}

/// The audited ML pipeline as a mechanism: remove the adjacency group,
/// apply the configured resampling, train the DP model, and predict on
/// the test batch taken from the full dataset.
pub struct PipelineMech {
    data: Arc<Dataset>,
    trainer: Box<dyn Trainer>,
    resampler: Option<Box<dyn Resampler>>,
}

impl PipelineMech {
    pub fn new(
        data: Arc<Dataset>,
        trainer: Box<dyn Trainer>,
        resampler: Option<Box<dyn Resampler>>,
    ) -> Self {
        PipelineMech {
            data,
            trainer,
            resampler,
        }
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }
}

impl Mechanism for PipelineMech {
    fn run(
        &self,
        spec: &AdjacencySpec,
        args: &[usize],
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<Output, MechError> {
        let pipeline = |e: &dyn std::fmt::Display| MechError::Pipeline(e.to_string());
        let train_set = remove_rows(&self.data, spec).map_err(|e| pipeline(&e))?;
        let train_set = match &self.resampler {
            Some(r) => r.resample(&train_set, rng).map_err(|e| pipeline(&e))?,
            None => train_set,
        };
        let model = self.trainer.train(&train_set, rng).map_err(|e| pipeline(&e))?;
        predict_rows(&*model, &self.data, args).map_err(|e| pipeline(&e))
    }

    fn output_kind(&self) -> OutputKind {
        match self.trainer.task() {
            Task::Classification => OutputKind::Labels,
            Task::Regression => OutputKind::Values,
        }
    }

    fn claimed_epsilon(&self) -> f64 {
        self.trainer.config().epsilon0
    }
}

/// Everything needed to audit one (model, resampling) pipeline.
#[derive(Debug, Clone)]
pub struct MlAuditOptions {
    /// Registered model name.
    pub model: String,
    pub train: TrainConfig,
    pub resample: ResampleConfig,
    pub strategy: Strategy,
    /// Adjacency group size.
    pub k: usize,
    pub n_candidates: usize,
    /// Test-point batch size.
    pub batch_size: usize,
    /// Bootstrap models for regression test-point selection.
    pub n_bootstrap: usize,
    pub settings: SweepSettings,
}

/// Wrap the full pipeline as a mechanism and sweep the grid. With
/// k > 1 the report labels the measured quantity as a k*epsilon bound.
pub fn audit_ml_pipeline(d: &Dataset, opts: &MlAuditOptions) -> Result<SweepReport, DetectError> {
    let mut settings = opts.settings.clone();
    settings.group_size = opts.k;
    settings.validate()?;

    let trainer = trainer_from_name(&opts.model, opts.train.clone())?;
    if trainer.task() != d.task() {
        return Err(DetectError::BadInputs(format!(
            "model '{}' expects a {} dataset, got {}",
            opts.model,
            trainer.task(),
            d.task()
        )));
    }
    if opts.resample.method != ResampleMethod::None && d.task() != Task::Regression {
        return Err(DetectError::BadInputs(
            "resampling is defined for regression datasets only".into(),
        ));
    }

    let sched = SeedSchedule::new(settings.seed);
    let twin = trainer.non_private_twin();
    let mut tp_rng = sched.rng(Phase::TestPoints, 0, 0, 0);
    let args = select_test_points(d, &*twin, opts.batch_size, opts.n_bootstrap, &mut tp_rng)?;

    let resampler = match opts.resample.method {
        ResampleMethod::None => None,
        _ => Some(resampler_from_config(&opts.resample)?),
    };
    let data = Arc::new(d.clone());
    let provider = MlInputProvider {
        dataset: data.clone(),
        k: opts.k,
        n_candidates: opts.n_candidates,
        strategy: opts.strategy,
        imbalance: opts.resample.imbalance(),
        args,
    };
    let mech = PipelineMech::new(data, trainer, resampler);
    epsilon_sweep(&mech, &provider, &settings)
}
