//! Event enumeration and selection. The selector scores every candidate
//! (input, event) pair by an exploratory p-value on samples that are
//! discarded afterwards; the final test always draws fresh samples.

use rayon::prelude::*;

use super::{CandidateInput, DetectError, Event, Orientation};
use crate::mech::{Mechanism, Output, OutputKind};
use crate::rngstream::{Phase, SeedSchedule};
use crate::stats::{dp_test_pvalue, CountPair};

/// Hard cap on the enumerated event list.
const MAX_EVENTS: usize = 512;
/// Singles kept for pairwise interval conjunctions, ranked by how close
/// their pooled frequency sits to 1/2.
const CONJUNCTION_SINGLES: usize = 8;

fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Enumerate candidate events from exploratory outputs.
///
/// Labels: every single-position label constraint over the observed
/// label alphabet, plus the observed full patterns. Values: per position,
/// interval constraints at the empirical deciles in both orientations,
/// plus pairwise conjunctions of the most balanced singles.
pub fn enumerate_events(sample_outputs: &[Output], kind: OutputKind) -> Vec<Event> {
    assert!(!sample_outputs.is_empty(), "sample outputs must be non-empty");
    let mut events = match kind {
        OutputKind::Labels => enumerate_label_events(sample_outputs),
        OutputKind::Values => enumerate_interval_events(sample_outputs),
    };
    events.truncate(MAX_EVENTS);
    events
}

fn enumerate_label_events(samples: &[Output]) -> Vec<Event> {
    let rows: Vec<&Vec<usize>> = samples
        .iter()
        .map(|o| match o {
            Output::Labels(l) => l,
            Output::Values(_) => panic!("label events over value outputs"),
        })
        .collect();
    let width = rows[0].len();
    let mut alphabet: Vec<usize> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();

    let mut events = Vec::new();
    for pos in 0..width {
        for &label in &alphabet {
            let mut pattern = vec![None; width];
            pattern[pos] = Some(label);
            events.push(Event::LabelPattern(pattern));
        }
    }
    if width > 1 {
        let mut patterns: Vec<Vec<usize>> = rows.iter().map(|r| (*r).clone()).collect();
        patterns.sort_unstable();
        patterns.dedup();
        for p in patterns {
            events.push(Event::LabelPattern(p.into_iter().map(Some).collect()));
        }
    }
    events
}

fn enumerate_interval_events(samples: &[Output]) -> Vec<Event> {
    let rows: Vec<&Vec<f64>> = samples
        .iter()
        .map(|o| match o {
            Output::Values(v) => v,
            Output::Labels(_) => panic!("interval events over label outputs"),
        })
        .collect();
    let width = rows[0].len();

    let mut singles = Vec::new();
    for pos in 0..width {
        let mut values: Vec<f64> = rows.iter().map(|r| r[pos]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut thresholds: Vec<f64> = (1..=9)
            .map(|d| interpolated_quantile(&values, d as f64 / 10.0))
            .collect();
        thresholds.dedup();
        for t in thresholds {
            singles.push(Event::Intervals(vec![(pos, Orientation::Lt, t)]));
            singles.push(Event::Intervals(vec![(pos, Orientation::Ge, t)]));
        }
    }

    // Pairwise conjunctions of the most balanced singles across distinct
    // positions; balance is the pooled frequency's distance from 1/2.
    let mut ranked: Vec<(f64, usize)> = singles
        .iter()
        .enumerate()
        .map(|(ix, e)| {
            let hits = samples.iter().filter(|o| e.matches(o)).count();
            let freq = hits as f64 / samples.len() as f64;
            ((freq - 0.5).abs(), ix)
        })
        .collect();
    ranked.sort_by(|(a, ia), (b, ib)| a.partial_cmp(b).unwrap().then(ia.cmp(ib)));
    let top: Vec<usize> = ranked
        .iter()
        .take(CONJUNCTION_SINGLES)
        .map(|(_, ix)| *ix)
        .collect();

    let mut events = singles.clone();
    for (a_ix, &a) in top.iter().enumerate() {
        for &b in top.iter().skip(a_ix + 1) {
            let (ca, cb) = (&singles[a], &singles[b]);
            if let (Event::Intervals(x), Event::Intervals(y)) = (ca, cb) {
                if x[0].0 != y[0].0 {
                    let mut joint = x.clone();
                    joint.extend_from_slice(y);
                    events.push(Event::Intervals(joint));
                }
            }
        }
    }
    events
}

/// Score of one scored (event, input) pair during selection.
#[derive(Debug, Clone)]
struct Scored {
    p: f64,
    candidate_ix: usize,
    event_ix: usize,
    event: Event,
}

/// Run the mechanism briefly on every candidate, enumerate events from
/// the pooled outputs, and return the (event, input) pair with the
/// smallest exploratory p-value at the tested epsilon. Exploration
/// samples are never reused.
pub fn select_event(
    mech: &dyn Mechanism,
    epsilon: f64,
    inputs: &[CandidateInput],
    n_explore: u64,
    mc_draws: u32,
    sched: &SeedSchedule,
    grid_ix: usize,
) -> Result<(Event, CandidateInput), DetectError> {
    if inputs.is_empty() {
        return Err(DetectError::EmptyInputs);
    }
    assert!(n_explore >= 10, "n_explore must be at least 10");

    let best_per_candidate: Vec<Result<Option<Scored>, DetectError>> = inputs
        .par_iter()
        .enumerate()
        .map(|(ci, input)| {
            let context = (grid_ix as u64) << 32 | ci as u64;
            let run_side = |spec: &crate::data::AdjacencySpec| {
                (0..n_explore)
                    .map(|i| {
                        let mut rng = sched.rng(Phase::Explore, context, spec.stream_tag(), i);
                        mech.run(spec, &input.args, &mut rng)
                    })
                    .collect::<Result<Vec<Output>, _>>()
            };
            let side1 = run_side(&input.d1).map_err(DetectError::from)?;
            let side2 = run_side(&input.d2).map_err(DetectError::from)?;
            let mut pooled = side1.clone();
            pooled.extend(side2.iter().cloned());
            let events = enumerate_events(&pooled, mech.output_kind());

            let mut best: Option<Scored> = None;
            for (ei, event) in events.into_iter().enumerate() {
                let c1 = side1.iter().filter(|o| event.matches(o)).count() as u64;
                let c2 = side2.iter().filter(|o| event.matches(o)).count() as u64;
                let counts = CountPair::new(c1, c2, n_explore);
                let mut rng_top = sched.rng(Phase::ExploreMc, context, ei as u64, 0);
                let mut rng_bot = sched.rng(Phase::ExploreMc, context, ei as u64, 1);
                let p_top = dp_test_pvalue(counts, epsilon, mc_draws, &mut rng_top);
                let p_bot = dp_test_pvalue(counts.swapped(), epsilon, mc_draws, &mut rng_bot);
                let p = p_top.value.min(p_bot.value);
                let better = match &best {
                    None => true,
                    Some(b) => p < b.p,
                };
                if better {
                    best = Some(Scored {
                        p,
                        candidate_ix: ci,
                        event_ix: ei,
                        event,
                    });
                }
            }
            Ok(best)
        })
        .collect();

    let mut winner: Option<Scored> = None;
    for per in best_per_candidate {
        let Some(scored) = per? else { continue };
        let better = match &winner {
            None => true,
            // Ties break by enumeration order: candidate, then event.
            Some(w) => {
                scored.p < w.p
                    || (scored.p == w.p
                        && (scored.candidate_ix, scored.event_ix)
                            < (w.candidate_ix, w.event_ix))
            }
        };
        if better {
            winner = Some(scored);
        }
    }
    let winner = winner.ok_or(DetectError::EmptyInputs)?;
    Ok((winner.event, inputs[winner.candidate_ix].clone()))
}
