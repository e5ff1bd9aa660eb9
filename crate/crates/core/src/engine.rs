//! Stochastic random-order sequential simulation and ensemble aggregation.
//!
//! At every step after the initial state, time-series forcings for that step
//! are applied first. One element is then drawn uniformly from the non-input
//! elements that are not forced at that step and updated by its rule; every
//! other element keeps its level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::lut::{lut_lookup, LutError};
use crate::model::{initial_state, CompiledRule, Model, ModelError, Scenario, TimeSeries};
use crate::quantizer::{quantize_value, Quantizer};
use crate::rule::{apply_delta, incremental_delta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step}, element `{element}`: {source}")]
    Update { step: usize, element: String, source: LutError },
    #[error("run {run}: {source}")]
    Run { run: usize, source: Box<EngineError> },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("series lengths differ: simulated {simulated}, reference {reference}")]
    LengthMismatch { simulated: usize, reference: usize },
    #[error("cannot compare empty series")]
    EmptySeries,
    #[error("reference has {reference} levels but the element has {element}")]
    LevelMismatch { reference: u32, element: u32 },
    #[error("reference level {level} out of range for {levels} levels")]
    ReferenceOutOfRange { level: u32, levels: u32 },
}

/// Levels of every element at steps `0..=steps` for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// `levels[element][step]`
    pub levels: Vec<Vec<u32>>,
    /// Element updated at each step; `None` at step 0 and whenever every
    /// candidate was forced.
    pub selected: Vec<Option<usize>>,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.selected.len() - 1
    }

    pub fn element(&self, idx: usize) -> &[u32] {
        &self.levels[idx]
    }
}

/// Per-run seed: the SplitMix64 output at position `run + 1` of a stream
/// started from `master_seed`.
pub fn run_seed(master_seed: u64, run: usize) -> u64 {
    let mut z = master_seed.wrapping_add((run as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn next_level(model: &Model, idx: usize, state: &[u32]) -> Result<u32, LutError> {
    let counts = model.level_counts();
    match model.compiled_rule(idx).expect("candidates always have a rule") {
        CompiledRule::Incremental { positive, negative, mode } => {
            let pos = positive.as_ref().map(|e| e.eval(state, counts));
            let neg = negative.as_ref().map(|e| e.eval(state, counts));
            Ok(apply_delta(state[idx], incremental_delta(pos, neg, counts[idx], *mode), counts[idx]))
        }
        CompiledRule::Lookup { table, inputs } => {
            let tuple: Vec<u32> = inputs.iter().map(|&i| state[i]).collect();
            lut_lookup(table, &tuple, state[idx])
        }
    }
}

pub fn simulate_run(model: &Model, scenario: &Scenario, run_seed: u64) -> Result<Trace, EngineError> {
    let mut state = initial_state(model, scenario)?.levels().to_vec();
    let n = state.len();
    let steps = scenario.steps;

    let forcings: Vec<(usize, &TimeSeries)> =
        scenario.series.iter().map(|(name, s)| (model.index_of(name).expect("scenario validated"), s)).collect();
    let rule_elements: Vec<usize> = (0..n).filter(|&i| !model.is_input(i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut levels: Vec<Vec<u32>> = state
        .iter()
        .map(|&l| {
            let mut v = Vec::with_capacity(steps + 1);
            v.push(l);
            v
        })
        .collect();
    let mut selected = Vec::with_capacity(steps + 1);
    selected.push(None);

    let mut forced = vec![false; n];
    let mut candidates = Vec::with_capacity(rule_elements.len());
    for step in 1..=steps {
        for &(i, series) in &forcings {
            if let Some(level) = series.get(step) {
                state[i] = level;
                forced[i] = true;
            }
        }
        candidates.clear();
        candidates.extend(rule_elements.iter().copied().filter(|&i| !forced[i]));

        let chosen = if candidates.is_empty() {
            None
        } else {
            let idx = candidates[rng.gen_range(0..candidates.len())];
            state[idx] = next_level(model, idx, &state).map_err(|source| EngineError::Update {
                step,
                element: model.elements()[idx].name.clone(),
                source,
            })?;
            Some(idx)
        };
        selected.push(chosen);
        for (series, &l) in levels.iter_mut().zip(&state) {
            series.push(l);
        }
        for &(i, _) in &forcings {
            forced[i] = false;
        }
    }
    Ok(Trace { levels, selected })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnsembleOptions {
    /// Retain every per-run trace in the result.
    pub keep_runs: bool,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

/// Ensemble result. `mean[element][step]` and `std[element][step]` are in
/// normalized units; `std` is the population standard deviation over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub names: Vec<String>,
    pub levels: Vec<u32>,
    pub runs: usize,
    pub traces: Option<Vec<Trace>>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl TraceSet {
    pub fn steps(&self) -> usize {
        self.mean.first().map_or(0, |m| m.len().saturating_sub(1))
    }

    pub fn mean_of(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.mean[i].as_slice())
    }

    pub fn std_of(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.std[i].as_slice())
    }
}

/// Running mean/variance per element-step, folded in run order.
struct Accumulator {
    count: u64,
    mean: Vec<Vec<f64>>,
    m2: Vec<Vec<f64>>,
    scale: Vec<f64>,
}

impl Accumulator {
    fn new(counts: &[u32], steps: usize) -> Self {
        Accumulator {
            count: 0,
            mean: vec![vec![0.0; steps + 1]; counts.len()],
            m2: vec![vec![0.0; steps + 1]; counts.len()],
            scale: counts.iter().map(|&c| f64::from(c - 1)).collect(),
        }
    }

    fn push(&mut self, trace: &Trace) {
        self.count += 1;
        let n = self.count as f64;
        for (e, series) in trace.levels.iter().enumerate() {
            let scale = self.scale[e];
            for (t, &l) in series.iter().enumerate() {
                let x = f64::from(l) / scale;
                let delta = x - self.mean[e][t];
                self.mean[e][t] += delta / n;
                self.m2[e][t] += delta * (x - self.mean[e][t]);
            }
        }
    }

    fn finish(self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.count as f64;
        let std = self.m2.iter().map(|row| row.iter().map(|m| (m / n).max(0.0).sqrt()).collect()).collect();
        (self.mean, std)
    }
}

/// Two-pass mean and population standard deviation from stored traces.
pub fn aggregate_traces(traces: &[Trace], counts: &[u32]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let runs = traces.len() as f64;
    let steps = traces.first().map_or(0, Trace::steps);
    let mut mean = vec![vec![0.0; steps + 1]; counts.len()];
    let mut std = vec![vec![0.0; steps + 1]; counts.len()];
    for (e, &c) in counts.iter().enumerate() {
        let scale = f64::from(c - 1);
        for t in 0..=steps {
            let m = traces.iter().map(|tr| f64::from(tr.levels[e][t]) / scale).sum::<f64>() / runs;
            let var = traces.iter().map(|tr| (f64::from(tr.levels[e][t]) / scale - m).powi(2)).sum::<f64>() / runs;
            mean[e][t] = m;
            std[e][t] = var.sqrt();
        }
    }
    (mean, std)
}

const CHUNK: usize = 256;

pub fn simulate_ensemble(
    model: &Model,
    scenario: &Scenario,
    options: EnsembleOptions,
) -> Result<TraceSet, EngineError> {
    scenario.validate(model)?;
    match options.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| EngineError::ThreadPool(e.to_string()))?;
            pool.install(|| ensemble_inner(model, scenario, options.keep_runs))
        }
        None => ensemble_inner(model, scenario, options.keep_runs),
    }
}

fn ensemble_inner(model: &Model, scenario: &Scenario, keep_runs: bool) -> Result<TraceSet, EngineError> {
    let counts = model.level_counts();
    let mut acc = Accumulator::new(counts, scenario.steps);
    let mut kept = keep_runs.then(|| Vec::with_capacity(scenario.runs));

    let mut start = 0;
    while start < scenario.runs {
        let end = (start + CHUNK).min(scenario.runs);
        let results: Vec<Result<Trace, EngineError>> = (start..end)
            .into_par_iter()
            .map(|r| simulate_run(model, scenario, run_seed(scenario.master_seed, r)))
            .collect();
        for (offset, result) in results.into_iter().enumerate() {
            let trace = result.map_err(|e| EngineError::Run { run: start + offset, source: Box::new(e) })?;
            acc.push(&trace);
            if let Some(k) = kept.as_mut() {
                k.push(trace);
            }
        }
        start = end;
    }

    let (mean, std) = acc.finish();
    Ok(TraceSet {
        names: model.elements().iter().map(|e| e.name.clone()).collect(),
        levels: counts.to_vec(),
        runs: scenario.runs,
        traces: kept,
        mean,
        std,
    })
}

/// Reference trajectory for [`compare_traces`].
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Levels(&'a [u32]),
    Values { values: &'a [f64], quantizer: &'a Quantizer },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceMetrics {
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
    pub mae_normalized: f64,
    pub level_match_fraction: f64,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Compares a simulated mean trace (normalized) with a reference for an
/// element with `levels` levels.
pub fn compare_traces(simulated: &[f64], reference: Reference<'_>, levels: u32) -> Result<TraceMetrics, EngineError> {
    let ref_levels: Vec<u32> = match reference {
        Reference::Levels(l) => l.to_vec(),
        Reference::Values { values, quantizer } => {
            if quantizer.levels() != levels {
                return Err(EngineError::LevelMismatch { reference: quantizer.levels(), element: levels });
            }
            values.iter().map(|&v| quantize_value(quantizer, v)).collect()
        }
    };
    if simulated.len() != ref_levels.len() {
        return Err(EngineError::LengthMismatch { simulated: simulated.len(), reference: ref_levels.len() });
    }
    if simulated.is_empty() {
        return Err(EngineError::EmptySeries);
    }
    if let Some(&level) = ref_levels.iter().find(|&&l| l >= levels) {
        return Err(EngineError::ReferenceOutOfRange { level, levels });
    }
    let scale = f64::from(levels - 1);
    let ref_norm: Vec<f64> = ref_levels.iter().map(|&l| f64::from(l) / scale).collect();
    let n = simulated.len() as f64;
    let mae = simulated.iter().zip(&ref_norm).map(|(s, r)| (s - r).abs()).sum::<f64>() / n;
    let matches = simulated.iter().zip(&ref_levels).filter(|(s, r)| (*s * scale).round() as u32 == **r).count();
    Ok(TraceMetrics {
        spearman: spearman(simulated, &ref_norm),
        mae_normalized: mae,
        level_match_fraction: matches as f64 / n,
    })
}
