//! Baseline versus speculative runs over seeds, and sweeps over them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spex_core::executor::{run_search, ExecError, Flags, RunOutput, SpexConfig};
use spex_core::metrics::{RunMetrics, REPORTED_DISTANCES};
use spex_core::sim::workload::generate_workload;

use crate::config::{parse_flags, ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Exec { seed: u64, source: ExecError },
}

/// Both variants of one seed. `spex.baseline_makespan` is the baseline's
/// makespan, so `spex.speedup` is the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub seed: u64,
    pub baseline: RunMetrics,
    pub spex: RunMetrics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub makespan: Stat,
    pub baseline_makespan: Stat,
    pub speedup: Stat,
    pub throughput: Stat,
    /// Pooled over repetitions; `None` where no prediction was made.
    pub hit_rate: Vec<Option<f64>>,
    pub committed_tokens: Stat,
    pub reused_tokens: Stat,
    pub wasted_tokens: Stat,
    pub critical_path_tokens_saved: Stat,
    pub early_termination_rate: Stat,
    pub vote_accuracy: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub algorithm: String,
    pub flags: Flags,
    pub batch_size: u32,
    /// Sorted by seed.
    pub repetitions: Vec<Repetition>,
    pub summary: Summary,
}

pub fn algorithm_name(cfg: &ExperimentConfig) -> String {
    serde_json::to_value(cfg.policy.family)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn variant(cfg: &ExperimentConfig, flags: Flags) -> SpexConfig {
    SpexConfig {
        flags,
        ..cfg.spex.clone()
    }
}

/// Runs the workload of `seed` with the given flags.
pub fn run_variant(cfg: &ExperimentConfig, seed: u64, flags: Flags) -> Result<RunOutput, RunError> {
    let queries = generate_workload(cfg.num_queries, &cfg.workload, seed).map_err(|e| ConfigError::Invalid {
        field: "workload".into(),
        message: e.to_string(),
    })?;
    run_search(
        &queries,
        &cfg.workload,
        &cfg.policy,
        &cfg.hardware,
        &variant(cfg, flags),
        cfg.batch_size,
    )
    .map_err(|source| RunError::Exec { seed, source })
}

/// Runs the baseline and the configured variant on the workload of `seed`.
pub fn run_pair(cfg: &ExperimentConfig, seed: u64) -> Result<(RunOutput, RunOutput), RunError> {
    let baseline = run_variant(cfg, seed, Flags::NONE)?;
    let mut spex = run_variant(cfg, seed, cfg.spex.flags)?;
    spex.metrics.baseline_makespan = baseline.metrics.makespan;
    spex.metrics.finalize();
    Ok((baseline, spex))
}

pub fn run_repetition(cfg: &ExperimentConfig, seed: u64) -> Result<Repetition, RunError> {
    let (baseline, spex) = run_pair(cfg, seed)?;
    Ok(Repetition {
        seed,
        baseline: baseline.metrics,
        spex: spex.metrics,
    })
}

/// Baseline and speculative runs for every repetition seed, in parallel,
/// aggregated in seed order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, RunError> {
    cfg.validate()?;
    let mut reps = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| run_repetition(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;
    reps.sort_by_key(|r| r.seed);
    Ok(ExperimentResult {
        name: cfg.name.clone(),
        algorithm: algorithm_name(cfg),
        flags: cfg.spex.flags,
        batch_size: cfg.batch_size,
        summary: summarize(&reps),
        repetitions: reps,
    })
}

fn summarize(reps: &[Repetition]) -> Summary {
    let stat = |f: &dyn Fn(&RunMetrics) -> f64| Stat::of(&reps.iter().map(|r| f(&r.spex)).collect::<Vec<_>>());
    let mut pooled = RunMetrics::default();
    for r in reps {
        for (i, (&h, &m)) in r
            .spex
            .hits_by_distance
            .iter()
            .zip(&r.spex.misses_by_distance)
            .enumerate()
        {
            pooled.record_distance(i as u32 + 1, true, h);
            pooled.record_distance(i as u32 + 1, false, m);
        }
    }
    Summary {
        makespan: stat(&|m| m.makespan),
        baseline_makespan: stat(&|m| m.baseline_makespan),
        speedup: stat(&|m| m.speedup),
        throughput: stat(&|m| m.throughput),
        hit_rate: (1..=REPORTED_DISTANCES).map(|d| pooled.hit_rate(d)).collect(),
        committed_tokens: stat(&|m| m.committed_tokens as f64),
        reused_tokens: stat(&|m| m.reused_tokens as f64),
        wasted_tokens: stat(&|m| m.wasted_tokens as f64),
        critical_path_tokens_saved: stat(&|m| m.critical_path_tokens_saved as f64),
        early_termination_rate: stat(&|m| m.early_termination_rate),
        vote_accuracy: stat(&|m| m.vote_accuracy),
    }
}

/// One experiment per (batch size, flag set) of the config's sweep grid, or
/// the config itself when it has none.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>, RunError> {
    cfg.validate()?;
    let Some(grid) = &cfg.sweep else {
        return Ok(vec![run_experiment(cfg)?]);
    };
    let flag_sets: Vec<Flags> = if grid.flags.is_empty() {
        vec![cfg.spex.flags]
    } else {
        grid.flags
            .iter()
            .map(|f| parse_flags(f).expect("validated"))
            .collect()
    };
    let mut out = Vec::new();
    for &batch_size in &grid.batch_sizes {
        for &flags in &flag_sets {
            let mut c = cfg.clone();
            c.batch_size = batch_size;
            c.spex.flags = flags;
            c.sweep = None;
            out.push(run_experiment(&c)?);
        }
    }
    Ok(out)
}
