//! Multi-seed training runs and their output files.
//!
//! Layout under the output directory:
//!
//! - `manifest.txt`: schema version, mode, seeds, rounds
//! - `summary.csv`: one row per seed with final-round values
//! - `seed_<k>/metrics.csv`: one row per round
//! - `seed_<k>/batches.csv`: one row per batch update
//! - `seed_<k>/curve_j.dat`, `seed_<k>/curve_jmc.dat`: `round value` pairs
//! - `seed_<k>/policy.txt`: final policy checkpoint
//! - `seed_<k>/timings.csv`: wall-clock times per round and per batch, only
//!   when requested

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optimizer::{RoundReport, Trainer};
use crate::policy::PolicySet;
use crate::scheduler::dependence_auc;
use crate::verify::BoundReport;

use super::config::ExperimentConfig;
use super::{fmt_num, write_csv, write_dat, SCHEMA_VERSION};

pub const METRICS_HEADER: [&str; 15] = [
    "round",
    "sequence",
    "batches",
    "j_before",
    "j_after",
    "j_independent",
    "j_mc",
    "j_replan_delta",
    "alpha_agent_max",
    "alpha_joint_sum",
    "distill_kl_mean",
    "generator_objective",
    "critic_loss",
    "dag_edges",
    "dependence_auc",
];

pub const BATCHES_HEADER: [&str; 9] = [
    "round",
    "batch",
    "agents",
    "clip",
    "surrogate_before",
    "surrogate_after",
    "alpha_agent_max",
    "alpha_joint",
    "j_after",
];

/// One seed's reports and final state.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<RoundReport>,
    /// Dependence AUC after each round (dag mode with known truth).
    pub auc: Vec<Option<f64>>,
    pub policies: PolicySet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub final_j: Option<f64>,
    pub final_j_independent: Option<f64>,
    pub final_j_mc: f64,
    pub final_auc: Option<f64>,
}

/// Trains one seed without writing anything.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let mut trainer = Trainer::new(config.game.clone(), config.scheme.clone(), seed)?;
    let mut reports = Vec::with_capacity(config.rounds);
    let mut auc = Vec::with_capacity(config.rounds);
    let n = config.game.n_agents();
    for _ in 0..config.rounds {
        reports.push(trainer.run_round()?);
        let value = match (&config.truth, &trainer.scheduler, trainer.current_plan()) {
            (Some(truth), Some(sched), Some(plan)) => {
                Some(dependence_auc(n, &sched.scores(&plan.features)?, &truth.edges()))
            }
            _ => None,
        };
        auc.push(value);
    }
    Ok(SeedRun {
        seed,
        reports,
        auc,
        policies: trainer.policies,
    })
}

fn metrics_row(r: &RoundReport, auc: Option<f64>) -> Vec<String> {
    let alpha_max = r
        .batches
        .iter()
        .flat_map(|b| b.alpha_agents.iter().copied())
        .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    let alpha_joint: Option<f64> = r.batches.iter().map(|b| b.alpha_joint).sum();
    let kl = r.distill_kl.as_ref().map(|k| k.iter().sum::<f64>() / k.len().max(1) as f64);
    let dag = r.dag.as_ref();
    let edges = dag
        .map(|d| d.edges.iter().map(|(a, b)| format!("{a}>{b}")).collect::<Vec<_>>().join(" "))
        .unwrap_or_default();
    vec![
        r.round.to_string(),
        r.sequence.compact(),
        r.batch_count().to_string(),
        fmt_num(r.j_before),
        fmt_num(r.j_after),
        fmt_num(r.j_independent),
        fmt_num(Some(r.j_mc)),
        fmt_num(r.j_replan_delta),
        fmt_num(alpha_max),
        fmt_num(alpha_joint),
        fmt_num(kl),
        fmt_num(dag.and_then(|d| d.generator_objective)),
        fmt_num(dag.and_then(|d| d.critic_loss)),
        edges,
        fmt_num(auc),
    ]
}

fn batch_rows(r: &RoundReport) -> Vec<Vec<String>> {
    r.batches
        .iter()
        .enumerate()
        .map(|(k, b)| {
            vec![
                r.round.to_string(),
                k.to_string(),
                b.agents.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "),
                fmt_num(Some(b.clip)),
                fmt_num(Some(b.surrogate_before)),
                fmt_num(Some(b.surrogate_after)),
                fmt_num(b.alpha_agents.iter().copied().reduce(f64::max)),
                fmt_num(b.alpha_joint),
                fmt_num(b.j_after),
            ]
        })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes one seed's files into `dir`.
pub fn write_seed(run: &SeedRun, dir: &Path, timings: bool) -> Result<()> {
    create_dir(dir)?;
    let metrics: Vec<Vec<String>> = run.reports.iter().zip(&run.auc).map(|(r, a)| metrics_row(r, *a)).collect();
    write_csv(&dir.join("metrics.csv"), &METRICS_HEADER, &metrics)?;
    let batches: Vec<Vec<String>> = run.reports.iter().flat_map(batch_rows).collect();
    write_csv(&dir.join("batches.csv"), &BATCHES_HEADER, &batches)?;
    let exact: Vec<(f64, f64)> = run.reports.iter().filter_map(|r| r.j_after.map(|j| (r.round as f64, j))).collect();
    if !exact.is_empty() {
        write_dat(&dir.join("curve_j.dat"), "round", "j_exact", &exact)?;
    }
    let mc: Vec<(f64, f64)> = run.reports.iter().map(|r| (r.round as f64, r.j_mc)).collect();
    write_dat(&dir.join("curve_jmc.dat"), "round", "j_mc", &mc)?;
    run.policies.write(&dir.join("policy.txt"))?;
    if timings {
        let rows: Vec<Vec<String>> = run
            .reports
            .iter()
            .map(|r| {
                vec![
                    r.round.to_string(),
                    fmt_num(Some(r.rollout_seconds)),
                    fmt_num(Some(r.update_seconds)),
                    fmt_num(r.dag.as_ref().map(|d| d.seconds)),
                    r.batches.iter().map(|b| fmt_num(Some(b.update_seconds))).collect::<Vec<_>>().join(" "),
                ]
            })
            .collect();
        write_csv(
            &dir.join("timings.csv"),
            &["round", "rollout_seconds", "update_seconds", "scheduler_seconds", "batch_seconds"],
            &rows,
        )?;
    }
    Ok(())
}

/// Trains every seed (in parallel) and writes the output tree.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    create_dir(&config.output)?;
    let runs: Vec<SeedRun> = config.seeds.par_iter().map(|&s| run_seed(config, s)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(runs.len());
    for run in &runs {
        let dir = config.output.join(format!("seed_{}", run.seed));
        write_seed(run, &dir, config.timings)?;
        let last = run.reports.last().expect("rounds >= 1");
        out.push(RunSummary {
            seed: run.seed,
            dir,
            final_j: last.j_after,
            final_j_independent: last.j_independent,
            final_j_mc: last.j_mc,
            final_auc: run.auc.last().copied().flatten(),
        });
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|s| {
            vec![
                s.seed.to_string(),
                fmt_num(s.final_j),
                fmt_num(s.final_j_independent),
                fmt_num(Some(s.final_j_mc)),
                fmt_num(s.final_auc),
            ]
        })
        .collect();
    write_csv(
        &config.output.join("summary.csv"),
        &["seed", "final_j", "final_j_independent", "final_j_mc", "final_auc"],
        &rows,
    )?;
    let manifest = format!(
        "b2mapo-output {SCHEMA_VERSION}\nmode {}\noracle {}\nagents {}\nseeds {}\nrounds {}\n",
        config.scheme.mode,
        config.scheme.oracle,
        config.game.n_agents(),
        config.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
        config.rounds
    );
    let path = config.output.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(out)
}

pub const BOUNDS_HEADER: [&str; 7] = ["statement", "seed", "lhs", "rhs", "slack", "pass", "tolerance"];

/// `bounds.csv` from verification reports.
pub fn write_bounds(path: &Path, reports: &[BoundReport]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.statement.clone(),
                r.seed.to_string(),
                fmt_num(Some(r.lhs)),
                fmt_num(Some(r.rhs)),
                fmt_num(Some(r.slack)),
                u8::from(r.pass).to_string(),
                fmt_num(Some(r.tolerance)),
            ]
        })
        .collect();
    write_csv(path, &BOUNDS_HEADER, &rows)
}
