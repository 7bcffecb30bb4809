//! Per-round update times and per-step decision times by mode.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::optimizer::{Mode, OracleMode, SchemeConfig, Trainer};
use crate::policy::PolicySet;
use crate::rng::{derive_seed, seeded};

use super::report::quantile;
use super::{fmt_num, write_csv};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub game: MarkovGame,
    /// Shared hyperparameters; `mode` and `oracle` are overridden.
    pub scheme: SchemeConfig,
    pub modes: Vec<Mode>,
    pub warmup_rounds: usize,
    pub rounds: usize,
    pub decision_steps: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(game: MarkovGame) -> Self {
        Self {
            game,
            scheme: SchemeConfig::default(),
            modes: vec![Mode::Mappo, Mode::B2mapoDag, Mode::A2po],
            warmup_rounds: 5,
            rounds: 50,
            decision_steps: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mode: Mode,
    pub n_agents: usize,
    /// Median batch count over the timed rounds.
    pub batches: f64,
    /// Median per-round update time, seconds.
    pub train_seconds: f64,
    /// Mean per-step decision time of the conditioned policy, seconds.
    pub decision_conditioned: f64,
    /// Mean per-step decision time of the independent policy, seconds.
    pub decision_independent: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    quantile(&xs, 0.5)
}

/// Per-step decision time of both policies over random states.
fn decision_times(game: &MarkovGame, set: &PolicySet, steps: usize, seed: u64) -> (f64, f64) {
    let n = game.n_agents();
    let mut rng = seeded(seed);
    let keys: Vec<Vec<usize>> = (0..steps.max(1))
        .map(|_| {
            let s = rng.random_range(0..game.n_states());
            (0..n).map(|i| game.observation(i, s)).collect()
        })
        .collect();
    let mut sample_rng = seeded(seed ^ 1);
    let t = Instant::now();
    for k in &keys {
        black_box(set.sample_conditioned(k, &mut sample_rng));
    }
    let conditioned = t.elapsed().as_secs_f64() / keys.len() as f64;
    let t = Instant::now();
    for k in &keys {
        black_box(set.sample_independent(k, &mut sample_rng));
    }
    let independent = t.elapsed().as_secs_f64() / keys.len() as f64;
    (conditioned, independent)
}

/// Times every mode on the same game and seed. Warm-up rounds are run
/// but not timed.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.rounds == 0 {
        return Err(Error::input("bench needs at least one timed round"));
    }
    let mut out = Vec::with_capacity(config.modes.len());
    for &mode in &config.modes {
        let scheme = SchemeConfig {
            mode,
            oracle: OracleMode::Off,
            ..config.scheme.clone()
        };
        let mut trainer = Trainer::new(config.game.clone(), scheme, config.seed)?;
        for _ in 0..config.warmup_rounds {
            trainer.run_round()?;
        }
        let mut times = Vec::with_capacity(config.rounds);
        let mut batches = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            let r = trainer.run_round()?;
            times.push(r.update_seconds);
            batches.push(r.batch_count() as f64);
        }
        let (conditioned, independent) = decision_times(
            &config.game,
            &trainer.policies,
            config.decision_steps,
            derive_seed(config.seed, 31, 0),
        );
        out.push(BenchRecord {
            mode,
            n_agents: config.game.n_agents(),
            batches: median(batches),
            train_seconds: median(times),
            decision_conditioned: conditioned,
            decision_independent: independent,
        });
    }
    Ok(out)
}

pub const BENCH_HEADER: [&str; 6] =
    ["mode", "n_agents", "batches", "train_seconds", "decision_conditioned", "decision_independent"];

pub fn write_bench(path: &std::path::Path, records: &[BenchRecord]) -> Result<()> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.n_agents.to_string(),
                r.batches.to_string(),
                fmt_num(Some(r.train_seconds)),
                fmt_num(Some(r.decision_conditioned)),
                fmt_num(Some(r.decision_independent)),
            ]
        })
        .collect();
    write_csv(path, &BENCH_HEADER, &rows)
}
