//! Experiment configuration files.
//!
//! ```toml
//! [game]
//! builder = "chain"      # chain | random | file
//! agents = 4
//! coupling = 1.0
//!
//! [scheme]
//! mode = "b2mapo-dag"
//! clip = 0.2
//!
//! [scheme.scheduler]
//! period = 16
//!
//! [experiment]
//! seeds = [0, 1, 2]
//! rounds = 100
//! oracle = "monitor"
//! output = "chain4"
//! ```
//!
//! Unknown keys are errors. Every key is optional except where a builder
//! needs it. The README lists the full schema.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::{build_chain_game, build_random_game, chain_masked_observations, ChainGameParams, GroundTruthDependence, MarkovGame};
use crate::optimizer::{Mode, OracleMode, SchemeConfig};
use crate::policy::ObservationEncoder;
use crate::scheduler::SchedulerConfig;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "B2MAPO_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSection {
    pub builder: String,
    pub agents: Option<usize>,
    pub states: Option<usize>,
    pub actions: Option<usize>,
    pub coupling: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    /// Chain games only: agents observe only their own preferred action.
    pub masked: Option<bool>,
    pub file: Option<PathBuf>,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            builder: "chain".into(),
            agents: None,
            states: None,
            actions: None,
            coupling: None,
            gamma: None,
            seed: None,
            masked: None,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    pub d_k: Option<usize>,
    pub threshold: Option<f64>,
    pub period: Option<usize>,
    pub window: Option<usize>,
    pub generator_lr: Option<f64>,
    pub clip: Option<f64>,
    pub kl_coef: Option<f64>,
    pub epochs: Option<usize>,
    pub critic_lr: Option<f64>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub mode: Option<String>,
    pub clip: Option<f64>,
    pub clip_per_batch: Option<Vec<f64>>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub distill_period: Option<usize>,
    pub distill_coef: Option<f64>,
    pub distill_steps: Option<usize>,
    pub lambda: Option<f64>,
    pub episodes: Option<usize>,
    pub horizon: Option<usize>,
    pub normalize: Option<bool>,
    pub sharing: Option<bool>,
    /// Window length of the history encoder; 0 uses the current observation.
    pub history: Option<usize>,
    pub history_buckets: Option<usize>,
    /// Batch sequence for `b2mapo-fixed`, e.g. `"0,2;1"`.
    pub sequence: Option<String>,
    pub scheduler: Option<SchedulerSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub oracle: Option<String>,
    pub output: Option<PathBuf>,
    /// Also write `timings.csv` (wall-clock, not reproducible).
    pub timings: Option<bool>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            rounds: 50,
            oracle: None,
            output: None,
            timings: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub game: GameSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub game: MarkovGame,
    /// Known dependence edges when the builder provides them.
    pub truth: Option<GroundTruthDependence>,
    pub scheme: SchemeConfig,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub output: PathBuf,
    pub timings: bool,
}

fn field(name: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: name.into(),
        message: message.into(),
    }
}

/// Dotted key of the line containing byte `pos`, using the nearest section
/// header above it.
fn key_at(text: &str, pos: usize) -> String {
    let before = &text[..pos.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split('=').next().unwrap_or("").trim().to_string();
    let section = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    match (section, key.starts_with('[')) {
        (_, true) => key.trim_matches(|c| c == '[' || c == ']').to_string(),
        (Some(s), false) if !key.is_empty() => format!("{s}.{key}"),
        (_, false) => key,
    }
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let name = e.span().map(|s| key_at(text, s.start)).filter(|k| !k.is_empty()).unwrap_or_else(|| "config".into());
            field(&name, e.message().to_string())
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Builds the game and scheme. Relative game files resolve against
    /// `base`; relative outputs against `output_root`.
    pub fn resolve(&self, base: &Path, output_root: &Path) -> Result<ExperimentConfig> {
        let (game, truth) = self.build_game(base)?;
        let scheme = self.scheme_config(&game)?;
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(field("experiment.seeds", "at least one seed is required"));
        }
        if e.rounds == 0 {
            return Err(field("experiment.rounds", "rounds must be at least 1"));
        }
        let output = e.output.clone().unwrap_or_else(|| PathBuf::from("run"));
        let output = if output.is_absolute() { output } else { output_root.join(output) };
        Ok(ExperimentConfig {
            game,
            truth,
            scheme,
            seeds: e.seeds.clone(),
            rounds: e.rounds,
            output,
            timings: e.timings.unwrap_or(false),
        })
    }

    fn build_game(&self, base: &Path) -> Result<(MarkovGame, Option<GroundTruthDependence>)> {
        let g = &self.game;
        let wrap = |name: &'static str| move |e: Error| field(&format!("game.{name}"), e.to_string());
        match g.builder.as_str() {
            "chain" => {
                let mut params = ChainGameParams::new(g.agents.unwrap_or(3), g.coupling.unwrap_or(0.5), g.seed.unwrap_or(0));
                if let Some(s) = g.states {
                    params.n_states = s;
                }
                if let Some(gamma) = g.gamma {
                    params.gamma = gamma;
                }
                let (game, truth) = build_chain_game(&params).map_err(wrap("builder"))?;
                let game = if g.masked.unwrap_or(false) {
                    chain_masked_observations(&game, &params).map_err(wrap("masked"))?
                } else {
                    game
                };
                Ok((game, Some(truth)))
            }
            "random" => {
                let game = build_random_game(
                    g.agents.unwrap_or(2),
                    g.states.unwrap_or(3),
                    g.actions.unwrap_or(2),
                    g.gamma.unwrap_or(0.9),
                    g.seed.unwrap_or(0),
                )
                .map_err(wrap("builder"))?;
                Ok((game, None))
            }
            "file" => {
                let path = g.file.as_ref().ok_or_else(|| field("game.file", "builder `file` needs a path"))?;
                let path = if path.is_absolute() { path.clone() } else { base.join(path) };
                match MarkovGame::read(&path) {
                    Ok(game) => Ok((game, None)),
                    Err(e @ Error::Io { .. }) => Err(e),
                    Err(e) => Err(field("game.file", e.to_string())),
                }
            }
            other => Err(field("game.builder", format!("unknown builder `{other}` (expected chain, random or file)"))),
        }
    }

    fn scheme_config(&self, game: &MarkovGame) -> Result<SchemeConfig> {
        let s = &self.scheme;
        let d = SchemeConfig::default();
        let mode = match &s.mode {
            Some(m) => m.parse::<Mode>().map_err(|e| field("scheme.mode", e.to_string()))?,
            None => d.mode,
        };
        let oracle = match &self.experiment.oracle {
            Some(o) => o.parse::<OracleMode>().map_err(|e| field("experiment.oracle", e.to_string()))?,
            None => d.oracle,
        };
        let encoder = match s.history.unwrap_or(0) {
            0 => ObservationEncoder::Current,
            len => ObservationEncoder::Window {
                len,
                buckets: s.history_buckets.unwrap_or(64),
            },
        };
        if let ObservationEncoder::Window { buckets: 0, .. } = encoder {
            return Err(field("scheme.history_buckets", "need at least one bucket"));
        }
        let fixed_sequence = match &s.sequence {
            Some(text) => Some(
                BatchSequence::parse(text, game.n_agents()).map_err(|e| field("scheme.sequence", e.to_string()))?,
            ),
            None => None,
        };
        let sd = SchedulerConfig::default();
        let sc = s.scheduler.clone().unwrap_or_default();
        let scheduler = SchedulerConfig {
            d_k: sc.d_k.unwrap_or(sd.d_k),
            threshold: sc.threshold.or(sd.threshold),
            period: sc.period.unwrap_or(sd.period),
            window: sc.window.unwrap_or(sd.window),
            generator_lr: sc.generator_lr.unwrap_or(sd.generator_lr),
            clip: sc.clip.unwrap_or(sd.clip),
            kl_coef: sc.kl_coef.unwrap_or(sd.kl_coef),
            generator_epochs: sc.epochs.unwrap_or(sd.generator_epochs),
            critic_lr: sc.critic_lr.unwrap_or(sd.critic_lr),
            init_scale: sc.init_scale.unwrap_or(sd.init_scale),
        };
        if scheduler.period == 0 {
            return Err(field("scheme.scheduler.period", "period must be at least 1"));
        }
        if scheduler.d_k == 0 {
            return Err(field("scheme.scheduler.d_k", "key width must be at least 1"));
        }
        if let Some(t) = scheduler.threshold {
            if !(0.0..1.0).contains(&t) {
                return Err(field("scheme.scheduler.threshold", "threshold must lie in [0, 1)"));
            }
        }
        let config = SchemeConfig {
            mode,
            clip: s.clip.unwrap_or(d.clip),
            clip_per_batch: s.clip_per_batch.clone().unwrap_or_default(),
            lr: s.lr.unwrap_or(d.lr),
            epochs: s.epochs.unwrap_or(d.epochs),
            distill_period: s.distill_period.unwrap_or(d.distill_period),
            distill_coef: s.distill_coef.unwrap_or(d.distill_coef),
            distill_steps: s.distill_steps.unwrap_or(d.distill_steps),
            lambda: s.lambda.unwrap_or(d.lambda),
            n_episodes: s.episodes.unwrap_or(d.n_episodes),
            horizon: s.horizon.unwrap_or(d.horizon),
            oracle,
            normalize_advantages: s.normalize.unwrap_or(d.normalize_advantages),
            sharing: s.sharing.unwrap_or(d.sharing),
            encoder,
            fixed_sequence,
            scheduler,
        };
        config.validate(game.n_agents())?;
        Ok(config)
    }
}

/// Output root from [`OUTPUT_ROOT_ENV`], else the current directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str) -> Result<ExperimentConfig> {
        ConfigFile::from_toml(text)?.resolve(Path::new("."), Path::new("/tmp/root"))
    }

    #[test]
    fn defaults_resolve() {
        let c = resolve("").unwrap();
        assert_eq!(c.game.n_agents(), 3);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.output, PathBuf::from("/tmp/root/run"));
        assert!(c.truth.is_some());
    }

    #[test]
    fn full_example_resolves() {
        let c = resolve(
            r#"
[game]
builder = "chain"
agents = 4
coupling = 1.0

[scheme]
mode = "b2mapo-fixed"
sequence = "0,2;1,3"
clip = 0.1

[scheme.scheduler]
period = 8

[experiment]
seeds = [1, 2]
rounds = 3
oracle = "monitor"
output = "chain4"
"#,
        )
        .unwrap();
        assert_eq!(c.scheme.mode, Mode::B2mapoFixed);
        assert_eq!(c.scheme.fixed_sequence.unwrap().to_string(), "[{0,2},{1,3}]");
        assert_eq!(c.scheme.scheduler.period, 8);
        assert_eq!(c.scheme.oracle, OracleMode::Monitor);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("[scheme]\nclpi = 0.2\n", "scheme.clpi"),
            ("[scheme]\nclip = \"big\"\n", "scheme.clip"),
            ("[scheme]\nclip = 1.5\n", "scheme.clip"),
            ("[game]\nbuilder = \"grid\"\n", "game.builder"),
            ("[experiment]\nseeds = []\nrounds = 1\n", "experiment.seeds"),
            ("[experiment]\nseeds = [0]\nrounds = 0\n", "experiment.rounds"),
            ("[scheme]\nmode = \"happo\"\n", "scheme.mode"),
            ("[scheme.scheduler]\nperiod = 0\n", "scheme.scheduler.period"),
        ];
        for (text, want) in cases {
            match resolve(text) {
                Err(Error::Config { field, .. }) => assert_eq!(field, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
