//! Seeded rollouts, TD errors and advantage estimators.

use rayon::prelude::*;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::oracle::JointPolicy;
use crate::policy::PolicySet;
use crate::rng::substream;

/// One logged transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: usize,
    pub observations: Vec<usize>,
    /// Per-agent policy keys produced by the encoder.
    pub keys: Vec<usize>,
    pub actions: Vec<usize>,
    pub joint_index: usize,
    pub reward: f64,
    pub next_state: usize,
    pub behavior_logp: f64,
    pub agent_logps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub steps: Vec<Step>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
    }
}

/// Which of a [`PolicySet`]'s two joint policies generated the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorKind {
    Conditioned,
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub episodes: Vec<Episode>,
    pub behavior: BehaviorKind,
    pub seed: u64,
    pub horizon: usize,
    pub n_states: usize,
}

impl TrajectoryBatch {
    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.episodes.iter().flat_map(|e| e.steps.iter())
    }

    pub fn mean_discounted_return(&self, gamma: f64) -> f64 {
        let total: f64 = self.episodes.iter().map(|e| e.discounted_return(gamma)).sum();
        total / self.episodes.len().max(1) as f64
    }

    /// Largest gap between stored behavior log-probs and a recomputation
    /// under `policy`.
    pub fn max_logp_deviation(&self, policy: &dyn JointLogProb) -> f64 {
        self.steps()
            .map(|s| (s.behavior_logp - policy.step_logp(s)).abs())
            .fold(0.0, f64::max)
    }
}

/// Joint log-probability of a logged step under some policy.
pub trait JointLogProb: Sync {
    fn step_logp(&self, step: &Step) -> f64;
}

impl JointLogProb for JointPolicy {
    fn step_logp(&self, step: &Step) -> f64 {
        self.prob(step.state, step.joint_index).ln()
    }
}

impl JointLogProb for PolicySet {
    fn step_logp(&self, step: &Step) -> f64 {
        self.joint_logp(&step.keys, &step.actions)
    }
}

/// The independent product policy of a [`PolicySet`].
pub struct IndependentView<'a>(pub &'a PolicySet);

impl JointLogProb for IndependentView<'_> {
    fn step_logp(&self, step: &Step) -> f64 {
        self.0.independent_joint_logp(&step.keys, &step.actions)
    }
}

/// Rolls out the conditioned policy of `policies`. Episode `k` draws from
/// substream `k` of `seed`.
pub fn collect_rollouts(
    game: &MarkovGame,
    policies: &PolicySet,
    sequence: &BatchSequence,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if sequence != policies.sequence() {
        return Err(Error::input("batch sequence does not match the policy contexts"));
    }
    collect(game, policies, BehaviorKind::Conditioned, n_episodes, horizon, seed)
}

/// Rolls out the independent product policy of `policies`.
pub fn collect_independent_rollouts(
    game: &MarkovGame,
    policies: &PolicySet,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    collect(game, policies, BehaviorKind::Independent, n_episodes, horizon, seed)
}

fn collect(
    game: &MarkovGame,
    policies: &PolicySet,
    behavior: BehaviorKind,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    if game.action_counts() != policies.action_counts() {
        return Err(Error::input("policy set does not match the game's action spaces"));
    }
    for i in 0..game.n_agents() {
        if policies.encoder().n_keys(game.observation_count(i)) != policies.key_counts()[i] {
            return Err(Error::input(format!("agent {i} key count does not match the game")));
        }
    }
    if horizon == 0 {
        return Err(Error::input("horizon must be at least 1"));
    }
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|k| run_episode(game, policies, behavior, horizon, seed, k as u64))
        .collect();
    Ok(TrajectoryBatch {
        episodes,
        behavior,
        seed,
        horizon,
        n_states: game.n_states(),
    })
}

fn run_episode(
    game: &MarkovGame,
    policies: &PolicySet,
    behavior: BehaviorKind,
    horizon: usize,
    seed: u64,
    episode: u64,
) -> Episode {
    let mut rng = substream(seed, episode);
    let n = game.n_agents();
    let encoder = policies.encoder();
    let keep = encoder.history_len();
    let mut history: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut s = game.sample_initial(&mut rng);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let observations: Vec<usize> = (0..n).map(|i| game.observation(i, s)).collect();
        let keys: Vec<usize> = (0..n).map(|i| encoder.key(observations[i], &history[i])).collect();
        let (actions, agent_logps) = match behavior {
            BehaviorKind::Conditioned => policies.sample_conditioned(&keys, &mut rng),
            BehaviorKind::Independent => {
                let actions = policies.sample_independent(&keys, &mut rng);
                let logps = (0..n).map(|i| policies.independent_logp(i, keys[i], actions[i])).collect();
                (actions, logps)
            }
        };
        let joint_index = game.action_space().encode(&actions);
        let (next_state, reward) = game.step_index(s, joint_index, &mut rng);
        if keep > 0 {
            for i in 0..n {
                history[i].push((observations[i], actions[i]));
                if history[i].len() > keep {
                    history[i].remove(0);
                }
            }
        }
        steps.push(Step {
            state: s,
            behavior_logp: agent_logps.iter().sum(),
            observations,
            keys,
            actions,
            joint_index,
            reward,
            next_state,
            agent_logps,
        });
        s = next_state;
    }
    Episode { steps }
}

/// `delta_t = r_t + gamma V(s_{t+1}) - V(s_t)`, with zero bootstrap after
/// the last logged step of each episode.
pub fn td_errors(traj: &TrajectoryBatch, v: &[f64], gamma: f64) -> Result<Vec<Vec<f64>>> {
    if v.len() != traj.n_states {
        return Err(Error::input("value table length must equal state count"));
    }
    Ok(traj
        .episodes
        .iter()
        .map(|e| {
            let last = e.steps.len().saturating_sub(1);
            e.steps
                .iter()
                .enumerate()
                .map(|(t, s)| {
                    let boot = if t == last { 0.0 } else { v[s.next_state] };
                    s.reward + gamma * boot - v[s.state]
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMode {
    Gae,
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageEstimate {
    /// `values[e][t]` for episode `e`, step `t`.
    pub values: Vec<Vec<f64>>,
    pub lambda: f64,
    pub gamma: f64,
    pub mode: CorrectionMode,
}

impl AdvantageEstimate {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Zero-mean, unit-variance copy. A constant estimate is only centered.
    pub fn normalized(&self) -> Self {
        let n = self.flat().count().max(1) as f64;
        let mean = self.flat().sum::<f64>() / n;
        let var = self.flat().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        Self {
            values: self
                .values
                .iter()
                .map(|e| e.iter().map(|x| (x - mean) / scale).collect())
                .collect(),
            ..self.clone()
        }
    }
}

fn backward(deltas: &[Vec<f64>], gamma: f64, weights: &[Vec<f64>]) -> Vec<Vec<f64>> {
    deltas
        .iter()
        .zip(weights)
        .map(|(d, c)| {
            let mut out = vec![0.0; d.len()];
            let mut next = 0.0;
            for t in (0..d.len()).rev() {
                let carry = if t + 1 < d.len() { gamma * c[t + 1] * next } else { 0.0 };
                out[t] = d[t] + carry;
                next = out[t];
            }
            out
        })
        .collect()
}

/// Truncated importance-weighted advantage of `target` from data logged
/// under `behavior`: `A_t = delta_t + gamma c_{t+1} A_{t+1}` with
/// `c = lambda min(1, target / behavior)`.
pub fn corrected_advantage(
    traj: &TrajectoryBatch,
    v: &[f64],
    behavior: &dyn JointLogProb,
    target: &dyn JointLogProb,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageEstimate> {
    check_lambda(lambda)?;
    let deltas = td_errors(traj, v, gamma)?;
    let mut weights = Vec::with_capacity(traj.episodes.len());
    for e in &traj.episodes {
        let mut w = Vec::with_capacity(e.len());
        for s in &e.steps {
            let lb = behavior.step_logp(s);
            if lb == f64::NEG_INFINITY {
                return Err(Error::NumericDomain(
                    "behavior policy gives zero probability to a logged action".into(),
                ));
            }
            let c = lambda * (target.step_logp(s) - lb).exp().min(1.0);
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Internal(format!("truncated weight {c} outside [0, 1]")));
            }
            w.push(c);
        }
        weights.push(w);
    }
    finish(backward(&deltas, gamma, &weights), lambda, gamma, CorrectionMode::Corrected)
}

/// GAE(lambda): `A_t = delta_t + gamma lambda A_{t+1}`.
pub fn gae(traj: &TrajectoryBatch, v: &[f64], gamma: f64, lambda: f64) -> Result<AdvantageEstimate> {
    check_lambda(lambda)?;
    let deltas = td_errors(traj, v, gamma)?;
    let weights: Vec<Vec<f64>> = deltas.iter().map(|d| vec![lambda; d.len()]).collect();
    finish(backward(&deltas, gamma, &weights), lambda, gamma, CorrectionMode::Gae)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::input(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn finish(values: Vec<Vec<f64>>, lambda: f64, gamma: f64, mode: CorrectionMode) -> Result<AdvantageEstimate> {
    if values.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("advantage estimate has non-finite entries".into()));
    }
    Ok(AdvantageEstimate {
        values,
        lambda,
        gamma,
        mode,
    })
}

/// Per-state mean of empirical discounted returns-to-go. Unvisited states
/// get 0.
pub fn fit_value_table(traj: &TrajectoryBatch, gamma: f64) -> Vec<f64> {
    let mut sum = vec![0.0; traj.n_states];
    let mut count = vec![0usize; traj.n_states];
    for e in &traj.episodes {
        let mut g = 0.0;
        for s in e.steps.iter().rev() {
            g = s.reward + gamma * g;
            sum[s.state] += g;
            count[s.state] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect()
}
