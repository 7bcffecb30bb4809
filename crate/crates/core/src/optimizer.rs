//! Lower layer: batch-by-batch clipped updates, the MAPPO and A2PO special
//! cases, and distillation of the independent policies.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::oracle::{exact_q_advantage, expected_return, max_tv, tv_distance, visitation, AdvantageSource, JointPolicy};
use crate::policy::{kl, logprob_gradient_row, softmax, LogitTable, ObservationEncoder, PolicySet};
use crate::rng::{derive_seed, seeded};
use crate::rollout::{collect_rollouts, corrected_advantage, fit_value_table, gae, TrajectoryBatch};
use crate::scheduler::{DagPlan, DagScheduler, SchedulerConfig};

const TAG_ROLLOUT: u64 = 1;
const TAG_WARMUP: u64 = 2;
const TAG_DAG: u64 = 3;
const TAG_SCORER: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Mappo,
    A2po,
    B2mapoDag,
    B2mapoFixed,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Mappo, Mode::A2po, Mode::B2mapoDag, Mode::B2mapoFixed];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mappo => "mappo",
            Mode::A2po => "a2po",
            Mode::B2mapoDag => "b2mapo-dag",
            Mode::B2mapoFixed => "b2mapo-fixed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown mode `{s}` (expected mappo, a2po, b2mapo-dag or b2mapo-fixed)")))
    }
}

/// How the exact oracle takes part in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OracleMode {
    /// No exact quantities.
    Off,
    /// Train on estimates, record exact returns and update chains.
    Monitor,
    /// Train on exact expectations: every `(s, a)` weighted by
    /// `d^pi(s) pi(a|s)` with the exact advantage of the correction target.
    Exact,
}

impl FromStr for OracleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(OracleMode::Off),
            "monitor" => Ok(OracleMode::Monitor),
            "exact" => Ok(OracleMode::Exact),
            _ => Err(Error::input(format!("unknown oracle mode `{s}` (expected off, monitor or exact)"))),
        }
    }
}

impl fmt::Display for OracleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMode::Off => "off",
            OracleMode::Monitor => "monitor",
            OracleMode::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub mode: Mode,
    /// Clip parameter for every batch unless overridden per batch.
    pub clip: f64,
    /// Per-batch clip parameters; batch `k` uses entry `k` when present.
    pub clip_per_batch: Vec<f64>,
    pub lr: f64,
    pub epochs: usize,
    /// Distillation period `K` in rounds.
    pub distill_period: usize,
    /// Distillation step size.
    pub distill_coef: f64,
    pub distill_steps: usize,
    pub lambda: f64,
    pub n_episodes: usize,
    pub horizon: usize,
    pub oracle: OracleMode,
    pub normalize_advantages: bool,
    pub sharing: bool,
    pub encoder: ObservationEncoder,
    /// Sequence for `b2mapo-fixed`.
    pub fixed_sequence: Option<BatchSequence>,
    pub scheduler: SchedulerConfig,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::B2mapoDag,
            clip: 0.2,
            clip_per_batch: Vec::new(),
            lr: 0.05,
            epochs: 4,
            distill_period: 5,
            distill_coef: 0.5,
            distill_steps: 20,
            lambda: 0.95,
            n_episodes: 32,
            horizon: 64,
            oracle: OracleMode::Off,
            normalize_advantages: true,
            sharing: false,
            encoder: ObservationEncoder::Current,
            fixed_sequence: None,
            scheduler: SchedulerConfig::default(),
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl SchemeConfig {
    pub fn clip_for(&self, k: usize) -> f64 {
        self.clip_per_batch.get(k).copied().unwrap_or(self.clip)
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        for (k, &e) in std::iter::once(&self.clip).chain(&self.clip_per_batch).enumerate() {
            if !(e > 0.0 && e < 1.0) {
                let field = if k == 0 { "scheme.clip".to_string() } else { format!("scheme.clip_per_batch[{}]", k - 1) };
                return Err(config_error(&field, format!("clip must lie in (0, 1), got {e}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_error("scheme.lr", "learning rate must be positive"));
        }
        if self.distill_period == 0 {
            return Err(config_error("scheme.distill_period", "distillation period must be at least 1"));
        }
        if !(self.distill_coef >= 0.0 && self.distill_coef.is_finite()) {
            return Err(config_error("scheme.distill_coef", "coefficient must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(config_error("scheme.lambda", "lambda must lie in [0, 1]"));
        }
        if self.n_episodes == 0 {
            return Err(config_error("scheme.episodes", "need at least one episode per round"));
        }
        if self.horizon == 0 {
            return Err(config_error("scheme.horizon", "horizon must be at least 1"));
        }
        let keyed = self.encoder == ObservationEncoder::Current;
        if !keyed && (self.oracle != OracleMode::Off || matches!(self.mode, Mode::A2po | Mode::B2mapoDag)) {
            return Err(config_error(
                "scheme.history",
                "history encoders need oracle = off and a mode without re-sequencing (mappo or b2mapo-fixed)",
            ));
        }
        match (&self.mode, &self.fixed_sequence) {
            (Mode::B2mapoFixed, None) => {
                return Err(config_error("scheme.sequence", "b2mapo-fixed needs a batch sequence"))
            }
            (Mode::B2mapoFixed, Some(seq)) if seq.n_agents() != n_agents => {
                return Err(config_error("scheme.sequence", "sequence agent count does not match the game"))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Training data for one update: per-agent keys and actions, a sample
/// weight and the per-agent log-probabilities under the round's behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSample {
    pub state: usize,
    pub joint_index: usize,
    pub keys: Vec<usize>,
    pub actions: Vec<usize>,
    pub weight: f64,
    pub old_logps: Vec<f64>,
}

/// One sample per logged step, uniform weights.
pub fn samples_from_rollout(traj: &TrajectoryBatch) -> Vec<UpdateSample> {
    let w = 1.0 / traj.n_steps().max(1) as f64;
    traj.steps()
        .map(|s| UpdateSample {
            state: s.state,
            joint_index: s.joint_index,
            keys: s.keys.clone(),
            actions: s.actions.clone(),
            weight: w,
            old_logps: s.agent_logps.clone(),
        })
        .collect()
}

/// Every `(s, a)` with `d^pi(s) pi(a|s) > 0`, weighted by that mass.
pub fn samples_exact(game: &MarkovGame, pi: &PolicySet) -> Result<Vec<UpdateSample>> {
    let joint = pi.joint_policy(game)?;
    let d = visitation(game, &joint)?;
    let space = game.action_space();
    let mut out = Vec::new();
    for s in 0..game.n_states() {
        let keys: Vec<usize> = (0..game.n_agents()).map(|i| game.observation(i, s)).collect();
        for (a, actions) in space.iter().enumerate() {
            let w = d[s] * joint.prob(s, a);
            if w <= 0.0 {
                continue;
            }
            let old_logps = (0..game.n_agents()).map(|i| pi.agent_logp(i, keys[i], &actions)).collect();
            out.push(UpdateSample {
                state: s,
                joint_index: a,
                keys: keys.clone(),
                actions,
                weight: w,
                old_logps,
            });
        }
    }
    Ok(out)
}

fn group_ratio_log(set: &PolicySet, sample: &UpdateSample, agents: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in agents {
        let old = sample.old_logps[i];
        if old == f64::NEG_INFINITY {
            return Err(Error::NumericDomain(format!(
                "old policy gives zero probability to agent {i}'s logged action"
            )));
        }
        total += set.agent_logp(i, sample.keys[i], &sample.actions) - old;
    }
    Ok(total)
}

/// `l = (new^{b_k} / old^{b_k}) * clip(prod_{B_k} new / old, 1 +- eps/2)`.
#[allow(clippy::too_many_arguments)]
pub fn batch_ratio(
    new: &PolicySet,
    old: &PolicySet,
    keys: &[usize],
    actions: &[usize],
    batch: &[usize],
    preceding: &[usize],
    clip: f64,
) -> Result<f64> {
    let old_logps: Vec<f64> = (0..old.n_agents()).map(|i| old.agent_logp(i, keys[i], actions)).collect();
    let sample = UpdateSample {
        state: 0,
        joint_index: 0,
        keys: keys.to_vec(),
        actions: actions.to_vec(),
        weight: 1.0,
        old_logps,
    };
    let g = group_ratio_log(new, &sample, preceding)?.exp().clamp(1.0 - clip / 2.0, 1.0 + clip / 2.0);
    Ok(group_ratio_log(new, &sample, batch)?.exp() * g)
}

/// Weighted mean of `min(l A, clip(l, 1 +- eps) A)`.
pub fn batch_surrogate_loss(advantages: &[f64], l_values: &[f64], weights: &[f64], clip: f64) -> f64 {
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for ((&a, &l), &w) in advantages.iter().zip(l_values).zip(weights) {
        acc += w * clipped_term(l, a, clip).0;
    }
    acc / total_w
}

/// `(min(l A, clip(l) A), unclipped branch active)`.
fn clipped_term(l: f64, a: f64, clip: f64) -> (f64, bool) {
    let lo = l * a;
    let hi = l.clamp(1.0 - clip, 1.0 + clip) * a;
    if lo <= hi {
        (lo, true)
    } else {
        (hi, false)
    }
}

/// Clipped preceding-batch factor `g` of every sample for batch `k`.
pub fn preceding_factors(set: &PolicySet, k: usize, samples: &[UpdateSample], clip: f64) -> Result<Vec<f64>> {
    let preceding = set.sequence().preceding(k);
    samples
        .iter()
        .map(|s| Ok(group_ratio_log(set, s, &preceding)?.exp().clamp(1.0 - clip / 2.0, 1.0 + clip / 2.0)))
        .collect()
}

fn zero_grads(tables: &[LogitTable]) -> Vec<Vec<f64>> {
    tables.iter().map(|t| vec![0.0; t.as_slice().len()]).collect()
}

/// Batch surrogate for the agents of `batch` and its gradient per
/// conditioned table slot (same layout as the table).
pub fn batch_surrogate_and_gradient(
    set: &PolicySet,
    batch: &[usize],
    samples: &[UpdateSample],
    advantages: &[f64],
    preceding: &[f64],
    clip: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut grads = zero_grads(set.conditioned_tables());
    let total_w: f64 = samples.iter().map(|s| s.weight).sum();
    if total_w <= 0.0 {
        return Ok((0.0, grads));
    }
    let mut objective = 0.0;
    for ((s, &a), &g) in samples.iter().zip(advantages).zip(preceding) {
        let l = group_ratio_log(set, s, batch)?.exp() * g;
        let (term, active) = clipped_term(l, a, clip);
        objective += s.weight * term;
        if !active || a == 0.0 {
            continue;
        }
        let scale = s.weight * a * l / total_w;
        for &i in batch {
            let (slot, row) = set.conditioned_row(i, s.keys[i], &s.actions);
            let table = &set.conditioned_tables()[slot];
            let p = softmax(table.row(row));
            let n = table.n_actions();
            for (x, gx) in logprob_gradient_row(&p, s.actions[i]).into_iter().enumerate() {
                grads[slot][row * n + x] += scale * gx;
            }
        }
    }
    Ok((objective / total_w, grads))
}

/// Per-agent clipped surrogate `sum_i mean min(r^i A, clip(r^i) A)` and its
/// gradient per conditioned slot. Requires a single-batch policy set.
pub fn mappo_objective_and_gradient(
    set: &PolicySet,
    samples: &[UpdateSample],
    advantages: &[f64],
    clip: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if set.sequence().len() != 1 {
        return Err(Error::input("mappo update needs a single-batch policy set"));
    }
    let mut grads = zero_grads(set.conditioned_tables());
    let total_w: f64 = samples.iter().map(|s| s.weight).sum();
    if total_w <= 0.0 {
        return Ok((0.0, grads));
    }
    let mut objective = 0.0;
    for (s, &a) in samples.iter().zip(advantages) {
        for i in 0..set.n_agents() {
            let r = group_ratio_log(set, s, &[i])?.exp();
            let (term, active) = clipped_term(r, a, clip);
            objective += s.weight * term;
            if !active || a == 0.0 {
                continue;
            }
            let (slot, row) = set.conditioned_row(i, s.keys[i], &s.actions);
            let table = &set.conditioned_tables()[slot];
            let p = softmax(table.row(row));
            let n = table.n_actions();
            let scale = s.weight * a * r / total_w;
            for (x, gx) in logprob_gradient_row(&p, s.actions[i]).into_iter().enumerate() {
                grads[slot][row * n + x] += scale * gx;
            }
        }
    }
    Ok((objective / total_w, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchUpdate {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// Largest row TV change per agent of the batch, in batch order.
    pub alpha_agents: Vec<f64>,
}

fn apply(set: &mut PolicySet, grads: &[Vec<f64>], lr: f64) -> Result<()> {
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("surrogate gradient is not finite".into()));
    }
    for (table, g) in set.conditioned_tables_mut().iter_mut().zip(grads) {
        for (x, d) in table.as_mut_slice().iter_mut().zip(g) {
            *x += lr * d;
        }
    }
    Ok(())
}

fn agent_alphas(before: &PolicySet, after: &PolicySet, agents: &[usize]) -> Vec<f64> {
    agents
        .iter()
        .map(|&i| {
            let slot = after.conditioned[i].slot;
            let (t0, t1) = (&before.conditioned_tables()[slot], &after.conditioned_tables()[slot]);
            (0..t1.n_rows())
                .map(|r| tv_distance(&t0.probs(r), &t1.probs(r)).unwrap_or(0.0))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Step sizes for one update call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSettings {
    pub lr: f64,
    pub epochs: usize,
    pub clip: f64,
}

/// Gradient-ascent epochs on batch `k`'s surrogate, touching only the
/// tables of batch `k`'s agents.
pub fn update_batch(
    set: &mut PolicySet,
    k: usize,
    samples: &[UpdateSample],
    advantages: &[f64],
    settings: &UpdateSettings,
) -> Result<BatchUpdate> {
    if samples.len() != advantages.len() {
        return Err(Error::input("one advantage per sample required"));
    }
    let batch = set.sequence().batch(k).to_vec();
    let preceding = preceding_factors(set, k, samples, settings.clip)?;
    let start = set.clone();
    let mut before = 0.0;
    for epoch in 0..settings.epochs {
        let (obj, grads) = batch_surrogate_and_gradient(set, &batch, samples, advantages, &preceding, settings.clip)?;
        if epoch == 0 {
            before = obj;
        }
        apply(set, &grads, settings.lr)?;
    }
    let (after, _) = batch_surrogate_and_gradient(set, &batch, samples, advantages, &preceding, settings.clip)?;
    if settings.epochs == 0 {
        before = after;
    }
    Ok(BatchUpdate {
        surrogate_before: before,
        surrogate_after: after,
        alpha_agents: agent_alphas(&start, set, &batch),
    })
}

/// Simultaneous per-agent clipped update of every agent.
pub fn mappo_update(
    set: &mut PolicySet,
    samples: &[UpdateSample],
    advantages: &[f64],
    settings: &UpdateSettings,
) -> Result<BatchUpdate> {
    if samples.len() != advantages.len() {
        return Err(Error::input("one advantage per sample required"));
    }
    let start = set.clone();
    let mut before = 0.0;
    for epoch in 0..settings.epochs {
        let (obj, grads) = mappo_objective_and_gradient(set, samples, advantages, settings.clip)?;
        if epoch == 0 {
            before = obj;
        }
        apply(set, &grads, settings.lr)?;
    }
    let (after, _) = mappo_objective_and_gradient(set, samples, advantages, settings.clip)?;
    if settings.epochs == 0 {
        before = after;
    }
    let agents: Vec<usize> = (0..set.n_agents()).collect();
    Ok(BatchUpdate {
        surrogate_before: before,
        surrogate_after: after,
        alpha_agents: agent_alphas(&start, set, &agents),
    })
}

/// Per agent and key: state weight and target distribution for the
/// independent policy. Keys never seen carry weight 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillTargets {
    pub rows: Vec<Vec<(f64, Vec<f64>)>>,
}

/// Targets from a rollout: the conditioned row averaged over the logged
/// contexts of each key, weighted by key frequency.
pub fn distill_targets(set: &PolicySet, traj: &TrajectoryBatch) -> DistillTargets {
    let n = set.n_agents();
    let mut rows: Vec<Vec<(f64, Vec<f64>)>> = (0..n)
        .map(|i| vec![(0.0, vec![0.0; set.action_counts()[i]]); set.key_counts()[i]])
        .collect();
    let total = traj.n_steps().max(1) as f64;
    for step in traj.steps() {
        for (i, agent_rows) in rows.iter_mut().enumerate() {
            let (slot, row) = set.conditioned_row(i, step.keys[i], &step.actions);
            let p = set.conditioned_tables()[slot].probs(row);
            let entry = &mut agent_rows[step.keys[i]];
            entry.0 += 1.0;
            entry.1.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
    }
    for agent_rows in &mut rows {
        for (count, target) in agent_rows.iter_mut() {
            if *count > 0.0 {
                target.iter_mut().for_each(|x| *x /= *count);
                *count /= total;
            }
        }
    }
    DistillTargets { rows }
}

/// Exact targets: per-key marginals of the conditioned joint policy,
/// weighted by visitation.
pub fn distill_targets_exact(set: &PolicySet, game: &MarkovGame) -> Result<DistillTargets> {
    let joint = set.joint_policy(game)?;
    let d = visitation(game, &joint)?;
    let marginals = set.marginalize(game)?;
    let rows = marginals
        .into_iter()
        .enumerate()
        .map(|(i, per_key)| {
            per_key
                .into_iter()
                .enumerate()
                .map(|(o, m)| {
                    let w: f64 = (0..game.n_states()).filter(|&s| game.observation(i, s) == o).map(|s| d[s]).sum();
                    (w, m)
                })
                .collect()
        })
        .collect();
    Ok(DistillTargets { rows })
}

/// Per-agent `sum_o w_o KL(m_o || pi_ind(.|o))`.
pub fn distill_loss(set: &PolicySet, targets: &DistillTargets) -> Result<Vec<f64>> {
    targets
        .rows
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let mut total = 0.0;
            for (o, (w, m)) in rows.iter().enumerate() {
                if *w > 0.0 {
                    total += w * kl(m, &set.independent_probs(i, o)?)?;
                }
            }
            Ok(total)
        })
        .collect()
}

/// Gradient of the summed distillation loss per independent slot.
pub fn distill_gradient(set: &PolicySet, targets: &DistillTargets) -> Vec<Vec<f64>> {
    let mut grads = zero_grads(set.independent_tables());
    for (i, rows) in targets.rows.iter().enumerate() {
        let slot = set.independent[i].slot;
        let n = set.independent[i].n_actions;
        for (o, (w, m)) in rows.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            let q = softmax(set.independent_tables()[slot].row(o));
            for x in 0..n {
                grads[slot][o * n + x] += w * (q[x] - m[x]);
            }
        }
    }
    grads
}

/// One descent step of size `coef`. Returns the per-agent loss before it.
pub fn distill_step_with(set: &mut PolicySet, targets: &DistillTargets, coef: f64) -> Result<Vec<f64>> {
    let loss = distill_loss(set, targets)?;
    let grads = distill_gradient(set, targets);
    if grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("distillation gradient is not finite".into()));
    }
    for (table, g) in set.independent_tables_mut().iter_mut().zip(&grads) {
        for (x, d) in table.as_mut_slice().iter_mut().zip(g) {
            *x -= coef * d;
        }
    }
    Ok(loss)
}

/// [`distill_step_with`] on targets built from `traj`.
pub fn distill_step(set: &mut PolicySet, traj: &TrajectoryBatch, coef: f64) -> Result<Vec<f64>> {
    let targets = distill_targets(set, traj);
    distill_step_with(set, &targets, coef)
}

/// Per-agent magnitude of the marginal advantage: for each agent the
/// weighted mean of `|mean A|` over `(key, own action)` groups.
pub fn marginal_advantage_magnitudes(set: &PolicySet, samples: &[UpdateSample], advantages: &[f64]) -> Vec<f64> {
    let n = set.n_agents();
    let total_w: f64 = samples.iter().map(|s| s.weight).sum();
    (0..n)
        .map(|i| {
            let width = set.action_counts()[i];
            let mut sum = vec![0.0; set.key_counts()[i] * width];
            let mut mass = vec![0.0; set.key_counts()[i] * width];
            for (s, &a) in samples.iter().zip(advantages) {
                let g = s.keys[i] * width + s.actions[i];
                sum[g] += s.weight * a;
                mass[g] += s.weight;
            }
            if total_w <= 0.0 {
                return 0.0;
            }
            sum.iter()
                .zip(&mass)
                .filter(|(_, &m)| m > 0.0)
                .map(|(&s, &m)| m / total_w * (s / m).abs())
                .sum()
        })
        .collect()
}

/// Batch sequence for the next round.
pub fn plan_round(
    mode: Mode,
    n_agents: usize,
    fixed: Option<&BatchSequence>,
    dag_sequence: Option<&BatchSequence>,
    magnitudes: &[f64],
) -> Result<BatchSequence> {
    match mode {
        Mode::Mappo => Ok(BatchSequence::single(n_agents)),
        Mode::A2po => {
            if magnitudes.len() != n_agents {
                return Err(Error::input("need one advantage magnitude per agent"));
            }
            let mut order: Vec<usize> = (0..n_agents).collect();
            order.sort_by(|&a, &b| magnitudes[b].total_cmp(&magnitudes[a]).then(a.cmp(&b)));
            BatchSequence::singletons(&order)
        }
        Mode::B2mapoDag => dag_sequence
            .cloned()
            .ok_or_else(|| Error::Internal("dag mode planned without a scheduler sequence".into())),
        Mode::B2mapoFixed => {
            let seq = fixed.ok_or_else(|| Error::input("b2mapo-fixed needs a batch sequence"))?;
            if seq.n_agents() != n_agents {
                return Err(Error::input("fixed sequence does not cover the game's agents"));
            }
            Ok(seq.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub agents: Vec<usize>,
    pub clip: f64,
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub alpha_agents: Vec<f64>,
    /// Joint max-state TV between consecutive chain elements (oracle on).
    pub alpha_joint: Option<f64>,
    pub j_after: Option<f64>,
    /// Advantage recomputation plus the update epochs.
    pub update_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagRoundInfo {
    pub edges: Vec<(usize, usize)>,
    pub generator_objective: Option<f64>,
    pub critic_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub sequence: BatchSequence,
    pub batches: Vec<BatchReport>,
    pub j_before: Option<f64>,
    pub j_after: Option<f64>,
    pub j_independent: Option<f64>,
    /// Mean discounted return of the round's rollout.
    pub j_mc: f64,
    /// Change of exact return caused by re-sequencing at round start.
    pub j_replan_delta: Option<f64>,
    pub distill_kl: Option<Vec<f64>>,
    pub dag: Option<DagRoundInfo>,
    pub rollout_seconds: f64,
    /// Sum of batch update times plus scheduler overhead.
    pub update_seconds: f64,
}

impl RoundReport {
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }
}

/// Round-start policy and the realized update chain, as exact joint
/// policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedChain {
    pub pi: JointPolicy,
    pub chain: Vec<JointPolicy>,
    pub sequence: BatchSequence,
    /// Estimator whose tabulated expectation describes the training
    /// advantages.
    pub source: AdvantageSource,
}

/// Runs rounds of the configured scheme on one game.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub game: MarkovGame,
    pub config: SchemeConfig,
    pub policies: PolicySet,
    pub scheduler: Option<DagScheduler>,
    pub seed: u64,
    round: usize,
    next_sequence: Option<BatchSequence>,
    plan_in_use: Option<DagPlan>,
    plan_to_reward: Option<DagPlan>,
    pub last_chain: Option<RecordedChain>,
}

impl Trainer {
    /// Uniform initial policies.
    pub fn new(game: MarkovGame, config: SchemeConfig, seed: u64) -> Result<Self> {
        let start = match (&config.mode, &config.fixed_sequence) {
            (Mode::B2mapoFixed, Some(seq)) => seq.clone(),
            _ => BatchSequence::single(game.n_agents()),
        };
        let policies = PolicySet::new(&game, start, config.sharing, config.encoder)?;
        Self::with_policies(game, config, policies, seed)
    }

    pub fn with_policies(game: MarkovGame, config: SchemeConfig, policies: PolicySet, seed: u64) -> Result<Self> {
        config.validate(game.n_agents())?;
        let scheduler = if config.mode == Mode::B2mapoDag {
            Some(DagScheduler::new(&game, config.scheduler.clone(), derive_seed(seed, TAG_SCORER, 0))?)
        } else {
            None
        };
        let next_sequence = match config.mode {
            Mode::Mappo => Some(BatchSequence::single(game.n_agents())),
            Mode::B2mapoFixed => config.fixed_sequence.clone(),
            Mode::A2po | Mode::B2mapoDag => None,
        };
        Ok(Self {
            game,
            config,
            policies,
            scheduler,
            seed,
            round: 0,
            next_sequence,
            plan_in_use: None,
            plan_to_reward: None,
            last_chain: None,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// The scheduler plan for the coming round (dag mode).
    pub fn current_plan(&self) -> Option<&DagPlan> {
        self.plan_in_use.as_ref()
    }

    fn oracle_on(&self) -> bool {
        self.config.oracle != OracleMode::Off
    }

    fn rollout(&self, tag: u64) -> Result<TrajectoryBatch> {
        collect_rollouts(
            &self.game,
            &self.policies,
            self.policies.sequence(),
            self.config.n_episodes,
            self.config.horizon,
            derive_seed(self.seed, tag, self.round as u64),
        )
    }

    fn first_advantages(&self, traj: &TrajectoryBatch, samples: &[UpdateSample]) -> Result<Vec<f64>> {
        match self.config.oracle {
            OracleMode::Exact => {
                let joint = self.policies.joint_policy(&self.game)?;
                let (_, a) = exact_q_advantage(&self.game, &joint)?;
                Ok(samples.iter().map(|s| a[s.state * self.game.n_joint() + s.joint_index]).collect())
            }
            _ => {
                let v = fit_value_table(traj, self.game.gamma());
                Ok(gae(traj, &v, self.game.gamma(), self.config.lambda)?.flat().collect())
            }
        }
    }

    fn samples_for(&self, traj: &TrajectoryBatch) -> Result<Vec<UpdateSample>> {
        match self.config.oracle {
            OracleMode::Exact => samples_exact(&self.game, &self.policies),
            _ => Ok(samples_from_rollout(traj)),
        }
    }

    fn plan_next(&mut self, traj: &TrajectoryBatch, magnitudes: &[f64]) -> Result<f64> {
        let start = Instant::now();
        let dag_sequence = if let Some(sched) = &self.scheduler {
            let mut rng = seeded(derive_seed(self.seed, TAG_DAG, self.round as u64));
            let plan = sched.plan(sched.features(traj), &mut rng)?;
            let seq = plan.sequence.clone();
            self.plan_to_reward = self.plan_in_use.take();
            self.plan_in_use = Some(plan);
            Some(seq)
        } else {
            None
        };
        self.next_sequence = Some(plan_round(
            self.config.mode,
            self.game.n_agents(),
            self.config.fixed_sequence.as_ref(),
            dag_sequence.as_ref(),
            magnitudes,
        )?);
        Ok(start.elapsed().as_secs_f64())
    }

    /// Sequence the next round will use, planning it from a warm-up
    /// rollout if no round has planned one yet.
    pub fn prepare(&mut self) -> Result<&BatchSequence> {
        if self.next_sequence.is_none() {
            self.warm_up()?;
        }
        Ok(self.next_sequence.as_ref().expect("planned above"))
    }

    fn warm_up(&mut self) -> Result<()> {
        let traj = self.rollout(TAG_WARMUP)?;
        let samples = self.samples_for(&traj)?;
        let adv = self.first_advantages(&traj, &samples)?;
        let magnitudes = marginal_advantage_magnitudes(&self.policies, &samples, &adv);
        self.plan_next(&traj, &magnitudes)?;
        Ok(())
    }

    /// One round: re-sequence, roll out, update batch by batch, distill
    /// every `K` rounds, plan the next sequence.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        self.prepare()?;
        let gamma = self.game.gamma();
        let planned = self.next_sequence.clone().expect("planned above");
        let mut j_replan_delta = None;
        if &planned != self.policies.sequence() {
            let before = if self.oracle_on() { Some(self.exact_j()?) } else { None };
            self.policies.resequence(&self.game, planned)?;
            if let Some(b) = before {
                j_replan_delta = Some(self.exact_j()? - b);
            }
        }
        let sequence = self.policies.sequence().clone();

        let t0 = Instant::now();
        let traj = self.rollout(TAG_ROLLOUT)?;
        let rollout_seconds = t0.elapsed().as_secs_f64();

        let mut dag_info = None;
        let mut scheduler_seconds = 0.0;
        if let (Some(sched), Some(plan)) = (self.scheduler.as_mut(), self.plan_to_reward.take()) {
            let t = Instant::now();
            let report = sched.learn(&plan, &traj, gamma)?;
            scheduler_seconds += t.elapsed().as_secs_f64();
            dag_info = Some(DagRoundInfo {
                edges: Vec::new(),
                generator_objective: Some(report.generator_objective),
                critic_loss: Some(report.critic_loss),
                seconds: 0.0,
            });
        }

        let behavior = self.policies.clone();
        let pi_joint = if self.oracle_on() { Some(behavior.joint_policy(&self.game)?) } else { None };
        let j_before = match &pi_joint {
            Some(p) => Some(expected_return(&self.game, p)?),
            None => None,
        };
        let samples = self.samples_for(&traj)?;
        let v = fit_value_table(&traj, gamma);
        let mut chain = Vec::new();
        let mut batches = Vec::with_capacity(sequence.len());
        let mut magnitudes = vec![0.0; self.game.n_agents()];
        let mut prev_joint = pi_joint.clone();

        if self.config.mode == Mode::Mappo {
            let t = Instant::now();
            let adv = self.advantages(&traj, &samples, &v, &behavior)?;
            magnitudes = marginal_advantage_magnitudes(&self.policies, &samples, &adv);
            let settings = self.settings(0);
            let update = mappo_update(&mut self.policies, &samples, &adv, &settings)?;
            let secs = t.elapsed().as_secs_f64();
            batches.push(self.batch_report(sequence.batch(0), settings.clip, update, secs, &mut prev_joint, &mut chain)?);
        } else {
            for k in 0..sequence.len() {
                let t = Instant::now();
                let adv = self.advantages(&traj, &samples, &v, &behavior)?;
                if k == 0 {
                    magnitudes = marginal_advantage_magnitudes(&self.policies, &samples, &adv);
                }
                let settings = self.settings(k);
                let update = update_batch(&mut self.policies, k, &samples, &adv, &settings)?;
                let secs = t.elapsed().as_secs_f64();
                batches.push(self.batch_report(sequence.batch(k), settings.clip, update, secs, &mut prev_joint, &mut chain)?);
            }
        }

        if let Some(pi) = pi_joint {
            let source = match self.config.oracle {
                OracleMode::Exact => AdvantageSource::Exact,
                _ => AdvantageSource::Corrected {
                    v: v.clone(),
                    lambda: self.config.lambda,
                },
            };
            self.last_chain = Some(RecordedChain {
                pi,
                chain,
                sequence: sequence.clone(),
                source,
            });
        }

        let mut distill_kl = None;
        if (self.round + 1) % self.config.distill_period == 0 {
            let targets = match self.config.oracle {
                OracleMode::Exact => distill_targets_exact(&self.policies, &self.game)?,
                _ => distill_targets(&self.policies, &traj),
            };
            for _ in 0..self.config.distill_steps {
                distill_step_with(&mut self.policies, &targets, self.config.distill_coef)?;
            }
            distill_kl = Some(distill_loss(&self.policies, &targets)?);
        }

        let planning_seconds = self.plan_next(&traj, &magnitudes)?;
        if self.scheduler.is_some() {
            scheduler_seconds += planning_seconds;
            let edges = self
                .plan_in_use
                .as_ref()
                .map(|p| p.dag.iter().map(|e| (e.0, e.1)).collect())
                .unwrap_or_default();
            let info = dag_info.get_or_insert(DagRoundInfo {
                edges: Vec::new(),
                generator_objective: None,
                critic_loss: None,
                seconds: 0.0,
            });
            info.edges = edges;
            info.seconds = scheduler_seconds;
        }

        let (j_after, j_independent) = if self.oracle_on() {
            (Some(self.exact_j()?), Some(expected_return(&self.game, &self.policies.independent_joint_policy(&self.game)?)?))
        } else {
            (None, None)
        };
        let update_seconds = batches.iter().map(|b| b.update_seconds).sum::<f64>() + scheduler_seconds;
        let report = RoundReport {
            round: self.round,
            sequence,
            batches,
            j_before,
            j_after,
            j_independent,
            j_mc: traj.mean_discounted_return(gamma),
            j_replan_delta,
            distill_kl,
            dag: dag_info,
            rollout_seconds,
            update_seconds,
        };
        self.round += 1;
        Ok(report)
    }

    fn settings(&self, k: usize) -> UpdateSettings {
        UpdateSettings {
            lr: self.config.lr,
            epochs: self.config.epochs,
            clip: self.config.clip_for(k),
        }
    }

    fn exact_j(&self) -> Result<f64> {
        expected_return(&self.game, &self.policies.joint_policy(&self.game)?)
    }

    /// Advantages of the current (partially updated) policy as correction
    /// target, one per sample.
    fn advantages(
        &self,
        traj: &TrajectoryBatch,
        samples: &[UpdateSample],
        v: &[f64],
        behavior: &PolicySet,
    ) -> Result<Vec<f64>> {
        match self.config.oracle {
            OracleMode::Exact => {
                let joint = self.policies.joint_policy(&self.game)?;
                let (_, a) = exact_q_advantage(&self.game, &joint)?;
                Ok(samples.iter().map(|s| a[s.state * self.game.n_joint() + s.joint_index]).collect())
            }
            _ => {
                let est = corrected_advantage(traj, v, behavior, &self.policies, self.game.gamma(), self.config.lambda)?;
                let est = if self.config.normalize_advantages { est.normalized() } else { est };
                Ok(est.flat().collect())
            }
        }
    }

    fn batch_report(
        &self,
        agents: &[usize],
        clip: f64,
        update: BatchUpdate,
        secs: f64,
        prev_joint: &mut Option<JointPolicy>,
        chain: &mut Vec<JointPolicy>,
    ) -> Result<BatchReport> {
        let (alpha_joint, j_after) = match prev_joint.as_ref() {
            Some(prev) => {
                let next = self.policies.joint_policy(&self.game)?;
                let alpha = max_tv(prev, &next)?;
                let j = expected_return(&self.game, &next)?;
                chain.push(next.clone());
                *prev_joint = Some(next);
                (Some(alpha), Some(j))
            }
            None => (None, None),
        };
        Ok(BatchReport {
            agents: agents.to_vec(),
            clip,
            surrogate_before: update.surrogate_before,
            surrogate_after: update.surrogate_after,
            alpha_agents: update.alpha_agents,
            alpha_joint,
            j_after,
            update_seconds: secs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{build_dependency_chain_game, build_random_game};

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("happo".parse::<Mode>().is_err());
        assert_eq!("monitor".parse::<OracleMode>().unwrap(), OracleMode::Monitor);
    }

    #[test]
    fn config_validation() {
        let mut c = SchemeConfig::default();
        assert!(c.validate(3).is_ok());
        c.clip = 1.0;
        assert!(matches!(c.validate(3), Err(Error::Config { .. })));
        let mut c = SchemeConfig { distill_period: 0, ..Default::default() };
        assert!(c.validate(3).is_err());
        c.distill_period = 1;
        c.mode = Mode::B2mapoFixed;
        assert!(c.validate(3).is_err());
        c.fixed_sequence = Some(BatchSequence::single(2));
        assert!(c.validate(3).is_err());
        let c = SchemeConfig { lr: 0.0, ..Default::default() };
        assert!(c.validate(3).is_err());
    }

    #[test]
    fn plan_round_examples() {
        assert_eq!(plan_round(Mode::Mappo, 5, None, None, &[]).unwrap().to_string(), "[{0,1,2,3,4}]");
        let a2po = plan_round(Mode::A2po, 3, None, None, &[0.1, 0.9, 0.5]).unwrap();
        assert_eq!(a2po.to_string(), "[{1},{2},{0}]");
        let ties = plan_round(Mode::A2po, 3, None, None, &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(ties.to_string(), "[{0},{1},{2}]");
        let edgeless = crate::scheduler::layer_topological(4, &[]).unwrap();
        assert_eq!(plan_round(Mode::B2mapoDag, 4, None, Some(&edgeless), &[]).unwrap().len(), 1);
        assert!(plan_round(Mode::B2mapoFixed, 3, None, None, &[]).unwrap_err().is_input_error());
    }

    fn random_set(game: &MarkovGame, seq: BatchSequence, seed: u64) -> PolicySet {
        let mut set = PolicySet::new(game, seq, false, ObservationEncoder::Current).unwrap();
        set.randomize(seed, 1.0);
        set
    }

    #[test]
    fn batch_ratio_examples() {
        let game = build_random_game(3, 2, 2, 0.9, 0).unwrap();
        let seq = BatchSequence::new(vec![vec![0], vec![1, 2]], 3).unwrap();
        let old = random_set(&game, seq.clone(), 1);
        let l = batch_ratio(&old, &old, &[0, 1, 0], &[1, 0, 1], &[0], &[], 0.2).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        // preceding ratio 1.5 on agent 0's row
        let mut new = old.clone();
        let keys = [0, 0, 0];
        let actions = [1, 0, 1];
        let (slot, row) = new.conditioned_row(0, 0, &actions);
        let p = old.conditioned_tables()[slot].probs(row);
        let target = 1.5 * p[1];
        let logits = new.conditioned_tables_mut()[slot].row_mut(row);
        logits[0] = ((1.0 - target) / target).ln();
        logits[1] = 0.0;
        let r = batch_ratio(&new, &old, &keys, &actions, &[0], &[], 0.2).unwrap();
        assert!((r - 1.5).abs() < 1e-12);
        let l = batch_ratio(&new, &old, &keys, &actions, &[1, 2], &[0], 0.2).unwrap();
        assert!((l - 1.1).abs() < 1e-12);
    }

    #[test]
    fn batch_ratio_matches_direct_product_inside_band() {
        let mut rng = seeded(8);
        use rand::Rng;
        for trial in 0..1000u64 {
            let game = build_random_game(3, 2, 2, 0.9, trial % 7).unwrap();
            let seq = BatchSequence::new(vec![vec![0], vec![1], vec![2]], 3).unwrap();
            let old = random_set(&game, seq, trial);
            let mut new = old.clone();
            for t in new.conditioned_tables_mut() {
                for x in t.as_mut_slice() {
                    *x += rng.random_range(-0.02..0.02);
                }
            }
            let keys = [rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..2)];
            let actions = [rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0..2)];
            let ratio = |i: usize| (new.agent_logp(i, keys[i], &actions) - old.agent_logp(i, keys[i], &actions)).exp();
            let pre = ratio(0) * ratio(1);
            if (pre - 1.0).abs() >= 0.1 {
                continue;
            }
            let l = batch_ratio(&new, &old, &keys, &actions, &[2], &[0, 1], 0.2).unwrap();
            assert!((l - pre * ratio(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(batch_surrogate_loss(&[0.0, 0.0], &[1.3, 0.7], &[1.0, 1.0], 0.2), 0.0);
        assert!((batch_surrogate_loss(&[0.5, -1.0], &[1.0, 1.0], &[1.0, 1.0], 0.2) + 0.25).abs() < 1e-15);
        assert!((batch_surrogate_loss(&[1.0], &[1.5], &[1.0], 0.2) - 1.2).abs() < 1e-15);
    }

    fn fixture(mode_seq: BatchSequence) -> (MarkovGame, PolicySet, Vec<UpdateSample>, Vec<f64>) {
        let game = build_random_game(3, 2, 2, 0.9, 4).unwrap();
        let set = random_set(&game, mode_seq, 3);
        let samples = samples_exact(&game, &set).unwrap();
        let joint = set.joint_policy(&game).unwrap();
        let (_, a) = exact_q_advantage(&game, &joint).unwrap();
        let adv = samples.iter().map(|s| a[s.state * game.n_joint() + s.joint_index]).collect();
        (game, set, samples, adv)
    }

    #[test]
    fn zero_advantage_leaves_parameters_unchanged() {
        let (_, mut set, samples, adv) = fixture(BatchSequence::singletons(&[0, 1, 2]).unwrap());
        let zeros = vec![0.0; adv.len()];
        let before = set.clone();
        let s = UpdateSettings { lr: 0.5, epochs: 3, clip: 0.2 };
        update_batch(&mut set, 1, &samples, &zeros, &s).unwrap();
        assert_eq!(set, before);
        let mut single = random_set(&build_random_game(3, 2, 2, 0.9, 4).unwrap(), BatchSequence::single(3), 3);
        let snapshot = single.clone();
        mappo_update(&mut single, &samples, &zeros, &s).unwrap();
        assert_eq!(single, snapshot);
    }

    #[test]
    fn update_touches_only_the_batch() {
        let (_, mut set, samples, adv) = fixture(BatchSequence::new(vec![vec![0, 2], vec![1]], 3).unwrap());
        let before = set.clone();
        let s = UpdateSettings { lr: 0.5, epochs: 3, clip: 0.2 };
        let report = update_batch(&mut set, 1, &samples, &adv, &s).unwrap();
        for i in [0, 2] {
            let slot = set.conditioned[i].slot;
            assert_eq!(set.conditioned_tables()[slot], before.conditioned_tables()[slot]);
        }
        let slot = set.conditioned[1].slot;
        assert_ne!(set.conditioned_tables()[slot], before.conditioned_tables()[slot]);
        assert!(report.surrogate_after >= report.surrogate_before);
        assert!(report.alpha_agents[0] > 0.0);
    }

    #[test]
    fn single_agent_positive_advantage_raises_probability() {
        let game = build_random_game(1, 1, 3, 0.9, 0).unwrap();
        let mut set = PolicySet::new(&game, BatchSequence::single(1), false, ObservationEncoder::Current).unwrap();
        let samples = samples_exact(&game, &set).unwrap();
        let adv: Vec<f64> = samples.iter().map(|s| if s.actions[0] == 2 { 1.0 } else { -0.5 }).collect();
        let before = set.action_probs(0, 0, 0).unwrap()[2];
        update_batch(&mut set, 0, &samples, &adv, &UpdateSettings { lr: 0.1, epochs: 1, clip: 0.2 }).unwrap();
        assert!(set.action_probs(0, 0, 0).unwrap()[2] > before);
    }

    #[test]
    fn distillation_examples() {
        let game = build_random_game(2, 3, 2, 0.9, 6).unwrap();
        let mut set = random_set(&game, BatchSequence::single(2), 11);
        set.init_independent_from_marginals(&game).unwrap();
        let targets = distill_targets_exact(&set, &game).unwrap();
        let g = distill_gradient(&set, &targets);
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-12));
        let mut seq_set = random_set(&game, BatchSequence::singletons(&[0, 1]).unwrap(), 12);
        let before = seq_set.clone();
        let targets = distill_targets_exact(&seq_set, &game).unwrap();
        distill_step_with(&mut seq_set, &targets, 0.0).unwrap();
        assert_eq!(seq_set, before);
        let mut last = vec![f64::INFINITY; 2];
        for _ in 0..100 {
            let loss = distill_step_with(&mut seq_set, &targets, 0.1).unwrap();
            for (l, p) in loss.iter().zip(&last) {
                assert!(l < p);
            }
            last = loss;
        }
    }

    #[test]
    fn round_counts_batches_per_mode() {
        let (game, _) = build_dependency_chain_game(3, 0.5, 0).unwrap();
        for (mode, want) in [(Mode::Mappo, 1), (Mode::A2po, 3)] {
            let cfg = SchemeConfig { mode, n_episodes: 4, horizon: 10, ..Default::default() };
            let mut t = Trainer::new(game.clone(), cfg, 0).unwrap();
            for _ in 0..2 {
                assert_eq!(t.run_round().unwrap().batch_count(), want);
            }
        }
    }

    #[test]
    fn rounds_are_deterministic() {
        let (game, _) = build_dependency_chain_game(3, 0.5, 0).unwrap();
        let cfg = SchemeConfig { mode: Mode::B2mapoDag, n_episodes: 4, horizon: 20, oracle: OracleMode::Monitor, ..Default::default() };
        let run = || {
            let mut t = Trainer::new(game.clone(), cfg.clone(), 9).unwrap();
            let reports: Vec<(Option<f64>, String, f64)> = (0..6)
                .map(|_| {
                    let r = t.run_round().unwrap();
                    (r.j_after, r.sequence.compact(), r.j_mc)
                })
                .collect();
            (reports, t.policies)
        };
        assert_eq!(run(), run());
    }
}
