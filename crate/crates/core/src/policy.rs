//! Softmax table policies.
//!
//! A [`PolicySet`] holds two joint policies over the same agents: the
//! conditioned policy, where agent `i` in batch `k` sees the actions of all
//! agents in batches `0..k`, and the independent policy used at execution
//! time, where each agent sees only its own observation key.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::{join, parse_all, ActionSpace, JointAction, MarkovGame};
use crate::oracle::{visitation, JointPolicy};
use crate::rng::seeded;

const NORMALIZER_FLOOR: f64 = 1e-300;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `sum p ln(p / q)` with `0 ln(0/q) = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::input("KL rows have different lengths"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        if b <= 0.0 {
            return Err(Error::NumericDomain(
                "KL divergence undefined: p > 0 where q = 0".into(),
            ));
        }
        total += a * (a / b).ln();
    }
    Ok(total)
}

/// `onehot(action) - probs`, the gradient of `ln softmax(z)[action]` in `z`.
pub fn logprob_gradient_row(probs: &[f64], action: usize) -> Vec<f64> {
    let mut g: Vec<f64> = probs.iter().map(|p| -p).collect();
    g[action] += 1.0;
    g
}

/// Dense `rows x n_actions` logit table.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    n_rows: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl LogitTable {
    pub fn zeros(n_rows: usize, n_actions: usize) -> Self {
        Self {
            n_rows,
            n_actions,
            logits: vec![0.0; n_rows * n_actions],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.logits[r * self.n_actions..(r + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.logits[r * self.n_actions..(r + 1) * self.n_actions]
    }

    pub fn probs(&self, r: usize) -> Vec<f64> {
        softmax(self.row(r))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|x| x.is_finite())
    }

    /// Sets a row to `ln(p)`, flooring zeros at the smallest positive float.
    pub fn set_row_from_probs(&mut self, r: usize, probs: &[f64]) {
        for (l, &p) in self.row_mut(r).iter_mut().zip(probs) {
            *l = p.max(f64::MIN_POSITIVE).ln();
        }
    }
}

/// How per-agent policy keys are built from what the agent has seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationEncoder {
    /// The current observation index.
    Current,
    /// FNV hash of the current observation and the last `len` observation
    /// and action pairs, reduced to `buckets` keys.
    Window { len: usize, buckets: usize },
}

impl ObservationEncoder {
    pub fn n_keys(&self, obs_count: usize) -> usize {
        match *self {
            ObservationEncoder::Current => obs_count,
            ObservationEncoder::Window { buckets, .. } => buckets,
        }
    }

    /// `history` holds past `(observation, action)` pairs, oldest first.
    pub fn key(&self, current: usize, history: &[(usize, usize)]) -> usize {
        match *self {
            ObservationEncoder::Current => current,
            ObservationEncoder::Window { len, buckets } => {
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                let mut mix = |x: u64| {
                    for byte in x.to_le_bytes() {
                        h ^= byte as u64;
                        h = h.wrapping_mul(0x0000_0100_0000_01b3);
                    }
                };
                mix(current as u64);
                let start = history.len().saturating_sub(len);
                for &(o, a) in &history[start..] {
                    mix(o as u64);
                    mix(a as u64);
                }
                (h % buckets as u64) as usize
            }
        }
    }

    pub fn history_len(&self) -> usize {
        match *self {
            ObservationEncoder::Current => 0,
            ObservationEncoder::Window { len, .. } => len,
        }
    }
}

/// Agent `i`'s conditioned policy: rows indexed by
/// `key * n_contexts + context`, where the context enumerates the actions
/// of `context_agents` in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedPolicy {
    pub agent: usize,
    pub n_actions: usize,
    pub n_keys: usize,
    pub context_agents: Vec<usize>,
    context_space: ActionSpace,
    pub slot: usize,
}

impl ConditionedPolicy {
    pub fn n_contexts(&self) -> usize {
        self.context_space.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n_keys * self.n_contexts()
    }

    /// Context index from a full per-agent action vector.
    pub fn context_of(&self, actions: &[usize]) -> usize {
        let mut idx = 0;
        for (&j, &count) in self.context_agents.iter().zip(self.context_space.counts()) {
            idx = idx * count + actions[j];
        }
        idx
    }

    pub fn row_index(&self, key: usize, context: usize) -> usize {
        key * self.n_contexts() + context
    }
}

/// Agent `i`'s independent policy: one row per observation key.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentPolicy {
    pub agent: usize,
    pub n_actions: usize,
    pub n_keys: usize,
    pub slot: usize,
}

/// Conditioned and independent policies for every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    action_counts: Vec<usize>,
    key_counts: Vec<usize>,
    sequence: BatchSequence,
    sharing: bool,
    encoder: ObservationEncoder,
    pub conditioned: Vec<ConditionedPolicy>,
    pub independent: Vec<IndependentPolicy>,
    cond_tables: Vec<LogitTable>,
    ind_tables: Vec<LogitTable>,
}

fn conditioned_layout(
    action_counts: &[usize],
    key_counts: &[usize],
    sequence: &BatchSequence,
    sharing: bool,
) -> (Vec<ConditionedPolicy>, Vec<(usize, usize)>) {
    let n = action_counts.len();
    let mut slots: Vec<(usize, usize, usize)> = Vec::new();
    let mut shapes = Vec::new();
    let mut policies = Vec::with_capacity(n);
    for i in 0..n {
        let context_agents = sequence.context_agents(i);
        let context_space = ActionSpace::new(context_agents.iter().map(|&j| action_counts[j]).collect());
        let key = (sequence.batch_of(i), action_counts[i], key_counts[i]);
        let slot = match slots.iter().position(|k| sharing && *k == key) {
            Some(s) => s,
            None => {
                slots.push(key);
                shapes.push((key_counts[i] * context_space.len(), action_counts[i]));
                slots.len() - 1
            }
        };
        policies.push(ConditionedPolicy {
            agent: i,
            n_actions: action_counts[i],
            n_keys: key_counts[i],
            context_agents,
            context_space,
            slot,
        });
    }
    (policies, shapes)
}

fn independent_layout(
    action_counts: &[usize],
    key_counts: &[usize],
    sharing: bool,
) -> (Vec<IndependentPolicy>, Vec<(usize, usize)>) {
    let mut slots: Vec<(usize, usize)> = Vec::new();
    let mut policies = Vec::new();
    for i in 0..action_counts.len() {
        let key = (action_counts[i], key_counts[i]);
        let slot = match slots.iter().position(|k| sharing && *k == key) {
            Some(s) => s,
            None => {
                slots.push(key);
                slots.len() - 1
            }
        };
        policies.push(IndependentPolicy {
            agent: i,
            n_actions: action_counts[i],
            n_keys: key_counts[i],
            slot,
        });
    }
    let shapes = slots.iter().map(|&(a, k)| (k, a)).collect();
    (policies, shapes)
}

impl PolicySet {
    /// Uniform policies (all-zero logits) shaped for `game`.
    pub fn new(game: &MarkovGame, sequence: BatchSequence, sharing: bool, encoder: ObservationEncoder) -> Result<Self> {
        let key_counts = (0..game.n_agents()).map(|i| encoder.n_keys(game.observation_count(i))).collect();
        Self::with_shape(game.action_counts().to_vec(), key_counts, sequence, sharing, encoder)
    }

    pub fn with_shape(
        action_counts: Vec<usize>,
        key_counts: Vec<usize>,
        sequence: BatchSequence,
        sharing: bool,
        encoder: ObservationEncoder,
    ) -> Result<Self> {
        if sequence.n_agents() != action_counts.len() || key_counts.len() != action_counts.len() {
            return Err(Error::input("batch sequence and shapes disagree on the agent count"));
        }
        let (conditioned, cshapes) = conditioned_layout(&action_counts, &key_counts, &sequence, sharing);
        let (independent, ishapes) = independent_layout(&action_counts, &key_counts, sharing);
        Ok(Self {
            action_counts,
            key_counts,
            sequence,
            sharing,
            encoder,
            conditioned,
            independent,
            cond_tables: cshapes.into_iter().map(|(r, a)| LogitTable::zeros(r, a)).collect(),
            ind_tables: ishapes.into_iter().map(|(r, a)| LogitTable::zeros(r, a)).collect(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn key_counts(&self) -> &[usize] {
        &self.key_counts
    }

    pub fn sequence(&self) -> &BatchSequence {
        &self.sequence
    }

    pub fn sharing(&self) -> bool {
        self.sharing
    }

    pub fn encoder(&self) -> ObservationEncoder {
        self.encoder
    }

    pub fn conditioned_tables(&self) -> &[LogitTable] {
        &self.cond_tables
    }

    pub fn conditioned_tables_mut(&mut self) -> &mut [LogitTable] {
        &mut self.cond_tables
    }

    pub fn independent_tables(&self) -> &[LogitTable] {
        &self.ind_tables
    }

    pub fn independent_tables_mut(&mut self) -> &mut [LogitTable] {
        &mut self.ind_tables
    }

    /// Fills every logit with an independent draw from `[-scale, scale]`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = seeded(seed);
        for t in self.cond_tables.iter_mut().chain(self.ind_tables.iter_mut()) {
            for x in t.as_mut_slice() {
                *x = rng.random_range(-scale..=scale);
            }
        }
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.n_agents() {
            return Err(Error::input(format!("agent {agent} out of range")));
        }
        Ok(())
    }

    fn check_key(&self, agent: usize, key: usize) -> Result<()> {
        self.check_agent(agent)?;
        if key >= self.key_counts[agent] {
            return Err(Error::input(format!("observation key {key} out of range for agent {agent}")));
        }
        Ok(())
    }

    /// Softmax of agent `agent`'s conditioned row at `(key, context)`.
    pub fn action_probs(&self, agent: usize, key: usize, context: usize) -> Result<Vec<f64>> {
        self.check_key(agent, key)?;
        let p = &self.conditioned[agent];
        if context >= p.n_contexts() {
            return Err(Error::input(format!(
                "context {context} is not enumerated for agent {agent} ({} contexts)",
                p.n_contexts()
            )));
        }
        Ok(self.cond_tables[p.slot].probs(p.row_index(key, context)))
    }

    pub fn independent_probs(&self, agent: usize, key: usize) -> Result<Vec<f64>> {
        self.check_key(agent, key)?;
        let p = &self.independent[agent];
        Ok(self.ind_tables[p.slot].probs(key))
    }

    /// Row location `(slot, row)` of agent `agent`'s conditioned policy for
    /// the given key and full action vector.
    pub fn conditioned_row(&self, agent: usize, key: usize, actions: &[usize]) -> (usize, usize) {
        let p = &self.conditioned[agent];
        (p.slot, p.row_index(key, p.context_of(actions)))
    }

    /// `ln pi^i(a^i | key, context)` from unchecked indices.
    pub(crate) fn agent_logp(&self, agent: usize, key: usize, actions: &[usize]) -> f64 {
        let (slot, row) = self.conditioned_row(agent, key, actions);
        let logits = self.cond_tables[slot].row(row);
        log_softmax_at(logits, actions[agent])
    }

    pub(crate) fn independent_logp(&self, agent: usize, key: usize, action: usize) -> f64 {
        let p = &self.independent[agent];
        log_softmax_at(self.ind_tables[p.slot].row(key), action)
    }

    /// Sum of conditioned log-probabilities over `agents`.
    pub fn group_logp(&self, keys: &[usize], actions: &[usize], agents: &[usize]) -> f64 {
        agents.iter().map(|&i| self.agent_logp(i, keys[i], actions)).sum()
    }

    /// Conditioned joint log-probability of a full action vector.
    pub fn joint_logp(&self, keys: &[usize], actions: &[usize]) -> f64 {
        (0..self.n_agents()).map(|i| self.agent_logp(i, keys[i], actions)).sum()
    }

    pub fn independent_joint_logp(&self, keys: &[usize], actions: &[usize]) -> f64 {
        (0..self.n_agents()).map(|i| self.independent_logp(i, keys[i], actions[i])).sum()
    }

    fn state_keys(&self, game: &MarkovGame, s: usize) -> Result<Vec<usize>> {
        if self.encoder != ObservationEncoder::Current {
            return Err(Error::input("state-level evaluation needs observation-keyed policies"));
        }
        if game.n_agents() != self.n_agents() || game.action_counts() != self.action_counts() {
            return Err(Error::input("policy set does not match the game"));
        }
        game.check_state(s)?;
        Ok((0..self.n_agents()).map(|i| game.observation(i, s)).collect())
    }

    /// Conditioned joint probability of `a` in state `s`, contexts resolved
    /// in the order of `sequence` (which must be the set's own sequence).
    pub fn joint_prob(&self, game: &MarkovGame, s: usize, a: &JointAction, sequence: &BatchSequence) -> Result<f64> {
        if sequence != &self.sequence {
            return Err(Error::input("batch sequence does not match the policy contexts"));
        }
        let keys = self.state_keys(game, s)?;
        game.joint_index(a)?;
        Ok(self.joint_logp(&keys, a.as_slice()).exp())
    }

    /// Enumerated conditioned joint policy.
    pub fn joint_policy(&self, game: &MarkovGame) -> Result<JointPolicy> {
        self.enumerate(game, |keys, actions| self.joint_logp(keys, actions))
    }

    /// Enumerated product of the independent policies.
    pub fn independent_joint_policy(&self, game: &MarkovGame) -> Result<JointPolicy> {
        self.enumerate(game, |keys, actions| self.independent_joint_logp(keys, actions))
    }

    fn enumerate(&self, game: &MarkovGame, logp: impl Fn(&[usize], &[usize]) -> f64) -> Result<JointPolicy> {
        let space = game.action_space();
        let mut probs = Vec::with_capacity(game.n_states() * game.n_joint());
        for s in 0..game.n_states() {
            let keys = self.state_keys(game, s)?;
            for a in space.iter() {
                probs.push(logp(&keys, &a).exp());
            }
        }
        JointPolicy::from_table(game.n_states(), game.n_joint(), probs)
    }

    /// Per-agent, per-key marginal action distribution of the conditioned
    /// joint policy, states aliased to one key weighted by visitation.
    pub fn marginalize(&self, game: &MarkovGame) -> Result<Vec<Vec<Vec<f64>>>> {
        let joint = self.joint_policy(game)?;
        let w = visitation(game, &joint)?;
        let space = game.action_space();
        let mut out = Vec::with_capacity(self.n_agents());
        for i in 0..self.n_agents() {
            let mut rows = vec![vec![0.0; self.action_counts[i]]; self.key_counts[i]];
            let mut mass = vec![0.0; self.key_counts[i]];
            let mut members = vec![0usize; self.key_counts[i]];
            for s in 0..game.n_states() {
                let o = game.observation(i, s);
                members[o] += 1;
                mass[o] += w[s];
            }
            for s in 0..game.n_states() {
                let o = game.observation(i, s);
                let ws = if mass[o] > 0.0 { w[s] / mass[o] } else { 1.0 / members[o] as f64 };
                for (a, &p) in joint.row(s).iter().enumerate() {
                    rows[o][space.digit(a, i)] += ws * p;
                }
            }
            for (o, row) in rows.iter_mut().enumerate() {
                if members[o] == 0 {
                    row.iter_mut().for_each(|x| *x = 1.0 / self.action_counts[i] as f64);
                }
            }
            out.push(rows);
        }
        Ok(out)
    }

    /// Sets the independent policies to the conditioned policy's marginals.
    pub fn init_independent_from_marginals(&mut self, game: &MarkovGame) -> Result<()> {
        let marginals = self.marginalize(game)?;
        let mut sums: Vec<Vec<Vec<f64>>> = self
            .ind_tables
            .iter()
            .map(|t| vec![vec![0.0; t.n_actions()]; t.n_rows()])
            .collect();
        let mut counts = vec![0usize; self.ind_tables.len()];
        for (i, rows) in marginals.iter().enumerate() {
            let slot = self.independent[i].slot;
            counts[slot] += 1;
            for (acc, row) in sums[slot].iter_mut().zip(rows) {
                acc.iter_mut().zip(row).for_each(|(a, p)| *a += p);
            }
        }
        for (slot, rows) in sums.into_iter().enumerate() {
            for (r, row) in rows.iter().enumerate() {
                let mean: Vec<f64> = row.iter().map(|x| x / counts[slot] as f64).collect();
                self.ind_tables[slot].set_row_from_probs(r, &mean);
            }
        }
        Ok(())
    }

    /// Re-enumerates contexts for `sequence`. Each new row for agent `i` at
    /// `(key, c)` is the old joint's conditional `P(a^i | key, a^{N_i} = c)`
    /// with `N_i` the new context agents, so the joint is preserved except
    /// for correlations between agents that now share a batch. Rows whose
    /// context has no mass fall back to the key marginal.
    pub fn resequence(&mut self, game: &MarkovGame, sequence: BatchSequence) -> Result<()> {
        if sequence == self.sequence {
            return Ok(());
        }
        if sequence.n_agents() != self.n_agents() {
            return Err(Error::input("new batch sequence has the wrong agent count"));
        }
        let joint = self.joint_policy(game)?;
        let w = visitation(game, &joint)?;
        let space = game.action_space();
        let (conditioned, shapes) = conditioned_layout(&self.action_counts, &self.key_counts, &sequence, self.sharing);
        let mut sums: Vec<LogitTable> = shapes.iter().map(|&(r, a)| LogitTable::zeros(r, a)).collect();
        let mut counts = vec![0usize; shapes.len()];
        for p in &conditioned {
            let i = p.agent;
            let k = self.key_counts[i];
            let nc = p.n_contexts();
            let mut num = vec![0.0; k * nc * p.n_actions];
            let mut marg = vec![0.0; k * p.n_actions];
            let mut mass = vec![0.0; k];
            let mut members = vec![0usize; k];
            for s in 0..game.n_states() {
                let o = game.observation(i, s);
                mass[o] += w[s];
                members[o] += 1;
            }
            for s in 0..game.n_states() {
                let o = game.observation(i, s);
                let ws = if mass[o] > 0.0 { w[s] / mass[o] } else { 1.0 / members[o] as f64 };
                for (a, &prob) in joint.row(s).iter().enumerate() {
                    let actions = space.decode(a);
                    let c = p.context_of(&actions);
                    let x = actions[i];
                    num[(o * nc + c) * p.n_actions + x] += ws * prob;
                    marg[o * p.n_actions + x] += ws * prob;
                }
            }
            counts[p.slot] += 1;
            let table = &mut sums[p.slot];
            for o in 0..k {
                let m = &marg[o * p.n_actions..(o + 1) * p.n_actions];
                let m_total: f64 = m.iter().sum();
                for c in 0..nc {
                    let row = &num[(o * nc + c) * p.n_actions..(o * nc + c + 1) * p.n_actions];
                    let den: f64 = row.iter().sum();
                    let out = table.row_mut(p.row_index(o, c));
                    for x in 0..p.n_actions {
                        out[x] += if den > NORMALIZER_FLOOR {
                            row[x] / den
                        } else if m_total > NORMALIZER_FLOOR {
                            m[x] / m_total
                        } else {
                            1.0 / p.n_actions as f64
                        };
                    }
                }
            }
        }
        for (table, &count) in sums.iter_mut().zip(&counts) {
            for r in 0..table.n_rows() {
                let mean: Vec<f64> = table.row(r).iter().map(|x| x / count as f64).collect();
                table.set_row_from_probs(r, &mean);
            }
        }
        self.conditioned = conditioned;
        self.cond_tables = sums;
        self.sequence = sequence;
        Ok(())
    }

    /// Samples a joint action batch by batch. `keys[i]` is agent `i`'s
    /// observation key. Returns the actions and per-agent log-probs.
    pub fn sample_conditioned<R: Rng + ?Sized>(&self, keys: &[usize], rng: &mut R) -> (Vec<usize>, Vec<f64>) {
        let n = self.n_agents();
        let mut actions = vec![0; n];
        let mut logps = vec![0.0; n];
        let mut probs = Vec::new();
        for batch in self.sequence.batches() {
            for &i in batch {
                let (slot, row) = self.conditioned_row(i, keys[i], &actions);
                probs.resize(self.action_counts[i], 0.0);
                softmax_into(self.cond_tables[slot].row(row), &mut probs);
                let a = crate::rng::sample_categorical(&probs, rng);
                actions[i] = a;
                logps[i] = probs[a].ln();
            }
        }
        (actions, logps)
    }

    pub fn sample_independent<R: Rng + ?Sized>(&self, keys: &[usize], rng: &mut R) -> Vec<usize> {
        let mut probs = Vec::new();
        (0..self.n_agents())
            .map(|i| {
                let p = &self.independent[i];
                probs.resize(p.n_actions, 0.0);
                softmax_into(self.ind_tables[p.slot].row(keys[i]), &mut probs);
                crate::rng::sample_categorical(&probs, rng)
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.cond_tables.iter().chain(&self.ind_tables).all(LogitTable::is_finite)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "b2mapo-policy 1");
        let _ = writeln!(out, "actions {}", join(&self.action_counts));
        let _ = writeln!(out, "keys {}", join(&self.key_counts));
        let _ = writeln!(out, "sharing {}", u8::from(self.sharing));
        match self.encoder {
            ObservationEncoder::Current => {
                let _ = writeln!(out, "encoder current");
            }
            ObservationEncoder::Window { len, buckets } => {
                let _ = writeln!(out, "encoder window {len} {buckets}");
            }
        }
        let _ = writeln!(out, "sequence {}", self.sequence.compact());
        for (name, tables) in [("conditioned", &self.cond_tables), ("independent", &self.ind_tables)] {
            for (slot, t) in tables.iter().enumerate() {
                for r in 0..t.n_rows() {
                    let _ = writeln!(out, "{name} {slot} {r} {}", join(t.row(r)));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some("b2mapo-policy 1") {
            return Err(Error::input("policy file must start with `b2mapo-policy 1`"));
        }
        let mut header = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::input(format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::input(format!("expected `{key}` line, got `{line}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        fn as_refs(v: &[String]) -> Vec<&str> {
            v.iter().map(String::as_str).collect()
        }
        let action_counts: Vec<usize> = parse_all(&as_refs(&header("actions")?)).map_err(Error::Input)?;
        let key_counts: Vec<usize> = parse_all(&as_refs(&header("keys")?)).map_err(Error::Input)?;
        let sharing = match header("sharing")?.as_slice() {
            [x] if x == "0" => false,
            [x] if x == "1" => true,
            _ => return Err(Error::input("`sharing` must be 0 or 1")),
        };
        let encoder = match as_refs(&header("encoder")?).as_slice() {
            ["current"] => ObservationEncoder::Current,
            ["window", len, buckets] => ObservationEncoder::Window {
                len: len.parse().map_err(|_| Error::input("bad window length"))?,
                buckets: buckets.parse().map_err(|_| Error::input("bad bucket count"))?,
            },
            _ => return Err(Error::input("unknown encoder")),
        };
        let seq_text = header("sequence")?.join(" ");
        let sequence = BatchSequence::parse(&seq_text, action_counts.len())?;
        let mut set = Self::with_shape(action_counts, key_counts, sequence, sharing, encoder)?;
        let mut seen_c: Vec<Vec<bool>> = set.cond_tables.iter().map(|t| vec![false; t.n_rows()]).collect();
        let mut seen_i: Vec<Vec<bool>> = set.ind_tables.iter().map(|t| vec![false; t.n_rows()]).collect();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 3 {
                return Err(Error::input(format!("malformed table line `{line}`")));
            }
            let slot: usize = parts[1].parse().map_err(|_| Error::input("bad slot"))?;
            let row: usize = parts[2].parse().map_err(|_| Error::input("bad row"))?;
            let values: Vec<f64> = parse_all(&parts[3..]).map_err(Error::Input)?;
            let (tables, seen) = match parts[0] {
                "conditioned" => (&mut set.cond_tables, &mut seen_c),
                "independent" => (&mut set.ind_tables, &mut seen_i),
                other => return Err(Error::input(format!("unknown table kind `{other}`"))),
            };
            let table = tables.get_mut(slot).ok_or_else(|| Error::input("slot out of range"))?;
            if row >= table.n_rows() || values.len() != table.n_actions() {
                return Err(Error::input(format!("row {row} of slot {slot} has the wrong shape")));
            }
            table.row_mut(row).copy_from_slice(&values);
            seen[slot][row] = true;
        }
        if seen_c.iter().chain(&seen_i).flatten().any(|x| !x) {
            return Err(Error::input("policy file is missing table rows"));
        }
        Ok(set)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn log_softmax_at(logits: &[f64], action: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits[action] - m - total.ln()
}
