//! Finite cooperative Markov games with a shared reward.
//!
//! Joint actions are flattened row-major over agent order: agent 0 is the
//! most significant digit, so for action counts `(2, 3)` the joint action
//! `(1, 2)` has index `1 * 3 + 2 = 5`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{dirichlet_flat, sample_categorical, seeded};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Mixed-radix indexing over a tuple of per-agent action sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl ActionSpace {
    pub fn new(counts: Vec<usize>) -> Self {
        let mut strides = vec![1; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let size = counts.iter().product();
        Self {
            counts,
            strides,
            size,
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn encode(&self, actions: &[usize]) -> usize {
        actions.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.counts.len()];
        for (slot, &stride) in out.iter_mut().zip(&self.strides) {
            *slot = index / stride;
            index %= stride;
        }
        out
    }

    /// Digit of component `pos` in flat index `index`.
    pub fn digit(&self, index: usize, pos: usize) -> usize {
        (index / self.strides[pos]) % self.counts[pos]
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.size).map(|i| self.decode(i))
    }
}

/// One action index per agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction(pub Vec<usize>);

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Directed agent-dependence oracle: `edges[j][i]` means agent `i`'s
/// reward or transition effect depends on agent `j`'s action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthDependence {
    n: usize,
    adjacency: Vec<bool>,
}

impl GroundTruthDependence {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![false; n * n],
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from == to {
            return Err(Error::input("self-loops are not allowed"));
        }
        if from >= self.n || to >= self.n {
            return Err(Error::input(format!("edge ({from}->{to}) out of range")));
        }
        self.adjacency[from * self.n + to] = true;
        Ok(())
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adjacency[from * self.n + to]
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|j| (0..self.n).map(move |i| (j, i)))
            .filter(|&(j, i)| self.has_edge(j, i))
            .collect()
    }
}

/// Raw tables used to build a [`MarkovGame`].
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub action_counts: Vec<usize>,
    pub n_states: usize,
    /// Flattened `[s][a_joint][s']`.
    pub transition: Vec<f64>,
    /// Flattened `[s][a_joint]`.
    pub reward: Vec<f64>,
    /// Per agent, state index -> observation index. `None` means full state.
    pub observations: Option<Vec<Vec<usize>>>,
    pub initial: Vec<f64>,
    pub gamma: f64,
    /// Stored bound on `|R|`. `None` uses the table maximum.
    pub reward_bound: Option<f64>,
}

/// A tabular cooperative Dec-POMDP. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    actions: ActionSpace,
    n_states: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    observations: Vec<Vec<usize>>,
    obs_counts: Vec<usize>,
    initial: Vec<f64>,
    gamma: f64,
    reward_bound: f64,
}

impl MarkovGame {
    pub fn new(spec: GameSpec) -> Result<Self> {
        let GameSpec {
            action_counts,
            n_states,
            transition,
            reward,
            observations,
            initial,
            gamma,
            reward_bound,
        } = spec;
        if action_counts.is_empty() {
            return Err(Error::input("a game needs at least one agent"));
        }
        if action_counts.contains(&0) || n_states == 0 {
            return Err(Error::input("state and action counts must be >= 1"));
        }
        let actions = ActionSpace::new(action_counts);
        let n_joint = actions.len();
        if transition.len() != n_states * n_joint * n_states {
            return Err(Error::input(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_joint * n_states
            )));
        }
        if reward.len() != n_states * n_joint {
            return Err(Error::input(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_joint
            )));
        }
        if initial.len() != n_states {
            return Err(Error::input("initial distribution length must equal state count"));
        }
        let n_agents = actions.counts().len();
        let observations = observations.unwrap_or_else(|| vec![(0..n_states).collect(); n_agents]);
        if observations.len() != n_agents || observations.iter().any(|o| o.len() != n_states) {
            return Err(Error::input("observation map must give one entry per agent and state"));
        }
        let obs_counts = observations
            .iter()
            .map(|o| o.iter().copied().max().map_or(1, |m| m + 1))
            .collect();
        let table_max = reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let reward_bound = reward_bound.unwrap_or(table_max);
        let game = Self {
            actions,
            n_states,
            transition,
            reward,
            observations,
            obs_counts,
            initial,
            gamma,
            reward_bound,
        };
        game.validate()?;
        Ok(game)
    }

    /// Checks every structural invariant: stochastic rows, a normalized
    /// initial distribution, `|R| <= R_max` and `0 <= gamma < 1`.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::input(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_joint() {
                let row = self.transition_row(s, a);
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::input(format!("negative or non-finite P[{s}][{a}]")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::input(format!("P[{s}][{a}] sums to {total}")));
                }
            }
        }
        if self.initial.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::input("initial distribution has negative entries"));
        }
        let total: f64 = self.initial.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::input(format!("initial distribution sums to {total}")));
        }
        if let Some(r) = self
            .reward
            .iter()
            .find(|r| !r.is_finite() || r.abs() > self.reward_bound)
        {
            return Err(Error::input(format!(
                "reward {r} exceeds stored bound {}",
                self.reward_bound
            )));
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.actions.counts().len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_joint(&self) -> usize {
        self.actions.len()
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn action_counts(&self) -> &[usize] {
        self.actions.counts()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_joint() + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_joint() + a]
    }

    pub fn observation(&self, agent: usize, s: usize) -> usize {
        self.observations[agent][s]
    }

    pub fn observation_count(&self, agent: usize) -> usize {
        self.obs_counts[agent]
    }

    /// True when every agent observes the state itself.
    pub fn is_fully_observed(&self) -> bool {
        self.observations
            .iter()
            .all(|o| o.iter().enumerate().all(|(s, &x)| s == x))
    }

    /// Same dynamics with a different observation map.
    pub fn with_observations(&self, observations: Vec<Vec<usize>>) -> Result<Self> {
        let mut spec = self.to_spec();
        spec.observations = Some(observations);
        Self::new(spec)
    }

    pub fn to_spec(&self) -> GameSpec {
        GameSpec {
            action_counts: self.actions.counts().to_vec(),
            n_states: self.n_states,
            transition: self.transition.clone(),
            reward: self.reward.clone(),
            observations: Some(self.observations.clone()),
            initial: self.initial.clone(),
            gamma: self.gamma,
            reward_bound: Some(self.reward_bound),
        }
    }

    pub fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.n_states {
            return Err(Error::input(format!("state {s} out of range")));
        }
        Ok(())
    }

    pub fn joint_index(&self, a: &JointAction) -> Result<usize> {
        if a.0.len() != self.n_agents() {
            return Err(Error::input(format!(
                "joint action has {} entries for {} agents",
                a.0.len(),
                self.n_agents()
            )));
        }
        for (i, (&ai, &count)) in a.0.iter().zip(self.action_counts()).enumerate() {
            if ai >= count {
                return Err(Error::input(format!("action {ai} of agent {i} out of range")));
            }
        }
        Ok(self.actions.encode(&a.0))
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial, rng)
    }

    /// Samples `s' ~ P[s][a]` and returns it with the exact reward `R[s][a]`.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: &JointAction, rng: &mut R) -> Result<(usize, f64)> {
        self.check_state(s)?;
        let ai = self.joint_index(a)?;
        Ok(self.step_index(s, ai, rng))
    }

    pub(crate) fn step_index<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (usize, f64) {
        let next = sample_categorical(self.transition_row(s, a), rng);
        (next, self.reward(s, a))
    }

    /// Line-oriented text form. Floats use shortest round-trip formatting,
    /// so `from_text(to_text())` reproduces the game bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "b2mapo-game 1");
        let _ = writeln!(out, "agents {}", self.n_agents());
        let _ = writeln!(out, "actions {}", join(self.action_counts()));
        let _ = writeln!(out, "states {}", self.n_states);
        let _ = writeln!(out, "gamma {}", self.gamma);
        let _ = writeln!(out, "reward_bound {}", self.reward_bound);
        let _ = writeln!(out, "initial {}", join(&self.initial));
        for (i, obs) in self.observations.iter().enumerate() {
            let _ = writeln!(out, "observation {i} {}", join(obs));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_joint() {
                let _ = writeln!(out, "transition {s} {a} {}", join(self.transition_row(s, a)));
            }
        }
        for s in 0..self.n_states {
            let row = &self.reward[s * self.n_joint()..(s + 1) * self.n_joint()];
            let _ = writeln!(out, "reward {s} {}", join(row));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "b2mapo-game 1")) => {}
            _ => return Err(Error::input("game file must start with `b2mapo-game 1`")),
        }
        let mut n_agents = None;
        let mut action_counts: Option<Vec<usize>> = None;
        let mut n_states = None;
        let mut gamma = None;
        let mut reward_bound = None;
        let mut initial = None;
        let mut observations: Vec<Option<Vec<usize>>> = Vec::new();
        let mut transition_rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        let mut reward_rows: Vec<(usize, Vec<f64>)> = Vec::new();

        for (lineno, line) in lines {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let at = |msg: &str| Error::input(format!("line {}: {msg}", lineno + 1));
            match key {
                "agents" => n_agents = Some(parse_one::<usize>(&rest).map_err(|e| at(&e))?),
                "actions" => action_counts = Some(parse_all(&rest).map_err(|e| at(&e))?),
                "states" => n_states = Some(parse_one::<usize>(&rest).map_err(|e| at(&e))?),
                "gamma" => gamma = Some(parse_one::<f64>(&rest).map_err(|e| at(&e))?),
                "reward_bound" => reward_bound = Some(parse_one::<f64>(&rest).map_err(|e| at(&e))?),
                "initial" => initial = Some(parse_all::<f64>(&rest).map_err(|e| at(&e))?),
                "observation" => {
                    let (head, tail) = rest.split_first().ok_or_else(|| at("missing agent"))?;
                    let agent: usize = head.parse().map_err(|_| at("bad agent index"))?;
                    if observations.len() <= agent {
                        observations.resize(agent + 1, None);
                    }
                    observations[agent] = Some(parse_all(tail).map_err(|e| at(&e))?);
                }
                "transition" => {
                    if rest.len() < 2 {
                        return Err(at("transition needs state and joint action"));
                    }
                    let s = rest[0].parse().map_err(|_| at("bad state"))?;
                    let a = rest[1].parse().map_err(|_| at("bad joint action"))?;
                    transition_rows.push((s, a, parse_all(&rest[2..]).map_err(|e| at(&e))?));
                }
                "reward" => {
                    let (head, tail) = rest.split_first().ok_or_else(|| at("missing state"))?;
                    let s = head.parse().map_err(|_| at("bad state"))?;
                    reward_rows.push((s, parse_all(tail).map_err(|e| at(&e))?));
                }
                other => return Err(at(&format!("unknown key `{other}`"))),
            }
        }

        let missing = |k: &str| Error::input(format!("game file is missing `{k}`"));
        let n_agents = n_agents.ok_or_else(|| missing("agents"))?;
        let action_counts = action_counts.ok_or_else(|| missing("actions"))?;
        if action_counts.len() != n_agents {
            return Err(Error::input("`actions` must list one count per agent"));
        }
        let n_states = n_states.ok_or_else(|| missing("states"))?;
        let n_joint: usize = action_counts.iter().product();
        let mut transition = vec![f64::NAN; n_states * n_joint * n_states];
        let mut seen = vec![false; n_states * n_joint];
        for (s, a, row) in transition_rows {
            if s >= n_states || a >= n_joint || row.len() != n_states {
                return Err(Error::input(format!("malformed transition row ({s}, {a})")));
            }
            seen[s * n_joint + a] = true;
            let start = (s * n_joint + a) * n_states;
            transition[start..start + n_states].copy_from_slice(&row);
        }
        if seen.iter().any(|x| !x) {
            return Err(Error::input("game file is missing transition rows"));
        }
        let mut reward = vec![f64::NAN; n_states * n_joint];
        let mut seen = vec![false; n_states];
        for (s, row) in reward_rows {
            if s >= n_states || row.len() != n_joint {
                return Err(Error::input(format!("malformed reward row {s}")));
            }
            seen[s] = true;
            reward[s * n_joint..(s + 1) * n_joint].copy_from_slice(&row);
        }
        if seen.iter().any(|x| !x) {
            return Err(Error::input("game file is missing reward rows"));
        }
        let observations = if observations.is_empty() {
            None
        } else {
            Some(
                observations
                    .into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| missing("observation"))?,
            )
        };
        Self::new(GameSpec {
            action_counts,
            n_states,
            transition,
            reward,
            observations,
            initial: initial.ok_or_else(|| missing("initial"))?,
            gamma: gamma.ok_or_else(|| missing("gamma"))?,
            reward_bound,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    let mut out = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{x}");
    }
    out
}

pub(crate) fn parse_one<T: std::str::FromStr>(parts: &[&str]) -> std::result::Result<T, String> {
    match parts {
        [x] => x.parse().map_err(|_| format!("cannot parse `{x}`")),
        _ => Err(format!("expected one value, got {}", parts.len())),
    }
}

pub(crate) fn parse_all<T: std::str::FromStr>(parts: &[&str]) -> std::result::Result<Vec<T>, String> {
    parts
        .iter()
        .map(|x| x.parse().map_err(|_| format!("cannot parse `{x}`")))
        .collect()
}

/// Parameters of the dependency-chain family.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGameParams {
    pub n_agents: usize,
    pub n_states: usize,
    pub coupling: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl ChainGameParams {
    pub fn new(n_agents: usize, coupling: f64, seed: u64) -> Self {
        Self {
            n_agents,
            n_states: 2,
            coupling,
            gamma: 0.9,
            seed,
        }
    }
}

/// Chain game with the default two states and `gamma = 0.9`.
pub fn build_dependency_chain_game(
    n_agents: usize,
    coupling: f64,
    seed: u64,
) -> Result<(MarkovGame, GroundTruthDependence)> {
    build_chain_game(&ChainGameParams::new(n_agents, coupling, seed))
}

/// Binary-action game whose shared reward couples each agent to its
/// predecessor on a chain.
///
/// Each state `s` fixes a preferred action `pref(s, i)` per agent. With
/// `sigma(x) = +1` if `x` holds and `-1` otherwise, the reward is
/// `R = (1/n) * sum_i u_i` with `u_0 = sigma(a_0 = pref(s, 0))` and, for
/// `i >= 1`, `u_i = (1 - c) sigma(a_i = pref(s, i)) + c sigma(a_i = a_{i-1})`.
/// Transitions follow a seeded stochastic matrix that ignores the
/// actions, so with `c = 0` the return is additive across agents.
pub fn build_chain_game(params: &ChainGameParams) -> Result<(MarkovGame, GroundTruthDependence)> {
    let &ChainGameParams {
        n_agents: n,
        n_states,
        coupling,
        gamma,
        seed,
    } = params;
    if n < 2 {
        return Err(Error::input("chain game needs at least 2 agents"));
    }
    if !(0.0..=1.0).contains(&coupling) {
        return Err(Error::input("coupling must lie in [0, 1]"));
    }
    if n_states == 0 {
        return Err(Error::input("chain game needs at least one state"));
    }
    let mut rng = seeded(seed);
    let pref: Vec<Vec<usize>> = (0..n_states)
        .map(|_| (0..n).map(|_| rng.random_range(0..2)).collect())
        .collect();
    let drift: Vec<Vec<f64>> = (0..n_states).map(|_| dirichlet_flat(n_states, &mut rng)).collect();
    let actions = ActionSpace::new(vec![2; n]);
    let n_joint = actions.len();
    let sigma = |b: bool| if b { 1.0 } else { -1.0 };
    let mut reward = Vec::with_capacity(n_states * n_joint);
    let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
    for s in 0..n_states {
        for a in actions.iter() {
            let mut total = sigma(a[0] == pref[s][0]);
            for i in 1..n {
                total += (1.0 - coupling) * sigma(a[i] == pref[s][i]) + coupling * sigma(a[i] == a[i - 1]);
            }
            reward.push(total / n as f64);
            transition.extend_from_slice(&drift[s]);
        }
    }
    let game = MarkovGame::new(GameSpec {
        action_counts: vec![2; n],
        n_states,
        transition,
        reward,
        observations: None,
        initial: vec![1.0 / n_states as f64; n_states],
        gamma,
        reward_bound: Some(1.0),
    })?;
    let mut truth = GroundTruthDependence::empty(n);
    for i in 1..n {
        truth.add_edge(i - 1, i)?;
    }
    Ok((game, truth))
}

/// Masked observations for a chain game: agent `i` observes only its own
/// preferred action in the current state (two observation symbols).
pub fn chain_masked_observations(game: &MarkovGame, params: &ChainGameParams) -> Result<MarkovGame> {
    let mut rng = seeded(params.seed);
    let pref: Vec<Vec<usize>> = (0..params.n_states)
        .map(|_| (0..params.n_agents).map(|_| rng.random_range(0..2)).collect())
        .collect();
    let obs = (0..params.n_agents)
        .map(|i| (0..params.n_states).map(|s| pref[s][i]).collect())
        .collect();
    game.with_observations(obs)
}

/// Random fully observed game: Dirichlet(1) transition rows and initial
/// distribution, rewards uniform in `[-1, 1]`.
pub fn build_random_game(
    n_agents: usize,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<MarkovGame> {
    if n_agents == 0 || n_states == 0 || n_actions == 0 {
        return Err(Error::input("agent, state and action counts must be >= 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::input(format!("gamma {gamma} outside [0, 1)")));
    }
    let mut rng = seeded(seed);
    let counts = vec![n_actions; n_agents];
    let n_joint: usize = counts.iter().product();
    let mut transition = Vec::with_capacity(n_states * n_joint * n_states);
    for _ in 0..n_states * n_joint {
        transition.extend(dirichlet_flat(n_states, &mut rng));
    }
    let reward = (0..n_states * n_joint).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let initial = dirichlet_flat(n_states, &mut rng);
    MarkovGame::new(GameSpec {
        action_counts: counts,
        n_states,
        transition,
        reward,
        observations: None,
        initial,
        gamma,
        reward_bound: Some(1.0),
    })
}
