//! Dynamic-programming ground truth for small games.
//!
//! Every quantity here is computed by dense linear algebra on the full
//! state space, so games are capped at [`MAX_STATES`] states and
//! [`MAX_JOINT_ACTIONS`] joint actions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::MarkovGame;

pub const MAX_STATES: usize = 64;
pub const MAX_JOINT_ACTIONS: usize = 256;
pub const BELLMAN_RESIDUAL_TOL: f64 = 1e-10;

const ROW_TOL: f64 = 1e-9;

/// State-conditioned distribution over flat joint actions.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    n_states: usize,
    n_joint: usize,
    probs: Vec<f64>,
}

impl JointPolicy {
    pub fn from_table(n_states: usize, n_joint: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_joint {
            return Err(Error::input(format!(
                "joint policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_joint
            )));
        }
        for s in 0..n_states {
            let row = &probs[s * n_joint..(s + 1) * n_joint];
            if row.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::input(format!("joint policy row {s} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::input(format!("joint policy row {s} sums to {total}")));
            }
        }
        Ok(Self {
            n_states,
            n_joint,
            probs,
        })
    }

    pub fn uniform(game: &MarkovGame) -> Self {
        let n = game.n_joint();
        Self {
            n_states: game.n_states(),
            n_joint: n,
            probs: vec![1.0 / n as f64; game.n_states() * n],
        }
    }

    /// Product of independent per-agent rows: `per_agent[i][s]` is agent
    /// `i`'s action distribution in state `s`.
    pub fn from_product(game: &MarkovGame, per_agent: &[Vec<Vec<f64>>]) -> Result<Self> {
        if per_agent.len() != game.n_agents() {
            return Err(Error::input("need one table per agent"));
        }
        for (i, table) in per_agent.iter().enumerate() {
            if table.len() != game.n_states()
                || table.iter().any(|row| row.len() != game.action_counts()[i])
            {
                return Err(Error::input(format!("agent {i} table has the wrong shape")));
            }
        }
        let space = game.action_space();
        let mut probs = Vec::with_capacity(game.n_states() * game.n_joint());
        for s in 0..game.n_states() {
            for a in 0..game.n_joint() {
                let mut p = 1.0;
                for (i, table) in per_agent.iter().enumerate() {
                    p *= table[s][space.digit(a, i)];
                }
                probs.push(p);
            }
        }
        Self::from_table(game.n_states(), game.n_joint(), probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_joint + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_joint..(s + 1) * self.n_joint]
    }

    pub fn table(&self) -> &[f64] {
        &self.probs
    }

    /// Per-state marginal of agent `agent`'s action.
    pub fn agent_marginal(&self, game: &MarkovGame, agent: usize, s: usize) -> Vec<f64> {
        let space = game.action_space();
        let mut out = vec![0.0; game.action_counts()[agent]];
        for (a, &p) in self.row(s).iter().enumerate() {
            out[space.digit(a, agent)] += p;
        }
        out
    }
}

/// Exact value tables of one joint policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTables {
    pub v: Vec<f64>,
    /// Flattened `[s][a_joint]`.
    pub q: Vec<f64>,
    /// Flattened `[s][a_joint]`.
    pub a: Vec<f64>,
    pub j: f64,
    pub d: Vec<f64>,
}

impl ExactTables {
    /// `max |A(s, a)|` over all state-action pairs.
    pub fn max_abs_advantage(&self) -> f64 {
        max_abs(&self.a)
    }
}

pub(crate) fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn check(game: &MarkovGame, pi: &JointPolicy) -> Result<()> {
    if game.n_states() > MAX_STATES || game.n_joint() > MAX_JOINT_ACTIONS {
        return Err(Error::Size(format!(
            "exact oracle supports at most {MAX_STATES} states and {MAX_JOINT_ACTIONS} joint actions, got {} and {}",
            game.n_states(),
            game.n_joint()
        )));
    }
    if pi.n_states != game.n_states() || pi.n_joint != game.n_joint() {
        return Err(Error::input("joint policy shape does not match the game"));
    }
    Ok(())
}

/// `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)` and `R_pi[s]`.
fn induced_chain(game: &MarkovGame, pi: &JointPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let n = game.n_states();
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for (a, &w) in pi.row(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r[s] += w * game.reward(s, a);
            for (sp, &t) in game.transition_row(s, a).iter().enumerate() {
                p[(s, sp)] += w * t;
            }
        }
    }
    (p, r)
}

fn solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Internal("singular policy-evaluation system".into()))?;
    let residual = (&m * &x - rhs).amax();
    if !(residual <= BELLMAN_RESIDUAL_TOL) {
        return Err(Error::Internal(format!("linear-solve residual {residual:e} too large")));
    }
    Ok(x)
}

fn bellman_matrix(game: &MarkovGame, p: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(game.n_states(), game.n_states()) - p * game.gamma()
}

/// Solves `(I - gamma P_pi) V = R_pi`.
pub fn exact_value(game: &MarkovGame, pi: &JointPolicy) -> Result<Vec<f64>> {
    check(game, pi)?;
    let (p, r) = induced_chain(game, pi);
    Ok(solve(bellman_matrix(game, &p), &r)?.as_slice().to_vec())
}

fn q_from_v(game: &MarkovGame, v: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(game.n_states() * game.n_joint());
    for s in 0..game.n_states() {
        for a in 0..game.n_joint() {
            let next: f64 = game.transition_row(s, a).iter().zip(v).map(|(p, v)| p * v).sum();
            q.push(game.reward(s, a) + game.gamma() * next);
        }
    }
    q
}

/// `Q(s,a) = R(s,a) + gamma sum_s' P(s'|s,a) V(s')` and `A = Q - V`.
pub fn exact_q_advantage(game: &MarkovGame, pi: &JointPolicy) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = exact_value(game, pi)?;
    let q = q_from_v(game, &v);
    let n_joint = game.n_joint();
    let a = q.iter().enumerate().map(|(k, q)| q - v[k / n_joint]).collect();
    Ok((q, a))
}

pub fn expected_return(game: &MarkovGame, pi: &JointPolicy) -> Result<f64> {
    let v = exact_value(game, pi)?;
    Ok(dot(game.initial(), &v))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Normalized discounted visitation `d(s) = (1-gamma) sum_t gamma^t Pr(s_t = s)`,
/// from the transposed Bellman system.
pub fn visitation(game: &MarkovGame, pi: &JointPolicy) -> Result<Vec<f64>> {
    check(game, pi)?;
    let (p, _) = induced_chain(game, pi);
    let m = bellman_matrix(game, &p).transpose();
    let rhs = DVector::from_vec(game.initial().iter().map(|x| x * (1.0 - game.gamma())).collect());
    let mut d = solve(m, &rhs)?.as_slice().to_vec();
    for x in &mut d {
        if *x < 0.0 && *x > -1e-14 {
            *x = 0.0;
        }
    }
    Ok(d)
}

pub fn exact_tables(game: &MarkovGame, pi: &JointPolicy) -> Result<ExactTables> {
    let v = exact_value(game, pi)?;
    let q = q_from_v(game, &v);
    let n_joint = game.n_joint();
    let a = q.iter().enumerate().map(|(k, q)| q - v[k / n_joint]).collect();
    let j = dot(game.initial(), &v);
    let d = visitation(game, pi)?;
    Ok(ExactTables { v, q, a, j, d })
}

/// `Pr(s_t = s)` under `pi` from the initial distribution, by `t` forward steps.
pub fn state_distribution_at(game: &MarkovGame, pi: &JointPolicy, t: usize) -> Result<Vec<f64>> {
    check(game, pi)?;
    let (p, _) = induced_chain(game, pi);
    let mut x = DVector::from_column_slice(game.initial());
    let pt = p.transpose();
    for _ in 0..t {
        x = &pt * x;
    }
    Ok(x.as_slice().to_vec())
}

/// `sum_s d(s) sum_a pi(a|s) f(s,a)` for a flattened `[s][a]` table `f`.
pub fn state_action_expectation(d: &[f64], pi: &JointPolicy, f: &[f64]) -> f64 {
    let n = pi.n_joint;
    d.iter()
        .enumerate()
        .map(|(s, &ds)| ds * dot(pi.row(s), &f[s * n..(s + 1) * n]))
        .sum()
}

/// Half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::input("distributions have different lengths"));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `max_s TV(a(.|s), b(.|s))`.
pub fn max_tv(a: &JointPolicy, b: &JointPolicy) -> Result<f64> {
    if a.n_states != b.n_states || a.n_joint != b.n_joint {
        return Err(Error::input("joint policies have different shapes"));
    }
    let mut best = 0.0_f64;
    for s in 0..a.n_states {
        best = best.max(tv_distance(a.row(s), b.row(s))?);
    }
    Ok(best)
}

/// Expected value of the truncated-importance-weighted advantage estimator
/// for every `(s, a)`, under exact dynamics and an unbounded horizon.
///
/// With `c(s,a) = lambda * min(1, target(a|s) / behavior(a|s))` and
/// `dbar(s,a) = R(s,a) + gamma E[V(s')] - V(s)`, the estimator
/// `A_t = delta_t + gamma c_{t+1} A_{t+1}` has conditional mean
/// `Ahat(s,a) = dbar(s,a) + gamma sum_s' P(s'|s,a) H(s')` where `H` solves
/// `(I - gamma C P) H = C dbar` with `C` the behavior-weighted `c` average.
pub fn corrected_advantage_table(
    game: &MarkovGame,
    behavior: &JointPolicy,
    target: &JointPolicy,
    v: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    check(game, behavior)?;
    check(game, target)?;
    if v.len() != game.n_states() {
        return Err(Error::input("value table length must equal state count"));
    }
    let n = game.n_states();
    let n_joint = game.n_joint();
    let gamma = game.gamma();
    let dbar: Vec<f64> = q_from_v(game, v)
        .iter()
        .enumerate()
        .map(|(k, q)| q - v[k / n_joint])
        .collect();
    let mut cp = DMatrix::zeros(n, n);
    let mut cd = DVector::zeros(n);
    for s in 0..n {
        for a in 0..n_joint {
            let b = behavior.prob(s, a);
            if b <= 0.0 {
                continue;
            }
            let w = b * lambda * (target.prob(s, a) / b).min(1.0);
            cd[s] += w * dbar[s * n_joint + a];
            for (sp, &t) in game.transition_row(s, a).iter().enumerate() {
                cp[(s, sp)] += w * t;
            }
        }
    }
    let h = solve(DMatrix::identity(n, n) - cp * gamma, &cd)?;
    let mut out = Vec::with_capacity(n * n_joint);
    for s in 0..n {
        for a in 0..n_joint {
            let next: f64 = game.transition_row(s, a).iter().zip(h.iter()).map(|(p, h)| p * h).sum();
            out.push(dbar[s * n_joint + a] + gamma * next);
        }
    }
    Ok(out)
}

/// Which state distribution weights the surrogate expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateMeasure {
    /// Visitation of the updated policy being scored.
    Realized,
    /// Visitation of the round's behavior policy.
    Behavior,
}

/// Advantage table used inside a surrogate.
#[derive(Debug, Clone, PartialEq)]
pub enum AdvantageSource {
    /// Exact `A` of the correction target.
    Exact,
    /// Tabulated corrected estimator with critic `v` and trace parameter `lambda`.
    Corrected { v: Vec<f64>, lambda: f64 },
}

/// Advantage table of `target` as seen by `source`, with `behavior` the
/// policy that generated the data.
pub fn advantage_table(
    game: &MarkovGame,
    behavior: &JointPolicy,
    target: &JointPolicy,
    source: &AdvantageSource,
) -> Result<Vec<f64>> {
    match source {
        AdvantageSource::Exact => Ok(exact_q_advantage(game, target)?.1),
        AdvantageSource::Corrected { v, lambda } => {
            corrected_advantage_table(game, behavior, target, v, *lambda)
        }
    }
}

fn measure_of(
    game: &MarkovGame,
    pi: &JointPolicy,
    scored: &JointPolicy,
    measure: SurrogateMeasure,
) -> Result<Vec<f64>> {
    match measure {
        SurrogateMeasure::Realized => visitation(game, scored),
        SurrogateMeasure::Behavior => visitation(game, pi),
    }
}

/// `J(prev) + 1/(1-gamma) E_{(s,a) ~ (d, next)}[A]` with `A` the advantage of
/// `prev` under `source` and `d` chosen by `measure`.
pub fn exact_batch_surrogate(
    game: &MarkovGame,
    pi: &JointPolicy,
    prev: &JointPolicy,
    next: &JointPolicy,
    source: &AdvantageSource,
    measure: SurrogateMeasure,
) -> Result<f64> {
    let adv = advantage_table(game, pi, prev, source)?;
    let d = measure_of(game, pi, next, measure)?;
    Ok(expected_return(game, prev)? + state_action_expectation(&d, next, &adv) / (1.0 - game.gamma()))
}

/// `J(pi) + 1/(1-gamma) sum_k E_{(s,a) ~ (d_k, chain[k])}[A_k]`, where
/// `A_k` is the advantage of the previous chain element (`pi` for `k = 0`).
pub fn exact_joint_surrogate(
    game: &MarkovGame,
    pi: &JointPolicy,
    chain: &[JointPolicy],
    source: &AdvantageSource,
    measure: SurrogateMeasure,
) -> Result<f64> {
    let mut total = expected_return(game, pi)?;
    let mut prev = pi;
    for next in chain {
        let adv = advantage_table(game, pi, prev, source)?;
        let d = measure_of(game, pi, next, measure)?;
        total += state_action_expectation(&d, next, &adv) / (1.0 - game.gamma());
        prev = next;
    }
    Ok(total)
}
