//! Numeric checks of the monotonic-improvement statements on randomized
//! small instances. Every check is deterministic under its seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::{build_random_game, MarkovGame};
use crate::optimizer::{distill_step_with, distill_targets_exact, Mode, OracleMode, RecordedChain, SchemeConfig, Trainer};
use crate::oracle::{
    advantage_table, exact_batch_surrogate, exact_joint_surrogate, exact_q_advantage, exact_value, expected_return,
    max_abs, max_tv, state_action_expectation, state_distribution_at, tv_distance, visitation, AdvantageSource,
    JointPolicy, SurrogateMeasure,
};
use crate::policy::{ObservationEncoder, PolicySet};
use crate::rng::{derive_seed, dirichlet_flat, seeded, SeededRng};

/// Pure-arithmetic identities.
pub const TOL_ARITHMETIC: f64 = 1e-12;
/// Quantities backed by a linear solve.
pub const TOL_SOLVER: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub statement: String,
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub slack: f64,
    pub pass: bool,
    pub tolerance: f64,
    /// Named quantities entering the bound (alpha, bound_eps, xi, ...).
    pub terms: Vec<(String, f64)>,
}

impl BoundReport {
    pub fn new(statement: &str, seed: u64, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let slack = rhs - lhs;
        Self {
            statement: statement.to_string(),
            seed,
            lhs,
            rhs,
            slack,
            pass: slack >= -tolerance,
            tolerance,
            terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, name: &str, value: f64) -> Self {
        self.terms.push((name.to_string(), value));
        self
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|t| t.1)
    }
}

fn trial_rng(seed: u64, tag: u64, trial: usize) -> (u64, SeededRng) {
    let s = derive_seed(seed, tag, trial as u64);
    (s, seeded(s))
}

fn par_trials<F>(n_trials: usize, f: F) -> Result<Vec<BoundReport>>
where
    F: Fn(usize) -> Result<Vec<BoundReport>> + Sync + Send,
{
    let nested: Vec<Vec<BoundReport>> = (0..n_trials).into_par_iter().map(f).collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// `(1 - w) p + w q` with `q ~ Dirichlet(1)`.
fn perturb<R: Rng + ?Sized>(p: &[f64], w: f64, rng: &mut R) -> Vec<f64> {
    let q = dirichlet_flat(p.len(), rng);
    p.iter().zip(&q).map(|(a, b)| (1.0 - w) * a + w * b).collect()
}

type ProductTables = Vec<Vec<Vec<f64>>>;

fn random_product<R: Rng + ?Sized>(game: &MarkovGame, rng: &mut R) -> ProductTables {
    (0..game.n_agents())
        .map(|i| (0..game.n_states()).map(|_| dirichlet_flat(game.action_counts()[i], rng)).collect())
        .collect()
}

fn perturb_product<R: Rng + ?Sized>(tables: &ProductTables, w: f64, rng: &mut R) -> ProductTables {
    tables
        .iter()
        .map(|t| t.iter().map(|row| perturb(row, w, rng)).collect())
        .collect()
}

fn agent_alpha(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    a.iter().zip(b).try_fold(0.0f64, |m, (p, q)| Ok(m.max(tv_distance(p, q)?)))
}

fn random_joint<R: Rng + ?Sized>(game: &MarkovGame, rng: &mut R) -> Result<JointPolicy> {
    let probs = (0..game.n_states()).flat_map(|_| dirichlet_flat(game.n_joint(), rng)).collect();
    JointPolicy::from_table(game.n_states(), game.n_joint(), probs)
}

fn perturb_joint<R: Rng + ?Sized>(game: &MarkovGame, pi: &JointPolicy, w: f64, rng: &mut R) -> Result<JointPolicy> {
    let probs = (0..game.n_states()).flat_map(|s| perturb(pi.row(s), w, rng)).collect();
    JointPolicy::from_table(game.n_states(), game.n_joint(), probs)
}

fn small_game<R: Rng + ?Sized>(rng: &mut R, agents: std::ops::RangeInclusive<usize>, states: std::ops::RangeInclusive<usize>, actions: std::ops::RangeInclusive<usize>) -> Result<MarkovGame> {
    let n = rng.random_range(agents);
    let s = rng.random_range(states);
    let a = rng.random_range(actions);
    let gamma = rng.random_range(0.5..0.95);
    build_random_game(n, s, a, gamma, rng.random())
}

/// Joint TV of product distributions against the sum of per-agent TVs,
/// by full enumeration (up to 4 agents with up to 5 actions).
pub fn check_corollary1(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let (s, mut rng) = trial_rng(seed, 11, trial);
        let n = rng.random_range(1..=4usize);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(2..=5usize)).collect();
        let p: Vec<Vec<f64>> = sizes.iter().map(|&k| dirichlet_flat(k, &mut rng)).collect();
        let q: Vec<Vec<f64>> = match trial {
            0 => p.clone(),
            1 => {
                let mut q = p.clone();
                q[0] = dirichlet_flat(sizes[0], &mut rng);
                q
            }
            _ => p.iter().map(|row| perturb(row, rng.random(), &mut rng)).collect(),
        };
        let space = crate::game::ActionSpace::new(sizes.clone());
        let joint = |t: &[Vec<f64>]| -> Vec<f64> {
            space.iter().map(|a| a.iter().enumerate().map(|(i, &x)| t[i][x]).product()).collect()
        };
        let lhs = tv_distance(&joint(&p), &joint(&q))?;
        let rhs = p.iter().zip(&q).map(|(a, b)| tv_distance(a, b)).sum::<Result<f64>>()?;
        Ok(vec![BoundReport::new("corollary1", s, lhs, rhs, TOL_ARITHMETIC)])
    })
}

/// `|E_{a ~ pihat}[A^pi(s, a)]| <= 2 eps sum_i alpha^i` at every state of
/// random games; the worst state is reported.
pub fn check_lemma1(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let (s, mut rng) = trial_rng(seed, 12, trial);
        let game = small_game(&mut rng, 1..=3, 1..=6, 2..=3)?;
        let pi_t = random_product(&game, &mut rng);
        let hat_t = if trial == 0 { pi_t.clone() } else { perturb_product(&pi_t, rng.random(), &mut rng) };
        let pi = JointPolicy::from_product(&game, &pi_t)?;
        let hat = JointPolicy::from_product(&game, &hat_t)?;
        let (_, a) = exact_q_advantage(&game, &pi)?;
        let eps = max_abs(&a);
        let alpha_sum = pi_t.iter().zip(&hat_t).map(|(x, y)| agent_alpha(x, y)).sum::<Result<f64>>()?;
        let rhs = 2.0 * eps * alpha_sum;
        let n_joint = game.n_joint();
        let lhs = (0..game.n_states())
            .map(|st| hat.row(st).iter().zip(&a[st * n_joint..(st + 1) * n_joint]).map(|(p, x)| p * x).sum::<f64>().abs())
            .fold(0.0, f64::max);
        Ok(vec![BoundReport::new("lemma1", s, lhs, rhs, TOL_SOLVER)
            .with_term("bound_eps", eps)
            .with_term("alpha_sum", alpha_sum)])
    })
}

/// Advantage discrepancy under shifted state distributions at time `t`.
pub fn check_lemma2(n_trials: usize, horizon: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let (s, mut rng) = trial_rng(seed, 13, trial);
        let game = small_game(&mut rng, 1..=3, 1..=6, 2..=3)?;
        let p1 = random_joint(&game, &mut rng)?;
        let p2 = perturb_joint(&game, &p1, rng.random(), &mut rng)?;
        let p3 = if trial == 0 { p2.clone() } else { perturb_joint(&game, &p2, rng.random(), &mut rng)? };
        let t = if trial == 1 { 0 } else { rng.random_range(0..=horizon) };
        let (_, a1) = exact_q_advantage(&game, &p1)?;
        let eps = max_abs(&a1);
        let d2 = state_distribution_at(&game, &p2, t)?;
        let d3 = state_distribution_at(&game, &p3, t)?;
        let lhs = (state_action_expectation(&d2, &p2, &a1) - state_action_expectation(&d3, &p2, &a1)).abs();
        let alpha12 = max_tv(&p1, &p2)?;
        let alpha23 = max_tv(&p2, &p3)?;
        let rhs = 4.0 * eps * alpha12 * (1.0 - (1.0 - alpha23).powi(t as i32));
        Ok(vec![BoundReport::new("lemma2", s, lhs, rhs, TOL_SOLVER)
            .with_term("t", t as f64)
            .with_term("bound_eps", eps)
            .with_term("alpha12", alpha12)
            .with_term("alpha23", alpha23)])
    })
}

/// A realized update chain on a random game.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    pub game: MarkovGame,
    pub recorded: RecordedChain,
    pub clip: f64,
}

fn random_sequence<R: Rng + ?Sized>(n: usize, n_batches: usize, rng: &mut R) -> Result<BatchSequence> {
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let mut batches = vec![Vec::new(); n_batches];
    for (k, &a) in agents.iter().enumerate() {
        let b = if k < n_batches { k } else { rng.random_range(0..n_batches) };
        batches[b].push(a);
    }
    BatchSequence::new(batches, n)
}

/// One oracle-instrumented round of `b2mapo-fixed` from random policies on
/// a random game with `n_batches` batches.
pub fn realized_chain(seed: u64, n_batches: usize, oracle: OracleMode) -> Result<ChainInstance> {
    if oracle == OracleMode::Off {
        return Err(Error::input("realized chains need the oracle"));
    }
    let mut rng = seeded(seed);
    let n = rng.random_range(n_batches.max(2)..=4usize.max(n_batches));
    let game = build_random_game(n, rng.random_range(2..=4), 2, rng.random_range(0.6..0.95), rng.random())?;
    let sequence = random_sequence(n, n_batches, &mut rng)?;
    let clip = rng.random_range(0.1..0.3);
    let config = SchemeConfig {
        mode: Mode::B2mapoFixed,
        fixed_sequence: Some(sequence.clone()),
        oracle,
        clip,
        lr: rng.random_range(0.05..1.0),
        epochs: 4,
        lambda: rng.random_range(0.5..=1.0),
        n_episodes: 8,
        horizon: 24,
        distill_period: usize::MAX,
        ..Default::default()
    };
    let mut policies = PolicySet::new(&game, sequence, false, ObservationEncoder::Current)?;
    policies.randomize(rng.random(), 1.0);
    let mut trainer = Trainer::with_policies(game.clone(), config, policies, rng.random())?;
    trainer.run_round()?;
    let recorded = trainer.last_chain.take().ok_or_else(|| Error::Internal("oracle chain not recorded".into()))?;
    Ok(ChainInstance { game, recorded, clip })
}

/// Per-batch quantities of a realized chain.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTerms {
    /// `alpha^{b_k}`: joint max-TV between consecutive chain elements.
    pub alpha: f64,
    /// `S_k = sum_{j <= k} alpha^{b_j}`.
    pub alpha_prefix: f64,
    /// `eps^{b_k} = max |A^{pihat^{b_{k-1}}}|`.
    pub bound_eps: f64,
    /// `xi^{b_k} = max |Ahat - A^{pihat^{b_{k-1}}}|`.
    pub xi: f64,
    /// `J(pihat^{b_k}) - L(pihat^{b_k})`, signed.
    pub gap: f64,
    /// Pre-relaxation right-hand side.
    pub rhs: f64,
}

pub fn chain_terms(game: &MarkovGame, rec: &RecordedChain, measure: SurrogateMeasure) -> Result<Vec<BatchTerms>> {
    let gamma = game.gamma();
    let mut prev = &rec.pi;
    let mut prefix = 0.0;
    let mut out = Vec::with_capacity(rec.chain.len());
    for next in &rec.chain {
        let alpha = max_tv(prev, next)?;
        prefix += alpha;
        let (_, a_exact) = exact_q_advantage(game, prev)?;
        let bound_eps = max_abs(&a_exact);
        let xi = match rec.source {
            AdvantageSource::Exact => 0.0,
            _ => {
                let a_hat = advantage_table(game, &rec.pi, prev, &rec.source)?;
                a_hat.iter().zip(&a_exact).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            }
        };
        let lsur = exact_batch_surrogate(game, &rec.pi, prev, next, &rec.source, measure)?;
        let gap = expected_return(game, next)? - lsur;
        let rhs = single_batch_rhs(gamma, bound_eps, alpha, prefix, xi);
        out.push(BatchTerms {
            alpha,
            alpha_prefix: prefix,
            bound_eps,
            xi,
            gap,
            rhs,
        });
        prev = next;
    }
    Ok(out)
}

/// `4 eps alpha (1/(1-g) - 1/(1-g(1-S))) + xi/(1-g)`.
pub fn single_batch_rhs(gamma: f64, eps: f64, alpha: f64, prefix: f64, xi: f64) -> f64 {
    4.0 * eps * alpha * (1.0 / (1.0 - gamma) - 1.0 / (1.0 - gamma * (1.0 - prefix))) + xi / (1.0 - gamma)
}

/// `4 g eps / (1-g)^2 sum_k alpha_k S_k + sum_k xi_k / (1-g)` with
/// `eps = max_k eps_k`.
pub fn joint_relaxed_rhs(gamma: f64, terms: &[BatchTerms]) -> f64 {
    let eps = terms.iter().map(|t| t.bound_eps).fold(0.0, f64::max);
    let coupled: f64 = terms.iter().map(|t| t.alpha * t.alpha_prefix).sum();
    let xi: f64 = terms.iter().map(|t| t.xi).sum();
    4.0 * gamma * eps / (1.0 - gamma).powi(2) * coupled + xi / (1.0 - gamma)
}

fn measure_tag(m: SurrogateMeasure) -> &'static str {
    match m {
        SurrogateMeasure::Realized => "realized",
        SurrogateMeasure::Behavior => "behavior",
    }
}

const MEASURES: [SurrogateMeasure; 2] = [SurrogateMeasure::Behavior, SurrogateMeasure::Realized];

fn chain_oracle(trial: usize) -> OracleMode {
    if trial % 4 == 0 {
        OracleMode::Exact
    } else {
        OracleMode::Monitor
    }
}

/// Per-batch bound on realized chains with 1 to 4 batches.
pub fn check_single_batch_bound(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let s = derive_seed(seed, 14, trial as u64);
        let inst = realized_chain(s, 1 + trial % 4, chain_oracle(trial))?;
        let mut out = Vec::new();
        for m in MEASURES {
            for (k, t) in chain_terms(&inst.game, &inst.recorded, m)?.into_iter().enumerate() {
                out.push(
                    BoundReport::new(&format!("single_batch/{}", measure_tag(m)), s, t.gap.abs(), t.rhs, TOL_SOLVER)
                        .with_term("batch", k as f64)
                        .with_term("alpha", t.alpha)
                        .with_term("alpha_prefix", t.alpha_prefix)
                        .with_term("bound_eps", t.bound_eps)
                        .with_term("clip_eps", inst.clip)
                        .with_term("xi", t.xi),
                );
            }
        }
        Ok(out)
    })
}

/// Whole-chain bound in the pre-relaxation and relaxed forms.
pub fn check_joint_bound(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let s = derive_seed(seed, 15, trial as u64);
        let inst = realized_chain(s, 1 + trial % 4, chain_oracle(trial))?;
        let gamma = inst.game.gamma();
        let rec = &inst.recorded;
        let j_final = expected_return(&inst.game, rec.chain.last().unwrap_or(&rec.pi))?;
        let mut out = Vec::new();
        for m in MEASURES {
            let terms = chain_terms(&inst.game, rec, m)?;
            let lhs = (j_final - exact_joint_surrogate(&inst.game, &rec.pi, &rec.chain, &rec.source, m)?).abs();
            let pre: f64 = terms.iter().map(|t| t.rhs).sum();
            let relaxed = joint_relaxed_rhs(gamma, &terms);
            let tag = measure_tag(m);
            let batches = terms.len() as f64;
            out.push(BoundReport::new(&format!("joint/{tag}"), s, lhs, pre, TOL_SOLVER).with_term("batches", batches));
            out.push(
                BoundReport::new(&format!("joint_relaxed/{tag}"), s, lhs, relaxed, TOL_SOLVER).with_term("batches", batches),
            );
        }
        Ok(out)
    })
}

/// Ordering of the bound expressions obtained by replacing one realized
/// batch gap at a time with its bound, ending with the relaxed form.
pub fn check_incremental_tightening(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let s = derive_seed(seed, 16, trial as u64);
        let inst = realized_chain(s, 2 + trial % 3, chain_oracle(trial))?;
        let terms = chain_terms(&inst.game, &inst.recorded, SurrogateMeasure::Behavior)?;
        let expressions = tightening_expressions(&terms);
        let mut out = Vec::new();
        for (b, w) in expressions.windows(2).enumerate() {
            out.push(BoundReport::new("incremental", s, w[0], w[1], TOL_SOLVER).with_term("step", b as f64));
        }
        let relaxed = joint_relaxed_rhs(inst.game.gamma(), &terms);
        out.push(
            BoundReport::new("incremental", s, *expressions.last().expect("nonempty"), relaxed, TOL_SOLVER)
                .with_term("step", expressions.len() as f64 - 1.0),
        );
        Ok(out)
    })
}

/// `E_b = sum_{k < b} rhs_k + |sum_{k >= b} gap_k|` for `b = 0..=|B|`.
pub fn tightening_expressions(terms: &[BatchTerms]) -> Vec<f64> {
    (0..=terms.len())
        .map(|b| {
            terms[..b].iter().map(|t| t.rhs).sum::<f64>() + terms[b..].iter().map(|t| t.gap).sum::<f64>().abs()
        })
        .collect()
}

/// `rhs_from` for a sweep of chain terms, used to compare bound values of
/// two runs term by term.
fn rhs_values(terms: &[BatchTerms]) -> Vec<f64> {
    terms.iter().map(|t| t.rhs).collect()
}

fn with_agent(tables: &ProductTables, other: &ProductTables, agent: usize) -> ProductTables {
    let mut t = tables.clone();
    t[agent] = other[agent].clone();
    t
}

/// `|J(pihat) - J(pi) - 1/(1-g) sum_i E_{(d^pi, pi)}[(pihat^i/pi^i) A^pi]|
/// <= 4 eps^pi / (1-g) sum_i alpha^i` on random product policy pairs.
pub fn check_mappo_bound(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let (s, mut rng) = trial_rng(seed, 17, trial);
        let game = small_game(&mut rng, 1..=3, 1..=5, 2..=3)?;
        let gamma = game.gamma();
        let pi_t = random_product(&game, &mut rng);
        let hat_t = if trial == 0 { pi_t.clone() } else { perturb_product(&pi_t, rng.random(), &mut rng) };
        let pi = JointPolicy::from_product(&game, &pi_t)?;
        let hat = JointPolicy::from_product(&game, &hat_t)?;
        let (_, a) = exact_q_advantage(&game, &pi)?;
        let eps = max_abs(&a);
        let d = visitation(&game, &pi)?;
        let mut surrogate = 0.0;
        let mut alpha_sum = 0.0;
        for i in 0..game.n_agents() {
            let mixed = JointPolicy::from_product(&game, &with_agent(&pi_t, &hat_t, i))?;
            surrogate += state_action_expectation(&d, &mixed, &a);
            alpha_sum += agent_alpha(&pi_t[i], &hat_t[i])?;
        }
        let lhs = (expected_return(&game, &hat)? - expected_return(&game, &pi)? - surrogate / (1.0 - gamma)).abs();
        let rhs = 4.0 * eps / (1.0 - gamma) * alpha_sum;
        Ok(vec![BoundReport::new("mappo", s, lhs, rhs, TOL_SOLVER)
            .with_term("bound_eps", eps)
            .with_term("alpha_sum", alpha_sum)
            .with_term("gamma", gamma)
            .with_term("agents", game.n_agents() as f64)])
    })
}

/// Per-agent HAPPO surrogate gap against the appendix's final inequality;
/// the uncontrollable term `sum_{j in e^i} alpha^j eps^pi` is reported.
pub fn check_happo_bound(n_trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    par_trials(n_trials, |trial| {
        let (s, mut rng) = trial_rng(seed, 18, trial);
        let game = small_game(&mut rng, 2..=3, 1..=5, 2..=3)?;
        let gamma = game.gamma();
        let n = game.n_agents();
        let pi_t = random_product(&game, &mut rng);
        let w = if trial == 0 { 0.0 } else { rng.random::<f64>() };
        let target = perturb_product(&pi_t, w, &mut rng);
        let pi = JointPolicy::from_product(&game, &pi_t)?;
        let (_, a_pi) = exact_q_advantage(&game, &pi)?;
        let eps_pi = max_abs(&a_pi);
        let d = visitation(&game, &pi)?;
        let alphas: Vec<f64> = (0..n).map(|i| agent_alpha(&pi_t[i], &target[i])).collect::<Result<_>>()?;
        let mut prev_t = pi_t.clone();
        let mut prev = pi.clone();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let next_t = with_agent(&prev_t, &target, i);
            let next = JointPolicy::from_product(&game, &next_t)?;
            let (_, a_prev) = exact_q_advantage(&game, &prev)?;
            let eps_prev = max_abs(&a_prev);
            let delta = state_action_expectation(&d, &next, &a_pi) - state_action_expectation(&d, &prev, &a_pi);
            let lhs = (expected_return(&game, &next)? - expected_return(&game, &prev)? - delta / (1.0 - gamma)).abs();
            let preceding: f64 = alphas[..i].iter().sum();
            let total = preceding + alphas[i];
            let uncontrollable = preceding * eps_pi;
            let rhs = 4.0 * eps_prev * alphas[i] * (1.0 / (1.0 - gamma) - 1.0 / (1.0 - gamma * (1.0 - total)))
                + (4.0 * alphas[i] * eps_prev + 4.0 * uncontrollable) / (1.0 - gamma);
            out.push(
                BoundReport::new("happo", s, lhs, rhs, TOL_SOLVER)
                    .with_term("agent", i as f64)
                    .with_term("uncontrollable", uncontrollable),
            );
            prev_t = next_t;
            prev = next;
        }
        Ok(out)
    })
}

/// Runs `b2mapo-fixed` with `n` singleton batches and `a2po` on the same
/// data from the same start; parameters and bound values must coincide.
pub fn check_theorem2_equivalence(seed: u64) -> Result<BoundReport> {
    check_theorem2_with(3, seed)
}

pub fn check_theorem2_with(n_agents: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = seeded(derive_seed(seed, 19, 0));
    let game = build_random_game(n_agents, 3, 2, 0.9, rng.random())?;
    let base = SchemeConfig {
        mode: Mode::A2po,
        oracle: OracleMode::Monitor,
        n_episodes: 8,
        horizon: 24,
        lr: 0.3,
        distill_period: usize::MAX,
        ..Default::default()
    };
    let mut start = PolicySet::new(&game, BatchSequence::single(n_agents), false, ObservationEncoder::Current)?;
    start.randomize(rng.random(), 1.0);
    let trainer_seed = rng.random();
    let mut a2po = Trainer::with_policies(game.clone(), base.clone(), start.clone(), trainer_seed)?;
    let order = a2po.prepare()?.clone();
    let fixed_cfg = SchemeConfig {
        mode: Mode::B2mapoFixed,
        fixed_sequence: Some(order.clone()),
        ..base
    };
    let mut fixed = Trainer::with_policies(game.clone(), fixed_cfg, start, trainer_seed)?;
    a2po.run_round()?;
    fixed.run_round()?;
    let param_diff = a2po
        .policies
        .conditioned_tables()
        .iter()
        .zip(fixed.policies.conditioned_tables())
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    let chain_a = a2po.last_chain.as_ref().ok_or_else(|| Error::Internal("no a2po chain".into()))?;
    let chain_f = fixed.last_chain.as_ref().ok_or_else(|| Error::Internal("no fixed chain".into()))?;
    let mut rhs_diff = 0.0f64;
    for m in MEASURES {
        let ra = rhs_values(&chain_terms(&game, chain_a, m)?);
        let rf = rhs_values(&chain_terms(&game, chain_f, m)?);
        if ra.len() != rf.len() {
            return Ok(BoundReport::new("theorem2", seed, f64::INFINITY, 0.0, TOL_ARITHMETIC));
        }
        rhs_diff = ra.iter().zip(&rf).map(|(x, y)| (x - y).abs()).fold(rhs_diff, f64::max);
    }
    Ok(BoundReport::new("theorem2", seed, param_diff.max(rhs_diff), 0.0, TOL_ARITHMETIC)
        .with_term("param_diff", param_diff)
        .with_term("rhs_diff", rhs_diff)
        .with_term("batches", order.len() as f64))
}

/// Settings for [`check_theorem3_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistillCheck {
    pub rounds: usize,
    pub final_steps: usize,
    /// Pass threshold as a fraction of `R_max / (1 - gamma)`.
    pub fraction: f64,
}

impl Default for DistillCheck {
    fn default() -> Self {
        Self {
            rounds: 150,
            final_steps: 2000,
            fraction: 0.05,
        }
    }
}

/// `max_s |V_pi(s) - V_ind(s)|` after training and distillation.
pub fn check_theorem3_distillation(game: &MarkovGame, seed: u64) -> Result<BoundReport> {
    check_theorem3_with(game, seed, &DistillCheck::default())
}

pub fn check_theorem3_with(game: &MarkovGame, seed: u64, check: &DistillCheck) -> Result<BoundReport> {
    if !game.is_fully_observed() {
        return Err(Error::input("the distillation check needs a fully observed game"));
    }
    let config = SchemeConfig {
        mode: Mode::B2mapoDag,
        oracle: OracleMode::Exact,
        lr: 1.0,
        epochs: 4,
        distill_period: 5,
        distill_steps: 50,
        distill_coef: 1.0,
        n_episodes: 8,
        horizon: 32,
        ..Default::default()
    };
    let mut trainer = Trainer::new(game.clone(), config, seed)?;
    for _ in 0..check.rounds {
        trainer.run_round()?;
    }
    let report = distill_gap(game, &mut trainer.policies, check.final_steps)?;
    let rhs = check.fraction * game.reward_bound() / (1.0 - game.gamma());
    Ok(BoundReport::new("theorem3", seed, report.0, rhs, 0.0).with_term("final_kl", report.1))
}

/// Distills `set` for `steps` exact steps, then returns the value gap and
/// the summed distillation loss.
pub fn distill_gap(game: &MarkovGame, set: &mut PolicySet, steps: usize) -> Result<(f64, f64)> {
    let targets = distill_targets_exact(set, game)?;
    for _ in 0..steps {
        distill_step_with(set, &targets, 1.0)?;
    }
    let kl: f64 = crate::optimizer::distill_loss(set, &targets)?.iter().sum();
    let v_pi = exact_value(game, &set.joint_policy(game)?)?;
    let v_ind = exact_value(game, &set.independent_joint_policy(game)?)?;
    let gap = v_pi.iter().zip(&v_ind).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((gap, kl))
}

/// Trial counts of the default suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub corollary1: usize,
    pub lemma1: usize,
    pub lemma2: usize,
    pub lemma2_horizon: usize,
    pub single_batch: usize,
    pub joint: usize,
    pub incremental: usize,
    pub mappo: usize,
    pub happo: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            corollary1: 10_000,
            lemma1: 1_000,
            lemma2: 500,
            lemma2_horizon: 8,
            single_batch: 200,
            joint: 200,
            incremental: 100,
            mappo: 500,
            happo: 200,
        }
    }
}

impl SuiteConfig {
    /// Every count divided by `factor` (at least one trial each).
    pub fn scaled_down(&self, factor: usize) -> Self {
        let f = |x: usize| (x / factor.max(1)).max(1);
        Self {
            corollary1: f(self.corollary1),
            lemma1: f(self.lemma1),
            lemma2: f(self.lemma2),
            lemma2_horizon: self.lemma2_horizon,
            single_batch: f(self.single_batch),
            joint: f(self.joint),
            incremental: f(self.incremental),
            mappo: f(self.mappo),
            happo: f(self.happo),
        }
    }
}

/// Every check of the suite plus the singleton-batch equivalence.
pub fn run_suite(config: &SuiteConfig, seed: u64) -> Result<Vec<BoundReport>> {
    let mut out = check_corollary1(config.corollary1, seed)?;
    out.extend(check_lemma1(config.lemma1, seed)?);
    out.extend(check_lemma2(config.lemma2, config.lemma2_horizon, seed)?);
    out.extend(check_single_batch_bound(config.single_batch, seed)?);
    out.extend(check_joint_bound(config.joint, seed)?);
    out.extend(check_incremental_tightening(config.incremental, seed)?);
    out.extend(check_mappo_bound(config.mappo, seed)?);
    out.extend(check_happo_bound(config.happo, seed)?);
    out.push(check_theorem2_equivalence(seed)?);
    Ok(out)
}

/// Per statement: `(statement, trials, failures, min slack)`, in first
/// appearance order.
pub fn summarize(reports: &[BoundReport]) -> Vec<(String, usize, usize, f64)> {
    let mut out: Vec<(String, usize, usize, f64)> = Vec::new();
    for r in reports {
        let idx = match out.iter().position(|e| e.0 == r.statement) {
            Some(i) => i,
            None => {
                out.push((r.statement.clone(), 0, 0, f64::INFINITY));
                out.len() - 1
            }
        };
        let e = &mut out[idx];
        e.1 += 1;
        e.2 += usize::from(!r.pass);
        e.3 = e.3.min(r.slack);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_flag_follows_slack() {
        let r = BoundReport::new("x", 0, 1.0, 1.0 - 5e-10, 1e-9);
        assert!(r.pass && (r.slack + 5e-10).abs() < 1e-15);
        assert!(!BoundReport::new("x", 0, 1.0, 0.9, 1e-9).pass);
    }

    #[test]
    fn corollary1_trivial_cases_are_tight() {
        let r = check_corollary1(2, 5).unwrap();
        assert_eq!((r[0].lhs, r[0].rhs), (0.0, 0.0));
        assert!((r[1].lhs - r[1].rhs).abs() < 1e-15);
    }

    #[test]
    fn small_runs_pass() {
        let all = [
            check_corollary1(200, 1).unwrap(),
            check_lemma1(30, 1).unwrap(),
            check_lemma2(30, 8, 1).unwrap(),
            check_happo_bound(20, 1).unwrap(),
        ];
        for reports in all {
            for r in reports {
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn lemma_trivial_instances() {
        let l1 = check_lemma1(1, 3).unwrap();
        assert!(l1[0].lhs < 1e-12);
        let l2 = check_lemma2(2, 8, 3).unwrap();
        assert!(l2[0].lhs < 1e-12 && l2[0].rhs == 0.0);
        assert_eq!(l2[1].term("t"), Some(0.0));
        assert!(l2[1].lhs < 1e-12);
    }

    #[test]
    fn no_op_chain_has_zero_gap() {
        let inst = realized_chain(3, 2, OracleMode::Exact).unwrap();
        let rec = RecordedChain {
            chain: vec![inst.recorded.pi.clone(); 2],
            ..inst.recorded.clone()
        };
        for m in MEASURES {
            let terms = chain_terms(&inst.game, &rec, m).unwrap();
            for t in &terms {
                assert_eq!(t.alpha, 0.0);
                assert!(t.gap.abs() < 1e-9 && t.rhs == 0.0);
            }
            let e = tightening_expressions(&terms);
            assert!(e.iter().all(|x| *x < 1e-9));
        }
    }

    #[test]
    fn exact_source_has_zero_xi_and_realized_gap() {
        let inst = realized_chain(4, 3, OracleMode::Exact).unwrap();
        let terms = chain_terms(&inst.game, &inst.recorded, SurrogateMeasure::Realized).unwrap();
        for t in terms {
            assert_eq!(t.xi, 0.0);
            assert!(t.gap.abs() < 1e-9);
        }
    }

    #[test]
    fn happo_unchanged_preceding_agents_have_no_uncontrollable_term() {
        let r = check_happo_bound(1, 2).unwrap();
        assert!(r.iter().all(|x| x.term("uncontrollable") == Some(0.0) && x.lhs < 1e-9));
        assert_eq!(r[0].term("agent"), Some(0.0));
    }

    #[test]
    fn theorem2_single_agent_and_fixture() {
        for n in [1, 3] {
            let r = check_theorem2_with(n, 7).unwrap();
            assert!(r.pass, "{r:?}");
            assert_eq!(r.term("param_diff"), Some(0.0));
        }
    }

    #[test]
    fn theorem3_product_policy_distills_exactly() {
        let game = build_random_game(2, 3, 2, 0.9, 1).unwrap();
        let mut set = PolicySet::new(&game, BatchSequence::single(2), false, ObservationEncoder::Current).unwrap();
        set.randomize(4, 1.0);
        let (gap, _) = distill_gap(&game, &mut set, 3000).unwrap();
        assert!(gap <= 1e-6, "gap {gap}");
    }

    #[test]
    fn theorem3_deterministic_policy_has_degenerate_marginals() {
        let game = build_random_game(2, 3, 2, 0.9, 2).unwrap();
        let mut set =
            PolicySet::new(&game, BatchSequence::singletons(&[0, 1]).unwrap(), false, ObservationEncoder::Current).unwrap();
        for t in set.conditioned_tables_mut() {
            for r in 0..t.n_rows() {
                let row = t.row_mut(r);
                row[0] = 30.0;
                row[1] = -30.0;
            }
        }
        let (gap, _) = distill_gap(&game, &mut set, 3000).unwrap();
        let tol = 0.05 * game.reward_bound() / (1.0 - game.gamma());
        assert!(gap <= tol, "gap {gap}");
    }

    #[test]
    fn summary_counts() {
        let reports = vec![
            BoundReport::new("a", 0, 0.0, 1.0, 0.0),
            BoundReport::new("b", 0, 2.0, 1.0, 0.0),
            BoundReport::new("a", 1, 0.5, 1.0, 0.0),
        ];
        let s = summarize(&reports);
        assert_eq!(s[0], ("a".to_string(), 2, 0, 0.5));
        assert_eq!((s[1].1, s[1].2), (1, 1));
    }
}
