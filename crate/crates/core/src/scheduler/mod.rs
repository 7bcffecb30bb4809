//! Upper layer: dependence scoring, DAG construction, layering, batch
//! partitioning and the learned DAG generator.

pub mod attention;
pub mod critic;
pub mod graph;
pub mod partition;

use rand::Rng;

pub use attention::{
    dag_generator_update, feature_width, generator_objective_and_gradient, score_dependence, window_features,
    AttentionScorer, GeneratorConfig, GeneratorSample,
};
pub use critic::{critic_loss, dag_advantage, dag_critic_update, dag_period_reward, period_returns};
pub use graph::{
    default_threshold, edge_set_logp, inclusion_prob, is_acyclic, layer_topological, sample_edge_set, to_dag, DependenceGraph,
    WeightedDigraph, WeightedEdge, EDGE_PROB_MARGIN,
};
pub use partition::{min_batches_bruteforce, min_batches_greedy, IndependenceGraph};

use crate::batch::BatchSequence;
use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::rollout::TrajectoryBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub d_k: usize,
    /// `None` uses [`default_threshold`].
    pub threshold: Option<f64>,
    /// Period `T` in environment steps.
    pub period: usize,
    /// Feature window `W`.
    pub window: usize,
    pub generator_lr: f64,
    pub clip: f64,
    pub kl_coef: f64,
    pub generator_epochs: usize,
    pub critic_lr: f64,
    pub init_scale: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            d_k: 8,
            threshold: None,
            period: 16,
            window: 4,
            generator_lr: 0.05,
            clip: 0.2,
            kl_coef: 0.01,
            generator_epochs: 4,
            critic_lr: 0.1,
            init_scale: 0.5,
        }
    }
}

/// One round's sampled schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DagPlan {
    pub features: Vec<Vec<f64>>,
    pub graph: DependenceGraph,
    /// Candidate `(i, j)` score entries, aligned with `included`.
    pub mask: Vec<(usize, usize)>,
    pub probs: Vec<f64>,
    pub included: Vec<bool>,
    pub logp: f64,
    pub dag: Vec<WeightedEdge>,
    pub sequence: BatchSequence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnReport {
    pub generator_objective: f64,
    pub critic_loss: f64,
    pub mean_advantage: f64,
}

/// Attention scorer, period critic and their hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DagScheduler {
    pub config: SchedulerConfig,
    pub scorer: AttentionScorer,
    /// Period critic over joint states.
    pub critic: Vec<f64>,
    n_agents: usize,
    max_obs: usize,
    max_actions: usize,
    threshold: f64,
}

impl DagScheduler {
    pub fn new(game: &MarkovGame, config: SchedulerConfig, seed: u64) -> Result<Self> {
        let n = game.n_agents();
        let max_obs = (0..n).map(|i| game.observation_count(i)).max().unwrap_or(1);
        let max_actions = game.action_counts().iter().copied().max().unwrap_or(1);
        if config.window == 0 {
            return Err(Error::Config {
                field: "scheme.window".into(),
                message: "feature window must be at least 1".into(),
            });
        }
        let width = feature_width(n, max_obs, max_actions, config.window);
        let scorer = AttentionScorer::new(width, config.d_k, config.init_scale, seed)?;
        let threshold = config.threshold.unwrap_or_else(|| default_threshold(n));
        Ok(Self {
            scorer,
            critic: vec![0.0; game.n_states()],
            n_agents: n,
            max_obs,
            max_actions,
            threshold,
            config,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn period_starts(&self, len: usize) -> impl Iterator<Item = usize> {
        (0..len).step_by(self.config.period.max(1))
    }

    /// Window features averaged over every period start of every episode.
    pub fn features(&self, traj: &TrajectoryBatch) -> Vec<Vec<f64>> {
        let width = self.scorer.n_features;
        let mut acc = vec![vec![0.0; width]; self.n_agents];
        let mut count = 0usize;
        for e in &traj.episodes {
            for t in self.period_starts(e.len()) {
                let f = window_features(&e.steps, t, self.n_agents, self.max_obs, self.max_actions, self.config.window);
                for (a, x) in acc.iter_mut().zip(&f) {
                    a.iter_mut().zip(x).for_each(|(p, q)| *p += q);
                }
                count += 1;
            }
        }
        if count > 0 {
            acc.iter_mut().flatten().for_each(|x| *x /= count as f64);
        }
        acc
    }

    /// Scores, samples an edge set, breaks cycles and layers.
    pub fn plan<R: Rng + ?Sized>(&self, features: Vec<Vec<f64>>, rng: &mut R) -> Result<DagPlan> {
        let graph = score_dependence(&self.scorer, &features, self.threshold)?;
        let (included, logp) = sample_edge_set(&graph, rng);
        let candidates = graph.candidate_edges();
        let mask: Vec<(usize, usize)> = candidates.iter().map(|&(j, i, _)| (i, j)).collect();
        let probs: Vec<f64> = candidates.iter().map(|e| inclusion_prob(e.2)).collect();
        let chosen: Vec<WeightedEdge> =
            candidates.iter().zip(&included).filter(|(_, &inc)| inc).map(|(e, _)| *e).collect();
        let dag = to_dag(self.n_agents, &chosen);
        let pairs: Vec<(usize, usize)> = dag.iter().map(|e| (e.0, e.1)).collect();
        let sequence = layer_topological(self.n_agents, &pairs)?;
        if !sequence.respects(&pairs) {
            return Err(Error::Internal("layered sequence violates its DAG".into()));
        }
        Ok(DagPlan {
            features,
            graph,
            mask,
            probs,
            included,
            logp,
            dag,
            sequence,
        })
    }

    /// Period advantages at every period start of `traj`, under the current
    /// critic.
    pub fn period_advantages(&self, traj: &TrajectoryBatch, gamma: f64) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for e in &traj.episodes {
            let rewards: Vec<f64> = e.steps.iter().map(|s| s.reward).collect();
            let states: Vec<usize> = e.steps.iter().map(|s| s.state).collect();
            let adv = dag_advantage(&rewards, &states, &self.critic, gamma, self.config.period)?;
            out.extend(self.period_starts(e.len()).map(|t| adv[t]));
        }
        Ok(out)
    }

    /// Generator epochs on the plan's edge set, scored by the period
    /// advantages of the rollout it produced, then one critic step.
    pub fn learn(&mut self, plan: &DagPlan, traj: &TrajectoryBatch, gamma: f64) -> Result<LearnReport> {
        let advantages = self.period_advantages(traj, gamma)?;
        let samples: Vec<GeneratorSample> = advantages
            .iter()
            .map(|&a| GeneratorSample {
                features: plan.features.clone(),
                mask: plan.mask.clone(),
                included: plan.included.clone(),
                probs_old: plan.probs.clone(),
                logp_old: plan.logp,
                advantage: a,
            })
            .collect();
        let cfg = GeneratorConfig {
            clip: self.config.clip,
            kl_coef: self.config.kl_coef,
            lr: self.config.generator_lr,
        };
        let mut objective = 0.0;
        for epoch in 0..self.config.generator_epochs {
            let obj = dag_generator_update(&mut self.scorer, &samples, &cfg)?;
            if epoch == 0 {
                objective = obj;
            }
        }
        let mut targets = Vec::with_capacity(traj.n_steps());
        for e in &traj.episodes {
            let rewards: Vec<f64> = e.steps.iter().map(|s| s.reward).collect();
            let ret = period_returns(&rewards, gamma, self.config.period);
            targets.extend(e.steps.iter().zip(ret).map(|(s, y)| (s.state, y)));
        }
        let loss = dag_critic_update(&mut self.critic, &targets, self.config.critic_lr)?;
        let mean = advantages.iter().sum::<f64>() / advantages.len().max(1) as f64;
        Ok(LearnReport {
            generator_objective: objective,
            critic_loss: loss,
            mean_advantage: mean,
        })
    }

    /// Raw (pre-threshold) scores for `features`.
    pub fn scores(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.scorer.raw_scores(features)
    }
}

/// Rank AUC of undirected pair scores `g[i][j] + g[j][i]` against the
/// undirected truth pairs. Ties count one half.
pub fn dependence_auc(n: usize, scores: &[f64], truth: &[(usize, usize)]) -> f64 {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let s = scores[i * n + j] + scores[j * n + i];
            if truth.contains(&(i, j)) || truth.contains(&(j, i)) {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return 1.0;
    }
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
