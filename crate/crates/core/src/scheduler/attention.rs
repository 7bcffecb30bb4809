//! Attention dependence scorer and its clipped policy-gradient update.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::rollout::Step;

use super::graph::{inclusion_prob, DependenceGraph};

/// Query/key projections over per-agent feature vectors. The generator
/// parameters are exactly `wq` and `wk`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScorer {
    pub n_features: usize,
    pub d_k: usize,
    /// Row-major `d_k x n_features`.
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
}

impl AttentionScorer {
    pub fn new(n_features: usize, d_k: usize, init_scale: f64, seed: u64) -> Result<Self> {
        if d_k == 0 || n_features == 0 {
            return Err(Error::input("scorer dimensions must be positive"));
        }
        let mut rng = seeded(seed);
        let mut draw = || (0..d_k * n_features).map(|_| rng.random_range(-init_scale..=init_scale)).collect();
        let wq = draw();
        let wk = draw();
        Ok(Self {
            n_features,
            d_k,
            wq,
            wk,
        })
    }

    pub fn n_params(&self) -> usize {
        self.wq.len() + self.wk.len()
    }

    /// `wq` followed by `wk`.
    pub fn params(&self) -> Vec<f64> {
        self.wq.iter().chain(&self.wk).copied().collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let h = self.wq.len();
        self.wq.copy_from_slice(&p[..h]);
        self.wk.copy_from_slice(&p[h..]);
    }

    fn project(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.d_k)
            .map(|a| w[a * self.n_features..(a + 1) * self.n_features].iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    fn check(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.iter().any(|f| f.len() != self.n_features) {
            return Err(Error::input(format!(
                "feature vectors must have width {}",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Row softmax of `q_i . k_j / sqrt(d_k)` over `j != i`, diagonal 0,
    /// before thresholding. Row-major `n x n`.
    pub fn raw_scores(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check(features)?;
        let (q, k) = self.qk(features);
        Ok(self.softmax_rows(&q, &k))
    }

    fn qk(&self, features: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let q = features.iter().map(|x| self.project(&self.wq, x)).collect();
        let k = features.iter().map(|x| self.project(&self.wk, x)).collect();
        (q, k)
    }

    fn softmax_rows(&self, q: &[Vec<f64>], k: &[Vec<f64>]) -> Vec<f64> {
        let n = q.len();
        let scale = (self.d_k as f64).sqrt();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            if n < 2 {
                break;
            }
            let z: Vec<f64> = (0..n)
                .map(|j| if j == i { f64::NEG_INFINITY } else { dot(&q[i], &k[j]) / scale })
                .collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = z.iter().map(|v| (v - m).exp()).sum();
            for j in 0..n {
                g[i * n + j] = if j == i { 0.0 } else { (z[j] - m).exp() / total };
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scores every agent pair and zeroes entries below `threshold`.
pub fn score_dependence(scorer: &AttentionScorer, features: &[Vec<f64>], threshold: f64) -> Result<DependenceGraph> {
    let raw = scorer.raw_scores(features)?;
    DependenceGraph::from_raw(features.len(), &raw, threshold)
}

/// Width of [`window_features`] vectors.
pub fn feature_width(n_agents: usize, max_obs: usize, max_actions: usize, window: usize) -> usize {
    n_agents + window * (max_obs + max_actions)
}

/// Per-agent features at step `t` of an episode: an agent one-hot, then
/// observation and action one-hots for steps `t + 1 - window ..= t`,
/// oldest first, zero-padded before the episode start.
pub fn window_features(steps: &[Step], t: usize, n_agents: usize, max_obs: usize, max_actions: usize, window: usize) -> Vec<Vec<f64>> {
    let width = feature_width(n_agents, max_obs, max_actions, window);
    let block = max_obs + max_actions;
    (0..n_agents)
        .map(|i| {
            let mut f = vec![0.0; width];
            f[i] = 1.0;
            for slot in 0..window {
                let back = window - 1 - slot;
                if back > t {
                    continue;
                }
                let s = &steps[t - back];
                let base = n_agents + slot * block;
                f[base + s.observations[i]] = 1.0;
                f[base + max_obs + s.actions[i]] = 1.0;
            }
            f
        })
        .collect()
}

/// One generator sample. `mask` lists the `(i, j)` score entries that were
/// candidate edges under the old parameters; `probs_old` are their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSample {
    pub features: Vec<Vec<f64>>,
    pub mask: Vec<(usize, usize)>,
    pub included: Vec<bool>,
    pub probs_old: Vec<f64>,
    pub logp_old: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub clip: f64,
    pub kl_coef: f64,
    pub lr: f64,
}

fn bernoulli_logp(p: f64, inc: bool) -> f64 {
    let q = if inc { p } else { 1.0 - p };
    if q >= 1.0 {
        0.0
    } else {
        q.ln()
    }
}

fn bernoulli_kl(old: f64, new: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(old, new) + term(1.0 - old, 1.0 - new)
}

/// Objective `mean min(Sr A, clip(Sr, 1 +- eps) A) - c1 mean KL(old || new)`
/// and its gradient in `[wq, wk]`. Edge probabilities are the masked scores
/// passed through [`inclusion_prob`]; clamped entries carry no gradient.
pub fn generator_objective_and_gradient(
    scorer: &AttentionScorer,
    samples: &[GeneratorSample],
    clip: f64,
    kl_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut objective = 0.0;
    let mut grad = vec![0.0; scorer.n_params()];
    if samples.is_empty() {
        return Ok((0.0, grad));
    }
    let m = samples.len() as f64;
    let scale = (scorer.d_k as f64).sqrt();
    let nf = scorer.n_features;
    let half = scorer.wq.len();
    // Backprop through the scores is linear in dL/dg, so runs of samples
    // sharing features share one forward and one backward pass.
    let backprop = |grad: &mut [f64], x: &[Vec<f64>], q: &[Vec<f64>], k: &[Vec<f64>], g: &[f64], dg: &[f64]| {
        let n = x.len();
        for i in 0..n {
            let row_dot: f64 = (0..n).map(|j| dg[i * n + j] * g[i * n + j]).sum();
            for l in 0..n {
                if l == i {
                    continue;
                }
                let dz = g[i * n + l] * (dg[i * n + l] - row_dot);
                if dz == 0.0 {
                    continue;
                }
                for r in 0..scorer.d_k {
                    for b in 0..nf {
                        grad[r * nf + b] += dz * k[l][r] * x[i][b] / scale;
                        grad[half + r * nf + b] += dz * q[i][r] * x[l][b] / scale;
                    }
                }
            }
        }
    };
    let mut start = 0;
    while start < samples.len() {
        let x = &samples[start].features;
        scorer.check(x)?;
        let end = start + samples[start..].iter().take_while(|s| &s.features == x).count();
        let n = x.len();
        let (q, k) = scorer.qk(x);
        let g = scorer.softmax_rows(&q, &k);
        let mut dg = vec![0.0; n * n];
        for sample in &samples[start..end] {
            let probs: Vec<f64> = sample.mask.iter().map(|&(i, j)| inclusion_prob(g[i * n + j])).collect();
            let logp: f64 = probs.iter().zip(&sample.included).map(|(&p, &inc)| bernoulli_logp(p, inc)).sum();
            let ratio = (logp - sample.logp_old).exp();
            let a = sample.advantage;
            let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
            let unclipped_active = ratio * a <= clipped * a;
            let kl: f64 = sample.probs_old.iter().zip(&probs).map(|(&o, &p)| bernoulli_kl(o, p)).sum();
            objective += ((ratio * a).min(clipped * a) - kl_coef * kl) / m;

            // dL/dg on masked entries
            for (e, &(i, j)) in sample.mask.iter().enumerate() {
                let p = probs[e];
                if p != g[i * n + j] {
                    continue;
                }
                let mut d = 0.0;
                if unclipped_active {
                    let dlogp = if sample.included[e] { 1.0 / p } else { -1.0 / (1.0 - p) };
                    d += a * ratio * dlogp;
                }
                let o = sample.probs_old[e];
                let mut dkl = 0.0;
                if o > 0.0 {
                    dkl -= o / p;
                }
                if o < 1.0 {
                    dkl += (1.0 - o) / (1.0 - p);
                }
                d -= kl_coef * dkl;
                dg[i * n + j] += d / m;
            }
        }
        backprop(&mut grad, x, &q, &k, &g, &dg);
        start = end;
    }
    if !objective.is_finite() || grad.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("generator loss is not finite".into()));
    }
    Ok((objective, grad))
}

/// One gradient-ascent step on the generator objective. Returns the
/// objective before the step.
pub fn dag_generator_update(scorer: &mut AttentionScorer, samples: &[GeneratorSample], cfg: &GeneratorConfig) -> Result<f64> {
    let (obj, grad) = generator_objective_and_gradient(scorer, samples, cfg.clip, cfg.kl_coef)?;
    let mut p = scorer.params();
    p.iter_mut().zip(&grad).for_each(|(x, g)| *x += cfg.lr * g);
    scorer.set_params(&p);
    Ok(obj)
}
