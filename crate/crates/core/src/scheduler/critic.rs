//! Period rewards, period advantages and the tabular period critic.

use crate::error::{Error, Result};

/// `sum_{l=0}^{period} gamma^l r_l` over the leading rewards of `rewards`,
/// truncated at its end.
pub fn dag_period_reward(rewards: &[f64], gamma: f64, period: usize) -> f64 {
    let mut total = 0.0;
    let mut w = 1.0;
    for &r in rewards.iter().take(period + 1) {
        total += w * r;
        w *= gamma;
    }
    total
}

/// Period returns `r_{t:t+T}` for every step of one episode.
pub fn period_returns(rewards: &[f64], gamma: f64, period: usize) -> Vec<f64> {
    (0..rewards.len()).map(|t| dag_period_reward(&rewards[t..], gamma, period)).collect()
}

/// Per-step period advantages of one episode:
/// `delta_u = r_{u:u+T} + gamma V(s_{u+T}) - V(s_u)` with `V = 0` past the
/// episode end, and `A_t = sum_{l=0}^{h} gamma^l delta_{t+l}` truncated, with
/// `h = max(T - 1, 0)`.
pub fn dag_advantage(rewards: &[f64], states: &[usize], v: &[f64], gamma: f64, period: usize) -> Result<Vec<f64>> {
    if rewards.len() != states.len() {
        return Err(Error::input("rewards and states must have equal length"));
    }
    if states.iter().any(|&s| s >= v.len()) {
        return Err(Error::input("state index outside the critic table"));
    }
    let len = rewards.len();
    let returns = period_returns(rewards, gamma, period);
    let delta: Vec<f64> = (0..len)
        .map(|u| {
            let boot = if u + period < len { v[states[u + period]] } else { 0.0 };
            returns[u] + gamma * boot - v[states[u]]
        })
        .collect();
    let h = period.saturating_sub(1);
    Ok((0..len)
        .map(|t| {
            let mut total = 0.0;
            let mut w = 1.0;
            for d in delta.iter().skip(t).take(h + 1) {
                total += w * d;
                w *= gamma;
            }
            total
        })
        .collect())
}

/// Mean squared error `mean (y - V(s))^2`.
pub fn critic_loss(v: &[f64], samples: &[(usize, f64)]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&(s, y)| (y - v[s]).powi(2)).sum::<f64>() / samples.len() as f64
}

/// One gradient step of size `lr` on [`critic_loss`]. Returns the loss
/// before the step.
pub fn dag_critic_update(v: &mut [f64], samples: &[(usize, f64)], lr: f64) -> Result<f64> {
    if samples.iter().any(|&(s, _)| s >= v.len()) {
        return Err(Error::input("state index outside the critic table"));
    }
    let loss = critic_loss(v, samples);
    if samples.is_empty() {
        return Ok(loss);
    }
    let m = samples.len() as f64;
    let mut grad = vec![0.0; v.len()];
    for &(s, y) in samples {
        grad[s] += -2.0 * (y - v[s]) / m;
    }
    v.iter_mut().zip(&grad).for_each(|(x, g)| *x -= lr * g);
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss is not finite".into()));
    }
    Ok(loss)
}
