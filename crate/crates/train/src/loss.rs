use emvlab_nn::{entropy, log_softmax, softmax};

use crate::rollout::Batch;

/// One-step bootstrapped returns `r̃ + γ·V(next)`, indexed `[step][agent]`. The
/// next value is the following step's recorded value, the batch bootstrap after
/// the last step, and 0 after a terminal step.
pub fn compute_returns(batch: &Batch, gamma: f64) -> Vec<Vec<f64>> {
    let steps = &batch.steps;
    (0..steps.len())
        .map(|t| {
            let s = &steps[t];
            (0..s.adjusted.len())
                .map(|i| {
                    let next = if s.terminal {
                        0.0
                    } else if t + 1 < steps.len() {
                        steps[t + 1].values[i]
                    } else {
                        batch.bootstrap[i]
                    };
                    s.adjusted[i] + gamma * next
                })
                .collect()
        })
        .collect()
}

/// `1/(2N)·Σ(R - V)²`.
pub fn value_loss(values: &[f64], returns: &[f64]) -> f64 {
    let n = values.len() as f64;
    values.iter().zip(returns).map(|(v, r)| (r - v) * (r - v)).sum::<f64>() / (2.0 * n)
}

/// dL_v/dV per step.
pub fn value_loss_grad(values: &[f64], returns: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    values.iter().zip(returns).map(|(v, r)| (v - r) / n).collect()
}

/// `-1/N·Σ[log π(a)·A + λ·H(π)]` over per-step logits.
pub fn policy_loss(logits: &[Vec<f64>], actions: &[usize], advantages: &[f64], lambda: f64) -> f64 {
    let n = logits.len() as f64;
    let total: f64 = logits
        .iter()
        .zip(actions)
        .zip(advantages)
        .map(|((z, &a), &adv)| log_softmax(z)[a] * adv + lambda * entropy(&softmax(z)))
        .sum();
    -total / n
}

/// dL_p/dz per step.
pub fn policy_loss_grad(logits: &[Vec<f64>], actions: &[usize], advantages: &[f64], lambda: f64) -> Vec<Vec<f64>> {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(actions)
        .zip(advantages)
        .map(|((z, &a), &adv)| {
            let p = softmax(z);
            let lp = log_softmax(z);
            let h = entropy(&p);
            (0..z.len())
                .map(|k| {
                    let onehot = if k == a { 1.0 } else { 0.0 };
                    let d_logp = adv * (onehot - p[k]);
                    let d_ent = -p[k] * (lp[k] + h);
                    -(d_logp + lambda * d_ent) / n
                })
                .collect()
        })
        .collect()
}
