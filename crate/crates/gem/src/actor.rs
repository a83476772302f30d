//! Guided EM updates for the mixture actor.
//!
//! Each step weights the per-sample mixture surrogate by a capped
//! exponential of the advantage and adds a small gating-entropy bonus.
//! Responsibilities are recomputed fresh every step and, by default, are
//! treated as constants in the backward pass (the detached E-step).

use serde::{Deserialize, Serialize};

use crate::critic::{advantage, CriticEnsemble, ValueNet};
use crate::error::{GemError, Result};
use crate::gmm::{mixture_log_joints, softmax_from_logits, CgmmModel, HeadGrads};
use crate::nn::{AdamConfig, AdamState};

/// Numerical guard inside the gating-entropy logarithm.
pub const GATE_ENTROPY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Advantage temperature in `omega = min(exp(beta * A), omega_max)`.
    pub beta: f64,
    pub omega_max: f64,
    /// Weight of the gating-entropy bonus.
    pub entropy_alpha: f64,
    /// Treat responsibilities as constants in the backward pass.
    pub detach_responsibilities: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { beta: 3.0, omega_max: 100.0, entropy_alpha: 1e-3, detach_responsibilities: true }
    }
}

/// Capped exponential advantage weight.
pub fn guidance_weight(advantage: f64, cfg: &GuidanceConfig) -> f64 {
    assert!(cfg.beta >= 0.0, "beta must be nonnegative");
    assert!(cfg.omega_max >= 1.0, "omega_max must be at least 1");
    (cfg.beta * advantage).exp().min(cfg.omega_max)
}

/// Responsibility-weighted surrogate `sum_k gamma_k u_k` with the
/// responsibilities evaluated (and held fixed) at the current parameters.
pub fn loose_elbo(model: &CgmmModel, s: &[f64], a: &[f64]) -> f64 {
    let u = model.log_joints(s, a);
    let gamma = softmax_from_logits(&u);
    gamma.iter().zip(&u).map(|(g, ui)| g * ui).sum()
}

/// Exact Shannon entropy of a responsibility vector; the gap between
/// `log_prob` and [`loose_elbo`].
pub fn responsibility_entropy(gamma: &[f64]) -> f64 {
    -gamma.iter().filter(|g| **g > 0.0).map(|g| g * g.ln()).sum::<f64>()
}

/// Guarded gating entropy `-sum_k w_k ln(w_k + 1e-6)`.
pub fn gate_entropy(model: &CgmmModel, s: &[f64]) -> f64 {
    let heads = model.heads(s);
    -heads.w.iter().map(|w| w * (w + GATE_ENTROPY_EPS).ln()).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
pub struct ActorStepReport {
    pub loss: f64,
    /// Mean of `omega * (-loose_elbo)` over the batch.
    pub weighted_nelbo: f64,
    /// Mean gating entropy over the batch (before the `alpha` weight).
    pub gate_entropy: f64,
    pub mean_weight: f64,
}

/// Loss and flat parameter gradient of the guided EM objective
/// `mean_b omega_b * (-loose_elbo_b) - alpha * mean_b H(w(s_b))`.
pub fn actor_grad(
    model: &CgmmModel,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    advantages: &[f64],
    cfg: &GuidanceConfig,
) -> (ActorStepReport, Vec<f64>) {
    grad_impl(model, states, actions, advantages, cfg, None)
}

fn grad_impl(
    model: &CgmmModel,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    advantages: &[f64],
    cfg: &GuidanceConfig,
    gamma_override: Option<&[Vec<f64>]>,
) -> (ActorStepReport, Vec<f64>) {
    assert_eq!(states.len(), actions.len());
    assert_eq!(states.len(), advantages.len());
    let b = states.len() as f64;
    let k = model.config().k;
    let dim = model.config().action_dim;
    let mut grad = vec![0.0; model.param_len()];
    let mut weighted_nelbo = 0.0;
    let mut entropy_sum = 0.0;
    let mut weight_sum = 0.0;

    for (i, ((s, a), adv)) in states.iter().zip(actions).zip(advantages).enumerate() {
        let heads = model.heads(s);
        let u = mixture_log_joints(&heads.log_w, &heads.means, &heads.log_std, a);
        let gamma = match gamma_override {
            Some(g) => g[i].clone(),
            None => softmax_from_logits(&u),
        };
        let elbo: f64 = gamma.iter().zip(&u).map(|(g, ui)| g * ui).sum();
        let omega = guidance_weight(*adv, cfg);
        weighted_nelbo += omega * (-elbo) / b;
        weight_sum += omega / b;

        // coefficients of du_k in d(elbo)/d(theta); the full (non-detached)
        // form adds the softmax path gamma_k * (u_k - elbo)
        let coeff: Vec<f64> = if cfg.detach_responsibilities {
            gamma.clone()
        } else {
            gamma.iter().zip(&u).map(|(g, ui)| g * (1.0 + ui - elbo)).collect()
        };
        let coeff_sum: f64 = coeff.iter().sum();

        let mut hg = HeadGrads::zeros(k, dim);
        let scale = -omega / b; // gradient of omega * (-elbo) / b
        for j in 0..k {
            hg.d_logits[j] = scale * (coeff[j] - coeff_sum * heads.w[j]);
            for d in 0..dim {
                let idx = j * dim + d;
                let inv_var = (-2.0 * heads.log_std[idx]).exp();
                let diff = a[d] - heads.means[idx];
                hg.d_means[idx] = scale * coeff[j] * diff * inv_var;
                hg.d_log_std[idx] = scale * coeff[j] * (diff * diff * inv_var - 1.0);
            }
        }

        // entropy bonus -alpha * H(w); dH/dw_j then chain through softmax
        let h: f64 = -heads.w.iter().map(|w| w * (w + GATE_ENTROPY_EPS).ln()).sum::<f64>();
        entropy_sum += h / b;
        let dh_dw: Vec<f64> = heads
            .w
            .iter()
            .map(|w| -(w + GATE_ENTROPY_EPS).ln() - w / (w + GATE_ENTROPY_EPS))
            .collect();
        let inner: f64 = heads.w.iter().zip(&dh_dw).map(|(w, d)| w * d).sum();
        for j in 0..k {
            hg.d_logits[j] += (-cfg.entropy_alpha / b) * heads.w[j] * (dh_dw[j] - inner);
        }

        model.backward_heads(s, &heads, &hg, &mut grad);
    }

    let report = ActorStepReport {
        loss: weighted_nelbo - cfg.entropy_alpha * entropy_sum,
        weighted_nelbo,
        gate_entropy: entropy_sum,
        mean_weight: weight_sum,
    };
    (report, grad)
}

/// One guided EM step; advantages must already be plain numbers with no
/// gradient path into the critics.
pub fn actor_step(
    model: &mut CgmmModel,
    opt: &mut AdamState,
    adam: &AdamConfig,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    advantages: &[f64],
    cfg: &GuidanceConfig,
) -> Result<ActorStepReport> {
    let (report, grad) = actor_grad(model, states, actions, advantages, cfg);
    if !report.loss.is_finite() {
        return Err(GemError::Numerical(format!("actor loss is {}", report.loss)));
    }
    opt.step(adam, model.param_values_mut(), &grad)?;
    Ok(report)
}

/// Advantages for a batch under frozen critics and value net.
pub fn batch_advantages(
    critics: &CriticEnsemble,
    value: &ValueNet,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
) -> Vec<f64> {
    states
        .iter()
        .zip(actions)
        .map(|(s, a)| advantage(critics, value, s, a))
        .collect()
}
