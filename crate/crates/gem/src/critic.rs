//! Ensemble Q critics and the expectile value baseline.
//!
//! Training follows the offline actor-critic split: V regresses toward an
//! expectile of the minimum over target Q heads, Q heads regress toward
//! the one-step bootstrap through V, targets track online heads by Polyak
//! averaging. Decision-time pessimism (mean minus lambda times ensemble
//! std) lives in [`EnsembleStats`].

use std::sync::Arc;

use crate::checkpoint::{check_segments, ModelEntry};
use crate::child_seed;
use crate::error::{GemError, Result};
use crate::nn::{glorot_init, mlp_backward, mlp_forward, Activation, AdamConfig, AdamState, MlpSpec, ParamLayout, ParamVector};

/// One-step bootstrap target `r + gamma * (1 - done) * v_next`.
pub fn q_target(reward: f64, done: f64, gamma: f64, v_next: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&done), "done flag must be 0 or 1");
    reward + gamma * (1.0 - done) * v_next
}

/// Asymmetric squared loss `|tau - 1{delta < 0}| * delta^2`.
pub fn expectile_loss(delta: f64, tau: f64) -> f64 {
    expectile_weight(delta, tau) * delta * delta
}

#[inline]
fn expectile_weight(delta: f64, tau: f64) -> f64 {
    if delta < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Moments of one candidate's Q values across the ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleStats {
    pub mean: f64,
    pub std: f64,
    pub q_min: f64,
    pub lcb: f64,
}

impl EnsembleStats {
    /// Population statistics (divisor M) over the given head values.
    pub fn from_values(qs: &[f64], lambda: f64) -> Self {
        assert!(!qs.is_empty(), "ensemble stats need at least one head");
        assert!(lambda >= 0.0, "lambda must be nonnegative");
        let m = qs.len() as f64;
        let mean = qs.iter().sum::<f64>() / m;
        let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / m;
        let std = var.sqrt();
        let q_min = qs.iter().cloned().fold(f64::INFINITY, f64::min);
        EnsembleStats { mean, std, q_min, lcb: mean - lambda * std }
    }
}

#[derive(Debug, Clone)]
pub struct CriticEnsemble {
    state_dim: usize,
    action_dim: usize,
    spec: MlpSpec,
    layout: Arc<ParamLayout>,
    heads: Vec<ParamVector>,
    targets: Vec<ParamVector>,
}

impl CriticEnsemble {
    pub fn new(m: usize, state_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Self {
        assert!(m >= 1, "ensemble needs at least one head");
        let spec = MlpSpec::new(state_dim + action_dim, hidden, 1, Activation::Relu);
        let layout = Arc::new(ParamLayout::new(spec.layout("")));
        let heads: Vec<ParamVector> = (0..m)
            .map(|i| {
                ParamVector::from_values(Arc::clone(&layout), glorot_init(&spec, child_seed(seed, 10 + i as u64)))
            })
            .collect();
        let targets = heads.clone();
        CriticEnsemble { state_dim, action_dim, spec, layout, heads, targets }
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn head_param_len(&self) -> usize {
        self.layout.total_len()
    }

    fn input(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.state_dim, "state dimension mismatch");
        assert_eq!(a.len(), self.action_dim, "action dimension mismatch");
        let mut x = Vec::with_capacity(s.len() + a.len());
        x.extend_from_slice(s);
        x.extend_from_slice(a);
        x
    }

    pub fn q_all(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let x = self.input(s, a);
        self.heads.iter().map(|p| mlp_forward(&self.spec, p.values(), &x)[0]).collect()
    }

    pub fn q_all_target(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let x = self.input(s, a);
        self.targets.iter().map(|p| mlp_forward(&self.spec, p.values(), &x)[0]).collect()
    }

    /// Training-time pessimism: minimum over target heads.
    pub fn q_min_target(&self, s: &[f64], a: &[f64]) -> f64 {
        self.q_all_target(s, a).into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Decision-time statistics over the online heads.
    pub fn ensemble_stats(&self, s: &[f64], a: &[f64], lambda: f64) -> EnsembleStats {
        EnsembleStats::from_values(&self.q_all(s, a), lambda)
    }

    /// Ensemble MSE `mean_batch mean_heads (Q_i(s,a) - y)^2` and the
    /// per-head parameter gradients, without touching the parameters.
    pub fn loss_grads(
        &self,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        targets: &[f64],
    ) -> (f64, Vec<Vec<f64>>) {
        assert_eq!(states.len(), actions.len());
        assert_eq!(states.len(), targets.len());
        let b = states.len() as f64;
        let m = self.heads.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Vec<f64>> = (0..self.heads.len())
            .map(|_| vec![0.0; self.layout.total_len()])
            .collect();
        for ((s, a), y) in states.iter().zip(actions).zip(targets) {
            let x = self.input(s, a);
            for (head, grad) in self.heads.iter().zip(grads.iter_mut()) {
                let q = mlp_forward(&self.spec, head.values(), &x)[0];
                let delta = q - y;
                loss += delta * delta / (b * m);
                mlp_backward(&self.spec, head.values(), &x, &[2.0 * delta / (b * m)], grad);
            }
        }
        (loss, grads)
    }

    /// One gradient step on the ensemble MSE; returns that loss.
    pub fn update(
        &mut self,
        opts: &mut [AdamState],
        adam: &AdamConfig,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<f64> {
        assert_eq!(opts.len(), self.heads.len(), "one optimizer state per head");
        let (loss, grads) = self.loss_grads(states, actions, targets);
        if !loss.is_finite() {
            return Err(GemError::Numerical(format!("critic loss is {loss}")));
        }
        for ((head, opt), grad) in self.heads.iter_mut().zip(opts.iter_mut()).zip(&grads) {
            opt.step(adam, head.values_mut(), grad)?;
        }
        Ok(loss)
    }

    pub fn head_param_values(&self, head: usize) -> &[f64] {
        self.heads[head].values()
    }

    pub fn head_param_values_mut(&mut self, head: usize) -> &mut [f64] {
        self.heads[head].values_mut()
    }

    /// Soft target update `theta_tgt <- (1 - tau) * theta_tgt + tau * theta`.
    pub fn polyak(&mut self, tau: f64) {
        assert!((0.0..=1.0).contains(&tau), "polyak rate must be in [0, 1]");
        for (tgt, online) in self.targets.iter_mut().zip(&self.heads) {
            for (t, o) in tgt.values_mut().iter_mut().zip(online.values()) {
                *t = (1.0 - tau) * *t + tau * *o;
            }
        }
    }

    /// Forces one head to a constant output; used by tests and diagnostics.
    pub fn pin_head_constant(&mut self, head: usize, value: f64) {
        let p = self.heads[head].values_mut();
        for v in p.iter_mut() {
            *v = 0.0;
        }
        let last = p.len() - 1;
        p[last] = value;
    }

    pub fn to_model_entries(&self) -> Result<Vec<(ModelEntry, &[f64])>> {
        let spec_json = serde_json::to_value(&self.spec)?;
        let mut out = Vec::with_capacity(2 * self.heads.len());
        for (i, head) in self.heads.iter().enumerate() {
            out.push((
                ModelEntry::new(&format!("critic.head.{i}"), "mlp", spec_json.clone(), &self.layout),
                head.values(),
            ));
        }
        for (i, tgt) in self.targets.iter().enumerate() {
            out.push((
                ModelEntry::new(&format!("critic.target.{i}"), "mlp", spec_json.clone(), &self.layout),
                tgt.values(),
            ));
        }
        Ok(out)
    }

    /// Rebuilds an ensemble from `critic.head.*` / `critic.target.*`
    /// entries (paired with their payloads) in checkpoint order.
    pub fn from_model_entries(
        state_dim: usize,
        action_dim: usize,
        entries: &[(&ModelEntry, Vec<f64>)],
    ) -> Result<CriticEnsemble> {
        let head_entries: Vec<_> = entries.iter().filter(|(e, _)| e.name.starts_with("critic.head.")).collect();
        let target_entries: Vec<_> =
            entries.iter().filter(|(e, _)| e.name.starts_with("critic.target.")).collect();
        if head_entries.is_empty() || head_entries.len() != target_entries.len() {
            return Err(GemError::BadFormat(format!(
                "critic ensemble needs matching head/target entries, found {}/{}",
                head_entries.len(),
                target_entries.len()
            )));
        }
        let spec: MlpSpec = serde_json::from_value(head_entries[0].0.spec.clone())?;
        if spec.input_dim != state_dim + action_dim {
            return Err(GemError::Config(format!(
                "critic input dim {} does not match state+action {}",
                spec.input_dim,
                state_dim + action_dim
            )));
        }
        let layout = Arc::new(ParamLayout::new(spec.layout("")));
        let build = |list: &[&(&ModelEntry, Vec<f64>)]| -> Result<Vec<ParamVector>> {
            let mut vecs = Vec::with_capacity(list.len());
            for (entry, values) in list {
                check_segments(&entry.name, &entry.segments, &layout)?;
                vecs.push(ParamVector::from_values(Arc::clone(&layout), values.clone()));
            }
            Ok(vecs)
        };
        let heads = build(&head_entries)?;
        let targets = build(&target_entries)?;
        Ok(CriticEnsemble { state_dim, action_dim, spec, layout, heads, targets })
    }
}

/// State-value network trained with the expectile loss.
#[derive(Debug, Clone)]
pub struct ValueNet {
    spec: MlpSpec,
    layout: Arc<ParamLayout>,
    params: ParamVector,
}

impl ValueNet {
    pub fn new(state_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let spec = MlpSpec::new(state_dim, hidden, 1, Activation::Relu);
        let layout = Arc::new(ParamLayout::new(spec.layout("")));
        let params = ParamVector::from_values(Arc::clone(&layout), glorot_init(&spec, child_seed(seed, 3)));
        ValueNet { spec, layout, params }
    }

    pub fn param_len(&self) -> usize {
        self.layout.total_len()
    }

    pub fn param_values(&self) -> &[f64] {
        self.params.values()
    }

    pub fn v(&self, s: &[f64]) -> f64 {
        mlp_forward(&self.spec, self.params.values(), s)[0]
    }

    /// Batch expectile loss `mean_b |tau - 1{y < v}| (y - v)^2` and its
    /// parameter gradient, without touching the parameters.
    pub fn loss_grad(&self, states: &[Vec<f64>], targets: &[f64], tau: f64) -> (f64, Vec<f64>) {
        assert!(tau > 0.0 && tau < 1.0, "expectile tau must lie in (0, 1)");
        assert_eq!(states.len(), targets.len());
        let b = states.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.layout.total_len()];
        for (s, y) in states.iter().zip(targets) {
            let v = self.v(s);
            let delta = y - v;
            let w = expectile_weight(delta, tau);
            loss += w * delta * delta / b;
            // d/dv of w * (y - v)^2
            mlp_backward(&self.spec, self.params.values(), s, &[-2.0 * w * delta / b], &mut grad);
        }
        (loss, grad)
    }

    /// One expectile-regression step of V toward the given per-state
    /// targets; returns the batch loss.
    pub fn regression_step(
        &mut self,
        opt: &mut AdamState,
        adam: &AdamConfig,
        states: &[Vec<f64>],
        targets: &[f64],
        tau: f64,
    ) -> Result<f64> {
        let (loss, grad) = self.loss_grad(states, targets, tau);
        if !loss.is_finite() {
            return Err(GemError::Numerical(format!("value loss is {loss}")));
        }
        opt.step(adam, self.params.values_mut(), &grad)?;
        Ok(loss)
    }

    pub fn param_values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    pub fn to_model_entry(&self, name: &str) -> Result<ModelEntry> {
        Ok(ModelEntry::new(name, "mlp", serde_json::to_value(&self.spec)?, &self.layout))
    }

    pub fn from_model_entry(entry: &ModelEntry, values: Vec<f64>) -> Result<ValueNet> {
        let spec: MlpSpec = serde_json::from_value(entry.spec.clone())?;
        let layout = Arc::new(ParamLayout::new(spec.layout("")));
        check_segments(&entry.name, &entry.segments, &layout)?;
        if values.len() != layout.total_len() {
            return Err(GemError::Truncated(format!(
                "model '{}': {} values, expected {}",
                entry.name,
                values.len(),
                layout.total_len()
            )));
        }
        let params = ParamVector::from_values(Arc::clone(&layout), values);
        Ok(ValueNet { spec, layout, params })
    }
}

/// Advantage `min_i Q_tgt_i(s, a) - V(s)`; plain numbers, no gradient path.
pub fn advantage(critics: &CriticEnsemble, value: &ValueNet, s: &[f64], a: &[f64]) -> f64 {
    critics.q_min_target(s, a) - value.v(s)
}

/// Runs V-regression toward `critics`' pessimistic targets for one batch.
pub fn value_update(
    value: &mut ValueNet,
    opt: &mut AdamState,
    adam: &AdamConfig,
    critics: &CriticEnsemble,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    tau: f64,
) -> Result<f64> {
    let targets: Vec<f64> = states
        .iter()
        .zip(actions)
        .map(|(s, a)| critics.q_min_target(s, a))
        .collect();
    value.regression_step(opt, adam, states, &targets, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_target_hand_values() {
        assert_eq!(q_target(1.0, 0.0, 0.99, 10.0), 10.9);
        assert_eq!(q_target(1.0, 1.0, 0.99, 10.0), 1.0);
    }

    #[test]
    fn expectile_loss_hand_values() {
        assert!((expectile_loss(-1.0, 0.9) - 0.1).abs() < 1e-15);
        assert!((expectile_loss(1.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((expectile_loss(2.0, 0.5) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn ensemble_stats_hand_values() {
        let stats = EnsembleStats::from_values(&[1.0, 2.0, 3.0], 1.0);
        assert!((stats.mean - 2.0).abs() < 1e-15);
        assert!((stats.std - 0.816496580927726).abs() < 1e-12);
        assert!((stats.lcb - 1.183503419072274).abs() < 1e-12);
        assert_eq!(stats.q_min, 1.0);
    }

    #[test]
    fn zero_lambda_reduces_to_mean() {
        let stats = EnsembleStats::from_values(&[0.3, -0.2, 0.9, 0.1], 0.0);
        assert_eq!(stats.lcb, stats.mean);
    }

    #[test]
    fn lcb_is_nonincreasing_in_lambda() {
        let qs = [0.4, 0.1, -0.3, 0.8];
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let lcb = EnsembleStats::from_values(&qs, i as f64 * 0.25).lcb;
            assert!(lcb <= prev + 1e-15);
            prev = lcb;
        }
    }

    #[test]
    fn q_min_target_is_min_over_target_heads() {
        let c = CriticEnsemble::new(4, 2, 2, &[8], 3);
        let s = [0.2, -0.1];
        let a = [0.5, 0.5];
        let qs = c.q_all_target(&s, &a);
        let want = qs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(c.q_min_target(&s, &a), want);
    }

    #[test]
    fn update_loss_averages_over_heads() {
        // head 0 constant 2, head 1 constant 0, targets 0: loss (4 + 0) / 2
        let mut c = CriticEnsemble::new(2, 2, 1, &[4], 5);
        c.pin_head_constant(0, 2.0);
        c.pin_head_constant(1, 0.0);
        let mut opts: Vec<AdamState> = (0..2).map(|_| AdamState::new(c.head_param_len())).collect();
        let adam = AdamConfig::with_lr(0.0);
        let states = vec![vec![0.1, 0.2], vec![-0.3, 0.4]];
        let actions = vec![vec![0.0], vec![0.5]];
        let loss = c.update(&mut opts, &adam, &states, &actions, &[0.0, 0.0]).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn polyak_limits_and_contraction() {
        let mut c = CriticEnsemble::new(2, 2, 1, &[4], 9);
        let online: Vec<Vec<f64>> = c.heads.iter().map(|h| h.values().to_vec()).collect();

        let mut full = c.clone();
        full.polyak(1.0);
        for (t, o) in full.targets.iter().zip(&online) {
            assert_eq!(t.values(), o.as_slice());
        }

        let mut frozen = c.clone();
        let before: Vec<Vec<f64>> = frozen.targets.iter().map(|t| t.values().to_vec()).collect();
        frozen.polyak(0.0);
        for (t, b) in frozen.targets.iter().zip(&before) {
            assert_eq!(t.values(), b.as_slice());
        }

        // drift the online heads, then verify geometric approach
        for h in c.heads.iter_mut() {
            for v in h.values_mut() {
                *v += 1.0;
            }
        }
        let gap0 = c.targets[0].values()[0] - c.heads[0].values()[0];
        for _ in 0..50 {
            c.polyak(0.005);
        }
        let gap = c.targets[0].values()[0] - c.heads[0].values()[0];
        assert!((gap / gap0 - 0.995f64.powi(50)).abs() < 1e-12);
    }

    fn fit_constant(tau: f64, targets: &[f64]) -> f64 {
        let mut v = ValueNet::new(1, &[8], 77);
        let mut opt = AdamState::new(v.param_len());
        let states: Vec<Vec<f64>> = targets.iter().map(|_| vec![0.5]).collect();
        for &(lr, steps) in &[(0.02, 1500usize), (1e-3, 1500), (1e-4, 500)] {
            let adam = AdamConfig::with_lr(lr);
            for _ in 0..steps {
                v.regression_step(&mut opt, &adam, &states, targets, tau).unwrap();
            }
        }
        v.v(&[0.5])
    }

    #[test]
    fn median_expectile_recovers_the_mean() {
        let fitted = fit_constant(0.5, &[0.0, 1.0]);
        assert!((fitted - 0.5).abs() < 1e-3, "fitted {fitted}");
    }

    #[test]
    fn high_expectile_on_bernoulli_targets() {
        let fitted = fit_constant(0.99, &[0.0, 1.0]);
        assert!((fitted - 0.99).abs() < 5e-3, "fitted {fitted}");
    }

    #[test]
    fn advantage_matches_components() {
        let c = CriticEnsemble::new(3, 2, 1, &[6], 21);
        let v = ValueNet::new(2, &[6], 22);
        let s = [0.3, 0.3];
        let a = [0.1];
        assert_eq!(advantage(&c, &v, &s, &a), c.q_min_target(&s, &a) - v.v(&s));
    }

    #[test]
    fn ensemble_checkpoint_roundtrip() {
        let c = CriticEnsemble::new(3, 2, 2, &[6], 41);
        let entries = c.to_model_entries().unwrap();
        let owned: Vec<(ModelEntry, Vec<f64>)> =
            entries.into_iter().map(|(e, v)| (e, v.to_vec())).collect();
        let borrowed: Vec<(&ModelEntry, Vec<f64>)> =
            owned.iter().map(|(e, v)| (e, v.clone())).collect();
        let restored = CriticEnsemble::from_model_entries(2, 2, &borrowed).unwrap();
        let s = [0.4, -0.4];
        let a = [0.2, 0.7];
        assert_eq!(c.q_all(&s, &a), restored.q_all(&s, &a));
        assert_eq!(c.q_all_target(&s, &a), restored.q_all_target(&s, &a));
    }
}
