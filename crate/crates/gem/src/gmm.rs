//! Conditional diagonal Gaussian mixture over actions.
//!
//! A gating MLP maps the state to K logits and a mean MLP maps it to K
//! tanh-squashed component means; per-component log standard deviations
//! are state-independent learned parameters, clamped elementwise on use.
//! All density work happens in log space.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{check_segments, ModelEntry};
use crate::child_seed;
use crate::error::{GemError, Result};
use crate::nn::{glorot_init, mlp_backward, mlp_forward, Activation, MlpSpec, ParamLayout, ParamVector};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Architecture and bounds of a conditional mixture model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub k: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub init_log_std: f64,
}

impl GmmConfig {
    pub fn new(k: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(k >= 1, "mixture needs at least one component");
        GmmConfig {
            k,
            state_dim,
            action_dim,
            hidden: vec![64, 64],
            log_std_min: (1e-3f64).ln(),
            log_std_max: 0.0,
            init_log_std: (0.3f64).ln(),
        }
    }

    pub fn with_hidden(mut self, hidden: &[usize]) -> Self {
        self.hidden = hidden.to_vec();
        self
    }
}

/// Everything the state determines: gating distribution, squashed means,
/// clamped log-stds, plus the raw values the backward pass needs.
#[derive(Debug, Clone)]
pub struct GmmHeads {
    pub logits: Vec<f64>,
    pub log_w: Vec<f64>,
    pub w: Vec<f64>,
    pub means: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// Gradient of a scalar with respect to the head values.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub d_logits: Vec<f64>,
    pub d_means: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros(k: usize, action_dim: usize) -> Self {
        HeadGrads {
            d_logits: vec![0.0; k],
            d_means: vec![0.0; k * action_dim],
            d_log_std: vec![0.0; k * action_dim],
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self
            .d_logits
            .iter_mut()
            .chain(self.d_means.iter_mut())
            .chain(self.d_log_std.iter_mut())
        {
            *v *= c;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub actions: Vec<f64>,
    pub components: Vec<usize>,
    pub action_dim: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

#[derive(Debug, Clone)]
pub struct CgmmModel {
    cfg: GmmConfig,
    gating: MlpSpec,
    mean: MlpSpec,
    params: ParamVector,
    gating_range: Range<usize>,
    mean_range: Range<usize>,
    log_std_range: Range<usize>,
}

impl CgmmModel {
    pub fn new(cfg: GmmConfig, seed: u64) -> Self {
        let gating = MlpSpec::new(cfg.state_dim, &cfg.hidden, cfg.k, Activation::Tanh);
        let mean = MlpSpec::new(cfg.state_dim, &cfg.hidden, cfg.k * cfg.action_dim, Activation::Tanh);
        let mut shapes = gating.layout("gating.");
        shapes.extend(mean.layout("mean."));
        shapes.push(("log_std".to_string(), vec![cfg.k, cfg.action_dim]));
        let layout = Arc::new(ParamLayout::new(shapes));

        let mut values = Vec::with_capacity(layout.total_len());
        values.extend(glorot_init(&gating, child_seed(seed, 0)));
        values.extend(glorot_init(&mean, child_seed(seed, 1)));
        values.extend(std::iter::repeat(cfg.init_log_std).take(cfg.k * cfg.action_dim));
        let params = ParamVector::from_values(Arc::clone(&layout), values);

        let gating_range = layout.span("gating.w0", &format!("gating.b{}", gating.layer_count() - 1)).unwrap();
        let mean_range = layout.span("mean.w0", &format!("mean.b{}", mean.layer_count() - 1)).unwrap();
        let log_std_range = layout.segment("log_std").unwrap().range();
        CgmmModel { cfg, gating, mean, params, gating_range, mean_range, log_std_range }
    }

    pub fn config(&self) -> &GmmConfig {
        &self.cfg
    }

    pub fn param_len(&self) -> usize {
        self.params.layout().total_len()
    }

    pub fn param_values(&self) -> &[f64] {
        self.params.values()
    }

    pub fn param_values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Overwrites the final gating layer so that the gating distribution is
    /// the softmax of `logits` for every state. Test and diagnostic hook.
    pub fn pin_gating(&mut self, logits: &[f64]) {
        assert_eq!(logits.len(), self.cfg.k);
        let last = self.gating.layer_count() - 1;
        let wname = format!("gating.w{last}");
        let bname = format!("gating.b{last}");
        for v in self.params.segment_mut(&wname) {
            *v = 0.0;
        }
        self.params.segment_mut(&bname).copy_from_slice(logits);
    }

    /// Overwrites the final mean layer so every component mean equals
    /// `mean` (pre-squash bias `atanh(mean)`) for every state.
    pub fn pin_means(&mut self, mean: &[f64]) {
        assert_eq!(mean.len(), self.cfg.action_dim);
        let repeated: Vec<f64> = (0..self.cfg.k).flat_map(|_| mean.iter().copied()).collect();
        self.pin_component_means(&repeated);
    }

    /// Overwrites the final mean layer with one mean vector per component
    /// (`k * action_dim` values, row per component) for every state.
    pub fn pin_component_means(&mut self, means: &[f64]) {
        assert_eq!(means.len(), self.cfg.k * self.cfg.action_dim);
        let last = self.mean.layer_count() - 1;
        let wname = format!("mean.w{last}");
        let bname = format!("mean.b{last}");
        for v in self.params.segment_mut(&wname) {
            *v = 0.0;
        }
        let bias = self.params.segment_mut(&bname);
        for (b, m) in bias.iter_mut().zip(means) {
            *b = m.atanh();
        }
    }

    pub fn set_log_std(&mut self, value: f64) {
        for v in self.params.segment_mut("log_std") {
            *v = value;
        }
    }

    pub fn heads(&self, s: &[f64]) -> GmmHeads {
        assert_eq!(s.len(), self.cfg.state_dim, "state dimension mismatch");
        let logits = mlp_forward(&self.gating, &self.params.values()[self.gating_range.clone()], s);
        let log_w = log_softmax(&logits);
        let w: Vec<f64> = log_w.iter().map(|lw| lw.exp()).collect();
        let raw = mlp_forward(&self.mean, &self.params.values()[self.mean_range.clone()], s);
        let means: Vec<f64> = raw.iter().map(|m| m.tanh()).collect();
        let log_std: Vec<f64> = self.params.values()[self.log_std_range.clone()]
            .iter()
            .map(|v| v.clamp(self.cfg.log_std_min, self.cfg.log_std_max))
            .collect();
        GmmHeads { logits, log_w, w, means, log_std }
    }

    pub fn log_joints(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let heads = self.heads(s);
        mixture_log_joints(&heads.log_w, &heads.means, &heads.log_std, a)
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> f64 {
        logsumexp(&self.log_joints(s, a))
    }

    pub fn responsibilities(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        softmax_from_logits(&self.log_joints(s, a))
    }

    /// Mean of the highest-weight component; ties keep the lowest index.
    pub fn anchor(&self, s: &[f64]) -> (usize, Vec<f64>) {
        let heads = self.heads(s);
        let k = argmax_first(&heads.w);
        (k, heads.means[k * self.cfg.action_dim..(k + 1) * self.cfg.action_dim].to_vec())
    }

    /// Gating-weighted average of all component means.
    pub fn barycenter(&self, s: &[f64]) -> Vec<f64> {
        let heads = self.heads(s);
        let a = self.cfg.action_dim;
        let mut out = vec![0.0; a];
        for k in 0..self.cfg.k {
            for d in 0..a {
                out[d] += heads.w[k] * heads.means[k * a + d];
            }
        }
        out
    }

    /// Draws `n` actions: component from the gating distribution, then a
    /// diagonal Gaussian draw. Sequential, so for a fixed RNG the first
    /// `m < n` samples do not depend on `n`.
    pub fn sample(&self, s: &[f64], n: usize, rng: &mut ChaCha8Rng) -> SampleBatch {
        let heads = self.heads(s);
        self.sample_with_heads(&heads, None, n, rng)
    }

    /// Draws every sample from one fixed component.
    pub fn sample_component(&self, s: &[f64], component: usize, n: usize, rng: &mut ChaCha8Rng) -> SampleBatch {
        assert!(component < self.cfg.k, "component index out of range");
        let heads = self.heads(s);
        self.sample_with_heads(&heads, Some(component), n, rng)
    }

    fn sample_with_heads(
        &self,
        heads: &GmmHeads,
        fixed: Option<usize>,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> SampleBatch {
        let a = self.cfg.action_dim;
        let mut actions = Vec::with_capacity(n * a);
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            let k = match fixed {
                Some(k) => k,
                None => {
                    let u: f64 = rng.random();
                    pick_component(&heads.w, u)
                }
            };
            for d in 0..a {
                let z: f64 = rng.sample(StandardNormal);
                let idx = k * a + d;
                actions.push(heads.log_std[idx].exp().mul_add(z, heads.means[idx]));
            }
            components.push(k);
        }
        SampleBatch { actions, components, action_dim: a }
    }

    /// Closed-form gradient of `log_prob(s, a)` with respect to the head
    /// values (post-squash means, clamped log-stds, gating logits).
    pub fn log_density_grads(&self, s: &[f64], a: &[f64]) -> HeadGrads {
        let heads = self.heads(s);
        log_density_head_grads(&heads, a)
    }

    /// Chains head-level gradients into the flat parameter gradient,
    /// applying the tanh-squash derivative on means and zeroing the
    /// log-std gradient wherever the clamp saturates.
    pub fn backward_heads(&self, s: &[f64], heads: &GmmHeads, hg: &HeadGrads, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.param_len(), "gradient length mismatch");
        mlp_backward(
            &self.gating,
            &self.params.values()[self.gating_range.clone()],
            s,
            &hg.d_logits,
            &mut grad[self.gating_range.clone()],
        );
        let d_raw: Vec<f64> = hg
            .d_means
            .iter()
            .zip(&heads.means)
            .map(|(g, m)| g * (1.0 - m * m))
            .collect();
        mlp_backward(
            &self.mean,
            &self.params.values()[self.mean_range.clone()],
            s,
            &d_raw,
            &mut grad[self.mean_range.clone()],
        );
        let stored = &self.params.values()[self.log_std_range.clone()];
        let gs = &mut grad[self.log_std_range.clone()];
        for i in 0..stored.len() {
            let inside = stored[i] > self.cfg.log_std_min && stored[i] < self.cfg.log_std_max;
            if inside {
                gs[i] += hg.d_log_std[i];
            }
        }
    }

    pub fn to_model_entry(&self, name: &str) -> Result<ModelEntry> {
        Ok(ModelEntry::new(name, "cgmm", serde_json::to_value(&self.cfg)?, self.params.layout()))
    }

    pub fn from_model_entry(entry: &ModelEntry, values: Vec<f64>) -> Result<CgmmModel> {
        if entry.kind != "cgmm" {
            return Err(GemError::BadFormat(format!(
                "model '{}' has kind '{}', expected 'cgmm'",
                entry.name, entry.kind
            )));
        }
        let cfg: GmmConfig = serde_json::from_value(entry.spec.clone())?;
        let template = CgmmModel::new(cfg, 0);
        check_segments(&entry.name, &entry.segments, template.params.layout())?;
        if values.len() != template.param_len() {
            return Err(GemError::Truncated(format!(
                "model '{}': {} values, expected {}",
                entry.name,
                values.len(),
                template.param_len()
            )));
        }
        let params = ParamVector::from_values(template.params.layout_arc(), values);
        Ok(CgmmModel { params, ..template })
    }
}

/// log N(a; mu, diag(exp(log_std)^2)) for one component.
pub fn log_normal_diag(a: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), mean.len());
    let mut acc = 0.0;
    for d in 0..a.len() {
        let inv_std = (-log_std[d]).exp();
        let z = (a[d] - mean[d]) * inv_std;
        acc += z * z + LN_2PI + 2.0 * log_std[d];
    }
    -0.5 * acc
}

/// Per-component joint log densities `u_k = log w_k + log N_k(a)`.
pub fn mixture_log_joints(log_w: &[f64], means: &[f64], log_std: &[f64], a: &[f64]) -> Vec<f64> {
    let k = log_w.len();
    let dim = a.len();
    (0..k)
        .map(|i| log_w[i] + log_normal_diag(a, &means[i * dim..(i + 1) * dim], &log_std[i * dim..(i + 1) * dim]))
        .collect()
}

/// Closed-form head gradients of the mixture log density.
pub fn log_density_head_grads(heads: &GmmHeads, a: &[f64]) -> HeadGrads {
    let k = heads.w.len();
    let dim = a.len();
    let u = mixture_log_joints(&heads.log_w, &heads.means, &heads.log_std, a);
    let gamma = softmax_from_logits(&u);
    let mut hg = HeadGrads::zeros(k, dim);
    for i in 0..k {
        hg.d_logits[i] = gamma[i] - heads.w[i];
        for d in 0..dim {
            let idx = i * dim + d;
            let inv_var = (-2.0 * heads.log_std[idx]).exp();
            let diff = a[d] - heads.means[idx];
            hg.d_means[idx] = gamma[i] * diff * inv_var;
            hg.d_log_std[idx] = gamma[i] * (diff * diff * inv_var - 1.0);
        }
    }
    hg
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "logsumexp of empty slice");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = logsumexp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn softmax_from_logits(xs: &[f64]) -> Vec<f64> {
    log_softmax(xs).iter().map(|x| x.exp()).collect()
}

pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

fn pick_component(w: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, wk) in w.iter().enumerate() {
        cum += wk;
        if u < cum {
            return k;
        }
    }
    w.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_model(k: usize, seed: u64) -> CgmmModel {
        CgmmModel::new(GmmConfig::new(k, 2, 2).with_hidden(&[6]), seed)
    }

    #[test]
    fn standard_normal_log_density() {
        let v = log_normal_diag(&[0.0], &[0.0], &[0.0]);
        assert!((v - (-0.9189385332046727)).abs() < 1e-15);
    }

    #[test]
    fn two_component_hand_case() {
        // equal weights, means -1 and +1, unit sigma, evaluated at 0
        let log_w = [0.5f64.ln(), 0.5f64.ln()];
        let means = [-1.0, 1.0];
        let log_std = [0.0, 0.0];
        let u = mixture_log_joints(&log_w, &means, &log_std, &[0.0]);
        assert!((u[0] - (-2.112085713764618)).abs() < 1e-12);
        assert!((u[1] - (-2.112085713764618)).abs() < 1e-12);
        let lp = logsumexp(&u);
        assert!((lp - (-1.4189385332046727)).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_survives_large_magnitudes() {
        let v = logsumexp(&[-1e4, -1e4]);
        assert!((v - (-1e4 + 2f64.ln())).abs() < 1e-9);
        let w = logsumexp(&[1e4, 1e4 - 700.0]);
        assert!((w - 1e4).abs() < 1e-9);
    }

    #[test]
    fn responsibilities_favor_near_component() {
        // ten sigmas of separation
        let u = mixture_log_joints(
            &[0.5f64.ln(), 0.5f64.ln()],
            &[0.0, 10.0],
            &[0.0, 0.0],
            &[0.0],
        );
        let gamma = softmax_from_logits(&u);
        assert!(gamma[0] > 0.999);
        assert!((gamma[0] + gamma[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gating_forces_responsibility() {
        // equal component densities, all weight on component 0
        let u = mixture_log_joints(&[0.0, -60.0], &[0.3, 0.3], &[-1.0, -1.0], &[0.1]);
        let gamma = softmax_from_logits(&u);
        assert!(gamma[0] > 0.999);
    }

    #[test]
    fn model_log_prob_is_mixture_of_joints() {
        let m = small_model(3, 42);
        let s = [0.2, -0.4];
        let a = [0.1, 0.3];
        let u = m.log_joints(&s, &a);
        assert_eq!(u.len(), 3);
        assert!((m.log_prob(&s, &a) - logsumexp(&u)).abs() < 1e-14);
        let gamma = m.responsibilities(&s, &a);
        let total: f64 = gamma.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn anchor_takes_highest_weight_and_breaks_ties_low() {
        let mut m = small_model(2, 7);
        m.pin_gating(&[0.5f64.ln(), 0.5f64.ln()]);
        assert_eq!(m.anchor(&[0.0, 0.0]).0, 0);
        m.pin_gating(&[0.2f64.ln(), 0.8f64.ln()]);
        assert_eq!(m.anchor(&[0.3, -0.1]).0, 1);
    }

    #[test]
    fn barycenter_weights_component_means() {
        let mut m = small_model(2, 3);
        m.pin_gating(&[0.8f64.ln(), 0.2f64.ln()]);
        let heads = m.heads(&[0.1, 0.1]);
        let bary = m.barycenter(&[0.1, 0.1]);
        for d in 0..2 {
            let want = 0.8 * heads.means[d] + 0.2 * heads.means[2 + d];
            assert!((bary[d] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn component_frequencies_match_gating() {
        let mut m = small_model(2, 11);
        m.pin_gating(&[0.8f64.ln(), 0.2f64.ln()]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let batch = m.sample(&[0.0, 0.0], 100_000, &mut rng);
        let freq0 = batch.components.iter().filter(|&&c| c == 0).count() as f64 / 1e5;
        assert!((freq0 - 0.8).abs() < 0.01, "frequency {freq0}");
    }

    #[test]
    fn single_component_sample_moments() {
        let m = small_model(1, 5);
        let s = [0.4, -0.2];
        let heads = m.heads(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let batch = m.sample(&s, 100_000, &mut rng);
        for d in 0..2 {
            let vals: Vec<f64> = (0..batch.len()).map(|i| batch.action(i)[d]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let sigma = heads.log_std[d].exp();
            assert!((mean - heads.means[d]).abs() < 4.0 * sigma / (1e5f64).sqrt());
            assert!((var - sigma * sigma).abs() < 4.0 * sigma * sigma * (2.0 / 1e5f64).sqrt());
        }
    }

    #[test]
    fn clamped_tiny_sigma_concentrates_samples() {
        let mut m = small_model(1, 8);
        m.set_log_std(-20.0); // clamps to log(1e-3)
        let s = [0.1, 0.9];
        let heads = m.heads(&s);
        assert!((heads.log_std[0] - (1e-3f64).ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let batch = m.sample(&s, 100_000, &mut rng);
        for i in 0..batch.len() {
            for d in 0..2 {
                assert!((batch.action(i)[d] - heads.means[d]).abs() < 6e-3);
            }
        }
    }

    #[test]
    fn sample_prefix_is_stable_under_larger_budgets() {
        let m = small_model(3, 31);
        let s = [0.3, 0.3];
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let small = m.sample(&s, 16, &mut r1);
        let big = m.sample(&s, 64, &mut r2);
        assert_eq!(&big.actions[..16 * 2], &small.actions[..]);
        assert_eq!(&big.components[..16], &small.components[..]);
    }

    #[test]
    fn head_grads_match_finite_differences() {
        let k = 3;
        let dim = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let means: Vec<f64> = (0..k * dim).map(|_| rng.random::<f64>() * 1.6 - 0.8).collect();
            let log_std: Vec<f64> = (0..k * dim).map(|_| rng.random::<f64>() * 1.5 - 2.0).collect();
            let a: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

            let f = |logits: &[f64], means: &[f64], log_std: &[f64]| {
                logsumexp(&mixture_log_joints(&log_softmax(logits), means, log_std, &a))
            };
            let heads = GmmHeads {
                logits: logits.clone(),
                log_w: log_softmax(&logits),
                w: softmax_from_logits(&logits),
                means: means.clone(),
                log_std: log_std.clone(),
            };
            let hg = log_density_head_grads(&heads, &a);

            let h = 1e-6;
            // denominator floored at 1.0: tiny gradients are held to an
            // absolute bound, large ones to a relative bound
            let check = |analytic: f64, up: f64, down: f64| {
                let num = (up - down) / (2.0 * h);
                let rel = (analytic - num).abs() / analytic.abs().max(num.abs()).max(1.0);
                assert!(rel < 2e-7, "rel error {rel}");
            };
            for i in 0..k {
                let mut lp = logits.clone();
                lp[i] += h;
                let mut lm = logits.clone();
                lm[i] -= h;
                check(hg.d_logits[i], f(&lp, &means, &log_std), f(&lm, &means, &log_std));
            }
            for i in 0..k * dim {
                let mut mp = means.clone();
                mp[i] += h;
                let mut mm = means.clone();
                mm[i] -= h;
                check(hg.d_means[i], f(&logits, &mp, &log_std), f(&logits, &mm, &log_std));
                let mut sp = log_std.clone();
                sp[i] += h;
                let mut sm = log_std.clone();
                sm[i] -= h;
                check(hg.d_log_std[i], f(&logits, &means, &sp), f(&logits, &means, &sm));
            }
        }
    }

    #[test]
    fn equal_means_zero_mean_gradient() {
        let mut m = small_model(2, 9);
        m.pin_means(&[0.25, -0.4]);
        let s = [0.0, 0.5];
        let heads = m.heads(&s);
        let a = [heads.means[0], heads.means[1]];
        let hg = m.log_density_grads(&s, &a);
        let gamma = m.responsibilities(&s, &a);
        for k in 0..2 {
            for d in 0..2 {
                assert!(hg.d_means[k * 2 + d].abs() < 1e-12);
                assert!((hg.d_log_std[k * 2 + d] + gamma[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_parameter_gradient_matches_finite_differences() {
        let m = small_model(2, 77);
        let s = [0.3, -0.6];
        let a = [0.2, 0.5];
        let heads = m.heads(&s);
        let hg = m.log_density_grads(&s, &a);
        let mut grad = vec![0.0; m.param_len()];
        m.backward_heads(&s, &heads, &hg, &mut grad);

        let mut probe = m.clone();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..probe.param_len() {
            let orig = probe.param_values()[i];
            probe.param_values_mut()[i] = orig + h;
            let up = probe.log_prob(&s, &a);
            probe.param_values_mut()[i] = orig - h;
            let down = probe.log_prob(&s, &a);
            probe.param_values_mut()[i] = orig;
            let num = (up - down) / (2.0 * h);
            let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "worst rel error {worst}");
    }

    #[test]
    fn saturated_log_std_has_zero_gradient() {
        let mut m = small_model(1, 13);
        m.set_log_std(-20.0); // far below the clamp floor
        let s = [0.2, 0.2];
        let a = [0.0, 0.0];
        let heads = m.heads(&s);
        let hg = m.log_density_grads(&s, &a);
        let mut grad = vec![0.0; m.param_len()];
        m.backward_heads(&s, &heads, &hg, &mut grad);
        let seg = m.params().layout().segment("log_std").unwrap().range();
        assert!(grad[seg].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn checkpoint_entry_roundtrip_preserves_outputs() {
        let m = small_model(3, 55);
        let entry = m.to_model_entry("actor").unwrap();
        let restored = CgmmModel::from_model_entry(&entry, m.param_values().to_vec()).unwrap();
        let s = [0.9, -0.9];
        let a = [0.4, -0.2];
        assert_eq!(m.log_prob(&s, &a).to_bits(), restored.log_prob(&s, &a).to_bits());
    }

    #[test]
    fn mismatched_entry_is_rejected_with_segment_name() {
        let m = small_model(2, 55);
        let mut entry = m.to_model_entry("behavior").unwrap();
        entry.segments[0].shape = vec![9, 9];
        entry.value_len = entry.segments.iter().map(|s| s.len()).sum();
        let err = CgmmModel::from_model_entry(&entry, vec![0.0; entry.value_len]).unwrap_err();
        match err {
            GemError::ShapeMismatch { segment, .. } => assert_eq!(segment, "behavior.gating.w0"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
