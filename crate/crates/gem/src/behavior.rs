//! Behavior density estimation.
//!
//! A [`BehaviorModel`] wraps a conditional mixture fit by maximum
//! likelihood on the dataset. After pretraining it is frozen: the support
//! scores used at decision time must come from a model that no longer
//! moves, and freezing is enforced at the type level rather than by
//! convention. Scoring code takes `&BehaviorModel`, so an actor mixture
//! cannot be passed in by accident.

use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelEntry;
use crate::error::{GemError, Result};
use crate::gmm::{CgmmModel, GmmConfig};
use crate::nn::{AdamConfig, AdamState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct BehaviorModel {
    model: CgmmModel,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct BehaviorSpec {
    gmm: GmmConfig,
    frozen: bool,
}

impl BehaviorModel {
    /// Fresh, unfrozen model ready for MLE pretraining.
    pub fn new(cfg: GmmConfig, seed: u64) -> Self {
        BehaviorModel { model: CgmmModel::new(cfg, seed), frozen: false }
    }

    /// Wrap an existing mixture, e.g. one pinned to a known density in a
    /// test or diagnostic.
    pub fn from_cgmm(model: CgmmModel) -> Self {
        BehaviorModel { model, frozen: false }
    }

    pub fn model(&self) -> &CgmmModel {
        &self.model
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> f64 {
        self.model.log_prob(s, a)
    }

    /// Minibatch NLL `mean_b -log p(a_b | s_b)` and its parameter
    /// gradient, without touching the parameters.
    pub fn nll_grad(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> (f64, Vec<f64>) {
        assert_eq!(states.len(), actions.len());
        let b = states.len() as f64;
        let mut grad = vec![0.0; self.model.param_len()];
        let mut nll = 0.0;
        for (s, a) in states.iter().zip(actions) {
            nll += -self.model.log_prob(s, a) / b;
            let heads = self.model.heads(s);
            let mut hg = self.model.log_density_grads(s, a);
            hg.scale(-1.0 / b);
            self.model.backward_heads(s, &heads, &hg, &mut grad);
        }
        (nll, grad)
    }

    /// One negative-log-likelihood descent step on a minibatch.
    /// Rejected once the model is frozen.
    pub fn mle_step(
        &mut self,
        opt: &mut AdamState,
        adam: &AdamConfig,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
    ) -> Result<f64> {
        if self.frozen {
            return Err(GemError::Frozen("behavior model is frozen; no further MLE steps".into()));
        }
        let (nll, grad) = self.nll_grad(states, actions);
        if !nll.is_finite() {
            return Err(GemError::Numerical(format!("behavior NLL is {nll}")));
        }
        opt.step(adam, self.model.param_values_mut(), &grad)?;
        Ok(nll)
    }

    pub fn to_model_entry(&self, name: &str) -> Result<ModelEntry> {
        let spec = BehaviorSpec { gmm: self.model.config().clone(), frozen: self.frozen };
        let mut entry = self.model.to_model_entry(name)?;
        entry.kind = "behavior".to_string();
        entry.spec = serde_json::to_value(&spec)?;
        Ok(entry)
    }

    pub fn from_model_entry(entry: &ModelEntry, values: Vec<f64>) -> Result<BehaviorModel> {
        if entry.kind != "behavior" {
            return Err(GemError::BadFormat(format!(
                "model '{}' has kind '{}', expected 'behavior'",
                entry.name, entry.kind
            )));
        }
        let spec: BehaviorSpec = serde_json::from_value(entry.spec.clone())?;
        let inner = ModelEntry {
            name: entry.name.clone(),
            kind: "cgmm".to_string(),
            spec: serde_json::to_value(&spec.gmm)?,
            segments: entry.segments.clone(),
            value_len: entry.value_len,
        };
        let model = CgmmModel::from_model_entry(&inner, values)?;
        Ok(BehaviorModel { model, frozen: spec.frozen })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub k: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub log_every: usize,
    /// Freeze the model when pretraining finishes (the intended use).
    pub freeze: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 5000,
            batch_size: 256,
            lr: 3e-4,
            k: 4,
            hidden: vec![64, 64],
            seed: 0,
            log_every: 100,
            freeze: true,
        }
    }
}

#[derive(Debug)]
pub struct PretrainOutput {
    pub model: BehaviorModel,
    /// `(step, minibatch NLL)` at every `log_every` boundary.
    pub curve: Vec<(usize, f64)>,
    /// Set when the run hit a non-finite loss; `model` is then the last
    /// finite-loss snapshot.
    pub abort: Option<String>,
}

/// Fit a behavior mixture on `(state, action)` pairs by minibatch MLE.
pub fn pretrain(
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cfg: &PretrainConfig,
) -> Result<PretrainOutput> {
    if states.is_empty() {
        return Err(GemError::Config("behavior pretraining needs a nonempty dataset".into()));
    }
    assert_eq!(states.len(), actions.len());
    let state_dim = states[0].len();
    let action_dim = actions[0].len();
    let gcfg = GmmConfig::new(cfg.k, state_dim, action_dim).with_hidden(&cfg.hidden);
    let mut model = BehaviorModel::new(gcfg, cfg.seed);
    let mut opt = AdamState::new(model.model.param_len());
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::child_seed(cfg.seed, 0xbe));
    let mut curve = Vec::new();
    let mut snapshot = model.clone();

    for step in 1..=cfg.steps {
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.random_range(0..states.len())).collect();
        let bs: Vec<Vec<f64>> = idx.iter().map(|&i| states[i].clone()).collect();
        let ba: Vec<Vec<f64>> = idx.iter().map(|&i| actions[i].clone()).collect();
        match model.mle_step(&mut opt, &adam, &bs, &ba) {
            Ok(nll) => {
                if step % cfg.log_every == 0 || step == cfg.steps {
                    curve.push((step, nll));
                    snapshot = model.clone();
                }
            }
            Err(GemError::Numerical(msg)) => {
                return Ok(PretrainOutput {
                    model: snapshot,
                    curve,
                    abort: Some(format!("behavior pretrain step {step}: {msg}")),
                });
            }
            Err(other) => return Err(other),
        }
    }
    if cfg.freeze {
        model.freeze();
    }
    Ok(PretrainOutput { model, curve, abort: None })
}
