//! End-to-end training: behavior pretraining, then the interleaved
//! critic / value / actor loop, then checkpointable artifacts.
//!
//! Per gradient step the order is fixed: value regression toward the
//! pessimistic target critics, Q regression toward the bootstrapped
//! value, a Polyak target update, and finally one guided EM step on the
//! actor with advantages computed from the frozen-in-place critics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{actor_step, batch_advantages, GuidanceConfig};
use crate::behavior::{pretrain, BehaviorModel, PretrainConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, ModelEntry,
    CHECKPOINT_VERSION};
use crate::child_seed;
use crate::critic::{q_target, value_update, CriticEnsemble, ValueNet};
use crate::envs::{EnvKind, OfflineDataset};
use crate::error::{GemError, Result};
use crate::gmm::{CgmmModel, GmmConfig};
use crate::inference::InferenceConfig;
use crate::nn::{AdamConfig, AdamState};

/// Everything the training loop needs besides the dataset. All fields
/// have defaults so partial JSON config files merge cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub gamma: f64,
    /// Expectile for the value net; above one half leans optimistic
    /// within support, which is what the advantage weighting wants.
    pub expectile_tau: f64,
    pub polyak_tau: f64,
    pub num_heads: usize,
    pub num_components: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub pretrain_steps: usize,
    pub log_every: usize,
    pub guidance: GuidanceConfig,
    pub inference: InferenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 20_000,
            batch_size: 256,
            gamma: 0.99,
            expectile_tau: 0.7,
            polyak_tau: 0.005,
            num_heads: 8,
            num_components: 4,
            hidden: vec![64, 64],
            lr: 3e-4,
            pretrain_steps: 5000,
            log_every: 100,
            guidance: GuidanceConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

/// One row of the training curve, emitted every `log_every` steps.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub critic_loss: f64,
    pub value_loss: f64,
    pub actor_loss: f64,
    pub gate_entropy: f64,
    pub mean_guidance_weight: f64,
}

/// The trained models plus run metadata; the unit of persistence.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub actor: CgmmModel,
    pub behavior: BehaviorModel,
    pub critics: CriticEnsemble,
    pub value: ValueNet,
    pub meta: serde_json::Value,
}

impl Artifacts {
    pub fn state_dim(&self) -> usize {
        self.actor.config().state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.actor.config().action_dim
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        let name = self.meta.get("env").and_then(|v| v.as_str()).ok_or_else(|| {
            GemError::BadFormat("checkpoint metadata has no 'env' field".into())
        })?;
        EnvKind::parse(name)
            .ok_or_else(|| GemError::BadFormat(format!("unknown environment '{name}'")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut models = Vec::new();
        let mut payloads: Vec<&[f64]> = Vec::new();
        models.push(self.actor.to_model_entry("actor")?);
        payloads.push(self.actor.param_values());
        models.push(self.behavior.to_model_entry("behavior")?);
        payloads.push(self.behavior.model().param_values());
        for (entry, values) in self.critics.to_model_entries()? {
            models.push(entry);
            payloads.push(values);
        }
        models.push(self.value.to_model_entry("value")?);
        payloads.push(self.value.param_values());
        let header = CheckpointHeader {
            format_version: CHECKPOINT_VERSION,
            models,
            meta: self.meta.clone(),
        };
        save_checkpoint(path, &header, &payloads)
    }

    pub fn load(path: &Path) -> Result<Artifacts> {
        let (header, payloads) = load_checkpoint(path)?;
        let mut actor = None;
        let mut behavior = None;
        let mut value = None;
        let mut critic_entries: Vec<(&ModelEntry, Vec<f64>)> = Vec::new();
        for (entry, values) in header.models.iter().zip(payloads) {
            match entry.name.as_str() {
                "actor" => actor = Some(CgmmModel::from_model_entry(entry, values)?),
                "behavior" => behavior = Some(BehaviorModel::from_model_entry(entry, values)?),
                "value" => value = Some(ValueNet::from_model_entry(entry, values)?),
                name if name.starts_with("critic.") => critic_entries.push((entry, values)),
                other => {
                    return Err(GemError::BadFormat(format!("unexpected model '{other}'")))
                }
            }
        }
        let actor = actor.ok_or_else(|| GemError::BadFormat("checkpoint has no actor".into()))?;
        let behavior =
            behavior.ok_or_else(|| GemError::BadFormat("checkpoint has no behavior model".into()))?;
        let value =
            value.ok_or_else(|| GemError::BadFormat("checkpoint has no value net".into()))?;
        let critics = CriticEnsemble::from_model_entries(
            actor.config().state_dim,
            actor.config().action_dim,
            &critic_entries,
        )?;
        Ok(Artifacts { actor, behavior, critics, value, meta: header.meta })
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub artifacts: Artifacts,
    pub log: Vec<TrainLogRow>,
    pub pretrain_curve: Vec<(usize, f64)>,
    /// Set when training stopped early on a non-finite loss; `artifacts`
    /// then hold the last finite-loss snapshot.
    pub abort: Option<String>,
}

/// Trains the full model stack on an offline dataset.
pub fn train(dataset: &OfflineDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(GemError::Config("cannot train on an empty dataset".into()));
    }
    let state_dim = dataset.state_dim;
    let action_dim = dataset.action_dim;
    let kind = EnvKind::parse(&dataset.env)
        .ok_or_else(|| GemError::Config(format!("dataset for unknown env '{}'", dataset.env)))?;
    let anchors = kind.build().anchors();

    let pre_cfg = PretrainConfig {
        steps: cfg.pretrain_steps,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        k: cfg.num_components,
        hidden: cfg.hidden.clone(),
        seed: child_seed(cfg.seed, 0xb0),
        log_every: cfg.log_every,
        freeze: true,
    };
    let pre = pretrain(&dataset.states, &dataset.actions, &pre_cfg)?;
    let meta = serde_json::json!({
        "env": dataset.env,
        "anchors": anchors,
        "transitions": dataset.len(),
        "config": cfg,
    });
    if let Some(msg) = pre.abort {
        // degenerate but still checkpointable: untouched main models
        let artifacts = Artifacts {
            actor: CgmmModel::new(
                GmmConfig::new(cfg.num_components, state_dim, action_dim)
                    .with_hidden(&cfg.hidden),
                child_seed(cfg.seed, 1),
            ),
            behavior: pre.model,
            critics: CriticEnsemble::new(
                cfg.num_heads,
                state_dim,
                action_dim,
                &cfg.hidden,
                child_seed(cfg.seed, 2),
            ),
            value: ValueNet::new(state_dim, &cfg.hidden, child_seed(cfg.seed, 3)),
            meta,
        };
        return Ok(TrainOutput {
            artifacts,
            log: Vec::new(),
            pretrain_curve: pre.curve,
            abort: Some(msg),
        });
    }
    let behavior = pre.model;

    let mut actor = CgmmModel::new(
        GmmConfig::new(cfg.num_components, state_dim, action_dim).with_hidden(&cfg.hidden),
        child_seed(cfg.seed, 1),
    );
    let mut critics = CriticEnsemble::new(
        cfg.num_heads,
        state_dim,
        action_dim,
        &cfg.hidden,
        child_seed(cfg.seed, 2),
    );
    let mut value = ValueNet::new(state_dim, &cfg.hidden, child_seed(cfg.seed, 3));

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut actor_opt = AdamState::new(actor.param_len());
    let mut critic_opts: Vec<AdamState> =
        (0..cfg.num_heads).map(|_| AdamState::new(critics.head_param_len())).collect();
    let mut value_opt = AdamState::new(value.param_len());

    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 0x7a));
    let mut log = Vec::new();
    let mut snapshot = (actor.clone(), critics.clone(), value.clone());

    for step in 1..=cfg.steps {
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.random_range(0..dataset.len())).collect();
        let bs: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.states[i].clone()).collect();
        let ba: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.actions[i].clone()).collect();
        let bns: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.next_states[i].clone()).collect();

        let result = (|| -> Result<TrainLogRow> {
            let value_loss = value_update(
                &mut value,
                &mut value_opt,
                &adam,
                &critics,
                &bs,
                &ba,
                cfg.expectile_tau,
            )?;
            let targets: Vec<f64> = idx
                .iter()
                .zip(&bns)
                .map(|(&i, ns)| {
                    q_target(dataset.rewards[i], dataset.dones[i], cfg.gamma, value.v(ns))
                })
                .collect();
            let critic_loss = critics.update(&mut critic_opts, &adam, &bs, &ba, &targets)?;
            critics.polyak(cfg.polyak_tau);
            let advantages = batch_advantages(&critics, &value, &bs, &ba);
            let report =
                actor_step(&mut actor, &mut actor_opt, &adam, &bs, &ba, &advantages, &cfg.guidance)?;
            Ok(TrainLogRow {
                step,
                critic_loss,
                value_loss,
                actor_loss: report.loss,
                gate_entropy: report.gate_entropy,
                mean_guidance_weight: report.mean_weight,
            })
        })();

        match result {
            Ok(row) => {
                if step % cfg.log_every == 0 || step == cfg.steps {
                    log.push(row);
                    snapshot = (actor.clone(), critics.clone(), value.clone());
                }
            }
            Err(GemError::Numerical(msg)) => {
                let (actor, critics, value) = snapshot;
                return Ok(TrainOutput {
                    artifacts: Artifacts { actor, behavior, critics, value, meta },
                    log,
                    pretrain_curve: pre.curve,
                    abort: Some(format!("step {step}: {msg}")),
                });
            }
            Err(other) => return Err(other),
        }
    }

    Ok(TrainOutput {
        artifacts: Artifacts { actor, behavior, critics, value, meta },
        log,
        pretrain_curve: pre.curve,
        abort: None,
    })
}
