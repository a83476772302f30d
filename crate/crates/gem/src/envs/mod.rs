//! Synthetic environments, offline datasets, and evaluation rollouts.
//!
//! Both environments are small enough to train against in seconds yet
//! keep the property that matters: the dataset's conditional action
//! distribution is genuinely multimodal, so a unimodal actor has
//! something to get wrong.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::child_seed;
use crate::error::{GemError, Result};

mod bandit;
mod maze;

pub use bandit::{BanditOracle, BimodalBandit, ModeValue};
pub use maze::{MazeController, MazeRoute, PointMaze};

pub const DATASET_MAGIC: &[u8; 8] = b"GEMDATA1";
pub const DATASET_VERSION: u32 = 1;

/// Per-environment normalization anchors, estimated once at construction
/// with fixed internal seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreAnchors {
    pub random: f64,
    pub expert: f64,
}

impl ScoreAnchors {
    /// `(raw - random) / (expert - random) * 100`.
    pub fn normalized(&self, raw: f64) -> f64 {
        100.0 * (raw - self.random) / (self.expert - self.random)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A stateless environment: dynamics are pure functions of `(s, a)` plus
/// the caller's RNG, which keeps rollouts trivially reproducible.
pub trait Env {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn anchors(&self) -> ScoreAnchors;
    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&self, s: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> StepOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Bandit,
    Maze,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Bandit => "bandit",
            EnvKind::Maze => "maze",
        }
    }

    pub fn parse(name: &str) -> Option<EnvKind> {
        match name {
            "bandit" => Some(EnvKind::Bandit),
            "maze" => Some(EnvKind::Maze),
            _ => None,
        }
    }

    pub fn build(&self) -> Box<dyn Env> {
        match self {
            EnvKind::Bandit => Box::new(BimodalBandit::new()),
            EnvKind::Maze => Box::new(PointMaze::new()),
        }
    }

    pub fn default_eval_episodes(&self) -> usize {
        match self {
            EnvKind::Bandit => 50,
            EnvKind::Maze => 20,
        }
    }

    pub fn default_dataset_size(&self) -> usize {
        match self {
            EnvKind::Bandit => 10_000,
            EnvKind::Maze => 20_000,
        }
    }
}

/// Audit numbers a policy can attach to a decision.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepAudit {
    pub support_z: f64,
    pub collapse: f64,
}

/// Anything that can drive an episode. Baseline policies return no audit;
/// the candidate-scoring policy reports support and collapse per step.
pub trait Policy {
    fn begin_episode(&mut self, episode: u64);
    fn act(&mut self, s: &[f64], t: usize, horizon: usize) -> (Vec<f64>, Option<StepAudit>);
}

/// Uniform random actions over the box; the normalization floor.
pub struct RandomPolicy {
    action_dim: usize,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(action_dim: usize, seed: u64) -> Self {
        RandomPolicy { action_dim, seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn begin_episode(&mut self, episode: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(child_seed(self.seed, episode));
    }

    fn act(&mut self, _s: &[f64], _t: usize, _horizon: usize) -> (Vec<f64>, Option<StepAudit>) {
        let a = (0..self.action_dim).map(|_| self.rng.random::<f64>() * 2.0 - 1.0).collect();
        (a, None)
    }
}

/// One decision step of an evaluation rollout, for JSON-lines traces.
#[derive(Debug, Clone, Serialize)]
pub struct TraceStep {
    pub episode: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<StepAudit>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: usize,
    pub decision_steps: usize,
    pub raw_return_mean: f64,
    pub raw_return_std: f64,
    pub normalized_score: f64,
    /// Fraction of audited decisions flagged as support violations.
    pub violation_rate: f64,
    pub mean_collapse: f64,
    pub audited_steps: usize,
    pub steps_per_sec: f64,
}

/// Roll out `episodes` episodes. Environment randomness and policy
/// randomness run on independent per-episode streams derived from `seed`,
/// so episode k is identical no matter how many episodes ran before it.
pub fn evaluate_policy(
    env: &dyn Env,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
) -> EvalReport {
    evaluate_policy_traced(env, policy, episodes, seed, None)
}

pub fn evaluate_policy_traced(
    env: &dyn Env,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
    mut trace: Option<&mut dyn FnMut(&TraceStep)>,
) -> EvalReport {
    assert!(episodes > 0, "need at least one evaluation episode");
    let horizon = env.horizon();
    let mut returns = Vec::with_capacity(episodes);
    let mut audits = crate::audits::AuditAccumulator::default();
    let mut decision_steps = 0usize;
    let mut decide_time = std::time::Duration::ZERO;

    for ep in 0..episodes {
        let mut env_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, ep as u64));
        policy.begin_episode(ep as u64);
        let mut s = env.reset(&mut env_rng);
        let mut ret = 0.0;
        for t in 1..=horizon {
            let started = std::time::Instant::now();
            let (a, audit) = policy.act(&s, t, horizon);
            decide_time += started.elapsed();
            decision_steps += 1;
            if let Some(au) = audit {
                audits.record(au.support_z, au.collapse);
            }
            let out = env.step(&s, &a, &mut env_rng);
            ret += out.reward;
            if let Some(cb) = trace.as_deref_mut() {
                cb(&TraceStep {
                    episode: ep,
                    t,
                    state: s.clone(),
                    action: a,
                    reward: out.reward,
                    audit,
                });
            }
            s = out.next;
            if out.done {
                break;
            }
        }
        returns.push(ret);
    }

    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let secs = decide_time.as_secs_f64();
    EvalReport {
        episodes,
        decision_steps,
        raw_return_mean: mean,
        raw_return_std: var.sqrt(),
        normalized_score: env.anchors().normalized(mean),
        violation_rate: audits.violation_rate(),
        mean_collapse: audits.mean_collapse(),
        audited_steps: audits.decisions,
        steps_per_sec: if secs > 0.0 { decision_steps as f64 / secs } else { f64::INFINITY },
    }
}

/// Transition table plus metadata. Actions are always inside the box and
/// rewards finite; `save` enforces both.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    pub dones: Vec<f64>,
    /// Generation config, normalization anchors, and the behavior-policy
    /// ground truth (for audits only; training must not read it).
    pub meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    env: String,
    state_dim: usize,
    action_dim: usize,
    horizon: usize,
    transitions: usize,
    meta: serde_json::Value,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.states.len() != n
            || self.actions.len() != n
            || self.next_states.len() != n
            || self.dones.len() != n
        {
            return Err(GemError::Config("dataset column lengths disagree".into()));
        }
        for a in &self.actions {
            if a.len() != self.action_dim || a.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(GemError::Config("action outside the [-1, 1] box".into()));
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(GemError::Config("non-finite reward".into()));
        }
        Ok(())
    }

    /// Writes the versioned binary file plus a human-readable metadata
    /// sidecar at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let header = DatasetHeader {
            format_version: DATASET_VERSION,
            env: self.env.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            horizon: self.horizon,
            transitions: self.len(),
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        let mut write_col = |col: &[f64]| -> Result<()> {
            for v in col {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for row in &self.states {
            write_col(row)?;
        }
        for row in &self.actions {
            write_col(row)?;
        }
        write_col(&self.rewards)?;
        for row in &self.next_states {
            write_col(row)?;
        }
        write_col(&self.dones)?;
        drop(write_col);
        w.flush()?;

        let sidecar = path.with_extension(
            path.extension()
                .map(|e| format!("{}.json", e.to_string_lossy()))
                .unwrap_or_else(|| "json".to_string()),
        );
        let mut sw = BufWriter::new(File::create(sidecar)?);
        sw.write_all(serde_json::to_string_pretty(&header)?.as_bytes())?;
        sw.write_all(b"\n")?;
        sw.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<OfflineDataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact_or_truncated(&mut r, &mut magic, "magic")?;
        if &magic != DATASET_MAGIC {
            return Err(GemError::BadFormat("not a dataset file (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 8];
        read_exact_or_truncated(&mut r, &mut len_bytes, "header length")?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        read_exact_or_truncated(&mut r, &mut header_bytes, "header")?;
        let header: DatasetHeader = serde_json::from_slice(&header_bytes)?;
        if header.format_version != DATASET_VERSION {
            return Err(GemError::VersionMismatch {
                found: header.format_version,
                expected: DATASET_VERSION,
            });
        }

        let n = header.transitions;
        let mut read_f64 = |count: usize, what: &str| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            read_exact_or_truncated(&mut r, &mut buf, what)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        let read_rows = |flat: Vec<f64>, dim: usize| -> Vec<Vec<f64>> {
            flat.chunks_exact(dim).map(|c| c.to_vec()).collect()
        };
        let states = read_rows(read_f64(n * header.state_dim, "states")?, header.state_dim);
        let actions = read_rows(read_f64(n * header.action_dim, "actions")?, header.action_dim);
        let rewards = read_f64(n, "rewards")?;
        let next_states = read_rows(read_f64(n * header.state_dim, "next states")?, header.state_dim);
        let dones = read_f64(n, "dones")?;
        Ok(OfflineDataset {
            env: header.env,
            state_dim: header.state_dim,
            action_dim: header.action_dim,
            horizon: header.horizon,
            states,
            actions,
            rewards,
            next_states,
            dones,
            meta: header.meta,
        })
    }
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            GemError::Truncated(format!("dataset ends inside {what}"))
        } else {
            GemError::Io(e)
        }
    })
}

/// Generate an offline dataset with the environment's scripted multimodal
/// behavior policy. Byte-identical under a fixed seed.
pub fn generate_dataset(kind: EnvKind, n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(GemError::Config("dataset size must be at least 1".into()));
    }
    match kind {
        EnvKind::Bandit => bandit::generate(n, seed),
        EnvKind::Maze => maze::generate(n, seed),
    }
}
