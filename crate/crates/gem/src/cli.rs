//! Command-line harness: training runs, evaluations, sweeps, diagnostics,
//! ablations, a wall-clock profile, and dataset generation.
//!
//! Conventions shared by every command:
//! - `GEM_SEED` (environment) overrides `--seed`, which overrides any
//!   config file, which overrides built-in defaults.
//! - every CSV row carries `(env, seed, config_hash)` plus the resolved
//!   config as a JSON column; a `<file>.config.json` sidecar repeats it.
//! - exit codes: 0 success, 2 usage or config error, 3 numerical abort
//!   (training still saves the last finite checkpoint before exiting).

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::audits::{extreme_value_sim, nll_gap_dataset};
use crate::child_seed;
use crate::envs::{
    evaluate_policy_traced, generate_dataset, EnvKind, EvalReport, OfflineDataset, TraceStep,
};
use crate::error::{GemError, Result};
use crate::inference::{
    CandidateSource, GemPolicy, InferenceConfig, SupportMode, Variant, WpSchedule,
};
use crate::train::{train, Artifacts, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gem",
    version,
    about = "Candidate-based action selection for offline RL",
    max_term_width = 100
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the actor / behavior / critic / value stack on an offline dataset
    Train(TrainArgs),
    /// Evaluate a checkpoint with the candidate-scoring policy
    Eval(EvalArgs),
    /// Cross-product sweep over candidate budget, lambda, and wp_end
    Sweep(SweepArgs),
    /// Density and extreme-value diagnostics
    Diagnose(DiagnoseArgs),
    /// Evaluate every ablation variant of one checkpoint
    Ablate(AblateArgs),
    /// Decision latency and memory profile across candidate budgets
    Profile(ProfileArgs),
    /// Generate an offline dataset with the scripted behavior policy
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Environment: bandit | maze
    #[arg(long, value_parser = parse_env)]
    pub env: EnvKind,
    /// Offline dataset file; when omitted a default-size dataset is
    /// generated in memory with --data-seed
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Checkpoint output path
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with any subset of training fields (nested objects merge)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    /// Training-curve CSV (default: "<out>.log.csv")
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Decision-time knobs accepted by eval-like commands; unset flags fall
/// back to the config file, then to built-in defaults.
#[derive(Debug, Clone, Args)]
pub struct InferenceFlags {
    /// Candidate budget N (sampled proposals; the anchor is extra)
    #[arg(long, short = 'N')]
    pub n: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub wp_end: Option<f64>,
    #[arg(long, alias = "k-smooth")]
    pub ksmooth: Option<usize>,
    /// cosine | constant
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<WpSchedule>,
    /// Proposal source: actor | behavior
    #[arg(long, value_parser = parse_source)]
    pub source: Option<CandidateSource>,
    /// zscore | raw
    #[arg(long, value_parser = parse_support_mode)]
    pub support_mode: Option<SupportMode>,
}

impl InferenceFlags {
    fn apply(&self, cfg: &mut InferenceConfig) {
        if let Some(n) = self.n {
            cfg.num_samples = n;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.wp_end {
            cfg.wp_end = v;
        }
        if let Some(v) = self.ksmooth {
            cfg.k_smooth = v;
        }
        if let Some(v) = self.schedule {
            cfg.schedule = v;
        }
        if let Some(v) = self.source {
            cfg.source = v;
        }
        if let Some(v) = self.support_mode {
            cfg.support_mode = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Episode count (default: 50 bandit, 20 maze)
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with any subset of inference fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: InferenceFlags,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Std of zero-mean noise injected into critic head 0 (stress audit)
    #[arg(long, default_value_t = 0.0)]
    pub stress_noise: f64,
    /// Append one metrics row to this CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a JSON-lines trace (config record first, then one per step)
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Long-format CSV; cells append as they finish
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated candidate budgets
    #[arg(long, default_value = "1,64,1024")]
    pub n_grid: String,
    #[arg(long, default_value = "1.0")]
    pub lambda_grid: String,
    #[arg(long, default_value = "0.4")]
    pub wp_end_grid: String,
    /// Comma-separated seeds (GEM_SEED collapses this to one seed)
    #[arg(long, default_value = "0,1,2")]
    pub seeds: String,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long, alias = "k-smooth")]
    pub ksmooth: Option<usize>,
    #[arg(long, value_parser = parse_schedule)]
    pub schedule: Option<WpSchedule>,
    #[arg(long, value_parser = parse_source)]
    pub source: Option<CandidateSource>,
    #[arg(long, value_parser = parse_support_mode)]
    pub support_mode: Option<SupportMode>,
    #[arg(long, default_value_t = 0.0)]
    pub stress_noise: f64,
    /// Concurrent cell workers
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Checkpoint for the NLL-gap report (requires --data)
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Max transitions used for the gap estimate
    #[arg(long, default_value_t = 2048)]
    pub samples: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the extreme-value table instead of the checkpoint report
    #[arg(long)]
    pub extreme_value: bool,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Comma-separated candidate budgets for the extreme-value table
    #[arg(long, default_value = "0,1,64,1024,2048")]
    pub budgets: String,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    /// Pairwise correlation of the simulated critic errors
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Comma-separated variant names (default: all seven)
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: InferenceFlags,
    #[arg(long, default_value_t = 0.0)]
    pub stress_noise: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "1,64,1024,2048")]
    pub n_grid: String,
    /// Decisions timed per budget
    #[arg(long, default_value_t = 1000)]
    pub decisions: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_env)]
    pub env: EnvKind,
    /// Transition count (default: 10k bandit, 20k maze)
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_env(s: &str) -> std::result::Result<EnvKind, String> {
    EnvKind::parse(s).ok_or_else(|| format!("unknown environment '{s}' (bandit | maze)"))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant '{s}' (one of: {})", names.join(", "))
    })
}

fn parse_schedule(s: &str) -> std::result::Result<WpSchedule, String> {
    match s {
        "cosine" => Ok(WpSchedule::Cosine),
        "constant" => Ok(WpSchedule::Constant),
        _ => Err(format!("unknown schedule '{s}' (cosine | constant)")),
    }
}

fn parse_source(s: &str) -> std::result::Result<CandidateSource, String> {
    CandidateSource::parse(s).ok_or_else(|| format!("unknown source '{s}' (actor | behavior)"))
}

fn parse_support_mode(s: &str) -> std::result::Result<SupportMode, String> {
    match s {
        "zscore" => Ok(SupportMode::Zscore),
        "raw" => Ok(SupportMode::Raw),
        _ => Err(format!("unknown support mode '{s}' (zscore | raw)")),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<T>()
                .map_err(|_| GemError::Config(format!("bad {what} entry '{part}'")))?,
        );
    }
    if out.is_empty() {
        return Err(GemError::Config(format!("{what} list is empty")));
    }
    Ok(out)
}

/// `GEM_SEED` > `--seed` > fallback.
fn resolve_seed(flag: Option<u64>, fallback: u64) -> Result<u64> {
    if let Ok(raw) = std::env::var("GEM_SEED") {
        return raw.trim().parse::<u64>().map_err(|_| {
            GemError::Config(format!("GEM_SEED must be an unsigned integer, got '{raw}'"))
        });
    }
    Ok(flag.unwrap_or(fallback))
}

/// First 12 hex chars of the SHA-256 of the resolved config JSON.
pub fn config_hash(resolved: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(resolved).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// `<path><suffix>`, keeping the original extension in place.
fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Deep-merges a partial JSON config file over `base` (objects merge
/// recursively, everything else replaces).
fn load_json_config<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GemError::Config(format!("config file {}: {e}", path.display())))?;
    let patch: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| GemError::Config(format!("config file {}: {e}", path.display())))?;
    let mut value = serde_json::to_value(base)?;
    merge_json(&mut value, patch);
    serde_json::from_value(value)
        .map_err(|e| GemError::Config(format!("config file {}: {e}", path.display())))
}

fn merge_json(dst: &mut serde_json::Value, src: serde_json::Value) {
    match (dst, src) {
        (serde_json::Value::Object(d), serde_json::Value::Object(s)) => {
            for (k, v) in s {
                merge_json(d.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (d, s) => *d = s,
    }
}

fn write_config_sidecar(out: &Path, resolved: &serde_json::Value) -> Result<()> {
    let path = with_suffix(out, ".config.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, resolved)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Append-mode CSV writer; the header row is written only when the file
/// is new.
fn open_csv(path: &Path) -> Result<csv::Writer<File>> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(!exists).from_writer(file))
}

/// One evaluation result in long format. Schema is shared by `eval`,
/// `sweep`, and `ablate` so their CSVs concatenate cleanly.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub env: String,
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
    pub n: usize,
    pub lambda: f64,
    pub wp_end: f64,
    pub k_smooth: usize,
    pub schedule: String,
    pub source: String,
    pub support_mode: String,
    pub stress_noise: f64,
    pub episodes: usize,
    pub raw_return_mean: f64,
    pub raw_return_std: f64,
    pub normalized_score: f64,
    pub violation_rate: f64,
    pub mean_collapse: f64,
    pub audited_steps: usize,
    pub steps_per_sec: f64,
    /// "ok" or the per-cell error message (sweeps keep going)
    pub status: String,
    /// Resolved config JSON for this row
    pub config: String,
}

#[derive(Debug, Clone)]
struct EvalRequest {
    kind: EnvKind,
    cfg: InferenceConfig,
    episodes: usize,
    seed: u64,
    stress_noise: f64,
}

impl EvalRequest {
    fn resolved_config(&self, artifacts: &Artifacts) -> serde_json::Value {
        serde_json::json!({
            "env": self.kind.name(),
            "episodes": self.episodes,
            "stress_noise": self.stress_noise,
            "inference": self.cfg,
            "train": artifacts.meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
        })
    }
}

fn run_eval(
    artifacts: &Artifacts,
    req: &EvalRequest,
    trace: Option<&mut dyn FnMut(&TraceStep)>,
) -> (EvalReport, MetricsRow) {
    let env = req.kind.build();
    let mut policy = GemPolicy::new(
        artifacts.actor.clone(),
        artifacts.behavior.clone(),
        artifacts.critics.clone(),
        req.cfg.clone(),
        child_seed(req.seed, 0xA1),
    );
    if req.stress_noise > 0.0 {
        policy.stress_sd = Some(req.stress_noise);
    }
    let report =
        evaluate_policy_traced(env.as_ref(), &mut policy, req.episodes, child_seed(req.seed, 0xE7), trace);
    let resolved = req.resolved_config(artifacts);
    let row = MetricsRow {
        env: req.kind.name().to_string(),
        seed: req.seed,
        config_hash: config_hash(&resolved),
        variant: req.cfg.variant.name().to_string(),
        n: req.cfg.num_samples,
        lambda: req.cfg.lambda,
        wp_end: req.cfg.wp_end,
        k_smooth: req.cfg.k_smooth,
        schedule: match req.cfg.schedule {
            WpSchedule::Cosine => "cosine".into(),
            WpSchedule::Constant => "constant".into(),
        },
        source: req.cfg.source.name().to_string(),
        support_mode: match req.cfg.support_mode {
            SupportMode::Zscore => "zscore".into(),
            SupportMode::Raw => "raw".into(),
        },
        stress_noise: req.stress_noise,
        episodes: req.episodes,
        raw_return_mean: report.raw_return_mean,
        raw_return_std: report.raw_return_std,
        normalized_score: report.normalized_score,
        violation_rate: report.violation_rate,
        mean_collapse: report.mean_collapse,
        audited_steps: report.audited_steps,
        steps_per_sec: report.steps_per_sec,
        status: "ok".into(),
        config: resolved.to_string(),
    };
    (report, row)
}

fn load_artifacts(path: &Path) -> Result<Artifacts> {
    Artifacts::load(path)
        .map_err(|e| GemError::Config(format!("checkpoint {}: {e}", path.display())))
}

/// Inference config for eval-like commands: defaults <- config file <-
/// flags (plus the variant flag).
fn eval_inference_config(
    config: Option<&Path>,
    knobs: &InferenceFlags,
    variant: Option<Variant>,
) -> Result<InferenceConfig> {
    let mut cfg = InferenceConfig::default();
    if let Some(path) = config {
        cfg = load_json_config(&cfg, path)?;
    }
    knobs.apply(&mut cfg);
    if let Some(v) = variant {
        cfg.variant = v;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Profile(args) => cmd_profile(args),
        Command::GenData(args) => cmd_gen_data(args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                GemError::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            }
        }
    }
}

/// Entry point for the binary: parse (clap exits 2 on usage errors), run,
/// exit with the command's code.
pub fn main() -> ! {
    let cli = Cli::parse();
    std::process::exit(run(cli))
}

#[derive(Debug, Serialize)]
struct TrainLogCsvRow<'a> {
    env: &'a str,
    seed: u64,
    config_hash: &'a str,
    step: usize,
    critic_loss: f64,
    value_loss: f64,
    actor_loss: f64,
    gate_entropy: f64,
    mean_guidance_weight: f64,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kind = args.env;
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        cfg = load_json_config(&cfg, path)?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.seed = resolve_seed(Some(cfg.seed), cfg.seed)?;
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.pretrain_steps {
        cfg.pretrain_steps = v;
    }
    if let Some(v) = args.heads {
        cfg.num_heads = v;
    }
    if let Some(v) = args.components {
        cfg.num_components = v;
    }

    let dataset = match &args.data {
        Some(path) if path.exists() => OfflineDataset::load(path)?,
        Some(path) => {
            return Err(GemError::Config(format!(
                "dataset {} not found (generate it with `gem gen-data`)",
                path.display()
            )))
        }
        None => generate_dataset(kind, kind.default_dataset_size(), args.data_seed)?,
    };
    if dataset.env != kind.name() {
        return Err(GemError::Config(format!(
            "dataset was generated for '{}' but --env is '{}'",
            dataset.env,
            kind.name()
        )));
    }

    let resolved = serde_json::json!({"env": kind.name(), "train": cfg});
    let hash = config_hash(&resolved);
    let out = train(&dataset, &cfg)?;
    out.artifacts.save(&args.out)?;
    write_config_sidecar(&args.out, &resolved)?;

    let log_path = args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.csv"));
    {
        let mut w = open_csv(&log_path)?;
        for row in &out.log {
            w.serialize(TrainLogCsvRow {
                env: kind.name(),
                seed: cfg.seed,
                config_hash: &hash,
                step: row.step,
                critic_loss: row.critic_loss,
                value_loss: row.value_loss,
                actor_loss: row.actor_loss,
                gate_entropy: row.gate_entropy,
                mean_guidance_weight: row.mean_guidance_weight,
            })?;
        }
        w.flush()?;
    }
    write_config_sidecar(&log_path, &resolved)?;

    let summary = serde_json::json!({
        "env": kind.name(),
        "seed": cfg.seed,
        "config_hash": hash,
        "steps": cfg.steps,
        "transitions": dataset.len(),
        "checkpoint": args.out.display().to_string(),
        "log": log_path.display().to_string(),
        "pretrain_final_nll": out.pretrain_curve.last().map(|(_, v)| *v),
        "final": out.log.last().map(|r| {
            serde_json::json!({
                "critic_loss": r.critic_loss,
                "value_loss": r.value_loss,
                "actor_loss": r.actor_loss,
            })
        }),
        "aborted": out.abort.is_some(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);

    if let Some(msg) = out.abort {
        return Err(GemError::Numerical(format!(
            "training aborted ({msg}); last finite checkpoint saved to {}",
            args.out.display()
        )));
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let artifacts = load_artifacts(&args.ckpt)?;
    let kind = artifacts.env_kind()?;
    let cfg = eval_inference_config(args.config.as_deref(), &args.knobs, args.variant)?;
    let req = EvalRequest {
        kind,
        cfg,
        episodes: args.episodes.unwrap_or_else(|| kind.default_eval_episodes()),
        seed: resolve_seed(args.seed, 0)?,
        stress_noise: args.stress_noise,
    };

    let resolved = req.resolved_config(&artifacts);
    let mut trace_writer = match &args.trace {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            let head = serde_json::json!({
                "record": "config",
                "env": req.kind.name(),
                "seed": req.seed,
                "config_hash": config_hash(&resolved),
                "config": resolved,
            });
            serde_json::to_writer(&mut w, &head)?;
            w.write_all(b"\n")?;
            Some(w)
        }
        None => None,
    };
    let mut trace_err: Option<std::io::Error> = None;
    let mut trace_cb = |step: &TraceStep| {
        if let Some(w) = trace_writer.as_mut() {
            let line = serde_json::json!({"record": "step"});
            let mut obj = line;
            if let (serde_json::Value::Object(dst), Ok(serde_json::Value::Object(src))) =
                (&mut obj, serde_json::to_value(step))
            {
                dst.extend(src);
            }
            if let Err(e) = serde_json::to_writer(&mut *w, &obj).map_err(std::io::Error::from)
                .and_then(|()| w.write_all(b"\n"))
            {
                trace_err.get_or_insert(e);
            }
        }
    };
    let (report, row) = run_eval(
        &artifacts,
        &req,
        if args.trace.is_some() { Some(&mut trace_cb) } else { None },
    );
    if let Some(mut w) = trace_writer {
        w.flush()?;
    }
    if let Some(e) = trace_err {
        return Err(GemError::Io(e));
    }

    if let Some(out) = &args.out {
        let mut w = open_csv(out)?;
        w.serialize(&row)?;
        w.flush()?;
        write_config_sidecar(out, &resolved)?;
    }
    let summary = serde_json::json!({
        "env": row.env,
        "seed": row.seed,
        "config_hash": row.config_hash,
        "variant": row.variant,
        "n": row.n,
        "episodes": row.episodes,
        "raw_return_mean": report.raw_return_mean,
        "normalized_score": report.normalized_score,
        "violation_rate": report.violation_rate,
        "mean_collapse": report.mean_collapse,
        "steps_per_sec": report.steps_per_sec,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let artifacts = load_artifacts(&args.ckpt)?;
    let kind = artifacts.env_kind()?;
    let ns: Vec<usize> = parse_list(&args.n_grid, "n-grid")?;
    let lambdas: Vec<f64> = parse_list(&args.lambda_grid, "lambda-grid")?;
    let wp_ends: Vec<f64> = parse_list(&args.wp_end_grid, "wp-end-grid")?;
    let seeds: Vec<u64> = if std::env::var("GEM_SEED").is_ok() {
        vec![resolve_seed(None, 0)?]
    } else {
        parse_list(&args.seeds, "seeds")?
    };
    let episodes = args.episodes.unwrap_or_else(|| kind.default_eval_episodes());

    let mut base = InferenceConfig::default();
    if let Some(path) = &args.config {
        base = load_json_config(&base, path)?;
    }
    if let Some(v) = args.ksmooth {
        base.k_smooth = v;
    }
    if let Some(v) = args.schedule {
        base.schedule = v;
    }
    if let Some(v) = args.source {
        base.source = v;
    }
    if let Some(v) = args.support_mode {
        base.support_mode = v;
    }
    if let Some(v) = args.variant {
        base.variant = v;
    }

    let mut cells: Vec<EvalRequest> = Vec::new();
    for &seed in &seeds {
        for &n in &ns {
            for &lambda in &lambdas {
                for &wp_end in &wp_ends {
                    let mut cfg = base.clone();
                    cfg.num_samples = n;
                    cfg.lambda = lambda;
                    cfg.wp_end = wp_end;
                    cells.push(EvalRequest {
                        kind,
                        cfg,
                        episodes,
                        seed,
                        stress_noise: args.stress_noise,
                    });
                }
            }
        }
    }

    let progress_path = with_suffix(&args.out, ".progress");
    let done: HashSet<String> = if progress_path.exists() {
        std::fs::read_to_string(&progress_path)?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect()
    } else {
        HashSet::new()
    };

    let cell_key = |req: &EvalRequest, artifacts: &Artifacts| -> String {
        format!("{}:{}", config_hash(&req.resolved_config(artifacts)), req.seed)
    };
    let total = cells.len();
    let pending: Vec<(String, EvalRequest)> = cells
        .into_iter()
        .map(|req| (cell_key(&req, &artifacts), req))
        .filter(|(key, _)| !done.contains(key))
        .collect();
    let skipped = total - pending.len();

    let writer = open_csv(&args.out)?;
    let progress = OpenOptions::new().create(true).append(true).open(&progress_path)?;
    let sink = Mutex::new((writer, progress, 0usize, 0usize));
    let queue = Mutex::new(pending.into_iter());
    let io_error: Mutex<Option<GemError>> = Mutex::new(None);

    let workers = args.workers.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = { queue.lock().unwrap().next() };
                let Some((key, req)) = next else { break };
                let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                    run_eval(&artifacts, &req, None)
                }));
                let mut guard = sink.lock().unwrap();
                let (w, progress, ok_count, fail_count) = &mut *guard;
                let write_result = (|| -> Result<()> {
                    match outcome {
                        Ok((_, row)) => {
                            w.serialize(&row)?;
                            w.flush()?;
                            writeln!(progress, "{key}")?;
                            progress.flush()?;
                            *ok_count += 1;
                        }
                        Err(panic) => {
                            let msg = panic_message(&panic);
                            let resolved = req.resolved_config(&artifacts);
                            let row = failed_row(&req, &resolved, &msg);
                            w.serialize(&row)?;
                            w.flush()?;
                            *fail_count += 1;
                        }
                    }
                    Ok(())
                })();
                if let Err(e) = write_result {
                    io_error.lock().unwrap().get_or_insert(e);
                    break;
                }
            });
        }
    });
    if let Some(e) = io_error.into_inner().unwrap() {
        return Err(e);
    }

    let (_, _, ok_count, fail_count) = sink.into_inner().unwrap();
    let resolved = serde_json::json!({
        "env": kind.name(),
        "episodes": episodes,
        "stress_noise": args.stress_noise,
        "grid": {"n": ns, "lambda": lambdas, "wp_end": wp_ends, "seeds": seeds},
        "inference_base": base,
        "train": artifacts.meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
    });
    write_config_sidecar(&args.out, &resolved)?;
    let summary = serde_json::json!({
        "cells": total,
        "run": ok_count,
        "failed": fail_count,
        "skipped": skipped,
        "out": args.out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = panic.downcast_ref::<String>() {
        s.clone()
    } else {
        "cell panicked".to_string()
    }
}

fn failed_row(req: &EvalRequest, resolved: &serde_json::Value, msg: &str) -> MetricsRow {
    MetricsRow {
        env: req.kind.name().to_string(),
        seed: req.seed,
        config_hash: config_hash(resolved),
        variant: req.cfg.variant.name().to_string(),
        n: req.cfg.num_samples,
        lambda: req.cfg.lambda,
        wp_end: req.cfg.wp_end,
        k_smooth: req.cfg.k_smooth,
        schedule: match req.cfg.schedule {
            WpSchedule::Cosine => "cosine".into(),
            WpSchedule::Constant => "constant".into(),
        },
        source: req.cfg.source.name().to_string(),
        support_mode: match req.cfg.support_mode {
            SupportMode::Zscore => "zscore".into(),
            SupportMode::Raw => "raw".into(),
        },
        stress_noise: req.stress_noise,
        episodes: req.episodes,
        raw_return_mean: f64::NAN,
        raw_return_std: f64::NAN,
        normalized_score: f64::NAN,
        violation_rate: f64::NAN,
        mean_collapse: f64::NAN,
        audited_steps: 0,
        steps_per_sec: f64::NAN,
        status: msg.to_string(),
        config: resolved.to_string(),
    }
}

#[derive(Debug, Serialize)]
struct ExtremeValueCsvRow<'a> {
    env: &'a str,
    seed: u64,
    config_hash: &'a str,
    budget: usize,
    empirical_mean_max: f64,
    bound: f64,
    config: &'a str,
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let seed = resolve_seed(args.seed, 0)?;
    if args.extreme_value {
        let budgets: Vec<usize> = parse_list(&args.budgets, "budgets")?;
        let rows = extreme_value_sim(args.sigma, &budgets, args.reps, args.rho, seed);
        let resolved = serde_json::json!({
            "mode": "extreme_value",
            "sigma": args.sigma,
            "budgets": budgets,
            "reps": args.reps,
            "rho": args.rho,
        });
        let hash = config_hash(&resolved);
        let config_str = resolved.to_string();
        if let Some(out) = &args.out {
            let mut w = open_csv(out)?;
            for r in &rows {
                w.serialize(ExtremeValueCsvRow {
                    env: "synthetic",
                    seed,
                    config_hash: &hash,
                    budget: r.budget,
                    empirical_mean_max: r.mean_max,
                    bound: r.bound,
                    config: &config_str,
                })?;
            }
            w.flush()?;
            write_config_sidecar(out, &resolved)?;
        }
        let report = serde_json::json!({
            "mode": "extreme_value",
            "seed": seed,
            "config_hash": hash,
            "sigma": args.sigma,
            "rho": args.rho,
            "reps": args.reps,
            "table": rows.iter().map(|r| serde_json::json!({
                "budget": r.budget,
                "empirical_mean_max": r.mean_max,
                "bound": r.bound,
            })).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }

    let ckpt = args.ckpt.as_ref().ok_or_else(|| {
        GemError::Config("diagnose needs --ckpt and --data (or --extreme-value)".into())
    })?;
    let data = args.data.as_ref().ok_or_else(|| {
        GemError::Config("the NLL-gap report needs --data with the fitted dataset".into())
    })?;
    let artifacts = load_artifacts(ckpt)?;
    let dataset = OfflineDataset::load(data)?;
    let n = dataset.len().min(args.samples.max(1));
    let states = &dataset.states[..n];
    let actions = &dataset.actions[..n];

    let behavior_gap = nll_gap_dataset(artifacts.behavior.model(), states, actions);
    let actor_gap = nll_gap_dataset(&artifacts.actor, states, actions);
    let gate_entropy: f64 = states
        .iter()
        .map(|s| crate::actor::gate_entropy(&artifacts.actor, s))
        .sum::<f64>()
        / n as f64;

    let resolved = serde_json::json!({
        "mode": "nll_gap",
        "env": artifacts.env_kind()?.name(),
        "samples": n,
        "train": artifacts.meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
    });
    let report = serde_json::json!({
        "mode": "nll_gap",
        "env": artifacts.env_kind()?.name(),
        "seed": seed,
        "config_hash": config_hash(&resolved),
        "samples": n,
        "behavior": {
            "components": artifacts.behavior.model().config().k,
            "frozen": artifacts.behavior.is_frozen(),
            "nll_gmm": behavior_gap.nll_gmm,
            "nll_top1": behavior_gap.nll_top1,
            "gap": behavior_gap.gap,
        },
        "actor": {
            "components": artifacts.actor.config().k,
            "nll_gmm": actor_gap.nll_gmm,
            "nll_top1": actor_gap.nll_top1,
            "gap": actor_gap.gap,
            "mean_gate_entropy": gate_entropy,
        },
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        let mut w = BufWriter::new(File::create(out)?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let artifacts = load_artifacts(&args.ckpt)?;
    let kind = artifacts.env_kind()?;
    let variants: Vec<Variant> = match &args.variants {
        Some(list) => {
            let mut out = Vec::new();
            for name in list.split(',') {
                let name = name.trim();
                out.push(Variant::parse(name).ok_or_else(|| {
                    GemError::Config(format!("unknown variant '{name}'"))
                })?);
            }
            out
        }
        None => Variant::ALL.to_vec(),
    };
    let base = eval_inference_config(args.config.as_deref(), &args.knobs, None)?;
    let seed = resolve_seed(args.seed, 0)?;
    let episodes = args.episodes.unwrap_or_else(|| kind.default_eval_episodes());

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.variant = v;
        let req =
            EvalRequest { kind, cfg, episodes, seed, stress_noise: args.stress_noise };
        let (report, row) = run_eval(&artifacts, &req, None);
        summary.push(serde_json::json!({
            "variant": v.name(),
            "normalized_score": report.normalized_score,
            "violation_rate": report.violation_rate,
            "mean_collapse": report.mean_collapse,
        }));
        rows.push((req, row));
    }
    if let Some(out) = &args.out {
        let mut w = open_csv(out)?;
        for (_, row) in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
        let resolved = serde_json::json!({
            "env": kind.name(),
            "episodes": episodes,
            "stress_noise": args.stress_noise,
            "inference_base": base,
            "variants": rows.iter().map(|(r, _)| r.cfg.variant.name()).collect::<Vec<_>>(),
            "train": artifacts.meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
        });
        write_config_sidecar(out, &resolved)?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "env": kind.name(),
            "seed": seed,
            "episodes": episodes,
            "stress_noise": args.stress_noise,
            "variants": summary,
        }))?
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ProfileCsvRow<'a> {
    env: &'a str,
    seed: u64,
    config_hash: &'a str,
    n: usize,
    decisions: usize,
    latency_mean_ms: f64,
    latency_std_ms: f64,
    steps_per_sec: f64,
    candidate_bytes: usize,
    model_bytes: usize,
    config: &'a str,
}

fn cmd_profile(args: ProfileArgs) -> Result<()> {
    let artifacts = load_artifacts(&args.ckpt)?;
    let kind = artifacts.env_kind()?;
    let ns: Vec<usize> = parse_list(&args.n_grid, "n-grid")?;
    let seed = resolve_seed(args.seed, 0)?;
    if args.decisions == 0 {
        return Err(GemError::Config("profile needs at least one decision per budget".into()));
    }

    let env = kind.build();
    let action_dim = artifacts.action_dim();
    let model_bytes = 8
        * (artifacts.actor.param_len()
            + artifacts.behavior.model().param_len()
            + 2 * artifacts.critics.num_heads() * artifacts.critics.head_param_len()
            + artifacts.value.param_len());

    // one fixed pool of probe states for all budgets
    use rand::SeedableRng;
    let mut state_rng = rand_chacha::ChaCha8Rng::seed_from_u64(child_seed(seed, 0xF0));
    let states: Vec<Vec<f64>> =
        (0..args.decisions).map(|_| env.reset(&mut state_rng)).collect();

    let resolved = serde_json::json!({
        "mode": "profile",
        "env": kind.name(),
        "n_grid": ns,
        "decisions": args.decisions,
        "train": artifacts.meta.get("config").cloned().unwrap_or(serde_json::Value::Null),
    });
    let hash = config_hash(&resolved);
    let config_str = resolved.to_string();

    let mut table = Vec::new();
    for &n in &ns {
        let cfg = InferenceConfig { num_samples: n, ..InferenceConfig::default() };
        let mut policy = GemPolicy::new(
            artifacts.actor.clone(),
            artifacts.behavior.clone(),
            artifacts.critics.clone(),
            cfg,
            child_seed(seed, 0xA1),
        );
        let mut lat = Vec::with_capacity(args.decisions);
        for (i, s) in states.iter().enumerate() {
            policy.begin_episode(i as u64);
            let t0 = Instant::now();
            let _ = policy.decide(s, 1, env.horizon());
            lat.push(t0.elapsed().as_secs_f64());
        }
        let mean = lat.iter().sum::<f64>() / lat.len() as f64;
        let var = lat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lat.len() as f64;
        table.push(ProfileCsvRow {
            env: kind.name(),
            seed,
            config_hash: &hash,
            n,
            decisions: args.decisions,
            latency_mean_ms: mean * 1e3,
            latency_std_ms: var.sqrt() * 1e3,
            steps_per_sec: if mean > 0.0 { 1.0 / mean } else { f64::INFINITY },
            candidate_bytes: (n + 1) * action_dim * 8,
            model_bytes,
            config: &config_str,
        });
    }

    if let Some(out) = &args.out {
        let mut w = open_csv(out)?;
        for row in &table {
            w.serialize(row)?;
        }
        w.flush()?;
        write_config_sidecar(out, &resolved)?;
    }
    let report = serde_json::json!({
        "env": kind.name(),
        "seed": seed,
        "config_hash": hash,
        "decisions_per_budget": args.decisions,
        "model_bytes": model_bytes,
        "table": table.iter().map(|r| serde_json::json!({
            "n": r.n,
            "latency_mean_ms": r.latency_mean_ms,
            "latency_std_ms": r.latency_std_ms,
            "steps_per_sec": r.steps_per_sec,
            "candidate_bytes": r.candidate_bytes,
        })).collect::<Vec<_>>(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let kind = args.env;
    let n = args.n.unwrap_or_else(|| kind.default_dataset_size());
    let seed = resolve_seed(args.seed, 0)?;
    let ds = generate_dataset(kind, n, seed)?;
    ds.save(&args.out)?;
    let summary = serde_json::json!({
        "env": kind.name(),
        "seed": seed,
        "transitions": ds.len(),
        "state_dim": ds.state_dim,
        "action_dim": ds.action_dim,
        "out": args.out.display().to_string(),
        "goal_transitions": ds.dones.iter().filter(|d| **d == 1.0).count(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = serde_json::json!({"lambda": 1.0, "n": 64});
        let b = serde_json::json!({"lambda": 1.0, "n": 64});
        let c = serde_json::json!({"lambda": 2.0, "n": 64});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 12);
        assert!(config_hash(&a).chars().all(|ch| ch.is_ascii_hexdigit()));
    }

    #[test]
    fn json_merge_is_recursive() {
        let mut base = serde_json::json!({
            "steps": 100,
            "inference": {"lambda": 1.0, "wp_end": 0.4},
        });
        merge_json(
            &mut base,
            serde_json::json!({"inference": {"lambda": 2.5}, "lr": 0.01}),
        );
        assert_eq!(base["steps"], 100);
        assert_eq!(base["inference"]["lambda"], 2.5);
        assert_eq!(base["inference"]["wp_end"], 0.4);
        assert_eq!(base["lr"], 0.01);
    }

    #[test]
    fn list_parsing_rejects_garbage() {
        let ok: Vec<usize> = parse_list("1, 64,1024", "n").unwrap();
        assert_eq!(ok, vec![1, 64, 1024]);
        assert!(parse_list::<usize>("1,x", "n").is_err());
        assert!(parse_list::<usize>("", "n").is_err());
    }

    #[test]
    fn suffix_paths_keep_the_original_name() {
        let p = with_suffix(Path::new("runs/sweep.csv"), ".progress");
        assert_eq!(p, PathBuf::from("runs/sweep.csv.progress"));
    }

    #[test]
    fn cli_parses_the_documented_subcommands() {
        let cli = Cli::try_parse_from([
            "gem", "eval", "--ckpt", "x.ckpt", "-N", "64", "--lambda", "1.5",
            "--variant", "no_pw", "--support-mode", "raw",
        ])
        .unwrap();
        match cli.command {
            Command::Eval(args) => {
                assert_eq!(args.knobs.n, Some(64));
                assert_eq!(args.knobs.lambda, Some(1.5));
                assert_eq!(args.variant, Some(Variant::NoPw));
                assert_eq!(args.knobs.support_mode, Some(SupportMode::Raw));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["gem", "eval", "--ckpt", "x", "--variant", "nope"]).is_err());
        assert!(Cli::try_parse_from(["gem", "does-not-exist"]).is_err());
    }
}
