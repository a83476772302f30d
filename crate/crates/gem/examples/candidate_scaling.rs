//! How performance and the safety audits move as the candidate budget N
//! grows. More candidates means a higher max over noisy Q estimates, so
//! an unguarded argmax would drift off-support; the LCB and the support
//! term are what keep the violation rate flat.
//!
//! ```bash
//! cargo run --release --example candidate_scaling
//! ```

use gem::child_seed;
use gem::envs::{evaluate_policy, generate_dataset, EnvKind};
use gem::inference::GemPolicy;
use gem::train::{train, TrainConfig};

fn main() -> gem::Result<()> {
    let kind = EnvKind::Bandit;
    let dataset = generate_dataset(kind, 8000, 0)?;
    let cfg = TrainConfig {
        seed: 1,
        steps: 3000,
        batch_size: 128,
        hidden: vec![32, 32],
        lr: 1e-3,
        pretrain_steps: 1500,
        log_every: 1000,
        ..TrainConfig::default()
    };
    println!("training ...");
    let out = train(&dataset, &cfg)?;
    let a = out.artifacts;
    let env = kind.build();

    println!("\n{:>6} {:>12} {:>12} {:>12} {:>12}", "N", "normalized", "violation", "collapse", "steps/s");
    for n in [0usize, 1, 4, 16, 64, 256, 1024] {
        let mut icfg = cfg.inference.clone();
        icfg.num_samples = n;
        let mut policy = GemPolicy::new(
            a.actor.clone(),
            a.behavior.clone(),
            a.critics.clone(),
            icfg,
            child_seed(7, 0xA1),
        );
        let report = evaluate_policy(env.as_ref(), &mut policy, 50, child_seed(7, 0xE7));
        println!(
            "{:>6} {:>12.2} {:>12.4} {:>12.4} {:>12.0}",
            n, report.normalized_score, report.violation_rate, report.mean_collapse,
            report.steps_per_sec
        );
    }
    println!("\n(N = 0 is the anchor alone: the actor's dominant mode mean.)");
    Ok(())
}
