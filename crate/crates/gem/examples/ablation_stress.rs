//! Ablation table under a corrupted critic: zero-mean noise with sd 0.5 is
//! injected into one ensemble head at decision time, then each scoring
//! variant is evaluated. The support term is what stands between a noisy
//! maximizer and off-distribution actions, so `no_pw` degrades hardest.
//!
//! ```bash
//! cargo run --release --example ablation_stress
//! ```

use gem::child_seed;
use gem::envs::{evaluate_policy, generate_dataset, EnvKind};
use gem::inference::{GemPolicy, Variant};
use gem::train::{train, TrainConfig};

fn main() -> gem::Result<()> {
    let kind = EnvKind::Bandit;
    let dataset = generate_dataset(kind, 8000, 0)?;
    let cfg = TrainConfig {
        seed: 2,
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

    for stress in [0.0, 0.5] {
        println!("\nstress noise sd = {stress}");
        println!(
            "{:>22} {:>12} {:>12} {:>12}",
            "variant", "normalized", "violation", "collapse"
        );
        for variant in Variant::ALL {
            let mut icfg = cfg.inference.clone();
            icfg.num_samples = 64;
            icfg.variant = variant;
            let mut policy = GemPolicy::new(
                a.actor.clone(),
                a.behavior.clone(),
                a.critics.clone(),
                icfg,
                child_seed(4, 0xA1),
            );
            if stress > 0.0 {
                policy.stress_sd = Some(stress);
            }
            let report = evaluate_policy(env.as_ref(), &mut policy, 50, child_seed(4, 0xE7));
            println!(
                "{:>22} {:>12.2} {:>12.4} {:>12.4}",
                variant.name(),
                report.normalized_score,
                report.violation_rate,
                report.mean_collapse
            );
        }
    }
    Ok(())
}
