//! The support-weight frontier: sweeping `wp_end` trades raw score against
//! off-support risk. Run under critic stress so the risk is visible; the
//! violation rate should fall monotonically as the support term gets more
//! weight.
//!
//! ```bash
//! cargo run --release --example support_frontier
//! ```

use gem::child_seed;
use gem::envs::{evaluate_policy, generate_dataset, EnvKind};
use gem::inference::GemPolicy;
use gem::train::{train, TrainConfig};

fn main() -> gem::Result<()> {
    let kind = EnvKind::Bandit;
    let dataset = generate_dataset(kind, 8000, 0)?;
    let cfg = TrainConfig {
        seed: 5,
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

    println!("\nstress noise sd = 0.5, N = 256");
    println!("{:>8} {:>12} {:>12} {:>12}", "wp_end", "normalized", "violation", "collapse");
    for wp_end in [0.0, 0.2, 0.4, 1.0] {
        let mut icfg = cfg.inference.clone();
        icfg.num_samples = 256;
        icfg.wp_end = wp_end;
        let mut policy = GemPolicy::new(
            a.actor.clone(),
            a.behavior.clone(),
            a.critics.clone(),
            icfg,
            child_seed(6, 0xA1),
        );
        policy.stress_sd = Some(0.5);
        let report = evaluate_policy(env.as_ref(), &mut policy, 50, child_seed(6, 0xE7));
        println!(
            "{:>8.1} {:>12.2} {:>12.4} {:>12.4}",
            wp_end, report.normalized_score, report.violation_rate, report.mean_collapse
        );
    }
    Ok(())
}
