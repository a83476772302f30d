//! One decision, opened up: candidate construction, per-candidate scores,
//! and the final selection, printed as a table.
//!
//! ```bash
//! cargo run --release --example select_action
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gem::child_seed;
use gem::envs::{generate_dataset, EnvKind};
use gem::inference::{build_candidates, score_candidates, select, wp_value, InferenceConfig};
use gem::train::{train, TrainConfig};

fn main() -> gem::Result<()> {
    let dataset = generate_dataset(EnvKind::Bandit, 6000, 0)?;
    let cfg = TrainConfig {
        seed: 3,
        steps: 2000,
        batch_size: 128,
        hidden: vec![32, 32],
        lr: 1e-3,
        pretrain_steps: 1200,
        log_every: 500,
        ..TrainConfig::default()
    };
    println!("training a small model on the bandit ...");
    let out = train(&dataset, &cfg)?;
    let a = out.artifacts;

    let s = vec![0.2, -0.4];
    let icfg = InferenceConfig { num_samples: 12, ..InferenceConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(9, 0));

    // the episode clock drives the support weight; the bandit has
    // horizon 1, so a single step sits at the schedule's endpoint
    let w_p = wp_value(icfg.schedule, icfg.wp_end, 1, 1);
    println!("\nstate s = {s:?},  w_p = {w_p}");

    let set = build_candidates(&a.actor, &a.behavior, &s, &icfg, &mut rng);
    println!(
        "candidate set: {} actions (anchor at index {:?}, from actor component {:?})",
        set.actions.len(),
        set.anchor_index,
        set.anchor_component
    );

    let scored = score_candidates(&set, &a.critics, &a.behavior, &s, w_p, &icfg, None);
    println!("\nranked candidates (score = lcb + w_p * support_z):");
    println!(
        "  {:>4} {:>7} {:>18} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9}",
        "rank", "idx", "action", "q_mean", "q_std", "lcb", "log_b", "sup_z", "score"
    );
    for (rank, c) in scored.iter().enumerate() {
        let tag = if c.is_anchor { "*" } else { " " };
        println!(
            "  {:>4}{tag} {:>6} [{:>7.3},{:>7.3}] {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>9.4}",
            rank, c.index, c.action[0], c.action[1], c.q_mean, c.q_std, c.lcb, c.log_b,
            c.support_z, c.score
        );
    }

    let sel = select(&scored, icfg.k_smooth);
    println!("\nselected action: [{:.4}, {:.4}]", sel.action[0], sel.action[1]);
    println!("top-1 (pre-smoothing) support_z = {:.3}", sel.top1.support_z);

    let env = EnvKind::Bandit.build();
    let outcome = env.step(&s, &sel.action, &mut rng);
    println!("reward from the env: {:.4}", outcome.reward);
    Ok(())
}
