//! Decision-time cost model: wall-clock latency per decision and the
//! memory footprint as the candidate budget grows. Candidate memory is
//! (N+1) * action_dim * 8 bytes; latency is dominated by the N+1 critic
//! ensemble forward passes.
//!
//! ```bash
//! cargo run --release --example profile_decision
//! ```

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gem::child_seed;
use gem::envs::{generate_dataset, EnvKind};
use gem::inference::{GemPolicy, InferenceConfig};
use gem::train::{train, TrainConfig};

fn main() -> gem::Result<()> {
    let kind = EnvKind::Bandit;
    let dataset = generate_dataset(kind, 4000, 0)?;
    let cfg = TrainConfig {
        seed: 8,
        steps: 500,
        batch_size: 128,
        hidden: vec![32, 32],
        lr: 1e-3,
        pretrain_steps: 500,
        log_every: 250,
        ..TrainConfig::default()
    };
    println!("training a small model (quality does not matter for timing) ...");
    let out = train(&dataset, &cfg)?;
    let a = out.artifacts;
    let env = kind.build();

    let model_bytes = 8
        * (a.actor.param_len()
            + a.behavior.model().param_len()
            + 2 * a.critics.num_heads() * a.critics.head_param_len()
            + a.value.param_len());
    println!("model buffers: {} bytes ({:.1} KiB)", model_bytes, model_bytes as f64 / 1024.0);

    let decisions = 300;
    let mut state_rng = ChaCha8Rng::seed_from_u64(child_seed(0, 0xF0));
    let states: Vec<Vec<f64>> = (0..decisions).map(|_| env.reset(&mut state_rng)).collect();

    println!(
        "\n{:>6} {:>14} {:>12} {:>14} {:>16}",
        "N", "mean ms", "std ms", "decisions/s", "candidate bytes"
    );
    for n in [1usize, 16, 64, 256, 1024, 2048] {
        let icfg = InferenceConfig { num_samples: n, ..InferenceConfig::default() };
        let mut policy = GemPolicy::new(
            a.actor.clone(),
            a.behavior.clone(),
            a.critics.clone(),
            icfg,
            child_seed(0, 0xA1),
        );
        let mut lat = Vec::with_capacity(decisions);
        for (i, s) in states.iter().enumerate() {
            policy.begin_episode(i as u64);
            let t0 = Instant::now();
            let _ = policy.decide(s, 1, env.horizon());
            lat.push(t0.elapsed().as_secs_f64());
        }
        let mean = lat.iter().sum::<f64>() / lat.len() as f64;
        let var = lat.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / lat.len() as f64;
        println!(
            "{:>6} {:>14.4} {:>12.4} {:>14.0} {:>16}",
            n,
            mean * 1e3,
            var.sqrt() * 1e3,
            1.0 / mean,
            (n + 1) * env.action_dim() * 8
        );
    }
    Ok(())
}
