//! One-step bandit with two separated reward bumps.
//!
//! The mode centers move affinely with the state, the bumps have values
//! 1.0 and 0.8, and the scripted behavior mixture covers both modes with
//! a slight tilt toward the better one. Averaging the two modes lands in
//! a reward desert, which is exactly the failure a unimodal actor
//! reproduces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Env, OfflineDataset, ScoreAnchors, StepOutcome};
use crate::error::Result;

/// Squared-distance divisor in each reward bump (`2 * 0.1^2`).
const BUMP_DIV: f64 = 0.02;
/// Bump heights; the asymmetry gives guidance a value reason to prefer
/// mode 1 even though both modes are in-support.
const MODE_VALUES: [f64; 2] = [1.0, 0.8];
/// Behavior mixture: slight tilt toward the better mode.
pub const BEHAVIOR_WEIGHTS: [f64; 2] = [0.55, 0.45];
pub const BEHAVIOR_SIGMA: f64 = 0.1;

const GRID_POINTS: usize = 201;

#[derive(Debug, Clone)]
pub struct BimodalBandit {
    anchors: ScoreAnchors,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeValue {
    pub action: [f64; 2],
    pub value: f64,
}

impl Default for BimodalBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl BimodalBandit {
    pub fn new() -> Self {
        let mut env = BimodalBandit { anchors: ScoreAnchors { random: 0.0, expert: 0.0 } };
        // fixed-seed Monte Carlo anchors, estimated once per construction
        let mut rng = ChaCha8Rng::seed_from_u64(0x_ba2d_17_a2c4_0125);
        let mut random_sum = 0.0;
        for _ in 0..200_000 {
            let s = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let a = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            random_sum += env.reward(&s, &a);
        }
        let mut expert_sum = 0.0;
        for _ in 0..20_000 {
            let s = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let (m1, _) = env.mode_centers(&s);
            expert_sum += env.reward(&s, &m1);
        }
        env.anchors =
            ScoreAnchors { random: random_sum / 200_000.0, expert: expert_sum / 20_000.0 };
        env
    }

    /// Mode centers as affine functions of the state; separation per
    /// coordinate is `2 * (0.5 + 0.1 s_d)` which stays in `[0.8, 1.2]`.
    pub fn mode_centers(&self, s: &[f64]) -> ([f64; 2], [f64; 2]) {
        let m1 = [0.5 + 0.1 * s[0], 0.5 + 0.1 * s[1]];
        ([m1[0], m1[1]], [-m1[0], -m1[1]])
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        let (m1, m2) = self.mode_centers(s);
        let d1 = (a[0] - m1[0]).powi(2) + (a[1] - m1[1]).powi(2);
        let d2 = (a[0] - m2[0]).powi(2) + (a[1] - m2[1]).powi(2);
        MODE_VALUES[0] * (-d1 / BUMP_DIV).exp() + MODE_VALUES[1] * (-d2 / BUMP_DIV).exp()
    }

    /// Brute-force oracle: best grid action and value in each mode basin
    /// (nearest-center partition) over a 201x201 action grid.
    pub fn oracle_mode_values(&self, s: &[f64]) -> [ModeValue; 2] {
        let (m1, m2) = self.mode_centers(s);
        let mut best = [
            ModeValue { action: [0.0, 0.0], value: f64::NEG_INFINITY },
            ModeValue { action: [0.0, 0.0], value: f64::NEG_INFINITY },
        ];
        for i in 0..GRID_POINTS {
            let x = -1.0 + 2.0 * i as f64 / (GRID_POINTS - 1) as f64;
            for j in 0..GRID_POINTS {
                let y = -1.0 + 2.0 * j as f64 / (GRID_POINTS - 1) as f64;
                let a = [x, y];
                let d1 = (x - m1[0]).powi(2) + (y - m1[1]).powi(2);
                let d2 = (x - m2[0]).powi(2) + (y - m2[1]).powi(2);
                let basin = if d1 <= d2 { 0 } else { 1 };
                let v = self.reward(s, &a);
                if v > best[basin].value {
                    best[basin] = ModeValue { action: a, value: v };
                }
            }
        }
        best
    }

    /// Best grid value across both basins.
    pub fn oracle_grid_max(&self, s: &[f64]) -> f64 {
        let [a, b] = self.oracle_mode_values(s);
        a.value.max(b.value)
    }
}

impl Env for BimodalBandit {
    fn name(&self) -> &'static str {
        "bandit"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        1
    }

    fn anchors(&self) -> ScoreAnchors {
        self.anchors
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> StepOutcome {
        StepOutcome { next: s.to_vec(), reward: self.reward(s, a), done: true }
    }
}

/// Executes the better mode center exactly; raw return 1.0 per episode.
pub struct BanditOracle {
    env: BimodalBandit,
}

impl BanditOracle {
    pub fn new() -> Self {
        BanditOracle { env: BimodalBandit::new() }
    }
}

impl Default for BanditOracle {
    fn default() -> Self {
        Self::new()
    }
}

impl super::Policy for BanditOracle {
    fn begin_episode(&mut self, _episode: u64) {}

    fn act(&mut self, s: &[f64], _t: usize, _h: usize) -> (Vec<f64>, Option<super::StepAudit>) {
        let (m1, _) = self.env.mode_centers(s);
        (vec![m1[0], m1[1]], None)
    }
}

/// Scripted behavior: pick a mode with the tilted weights, add
/// `N(0, 0.1^2)` noise, clip to the box.
pub(super) fn generate(n: usize, seed: u64) -> Result<OfflineDataset> {
    let env = BimodalBandit::new();
    let mut rng = ChaCha8Rng::seed_from_u64(crate::child_seed(seed, 0xDA7A));
    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut next_states = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    for _ in 0..n {
        let s = env.reset(&mut rng);
        let (m1, m2) = env.mode_centers(&s);
        let center = if rng.random::<f64>() < BEHAVIOR_WEIGHTS[0] { m1 } else { m2 };
        let mut a = vec![0.0; 2];
        for d in 0..2 {
            let z: f64 = StandardNormal.sample(&mut rng);
            a[d] = (center[d] + BEHAVIOR_SIGMA * z).clamp(-1.0, 1.0);
        }
        let out = env.step(&s, &a, &mut rng);
        states.push(s);
        actions.push(a);
        rewards.push(out.reward);
        next_states.push(out.next);
        dones.push(1.0);
    }
    Ok(OfflineDataset {
        env: "bandit".into(),
        state_dim: 2,
        action_dim: 2,
        horizon: 1,
        states,
        actions,
        rewards,
        next_states,
        dones,
        meta: serde_json::json!({
            "generator": {"seed": seed, "transitions": n},
            "anchors": env.anchors(),
            "behavior_ground_truth": {
                "kind": "state_conditional_gaussian_mixture",
                "weights": BEHAVIOR_WEIGHTS,
                "sigma": BEHAVIOR_SIGMA,
                "mode1": "(0.5 + 0.1 s1, 0.5 + 0.1 s2)",
                "mode2": "-mode1",
            },
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{evaluate_policy, generate_dataset, EnvKind, Policy, RandomPolicy};

    #[test]
    fn reward_is_bounded_and_peaks_at_mode_one() {
        let env = BimodalBandit::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = env.reset(&mut rng);
            let a = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            let r = env.reward(&s, &a);
            assert!((0.0..=1.8).contains(&r));
        }
        let s = [0.3, -0.7];
        let (m1, m2) = env.mode_centers(&s);
        assert!((env.reward(&s, &m1) - 1.0).abs() < 1e-12);
        assert!((env.reward(&s, &m2) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn modes_stay_separated_and_midpoint_is_a_desert() {
        let env = BimodalBandit::new();
        for s in [[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], [-1.0, 1.0]] {
            let (m1, m2) = env.mode_centers(&s);
            for d in 0..2 {
                let sep = (m1[d] - m2[d]).abs();
                assert!((0.8..=1.2).contains(&sep), "separation {sep}");
            }
            let mid = [(m1[0] + m2[0]) / 2.0, (m1[1] + m2[1]) / 2.0];
            assert!(env.reward(&s, &mid) < 0.2);
        }
    }

    #[test]
    fn oracle_finds_both_basins() {
        let env = BimodalBandit::new();
        let s = [0.0, 0.0];
        let [b1, b2] = env.oracle_mode_values(&s);
        // modes at (0.5, 0.5) and (-0.5, -0.5) sit exactly on the grid
        assert!((b1.value - 1.0).abs() < 1e-12);
        assert!((b2.value - 0.8).abs() < 1e-12);
        assert!((b1.action[0] - 0.5).abs() < 1e-12);
        assert!((b2.action[0] + 0.5).abs() < 1e-12);
        assert_eq!(env.oracle_grid_max(&s), b1.value);
        // off-grid states: the grid best is within resolution slack
        let s = [0.137, -0.642];
        let (m1, _) = env.mode_centers(&s);
        assert!(env.oracle_grid_max(&s) > env.reward(&s, &m1) - 5e-3);
    }

    #[test]
    fn grid_oracle_dominates_sampled_candidates_at_zero_state() {
        let env = BimodalBandit::new();
        let s = [0.0, 0.0];
        let best = env.oracle_grid_max(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let a = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
            assert!(env.reward(&s, &a) <= best + 1e-12);
        }
    }

    #[test]
    fn anchors_are_sane() {
        let env = BimodalBandit::new();
        let a = env.anchors();
        assert!(a.random > 0.02 && a.random < 0.07, "random anchor {}", a.random);
        assert!((a.expert - 1.0).abs() < 1e-6, "expert anchor {}", a.expert);
        assert!(a.expert > a.random);
    }

    #[test]
    fn oracle_policy_scores_one_hundred_and_random_scores_zero() {
        let env = BimodalBandit::new();
        let mut oracle = BanditOracle::new();
        let rep = evaluate_policy(&env, &mut oracle, 50, 7);
        assert!((rep.raw_return_mean - 1.0).abs() < 1e-9);
        assert!((rep.normalized_score - 100.0).abs() < 0.5, "score {}", rep.normalized_score);
        assert_eq!(rep.audited_steps, 0);

        let mut random = RandomPolicy::new(2, 11);
        let rep = evaluate_policy(&env, &mut random, 200, 13);
        assert!(rep.normalized_score.abs() < 5.0, "score {}", rep.normalized_score);
    }

    #[test]
    fn dataset_covers_both_modes_with_the_tilt() {
        let ds = generate_dataset(EnvKind::Bandit, 4000, 17).unwrap();
        assert_eq!(ds.len(), 4000);
        let mut hi = 0usize;
        let mut lo = 0usize;
        for a in &ds.actions {
            if a[0] > 0.2 {
                hi += 1;
            } else if a[0] < -0.2 {
                lo += 1;
            }
        }
        let hi_frac = hi as f64 / ds.len() as f64;
        let lo_frac = lo as f64 / ds.len() as f64;
        assert!(hi_frac > 0.45 && hi_frac < 0.65, "mode-1 fraction {hi_frac}");
        assert!(lo_frac > 0.35 && lo_frac < 0.55, "mode-2 fraction {lo_frac}");
        assert!(ds.meta["behavior_ground_truth"]["sigma"].as_f64().unwrap() > 0.0);
        assert!(ds.meta["anchors"]["expert"].as_f64().unwrap() > 0.9);
    }

    #[test]
    fn single_transition_dataset_is_fine() {
        let ds = generate_dataset(EnvKind::Bandit, 1, 5).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.dones, vec![1.0]);
    }

    #[test]
    fn oracle_policy_trait_is_stateless_across_episodes() {
        let mut p = BanditOracle::new();
        p.begin_episode(0);
        let (a0, audit) = p.act(&[0.0, 0.0], 1, 1);
        assert_eq!(a0, vec![0.5, 0.5]);
        assert!(audit.is_none());
    }
}
