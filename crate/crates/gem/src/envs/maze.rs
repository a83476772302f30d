//! Point-mass maze with two corridors of different lengths.
//!
//! A vertical wall splits the box, passable above and below. The top
//! corridor is shorter, so under discounting the optimal branch is
//! value-distinguishable even though both reach the goal. The behavior
//! dataset mixes scripted controllers for both corridors, which makes
//! the conditional action distribution bimodal near the branch point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Env, OfflineDataset, Policy, ScoreAnchors, StepAudit, StepOutcome};
use crate::child_seed;
use crate::error::Result;

const DT: f64 = 0.1;
const VMAX: f64 = 0.35;
const START: [f64; 2] = [-0.8, 0.0];
const GOAL: [f64; 2] = [0.8, 0.0];
const GOAL_RADIUS: f64 = 0.15;
/// Wall occupies x in [-0.15, 0.15], y in [-0.55, 0.35]; gaps above and
/// below. The top gap is nearer the start-goal line, so the top corridor
/// is the short one.
const WALL_X: (f64, f64) = (-0.15, 0.15);
const WALL_Y: (f64, f64) = (-0.55, 0.35);
const HORIZON: usize = 100;

/// Behavior-policy action noise during dataset generation.
pub const BEHAVIOR_NOISE: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct PointMaze {
    anchors: ScoreAnchors,
}

impl Default for PointMaze {
    fn default() -> Self {
        Self::new()
    }
}

fn in_wall(p: &[f64; 2]) -> bool {
    p[0] >= WALL_X.0 && p[0] <= WALL_X.1 && p[1] >= WALL_Y.0 && p[1] <= WALL_Y.1
}

impl PointMaze {
    pub fn new() -> Self {
        let mut env = PointMaze { anchors: ScoreAnchors { random: 0.0, expert: 0.0 } };
        // fixed-seed Monte Carlo anchors
        let random = {
            let mut total = 0.0;
            let episodes = 1000;
            for ep in 0..episodes {
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(0x_3a7e_11, ep));
                let mut s = env.reset(&mut rng);
                for _ in 0..HORIZON {
                    let a = [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0];
                    let out = env.step(&s, &a, &mut rng);
                    total += out.reward;
                    s = out.next;
                    if out.done {
                        break;
                    }
                }
            }
            total / episodes as f64
        };
        let expert = {
            let mut total = 0.0;
            let episodes = 400;
            for ep in 0..episodes {
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(0x_3a7e_22, ep));
                let mut ctl = MazeController::new(MazeRoute::Top, 0.0, 0);
                ctl.begin_episode(ep);
                let mut s = env.reset(&mut rng);
                for t in 1..=HORIZON {
                    let (a, _) = ctl.act(&s, t, HORIZON);
                    let out = env.step(&s, &a, &mut rng);
                    total += out.reward;
                    s = out.next;
                    if out.done {
                        break;
                    }
                }
            }
            total / episodes as f64
        };
        env.anchors = ScoreAnchors { random, expert };
        env
    }
}

impl Env for PointMaze {
    fn name(&self) -> &'static str {
        "maze"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn anchors(&self) -> ScoreAnchors {
        self.anchors
    }

    /// State is `[px, py, vx, vy]`; start position jittered slightly.
    fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![
            START[0] + (rng.random::<f64>() - 0.5) * 0.1,
            START[1] + (rng.random::<f64>() - 0.5) * 0.1,
            0.0,
            0.0,
        ]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> StepOutcome {
        let mut v = [s[2], s[3]];
        let mut p = [s[0], s[1]];
        for d in 0..2 {
            let acc = a[d].clamp(-1.0, 1.0);
            v[d] = (v[d] + DT * acc).clamp(-VMAX, VMAX);
        }
        let mut cand = [p[0] + DT * v[0], p[1] + DT * v[1]];
        // the step length never exceeds the wall thickness, so a simple
        // endpoint test cannot tunnel through
        if in_wall(&cand) {
            v = [0.0, 0.0];
        } else {
            for d in 0..2 {
                if cand[d] > 1.0 || cand[d] < -1.0 {
                    cand[d] = cand[d].clamp(-1.0, 1.0);
                    v[d] = 0.0;
                }
            }
            p = cand;
        }
        let at_goal =
            ((p[0] - GOAL[0]).powi(2) + (p[1] - GOAL[1]).powi(2)).sqrt() <= GOAL_RADIUS;
        StepOutcome {
            next: vec![p[0], p[1], v[0], v[1]],
            reward: if at_goal { 1.0 } else { 0.0 },
            done: at_goal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MazeRoute {
    /// Short corridor above the wall.
    Top,
    /// Long corridor below the wall.
    Bottom,
}

impl MazeRoute {
    fn waypoints(&self) -> [[f64; 2]; 3] {
        match self {
            MazeRoute::Top => [[-0.35, 0.6], [0.35, 0.6], GOAL],
            MazeRoute::Bottom => [[-0.35, -0.8], [0.35, -0.8], GOAL],
        }
    }
}

/// Waypoint-following proportional controller, optionally noisy.
pub struct MazeController {
    route: MazeRoute,
    noise: f64,
    seed: u64,
    rng: ChaCha8Rng,
    waypoint: usize,
}

impl MazeController {
    pub fn new(route: MazeRoute, noise: f64, seed: u64) -> Self {
        MazeController {
            route,
            noise,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            waypoint: 0,
        }
    }
}

impl Policy for MazeController {
    fn begin_episode(&mut self, episode: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(child_seed(self.seed, episode));
        self.waypoint = 0;
    }

    fn act(&mut self, s: &[f64], _t: usize, _h: usize) -> (Vec<f64>, Option<StepAudit>) {
        let waypoints = self.route.waypoints();
        let p = [s[0], s[1]];
        let v = [s[2], s[3]];
        while self.waypoint + 1 < waypoints.len() {
            let w = waypoints[self.waypoint];
            let d = ((p[0] - w[0]).powi(2) + (p[1] - w[1]).powi(2)).sqrt();
            if d < 0.15 {
                self.waypoint += 1;
            } else {
                break;
            }
        }
        let w = waypoints[self.waypoint];
        let to = [w[0] - p[0], w[1] - p[1]];
        let dist = (to[0] * to[0] + to[1] * to[1]).sqrt().max(1e-9);
        let mut a = [0.0; 2];
        for d in 0..2 {
            let v_des = to[d] / dist * VMAX;
            a[d] = ((v_des - v[d]) / DT).clamp(-1.0, 1.0);
            if self.noise > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                a[d] = (a[d] + self.noise * z).clamp(-1.0, 1.0);
            }
        }
        (vec![a[0], a[1]], None)
    }
}

/// Behavior data: per episode flip a fair coin between the two corridor
/// controllers and add Gaussian action noise.
pub(super) fn generate(n: usize, seed: u64) -> Result<OfflineDataset> {
    let env = PointMaze::new();
    let mut states = Vec::with_capacity(n);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut next_states = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut route_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0xDA7A));
    let mut episode = 0u64;
    while rewards.len() < n {
        let route =
            if route_rng.random::<f64>() < 0.5 { MazeRoute::Top } else { MazeRoute::Bottom };
        let mut ctl = MazeController::new(route, BEHAVIOR_NOISE, child_seed(seed, 0xC0));
        ctl.begin_episode(episode);
        let mut env_rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0x_e000 + episode));
        let mut s = env.reset(&mut env_rng);
        for t in 1..=HORIZON {
            let (a, _) = ctl.act(&s, t, HORIZON);
            let out = env.step(&s, &a, &mut env_rng);
            states.push(s.clone());
            actions.push(a);
            rewards.push(out.reward);
            next_states.push(out.next.clone());
            dones.push(if out.done { 1.0 } else { 0.0 });
            s = out.next;
            if out.done || rewards.len() == n {
                break;
            }
        }
        episode += 1;
    }
    Ok(OfflineDataset {
        env: "maze".into(),
        state_dim: 4,
        action_dim: 2,
        horizon: HORIZON,
        states,
        actions,
        rewards,
        next_states,
        dones,
        meta: serde_json::json!({
            "generator": {"seed": seed, "transitions": n},
            "anchors": env.anchors(),
            "behavior_ground_truth": {
                "kind": "two_scripted_corridor_controllers",
                "route_probability": [0.5, 0.5],
                "action_noise": BEHAVIOR_NOISE,
            },
        }),
    })
}
