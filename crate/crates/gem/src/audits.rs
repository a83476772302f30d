//! Support, collapse, multimodality, and extreme-value audits.
//!
//! These are cheap quantities logged at decision time or computed over a
//! dataset afterwards. They exist to answer one question: is the policy
//! quietly walking off the data support, and if so, which mechanism let
//! it happen?

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::gmm::{log_normal_diag, logsumexp, CgmmModel};

/// A decision whose executed candidate scores below this z threshold
/// counts as a support violation.
pub const VIOLATION_Z: f64 = -2.0;

/// Strict comparison: exactly -2.0 is not a violation.
pub fn violation_flag(support_z: f64) -> bool {
    support_z < VIOLATION_Z
}

/// Euclidean distance from the pre-smoothing top-1 action `a` to the
/// nearest behavior-mixture component mean at `s`. Large values mean the
/// winner sits far from every mode the data density believes in.
pub fn collapse_dist(behavior: &CgmmModel, s: &[f64], a: &[f64]) -> f64 {
    let heads = behavior.heads(s);
    let dim = behavior.config().action_dim;
    (0..behavior.config().k)
        .map(|k| {
            let mu = &heads.means[k * dim..(k + 1) * dim];
            a.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum::<f64>().sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `NLL_top1 - NLL_mixture` at one `(s, a)` pair.
///
/// The top-1 term is the negative log density of the highest-weight
/// component alone, with its mixture weight omitted, so a single-component
/// model gives exactly zero. Averaged over a dataset, values near zero say
/// one component already explains the data; large positive values say the
/// mixture needs its other modes.
pub fn nll_gap(model: &CgmmModel, s: &[f64], a: &[f64]) -> f64 {
    let heads = model.heads(s);
    let dim = model.config().action_dim;
    let (k, _) = model.anchor(s);
    let top = log_normal_diag(
        a,
        &heads.means[k * dim..(k + 1) * dim],
        &heads.log_std[k * dim..(k + 1) * dim],
    );
    let joints = model.log_joints(s, a);
    let mixture = logsumexp(&joints);
    -top - (-mixture)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllGapReport {
    pub nll_gmm: f64,
    pub nll_top1: f64,
    pub gap: f64,
}

/// Dataset means of the mixture NLL, the top-1 NLL, and their gap.
pub fn nll_gap_dataset(model: &CgmmModel, states: &[Vec<f64>], actions: &[Vec<f64>]) -> NllGapReport {
    assert_eq!(states.len(), actions.len());
    assert!(!states.is_empty(), "NLL gap needs a nonempty dataset");
    let n = states.len() as f64;
    let mut nll_gmm = 0.0;
    let mut gap = 0.0;
    for (s, a) in states.iter().zip(actions) {
        nll_gmm += -model.log_prob(s, a) / n;
        gap += nll_gap(model, s, a) / n;
    }
    NllGapReport { nll_gmm, nll_top1: nll_gmm + gap, gap }
}

/// Running tally of per-decision audit results.
#[derive(Debug, Clone, Default)]
pub struct AuditAccumulator {
    pub decisions: usize,
    pub violations: usize,
    pub collapse_sum: f64,
}

impl AuditAccumulator {
    pub fn record(&mut self, support_z: f64, collapse: f64) {
        self.decisions += 1;
        if violation_flag(support_z) {
            self.violations += 1;
        }
        self.collapse_sum += collapse;
    }

    pub fn violation_rate(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.violations as f64 / self.decisions as f64
        }
    }

    pub fn mean_collapse(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.collapse_sum / self.decisions as f64
        }
    }
}

/// Gaussian maximum bound `sigma * sqrt(2 ln m)` for the expected max of
/// `m` centered Gaussians with std `sigma`.
pub fn extreme_value_bound(sigma: f64, m: usize) -> f64 {
    assert!(m >= 1);
    sigma * (2.0 * (m as f64).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeValueRow {
    /// Number of sampled proposals; the max runs over `budget + 1` values
    /// (anchor included).
    pub budget: usize,
    pub mean_max: f64,
    pub bound: f64,
}

/// Monte Carlo estimate of `E[max of budget+1 errors]` for each budget,
/// with the errors `N(0, sigma^2)` and pairwise correlation `rho`
/// (`eps_j = sigma * (sqrt(rho) z0 + sqrt(1-rho) z_j)`). This is the
/// optimizer's-curse scale for candidate selection under critic noise.
pub fn extreme_value_sim(
    sigma: f64,
    budgets: &[usize],
    reps: usize,
    rho: f64,
    seed: u64,
) -> Vec<ExtremeValueRow> {
    assert!((0.0..=1.0).contains(&rho), "rho must be in [0, 1]");
    assert!(!budgets.is_empty() && reps > 0);
    let mut sorted = budgets.to_vec();
    sorted.sort_unstable();
    let max_budget = *sorted.last().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0f64; sorted.len()];
    for _ in 0..reps {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let shared = rho.sqrt() * z0;
        let indep = (1.0 - rho).sqrt();
        let mut running = f64::NEG_INFINITY;
        let mut next = 0;
        // draw budget+1 values; after the j-th draw the running max covers
        // budgets up to j-1
        for j in 0..=max_budget {
            let z: f64 = StandardNormal.sample(&mut rng);
            running = running.max(sigma * (shared + indep * z));
            while next < sorted.len() && sorted[next] == j {
                sums[next] += running;
                next += 1;
            }
        }
    }
    sorted
        .into_iter()
        .zip(sums)
        .map(|(budget, sum)| ExtremeValueRow {
            budget,
            mean_max: sum / reps as f64,
            bound: extreme_value_bound(sigma, budget + 1),
        })
        .collect()
}
