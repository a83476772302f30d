//! Decision-time candidate construction, scoring, and selection.
//!
//! Every decision builds a small candidate set (the actor's dominant mode
//! mean plus sampled proposals), scores each candidate as
//! `LCB_lambda(s, a) + w_p * z(log_behavior(a | s))`, and executes the
//! best one. The support term is z-scored within the candidate set, which
//! makes the ranking invariant to shifting or positively scaling the
//! behavior log densities. Ablation variants switch individual pieces off
//! without touching the rest of the pipeline.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorModel;
use crate::child_seed;
use crate::critic::{CriticEnsemble, EnsembleStats};
use crate::gmm::CgmmModel;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

/// Std floor inside the candidate z-score.
pub const ZSCORE_STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WpSchedule {
    /// Cosine decay from ~1 at the start of an episode to `wp_end` at the
    /// last step.
    Cosine,
    /// `wp_end` at every step.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportMode {
    /// Score uses the within-set z-score of the behavior log density.
    Zscore,
    /// Score uses the raw log density; the z-score is still computed and
    /// reported for the audits.
    Raw,
}

/// Which model the sampled proposals come from. Exactly one source per
/// decision; the anchor is always the actor's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Actor,
    Behavior,
}

impl CandidateSource {
    pub fn name(&self) -> &'static str {
        match self {
            CandidateSource::Actor => "actor",
            CandidateSource::Behavior => "behavior",
        }
    }

    pub fn parse(name: &str) -> Option<CandidateSource> {
        match name {
            "actor" => Some(CandidateSource::Actor),
            "behavior" => Some(CandidateSource::Behavior),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Drop the support term from the score.
    NoPw,
    /// Score with lambda = 0 (ensemble mean instead of LCB).
    NoLcb,
    /// No anchor candidate; sampled proposals only.
    NoAnchor,
    /// Replace the dominant-mode anchor by the mixture barycenter.
    AnchorBary,
    /// Sample proposals from the dominant component only.
    UnimodalActorCands,
    /// Sample proposals from the behavior model instead of the actor.
    BehaviorOnlyCands,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoPw,
        Variant::NoLcb,
        Variant::NoAnchor,
        Variant::AnchorBary,
        Variant::UnimodalActorCands,
        Variant::BehaviorOnlyCands,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPw => "no_pw",
            Variant::NoLcb => "no_lcb",
            Variant::NoAnchor => "no_anchor",
            Variant::AnchorBary => "anchor_bary",
            Variant::UnimodalActorCands => "unimodal_actor_cands",
            Variant::BehaviorOnlyCands => "behavior_only_cands",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Variant::ALL.iter().copied().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    /// Number of sampled proposals per decision (the anchor is extra).
    pub num_samples: usize,
    /// Pessimism weight in the LCB.
    pub lambda: f64,
    /// Final support weight of the within-episode schedule.
    pub wp_end: f64,
    pub schedule: WpSchedule,
    /// Execute the mean of the top-k candidates (1 = plain argmax).
    pub k_smooth: usize,
    /// Proposal source; `behavior_only_cands` forces `Behavior`.
    pub source: CandidateSource,
    pub support_mode: SupportMode,
    pub variant: Variant,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            num_samples: 1024,
            lambda: 1.0,
            wp_end: 0.4,
            schedule: WpSchedule::Cosine,
            k_smooth: 1,
            source: CandidateSource::Actor,
            support_mode: SupportMode::Zscore,
            variant: Variant::Full,
        }
    }
}

/// Support weight at decision step `t` (1-based) of an episode with
/// `horizon` steps. A single-decision episode sits at the end of the
/// schedule and gets `wp_end`.
pub fn wp_value(schedule: WpSchedule, wp_end: f64, t: usize, horizon: usize) -> f64 {
    match schedule {
        WpSchedule::Constant => wp_end,
        WpSchedule::Cosine => {
            let horizon = horizon.max(1);
            let t = t.clamp(1, horizon) as f64;
            let phase = std::f64::consts::PI * t / horizon as f64;
            wp_end + 0.5 * (1.0 - wp_end) * (1.0 + phase.cos())
        }
    }
}

/// Population z-score with the std floored at [`ZSCORE_STD_FLOOR`].
pub fn zscore(values: &[f64]) -> Vec<f64> {
    assert!(!values.is_empty(), "zscore of empty slice");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(ZSCORE_STD_FLOOR);
    values.iter().map(|v| (v - mean) / std).collect()
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    /// Candidate actions, each clipped to the `[-1, 1]` box. When an
    /// anchor is present it sits at index 0.
    pub actions: Vec<Vec<f64>>,
    pub anchor_index: Option<usize>,
    /// Mixture component whose mean provided the anchor, when applicable.
    pub anchor_component: Option<usize>,
}

fn clip_box(a: &mut [f64]) {
    for v in a.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
}

/// Build the candidate set for one decision. Proposals come from a single
/// source model (never a mix), and with a fixed RNG the first n samples
/// are a prefix of any larger budget's samples.
pub fn build_candidates(
    actor: &CgmmModel,
    behavior: &BehaviorModel,
    s: &[f64],
    cfg: &InferenceConfig,
    rng: &mut ChaCha8Rng,
) -> CandidateSet {
    let (anchor, anchor_component) = match cfg.variant {
        Variant::NoAnchor => (None, None),
        Variant::AnchorBary => (Some(actor.barycenter(s)), None),
        _ => {
            let (k, mean) = actor.anchor(s);
            (Some(mean), Some(k))
        }
    };
    let source = match cfg.variant {
        Variant::BehaviorOnlyCands => CandidateSource::Behavior,
        _ => cfg.source,
    };
    let batch = match (cfg.variant, source) {
        (Variant::UnimodalActorCands, _) => {
            let (k, _) = actor.anchor(s);
            actor.sample_component(s, k, cfg.num_samples, rng)
        }
        (_, CandidateSource::Behavior) => behavior.model().sample(s, cfg.num_samples, rng),
        (_, CandidateSource::Actor) => actor.sample(s, cfg.num_samples, rng),
    };

    let mut actions = Vec::with_capacity(cfg.num_samples + 1);
    let mut anchor_index = None;
    if let Some(mut a) = anchor {
        clip_box(&mut a);
        anchor_index = Some(0);
        actions.push(a);
    }
    for i in 0..batch.len() {
        let mut a = batch.action(i).to_vec();
        clip_box(&mut a);
        actions.push(a);
    }
    CandidateSet { actions, anchor_index, anchor_component }
}

#[derive(Debug, Clone)]
pub struct ScoredCandidate {
    pub action: Vec<f64>,
    /// Position in the unsorted candidate set.
    pub index: usize,
    pub is_anchor: bool,
    pub q_mean: f64,
    pub q_std: f64,
    pub lcb: f64,
    /// Behavior log density of the action.
    pub log_b: f64,
    /// Within-set z-score of `log_b`; computed in every support mode.
    pub support_z: f64,
    pub score: f64,
}

/// Score and rank a candidate set. Returns candidates sorted by
/// descending score; ties go to the anchor, then to the lower index.
///
/// `stress` optionally adds `N(0, sd^2)` noise to the first critic head,
/// the corruption used by the stress audit.
pub fn score_candidates(
    set: &CandidateSet,
    critics: &CriticEnsemble,
    behavior: &BehaviorModel,
    s: &[f64],
    w_p: f64,
    cfg: &InferenceConfig,
    stress: Option<(&mut ChaCha8Rng, f64)>,
) -> Vec<ScoredCandidate> {
    assert!(!set.actions.is_empty(), "cannot score an empty candidate set");
    let lambda_eff = if cfg.variant == Variant::NoLcb { 0.0 } else { cfg.lambda };

    let mut noise = vec![0.0; set.actions.len()];
    if let Some((rng, sd)) = stress {
        for v in noise.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = sd * z;
        }
    }

    let mut stats = Vec::with_capacity(set.actions.len());
    let mut log_b = Vec::with_capacity(set.actions.len());
    for (i, a) in set.actions.iter().enumerate() {
        let mut qs = critics.q_all(s, a);
        qs[0] += noise[i];
        stats.push(EnsembleStats::from_values(&qs, lambda_eff));
        log_b.push(behavior.log_prob(s, a));
    }
    let support_z = zscore(&log_b);

    let mut scored: Vec<ScoredCandidate> = set
        .actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let support_term = match cfg.support_mode {
                SupportMode::Zscore => support_z[i],
                SupportMode::Raw => log_b[i],
            };
            let score = match cfg.variant {
                Variant::NoPw => stats[i].lcb,
                _ => stats[i].lcb + w_p * support_term,
            };
            ScoredCandidate {
                action: a.clone(),
                index: i,
                is_anchor: set.anchor_index == Some(i),
                q_mean: stats[i].mean,
                q_std: stats[i].std,
                lcb: stats[i].lcb,
                log_b: log_b[i],
                support_z: support_z[i],
                score,
            }
        })
        .collect();

    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.is_anchor.cmp(&a.is_anchor))
            .then_with(|| a.index.cmp(&b.index))
    });
    scored
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Executed action (mean of the top `k_smooth` candidates).
    pub action: Vec<f64>,
    /// Best candidate before smoothing; the audits refer to this one.
    pub top1: ScoredCandidate,
}

/// Pick the executed action from a ranked candidate list.
pub fn select(scored: &[ScoredCandidate], k_smooth: usize) -> Selection {
    assert!(!scored.is_empty(), "cannot select from an empty ranking");
    let k = k_smooth.clamp(1, scored.len());
    let dim = scored[0].action.len();
    let mut action = vec![0.0; dim];
    for c in &scored[..k] {
        for (acc, v) in action.iter_mut().zip(&c.action) {
            *acc += v / k as f64;
        }
    }
    clip_box(&mut action);
    Selection { action, top1: scored[0].clone() }
}

/// Everything a single decision reports back.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: Vec<f64>,
    pub top1_action: Vec<f64>,
    pub support_z: f64,
    pub lcb: f64,
    pub score: f64,
    /// Distance from the pre-smoothing winner to the nearest behavior
    /// component mean.
    pub collapse: f64,
    pub w_p: f64,
}

/// A trained triple wired together behind one `decide` call.
///
/// The behavior slot only accepts a [`BehaviorModel`], so the support
/// density can never silently be the actor certifying its own samples.
pub struct GemPolicy {
    pub actor: CgmmModel,
    pub behavior: BehaviorModel,
    pub critics: CriticEnsemble,
    pub cfg: InferenceConfig,
    base_seed: u64,
    rng: ChaCha8Rng,
    /// When set, N(0, sd^2) noise is injected into critic head 0 at every
    /// decision (stress audit).
    pub stress_sd: Option<f64>,
}

impl GemPolicy {
    pub fn new(
        actor: CgmmModel,
        behavior: BehaviorModel,
        critics: CriticEnsemble,
        cfg: InferenceConfig,
        seed: u64,
    ) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(child_seed(seed, 0));
        GemPolicy { actor, behavior, critics, cfg, base_seed: seed, rng, stress_sd: None }
    }

    /// Reset the decision RNG to a stream derived from the episode index,
    /// so episode k is reproducible regardless of what ran before it.
    pub fn begin_episode(&mut self, episode: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(child_seed(self.base_seed, episode));
    }

    /// One decision at step `t` (1-based) of an episode with `horizon`
    /// total steps.
    pub fn decide(&mut self, s: &[f64], t: usize, horizon: usize) -> Decision {
        let w_p = wp_value(self.cfg.schedule, self.cfg.wp_end, t, horizon);
        let set = build_candidates(&self.actor, &self.behavior, s, &self.cfg, &mut self.rng);
        let stress_sd = self.stress_sd;
        let scored = score_candidates(
            &set,
            &self.critics,
            &self.behavior,
            s,
            w_p,
            &self.cfg,
            stress_sd.map(|sd| (&mut self.rng, sd)),
        );
        let sel = select(&scored, self.cfg.k_smooth);
        let collapse = crate::audits::collapse_dist(self.behavior.model(), s, &sel.top1.action);
        Decision {
            action: sel.action,
            top1_action: sel.top1.action.clone(),
            support_z: sel.top1.support_z,
            lcb: sel.top1.lcb,
            score: sel.top1.score,
            collapse,
            w_p,
        }
    }
}

impl crate::envs::Policy for GemPolicy {
    fn begin_episode(&mut self, episode: u64) {
        GemPolicy::begin_episode(self, episode);
    }

    fn act(
        &mut self,
        s: &[f64],
        t: usize,
        horizon: usize,
    ) -> (Vec<f64>, Option<crate::envs::StepAudit>) {
        let d = self.decide(s, t, horizon);
        let audit = crate::envs::StepAudit { support_z: d.support_z, collapse: d.collapse };
        (d.action, Some(audit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GmmConfig;

    fn pinned_actor(means: &[f64], weights_ln: &[f64], sigma: f64) -> CgmmModel {
        let k = weights_ln.len();
        let dim = means.len() / k;
        let mut m = CgmmModel::new(GmmConfig::new(k, 2, dim).with_hidden(&[4]), 1);
        m.pin_gating(weights_ln);
        m.pin_component_means(means);
        m.set_log_std(sigma.ln());
        m
    }

    fn pinned_behavior(mean: &[f64], sigma: f64) -> BehaviorModel {
        let dim = mean.len();
        let mut inner = CgmmModel::new(GmmConfig::new(1, 2, dim).with_hidden(&[4]), 2);
        inner.pin_means(mean);
        inner.set_log_std(sigma.ln());
        let mut b = BehaviorModel::from_cgmm(inner);
        b.freeze();
        b
    }

    fn constant_critics(values: &[f64]) -> CriticEnsemble {
        let mut c = CriticEnsemble::new(values.len(), 2, 2, &[4], 3);
        for (i, v) in values.iter().enumerate() {
            c.pin_head_constant(i, *v);
        }
        c
    }

    fn cfg_n(n: usize) -> InferenceConfig {
        InferenceConfig { num_samples: n, ..InferenceConfig::default() }
    }

    #[test]
    fn cosine_schedule_hits_endpoints_and_midpoint() {
        let end = 0.4;
        assert!((wp_value(WpSchedule::Cosine, end, 100, 100) - end).abs() < 1e-12);
        assert!((wp_value(WpSchedule::Cosine, end, 50, 100) - 0.7).abs() < 1e-12);
        assert!((wp_value(WpSchedule::Cosine, end, 1, 1) - end).abs() < 1e-12);
        assert!(wp_value(WpSchedule::Cosine, end, 1, 1000) > 0.99);
        let mut prev = f64::INFINITY;
        for t in 1..=100 {
            let w = wp_value(WpSchedule::Cosine, end, t, 100);
            assert!(w < prev);
            assert!(w >= end - 1e-12 && w <= 1.0);
            prev = w;
        }
        for t in [1, 7, 100] {
            assert_eq!(wp_value(WpSchedule::Constant, end, t, 100), end);
        }
    }

    #[test]
    fn zscore_matches_hand_case_and_handles_constants() {
        let z = zscore(&[0.0, 2.0, 4.0]);
        assert!((z[0] + 1.224744871391589).abs() < 1e-12);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - 1.224744871391589).abs() < 1e-12);
        assert_eq!(zscore(&[3.3; 5]), vec![0.0; 5]);
    }

    #[test]
    fn zscore_is_invariant_to_shift_and_positive_scale() {
        let xs = [0.3, -1.2, 2.5, 0.0, 7.1];
        let base = zscore(&xs);
        let moved: Vec<f64> = xs.iter().map(|x| 4.0 * x - 11.0).collect();
        for (a, b) in zscore(&moved).iter().zip(&base) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn anchor_leads_and_everything_stays_in_the_box() {
        let actor = pinned_actor(&[0.95, 0.95, -0.95, -0.95], &[0.7f64.ln(), 0.3f64.ln()], 1.0);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg_n(256), &mut rng);
        assert_eq!(set.actions.len(), 257);
        assert_eq!(set.anchor_index, Some(0));
        assert_eq!(set.anchor_component, Some(0));
        for d in 0..2 {
            assert!((set.actions[0][d] - 0.95).abs() < 1e-9);
        }
        let mut hit_edge = false;
        for a in &set.actions {
            for v in a {
                assert!(*v >= -1.0 && *v <= 1.0);
                if (v.abs() - 1.0).abs() < 1e-12 {
                    hit_edge = true;
                }
            }
        }
        assert!(hit_edge, "sigma 1.0 around 0.95 should clip at least one sample");
    }

    #[test]
    fn no_anchor_variant_has_samples_only() {
        let actor = pinned_actor(&[0.5, 0.5], &[0.0], 0.1);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let cfg = InferenceConfig { variant: Variant::NoAnchor, ..cfg_n(16) };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg, &mut rng);
        assert_eq!(set.actions.len(), 16);
        assert_eq!(set.anchor_index, None);
        assert_eq!(set.anchor_component, None);
    }

    #[test]
    fn barycenter_variant_blends_component_means() {
        let actor = pinned_actor(&[0.8, 0.8, -0.4, -0.4], &[0.75f64.ln(), 0.25f64.ln()], 0.1);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let cfg = InferenceConfig { variant: Variant::AnchorBary, ..cfg_n(4) };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg, &mut rng);
        let expected = 0.75 * 0.8 + 0.25 * (-0.4);
        for d in 0..2 {
            assert!((set.actions[0][d] - expected).abs() < 1e-9);
        }
        assert_eq!(set.anchor_component, None);
    }

    #[test]
    fn unimodal_variant_samples_only_the_dominant_component() {
        let actor = pinned_actor(&[0.8, 0.8, -0.8, -0.8], &[0.6f64.ln(), 0.4f64.ln()], 0.02);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let cfg = InferenceConfig { variant: Variant::UnimodalActorCands, ..cfg_n(128) };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg, &mut rng);
        for a in &set.actions {
            assert!((a[0] - 0.8).abs() < 0.15, "sample strayed to {a:?}");
        }
    }

    #[test]
    fn behavior_only_variant_samples_the_behavior_density() {
        let actor = pinned_actor(&[-0.6, -0.6], &[0.0], 0.02);
        let behavior = pinned_behavior(&[0.6, 0.6], 0.02);
        let cfg = InferenceConfig { variant: Variant::BehaviorOnlyCands, ..cfg_n(64) };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg, &mut rng);
        // anchor still comes from the actor
        assert!((set.actions[0][0] + 0.6).abs() < 1e-9);
        for a in &set.actions[1..] {
            assert!((a[0] - 0.6).abs() < 0.15, "sample strayed to {a:?}");
        }

        // the source knob alone produces the same candidate set
        let cfg2 = InferenceConfig { source: CandidateSource::Behavior, ..cfg_n(64) };
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let set2 = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg2, &mut rng2);
        assert_eq!(set.actions, set2.actions);
    }

    #[test]
    fn equal_scores_rank_anchor_then_index() {
        let actor = pinned_actor(&[0.2, 0.2], &[0.0], 0.3);
        // uniform behavior density over the box makes every log_b equal
        let behavior = pinned_behavior(&[0.0, 0.0], 1.0);
        let critics = constant_critics(&[1.0, 1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut cfg = cfg_n(8);
        cfg.support_mode = SupportMode::Zscore;
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg, &mut rng);
        // behavior sigma 1.0 does not give equal densities; overwrite the
        // candidates with copies of one action so scores tie exactly
        let tied = CandidateSet {
            actions: vec![vec![0.1, 0.1]; 5],
            anchor_index: Some(2),
            anchor_component: Some(0),
        };
        let _ = set;
        let scored =
            score_candidates(&tied, &critics, &behavior, &[0.0, 0.0], 0.4, &cfg, None);
        assert_eq!(scored[0].index, 2, "anchor must win ties");
        assert!(scored[0].is_anchor);
        assert_eq!(
            scored.iter().skip(1).map(|c| c.index).collect::<Vec<_>>(),
            vec![0, 1, 3, 4]
        );
    }

    #[test]
    fn no_pw_scores_ignore_support() {
        let actor = pinned_actor(&[0.0, 0.0], &[0.0], 0.4);
        let behavior = pinned_behavior(&[0.5, 0.5], 0.1);
        let critics = constant_critics(&[2.0, 2.0]);
        let cfg_full = cfg_n(32);
        let cfg_nopw = InferenceConfig { variant: Variant::NoPw, ..cfg_n(32) };
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let s = [0.0, 0.0];
        let set_full = build_candidates(&actor, &behavior, &s, &cfg_full, &mut r1);
        let set_nopw = build_candidates(&actor, &behavior, &s, &cfg_nopw, &mut r2);
        assert_eq!(set_full.actions, set_nopw.actions);

        let full = score_candidates(&set_full, &critics, &behavior, &s, 0.7, &cfg_full, None);
        let nopw = score_candidates(&set_nopw, &critics, &behavior, &s, 0.7, &cfg_nopw, None);
        // support shifts full scores; no_pw scores are exactly the LCB
        for c in &nopw {
            assert_eq!(c.score, c.lcb);
            // support is still measured for the audits
            assert!(c.support_z.is_finite());
        }
        let full_top = &full[0];
        assert!(
            (full_top.action[0] - 0.5).abs() < (nopw[0].action[0] - 0.5).abs(),
            "support term should pull the winner toward the behavior mode"
        );
    }

    #[test]
    fn no_lcb_scores_use_the_ensemble_mean() {
        let actor = pinned_actor(&[0.0, 0.0], &[0.0], 0.4);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let critics = constant_critics(&[1.0, 3.0]);
        let s = [0.0, 0.0];
        let cfg_full = cfg_n(8);
        let cfg_nolcb = InferenceConfig { variant: Variant::NoLcb, ..cfg_n(8) };
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let set = build_candidates(&actor, &behavior, &s, &cfg_full, &mut r);
        let full = score_candidates(&set, &critics, &behavior, &s, 0.0, &cfg_full, None);
        let nolcb = score_candidates(&set, &critics, &behavior, &s, 0.0, &cfg_nolcb, None);
        for c in &full {
            // mean 2, std 1, lambda 1
            assert!((c.lcb - 1.0).abs() < 1e-9);
        }
        for c in &nolcb {
            assert!((c.lcb - 2.0).abs() < 1e-9);
            assert!((c.lcb - c.q_mean).abs() < 1e-12);
        }
    }

    #[test]
    fn stress_noise_is_seeded_and_perturbs_scores() {
        let actor = pinned_actor(&[0.1, 0.1], &[0.0], 0.3);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let critics = constant_critics(&[1.0, 1.0, 1.0, 1.0]);
        let s = [0.0, 0.0];
        let cfg = cfg_n(16);
        let mut r = ChaCha8Rng::seed_from_u64(13);
        let set = build_candidates(&actor, &behavior, &s, &cfg, &mut r);

        let mut n1 = ChaCha8Rng::seed_from_u64(99);
        let mut n2 = ChaCha8Rng::seed_from_u64(99);
        let a = score_candidates(&set, &critics, &behavior, &s, 0.4, &cfg, Some((&mut n1, 0.5)));
        let b = score_candidates(&set, &critics, &behavior, &s, 0.4, &cfg, Some((&mut n2, 0.5)));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.score.to_bits(), y.score.to_bits());
        }
        let clean = score_candidates(&set, &critics, &behavior, &s, 0.4, &cfg, None);
        // same candidates, same order keys except the noisy head
        let noisy_stds: Vec<f64> = a.iter().map(|c| c.q_std).collect();
        assert!(noisy_stds.iter().any(|v| *v > 1e-3));
        assert!(clean.iter().all(|c| c.q_std < 1e-9));
    }

    #[test]
    fn smoothing_averages_the_top_candidates() {
        let mk = |action: Vec<f64>, index: usize, score: f64| ScoredCandidate {
            action,
            index,
            is_anchor: false,
            q_mean: 0.0,
            q_std: 0.0,
            lcb: 0.0,
            log_b: 0.0,
            support_z: 0.0,
            score,
        };
        let ranked = vec![
            mk(vec![0.8, 0.0], 0, 3.0),
            mk(vec![0.4, 0.2], 1, 2.0),
            mk(vec![-0.9, -0.9], 2, 1.0),
        ];
        let sel = select(&ranked, 2);
        assert!((sel.action[0] - 0.6).abs() < 1e-12);
        assert!((sel.action[1] - 0.1).abs() < 1e-12);
        assert_eq!(sel.top1.index, 0);
        let argmax = select(&ranked, 1);
        assert_eq!(argmax.action, vec![0.8, 0.0]);
        let clamped = select(&ranked, 99);
        assert_eq!(clamped.top1.index, 0);
    }

    #[test]
    fn both_mixture_modes_get_candidate_mass() {
        // K = 2, equal weights, well separated: with 1000 samples each
        // cluster should hold at least 100 candidates
        let actor = pinned_actor(&[0.7, 0.7, -0.7, -0.7], &[0.5f64.ln(), 0.5f64.ln()], 0.05);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let set = build_candidates(&actor, &behavior, &[0.0, 0.0], &cfg_n(1000), &mut rng);
        let near_pos = set.actions.iter().filter(|a| a[0] > 0.4).count();
        let near_neg = set.actions.iter().filter(|a| a[0] < -0.4).count();
        assert!(near_pos >= 100, "positive mode holds {near_pos}");
        assert!(near_neg >= 100, "negative mode holds {near_neg}");
        assert_eq!(near_pos + near_neg, set.actions.len());
    }

    #[test]
    fn raising_lambda_never_raises_scores_and_derisks_the_winner() {
        let actor = pinned_actor(&[0.3, 0.3, -0.3, -0.3], &[0.5f64.ln(), 0.5f64.ln()], 0.4);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.6);
        // untrained ensemble: heads disagree, so q_std varies per candidate
        let critics = CriticEnsemble::new(8, 2, 2, &[16, 16], 41);
        let lax = InferenceConfig { lambda: 0.0, ..cfg_n(64) };
        let strict = InferenceConfig { lambda: 3.5, ..cfg_n(64) };
        for seed in 0..5u64 {
            let s = [0.1 * seed as f64 - 0.2, 0.3];
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let set = build_candidates(&actor, &behavior, &s, &lax, &mut rng);
            // w_p = 0 isolates the LCB part of the score
            let a = score_candidates(&set, &critics, &behavior, &s, 0.0, &lax, None);
            let b = score_candidates(&set, &critics, &behavior, &s, 0.0, &strict, None);
            let by_index = |list: &[ScoredCandidate], i: usize| -> (f64, f64) {
                let c = list.iter().find(|c| c.index == i).unwrap();
                (c.score, c.q_std)
            };
            for i in 0..set.actions.len() {
                let (s_lax, _) = by_index(&a, i);
                let (s_strict, _) = by_index(&b, i);
                assert!(s_strict <= s_lax + 1e-12);
            }
            assert!(
                b[0].q_std <= a[0].q_std + 1e-12,
                "pessimism should pick a lower-variance winner: {} vs {}",
                b[0].q_std,
                a[0].q_std
            );
        }
    }

    #[test]
    fn policy_decisions_are_reproducible_per_episode() {
        let actor = pinned_actor(&[0.3, 0.3, -0.3, -0.3], &[0.6f64.ln(), 0.4f64.ln()], 0.2);
        let behavior = pinned_behavior(&[0.0, 0.0], 0.5);
        let critics = CriticEnsemble::new(4, 2, 2, &[8], 17);
        let cfg = cfg_n(32);
        let mut p1 = GemPolicy::new(actor.clone(), behavior.clone(), critics.clone(), cfg.clone(), 7);
        let mut p2 = GemPolicy::new(actor, behavior, critics, cfg, 7);
        let s = [0.25, -0.5];

        p1.begin_episode(3);
        let d1 = p1.decide(&s, 1, 10);
        p2.begin_episode(0);
        let _ = p2.decide(&s, 1, 10);
        p2.begin_episode(3);
        let d2 = p2.decide(&s, 1, 10);
        assert_eq!(d1.action, d2.action, "episode streams must not depend on history");
        assert_eq!(d1.support_z.to_bits(), d2.support_z.to_bits());

        p1.begin_episode(4);
        let d3 = p1.decide(&s, 1, 10);
        assert_ne!(d1.action, d3.action);
    }
}
