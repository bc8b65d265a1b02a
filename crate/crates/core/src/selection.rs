//! Budget-constrained keyframe selection.
//!
//! Three selectors share the machinery here:
//! - [`greedy_max`]: plain marginal-gain greedy over an arbitrary set
//!   function, used for the fixed-keyframe problem where the objective is
//!   submodular and the greedy solution carries a (1 − 1/e) guarantee.
//! - [`select_local_keyframes`] / [`select_global_keyframes`]: top-h greedy
//!   (a beam of candidate sets, width H up to size l_thr, width 1 beyond),
//!   scored incrementally through the reuse module.
//! - [`construct_local_map`]: the local-map decomposition — pick the local
//!   set first, then the fixed set conditioned on it.
//!
//! Everything is deterministic: ties always resolve toward the lowest
//! [`KeyframeId`] (and lexicographically smallest set in the beam), so
//! identical inputs reproduce identical selections on any platform.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::Error;
use crate::graph::{KeyframeId, PoseGraph};
use crate::reuse::ReuseState;
use crate::uncertainty::{global_uncertainty, local_uncertainty, Uncertainty};

/// A pick whose marginal gain falls to this level is treated as zero when a
/// selector is allowed to stop early (fixed-keyframe greedy): the candidate
/// adds no information and including it would be arbitrary.
const ZERO_GAIN_EPS: f64 = 1e-12;

/// Cardinality and capacity limits for one selection window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionBudget {
    /// Maximum keyframes in the local map (new keyframe excluded).
    pub l_loc: usize,
    /// Maximum fixed keyframes anchoring the local map.
    pub l_f: usize,
    /// Uplink capacity of the current window, in bits.
    pub capacity_bits: f64,
    /// Uniform encoded size of one keyframe, in bits.
    pub keyframe_bits: f64,
}

impl SelectionBudget {
    pub fn validate(&self) -> Result<(), Error> {
        if self.l_loc < 1 {
            return Err(Error::Config("budget l_loc must be at least 1".into()));
        }
        if !self.capacity_bits.is_finite() || self.capacity_bits < 0.0 {
            return Err(Error::Config(format!(
                "budget capacity_bits must be finite and non-negative, got {}",
                self.capacity_bits
            )));
        }
        if !self.keyframe_bits.is_finite() || self.keyframe_bits <= 0.0 {
            return Err(Error::Config(format!(
                "budget keyframe_bits must be finite and positive, got {}",
                self.keyframe_bits
            )));
        }
        Ok(())
    }

    /// How many keyframes fit in the uplink window: floor(capacity / size).
    /// Zero when even a single keyframe does not fit.
    pub fn global_picks(&self) -> usize {
        (self.capacity_bits / self.keyframe_bits).floor() as usize
    }
}

/// Tuning for the top-h greedy: beam width `h` while the growing set has at
/// most `l_thr` members, width 1 afterwards.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TopHConfig {
    pub h: usize,
    pub l_thr: usize,
}

impl Default for TopHConfig {
    fn default() -> Self {
        TopHConfig { h: 5, l_thr: 30 }
    }
}

impl TopHConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.h < 1 {
            return Err(Error::Config("beam width h must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one selection: the chosen ids (ascending), the uncertainty of
/// the chosen set recomputed from scratch, and how many candidate scorings
/// the search performed.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub chosen: Vec<KeyframeId>,
    pub uncertainty: Uncertainty,
    /// True when the chosen set is disconnected (infinite uncertainty was
    /// unavoidable); such picks keep the pipeline moving but are flagged.
    pub singular: bool,
    pub evaluations: u64,
}

impl SelectionResult {
    fn new(chosen: Vec<KeyframeId>, uncertainty: Uncertainty, evaluations: u64) -> Self {
        let singular = uncertainty.is_singular();
        SelectionResult {
            chosen,
            uncertainty,
            singular,
            evaluations,
        }
    }
}

/// Greedy maximization of an arbitrary set function: repeatedly add the
/// element with the largest marginal gain until `s` elements are chosen.
/// Ties go to the lowest id. The result's uncertainty is the negated final
/// objective value, matching the log-det objectives used throughout.
pub fn greedy_max<F>(
    objective: F,
    universe: &BTreeSet<KeyframeId>,
    s: usize,
) -> Result<SelectionResult, Error>
where
    F: FnMut(&BTreeSet<KeyframeId>) -> f64,
{
    let mut f = objective;
    greedy_max_impl(|set| Ok(f(set)), universe, s, false)
}

/// Marginal gain with the singular cases pinned down: once the objective is
/// −∞ it stays comparable (−∞ → −∞ gains nothing; −∞ → finite gains
/// everything).
fn gain_of(before: f64, after: f64) -> f64 {
    if before == f64::NEG_INFINITY {
        if after == f64::NEG_INFINITY {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        after - before
    }
}

fn greedy_max_impl<F>(
    mut objective: F,
    universe: &BTreeSet<KeyframeId>,
    s: usize,
    stop_at_zero_gain: bool,
) -> Result<SelectionResult, Error>
where
    F: FnMut(&BTreeSet<KeyframeId>) -> Result<f64, Error>,
{
    if universe.is_empty() && s > 0 {
        return Err(Error::EmptyUniverse);
    }
    if s > universe.len() {
        return Err(Error::BudgetExceedsPool {
            budget: s,
            pool: universe.len(),
        });
    }
    let mut chosen: BTreeSet<KeyframeId> = BTreeSet::new();
    let mut current = objective(&chosen)?;
    let mut evaluations = 0u64;
    while chosen.len() < s {
        // Within one round every candidate shares `current`, so ranking by
        // value is ranking by gain; ascending iteration with a strict
        // comparison keeps the lowest id on ties.
        let mut best: Option<(f64, KeyframeId)> = None;
        for &x in universe {
            if chosen.contains(&x) {
                continue;
            }
            chosen.insert(x);
            let value = objective(&chosen)?;
            chosen.remove(&x);
            evaluations += 1;
            if best.is_none_or(|(v, _)| value > v) {
                best = Some((value, x));
            }
        }
        let (value, x) = best.expect("s <= |universe| leaves a candidate");
        if stop_at_zero_gain && gain_of(current, value) <= ZERO_GAIN_EPS {
            break;
        }
        chosen.insert(x);
        current = value;
    }
    Ok(SelectionResult::new(
        chosen.into_iter().collect(),
        Uncertainty(-current),
        evaluations,
    ))
}

/// What a beam search is optimizing: a local map around a new keyframe, or
/// the global map on top of an already-uplinked set.
enum Mode<'a> {
    Local { k: KeyframeId },
    Global { existing: &'a BTreeSet<KeyframeId> },
}

impl Mode<'_> {
    /// From-scratch uncertainty of a chosen set under this objective — the
    /// slow path used for fallbacks and for the final reported value.
    fn scratch(&self, graph: &PoseGraph, chosen: &BTreeSet<KeyframeId>) -> Result<f64, Error> {
        match self {
            Mode::Local { k } => {
                Ok(local_uncertainty(graph, chosen, &BTreeSet::new(), *k)?.value())
            }
            Mode::Global { existing } => {
                let full: BTreeSet<KeyframeId> = existing.union(chosen).copied().collect();
                if full.len() < 2 {
                    return Ok(f64::INFINITY);
                }
                Ok(global_uncertainty(graph, &full)?.value())
            }
        }
    }

    /// Fresh reuse state over `chosen`; `None` when the set is currently
    /// disconnected (the caller stays on the scratch path).
    fn rebuild(&self, graph: &PoseGraph, chosen: &[KeyframeId]) -> Option<ReuseState> {
        match self {
            Mode::Local { k } => ReuseState::for_local(graph, chosen, *k).ok(),
            Mode::Global { existing } => {
                let full: BTreeSet<KeyframeId> =
                    existing.iter().chain(chosen.iter()).copied().collect();
                ReuseState::for_global(graph, &full).ok()
            }
        }
    }

    fn validate(&self, graph: &PoseGraph, candidates: &BTreeSet<KeyframeId>) -> Result<(), Error> {
        for &c in candidates {
            if !graph.contains(c) {
                return Err(Error::UnknownKeyframe(c));
            }
        }
        match self {
            Mode::Local { k } => {
                if !graph.contains(*k) {
                    return Err(Error::UnknownKeyframe(*k));
                }
                if candidates.contains(k) {
                    return Err(Error::NewKeyframeInSet(*k));
                }
            }
            Mode::Global { existing } => {
                for &e in *existing {
                    if !graph.contains(e) {
                        return Err(Error::UnknownKeyframe(e));
                    }
                    if candidates.contains(&e) {
                        return Err(Error::OverlappingSets(e));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One beam member: the picked ids in pick order, and the incremental
/// scoring state (`None` once the tracked set went disconnected — scoring
/// then falls back to scratch until a rebuild succeeds).
struct BeamEntry {
    chosen: Vec<KeyframeId>,
    chosen_set: BTreeSet<KeyframeId>,
    state: Option<ReuseState>,
}

/// Top-h greedy: keep up to `width` best candidate sets, extend each by
/// every unused candidate, keep the best children. All scoring goes through
/// the reuse module when the tracked set is connected.
fn beam_select(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    mode: Mode,
    budget: usize,
    cfg: &TopHConfig,
) -> Result<SelectionResult, Error> {
    cfg.validate()?;
    mode.validate(graph, candidates)?;
    let take = budget.min(candidates.len());
    if take == candidates.len() {
        // Budget covers every candidate: nothing to search.
        let chosen: Vec<KeyframeId> = candidates.iter().copied().collect();
        let value = mode.scratch(graph, candidates)?;
        return Ok(SelectionResult::new(chosen, Uncertainty(value), 0));
    }
    let mut beam = vec![BeamEntry {
        chosen: Vec::new(),
        chosen_set: BTreeSet::new(),
        state: mode.rebuild(graph, &[]),
    }];
    let mut evaluations = 0u64;
    while beam[0].chosen.len() < take {
        let size = beam[0].chosen.len();
        let width = if size <= cfg.l_thr { cfg.h } else { 1 };
        // Score every (beam entry, unused candidate) pair. Identical child
        // sets reached through different parents are collapsed to the best
        // scoring one (floating-point jitter between a reuse path and a
        // scratch path can differ in the last ulp).
        let mut children: BTreeMap<Vec<KeyframeId>, (f64, usize, KeyframeId)> = BTreeMap::new();
        for (pi, entry) in beam.iter().enumerate() {
            for &n in candidates {
                if entry.chosen_set.contains(&n) {
                    continue;
                }
                let value = match &entry.state {
                    Some(state) => {
                        let delta = state.delta_for(graph, n);
                        match state.candidate_uncertainty(&delta) {
                            Ok(u) => u.value(),
                            // Drifted cached inverse: score this candidate
                            // from scratch rather than poison the round.
                            Err(Error::DegenerateUpdate(_)) => {
                                let mut set = entry.chosen_set.clone();
                                set.insert(n);
                                mode.scratch(graph, &set)?
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    None => {
                        let mut set = entry.chosen_set.clone();
                        set.insert(n);
                        mode.scratch(graph, &set)?
                    }
                };
                evaluations += 1;
                let mut key: Vec<KeyframeId> = entry.chosen_set.iter().copied().collect();
                let pos = key.partition_point(|&id| id < n);
                key.insert(pos, n);
                match children.get_mut(&key) {
                    Some(existing) if existing.0 <= value => {}
                    slot => {
                        let replacement = (value, pi, n);
                        match slot {
                            Some(existing) => *existing = replacement,
                            None => {
                                children.insert(key, replacement);
                            }
                        }
                    }
                }
            }
        }
        let mut ranked: Vec<(f64, Vec<KeyframeId>, usize, KeyframeId)> = children
            .into_iter()
            .map(|(key, (value, pi, n))| (value, key, pi, n))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        ranked.truncate(width);
        let mut next = Vec::with_capacity(ranked.len());
        for (_, key, pi, n) in ranked {
            let parent = &beam[pi];
            let state = match &parent.state {
                Some(state) => {
                    let mut updated = state.clone();
                    let delta = updated.delta_for(graph, n);
                    match updated.extend(n, &delta) {
                        Ok(()) => Some(updated),
                        // The pick disconnects the tracked set; its matrix
                        // is singular, so a rebuild would fail too.
                        Err(Error::SingularMatrix) => None,
                        // Drift: refactor the parent state and retry once.
                        Err(Error::DegenerateUpdate(_)) => {
                            let mut fresh = state.clone();
                            fresh.refresh()?;
                            let delta = fresh.delta_for(graph, n);
                            match fresh.extend(n, &delta) {
                                Ok(()) => Some(fresh),
                                Err(Error::SingularMatrix | Error::DegenerateUpdate(_)) => None,
                                Err(e) => return Err(e),
                            }
                        }
                        Err(e) => return Err(e),
                    }
                }
                None => None,
            };
            let mut chosen = parent.chosen.clone();
            chosen.push(n);
            // A scratch-mode entry probes for reconnection after every
            // commit so recovered sets return to incremental scoring.
            let state = state.or_else(|| mode.rebuild(graph, &chosen));
            next.push(BeamEntry {
                chosen,
                chosen_set: key.into_iter().collect(),
                state,
            });
        }
        beam = next;
    }
    // Children were ranked (value, lexicographic) before truncation, so the
    // front entry is the argmin with the documented tie-break.
    let best = &beam[0];
    let value = mode.scratch(graph, &best.chosen_set)?;
    let chosen: Vec<KeyframeId> = best.chosen_set.iter().copied().collect();
    Ok(SelectionResult::new(
        chosen,
        Uncertainty(value),
        evaluations,
    ))
}

/// Selects up to `l_loc` keyframes around the new keyframe `k`, minimizing
/// the local-map uncertainty of the chosen set plus `k`. When fewer
/// candidates than budget exist, all of them are selected without a search.
pub fn select_local_keyframes(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    k: KeyframeId,
    l_loc: usize,
    cfg: &TopHConfig,
) -> Result<SelectionResult, Error> {
    beam_select(graph, candidates, Mode::Local { k }, l_loc, cfg)
}

/// Selects up to `l_f` fixed keyframes from the user's global map to anchor
/// the local map around `k`. Fixed keyframes only perturb diagonals of the
/// local information matrix, so the objective (its log-determinant) is
/// monotone submodular and plain greedy carries the (1 − 1/e) guarantee.
/// Stops early when no remaining candidate has positive gain.
pub fn select_fixed_keyframes(
    graph: &PoseGraph,
    k_loc_star: &BTreeSet<KeyframeId>,
    k: KeyframeId,
    k_g_user: &BTreeSet<KeyframeId>,
    l_f: usize,
) -> Result<SelectionResult, Error> {
    if !graph.contains(k) {
        return Err(Error::UnknownKeyframe(k));
    }
    for &id in k_loc_star {
        if !graph.contains(id) {
            return Err(Error::UnknownKeyframe(id));
        }
    }
    if k_loc_star.contains(&k) {
        return Err(Error::NewKeyframeInSet(k));
    }
    for &id in k_g_user {
        if !graph.contains(id) {
            return Err(Error::UnknownKeyframe(id));
        }
        if id == k {
            return Err(Error::NewKeyframeInSet(k));
        }
        if k_loc_star.contains(&id) {
            return Err(Error::OverlappingSets(id));
        }
    }
    let s = l_f.min(k_g_user.len());
    if s == 0 {
        let u = local_uncertainty(graph, k_loc_star, &BTreeSet::new(), k)?;
        return Ok(SelectionResult::new(Vec::new(), u, 0));
    }
    greedy_max_impl(
        |fixed| Ok(-local_uncertainty(graph, k_loc_star, fixed, k)?.value()),
        k_g_user,
        s,
        true,
    )
}

/// Local-map construction, decomposed: pick the local set first (ignoring
/// fixed anchors), then pick the fixed set conditioned on it. The second
/// result's uncertainty is the combined objective of the pair.
pub fn construct_local_map(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    k: KeyframeId,
    k_g_user: &BTreeSet<KeyframeId>,
    budget: &SelectionBudget,
    cfg: &TopHConfig,
) -> Result<(SelectionResult, SelectionResult), Error> {
    budget.validate()?;
    for &id in candidates {
        if k_g_user.contains(&id) {
            return Err(Error::OverlappingSets(id));
        }
    }
    let local = select_local_keyframes(graph, candidates, k, budget.l_loc, cfg)?;
    let k_loc_star: BTreeSet<KeyframeId> = local.chosen.iter().copied().collect();
    let fixed = select_fixed_keyframes(graph, &k_loc_star, k, k_g_user, budget.l_f)?;
    Ok((local, fixed))
}

/// Selects which pending keyframes to uplink: up to floor(capacity / size)
/// of them, minimizing the global-map uncertainty of the uplinked set plus
/// the picks. The already-uplinked set seeds the scoring state once; every
/// candidate is then scored incrementally against it.
pub fn select_global_keyframes(
    graph: &PoseGraph,
    k_g_edge: &BTreeSet<KeyframeId>,
    pending: &BTreeSet<KeyframeId>,
    budget: &SelectionBudget,
) -> Result<SelectionResult, Error> {
    budget.validate()?;
    select_global_with(
        graph,
        k_g_edge,
        pending,
        budget.global_picks(),
        &TopHConfig::default(),
    )
}

/// Global selection with explicit pick count and beam tuning; the public
/// entry point fixes the tuning to the defaults because capacity budgets,
/// not beam shape, are what vary per call site.
pub(crate) fn select_global_with(
    graph: &PoseGraph,
    k_g_edge: &BTreeSet<KeyframeId>,
    pending: &BTreeSet<KeyframeId>,
    picks: usize,
    cfg: &TopHConfig,
) -> Result<SelectionResult, Error> {
    beam_select(
        graph,
        pending,
        Mode::Global { existing: k_g_edge },
        picks,
        cfg,
    )
}

/// What a strategy is asked to do: pick `budget` ids out of `candidates`,
/// optimizing either a local map around a new keyframe or the global map on
/// top of `existing`.
pub struct SelectionTask<'a> {
    pub graph: &'a PoseGraph,
    pub candidates: &'a BTreeSet<KeyframeId>,
    pub existing: &'a BTreeSet<KeyframeId>,
    pub budget: usize,
    pub objective: Objective,
    pub tuning: TopHConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Local { k: KeyframeId },
    Global,
}

/// A pluggable selection policy. Implementations are registered by name and
/// picked at runtime (CLI flag or simulator config); they must be
/// deterministic given their construction seed.
pub trait SelectionStrategy {
    fn name(&self) -> &'static str;
    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error>;
}

/// The uncertainty-minimizing selector: top-h greedy with incremental
/// scoring for both objectives.
pub struct AdaptSlamStrategy;

impl SelectionStrategy for AdaptSlamStrategy {
    fn name(&self) -> &'static str {
        "adaptslam"
    }

    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error> {
        match task.objective {
            Objective::Local { k } => {
                select_local_keyframes(task.graph, task.candidates, k, task.budget, &task.tuning)
            }
            Objective::Global => select_global_with(
                task.graph,
                task.existing,
                task.candidates,
                task.budget,
                &task.tuning,
            ),
        }
    }
}
