//! Reference selection strategies: Random, DropOldest, ORBBuf-style
//! max-min selection, and exhaustive search — plus the name → constructor
//! registry that lets the CLI and simulator pick any policy at runtime.
//!
//! Randomness is pinned to one named generator, ChaCha8 seeded directly
//! with the configured integer, and bounded draws use explicit rejection
//! sampling (below). Golden outputs recorded on one platform therefore hold
//! on every platform.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::graph::{KeyframeId, PoseGraph};
use crate::oracle::{brute_force_select, BruteForceMode};
use crate::selection::{
    AdaptSlamStrategy, Objective, SelectionResult, SelectionStrategy, SelectionTask,
};
use crate::uncertainty::{global_uncertainty, local_uncertainty, Uncertainty};

/// Uniform draw from 0..n: reject the top remainder band of the 64-bit
/// range so every residue is equally likely, then reduce.
fn bounded_index(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    // 2^64 mod n, computed without overflowing.
    let reject_band = (u64::MAX % n).wrapping_add(1) % n;
    loop {
        let u = rng.next_u64();
        if reject_band == 0 || u <= u64::MAX - reject_band {
            return u % n;
        }
    }
}

/// Uniform sample of `s` candidates without replacement (partial
/// Fisher–Yates over the ascending candidate list), returned ascending.
/// Budgets beyond the pool select everything.
pub fn random_select(candidates: &BTreeSet<KeyframeId>, s: usize, seed: u64) -> Vec<KeyframeId> {
    let mut pool: Vec<KeyframeId> = candidates.iter().copied().collect();
    let s = s.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..s {
        let j = i + bounded_index(&mut rng, (pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(s);
    pool.sort_unstable();
    pool
}

/// Keeps the `s` newest keyframes (highest ids), ascending.
pub fn drop_oldest(candidates: &BTreeSet<KeyframeId>, s: usize) -> Vec<KeyframeId> {
    let s = s.min(candidates.len());
    let mut out: Vec<KeyframeId> = candidates.iter().rev().take(s).copied().collect();
    out.reverse();
    out
}

/// Minimum total edge weight over consecutive (by id) pairs of an ascending
/// selection; +∞ for fewer than two elements.
#[cfg(test)]
fn min_adjacent_weight(graph: &PoseGraph, selected: &[KeyframeId]) -> f64 {
    selected
        .windows(2)
        .map(|p| graph.weight_between(p[0], p[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Buffer-style selection: among size-s subsets, maximize the minimum total
/// edge weight between consecutive selected keyframes (consecutive in id
/// order — the temporal order a frame buffer maintains). Found by binary
/// search over the achievable thresholds; the feasibility check is an exact
/// longest-chain sweep rather than a single greedy pass, so the achieved
/// minimum is the true optimum. Ties resolve to the lexicographically
/// smallest id sequence.
pub fn orbbuf_select(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    s: usize,
) -> Vec<KeyframeId> {
    let pool: Vec<KeyframeId> = candidates.iter().copied().collect();
    let m = pool.len();
    let s = s.min(m);
    if s == 0 {
        return Vec::new();
    }
    if s == m {
        return pool;
    }
    let w = |i: usize, j: usize| graph.weight_between(pool[i], pool[j]);
    // Every achievable objective value is some pairwise weight (or 0, the
    // always-feasible floor when a consecutive pair shares no edge).
    let mut thresholds = vec![0.0f64];
    for i in 0..m {
        for j in i + 1..m {
            thresholds.push(w(i, j));
        }
    }
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    // Length of the longest chain whose consecutive weights all reach tau.
    let longest = |tau: f64| -> usize {
        let mut len = vec![1usize; m];
        let mut best = 0;
        for j in 0..m {
            for i in 0..j {
                if w(i, j) >= tau {
                    len[j] = len[j].max(len[i] + 1);
                }
            }
            best = best.max(len[j]);
        }
        best
    };
    // Feasibility is monotone in tau: binary search the largest threshold
    // still admitting an s-chain. Index 0 (tau = 0) is always feasible.
    let (mut lo, mut hi) = (0usize, thresholds.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if longest(thresholds[mid]) >= s {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let tau = thresholds[lo];
    // Chain lengths starting at each index, for the lexicographic rebuild.
    let mut reach = vec![1usize; m];
    for i in (0..m).rev() {
        for j in i + 1..m {
            if w(i, j) >= tau {
                reach[i] = reach[i].max(1 + reach[j]);
            }
        }
    }
    // Take the smallest feasible id at every step; `reach` certifies the
    // remainder can still be completed.
    let mut out = Vec::with_capacity(s);
    let mut prev: Option<usize> = None;
    let mut start = 0;
    let mut need = s;
    while need > 0 {
        for idx in start..m {
            let linked = prev.is_none_or(|p| w(p, idx) >= tau);
            if linked && reach[idx] >= need {
                out.push(pool[idx]);
                prev = Some(idx);
                start = idx + 1;
                need -= 1;
                break;
            }
        }
    }
    out
}

/// Scores a finished baseline pick under the task's objective so all
/// strategies report comparable, from-scratch uncertainties.
fn finish(
    task: &SelectionTask,
    chosen: Vec<KeyframeId>,
    evaluations: u64,
) -> Result<SelectionResult, Error> {
    let set: BTreeSet<KeyframeId> = chosen.iter().copied().collect();
    let value = match task.objective {
        Objective::Local { k } => local_uncertainty(task.graph, &set, &BTreeSet::new(), k)?.value(),
        Objective::Global => {
            let full: BTreeSet<KeyframeId> = task.existing.union(&set).copied().collect();
            if full.len() < 2 {
                f64::INFINITY
            } else {
                global_uncertainty(task.graph, &full)?.value()
            }
        }
    };
    Ok(SelectionResult {
        chosen,
        uncertainty: Uncertainty(value),
        singular: value.is_infinite(),
        evaluations,
    })
}

/// Uniform random picks; each call advances the strategy's own ChaCha8
/// stream, so a run over many selection windows stays reproducible from the
/// single configured seed.
pub struct RandomStrategy {
    rng: ChaCha8Rng,
}

impl RandomStrategy {
    pub fn new(seed: u64) -> Self {
        RandomStrategy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl SelectionStrategy for RandomStrategy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error> {
        let sub_seed = self.rng.next_u64();
        finish(
            task,
            random_select(task.candidates, task.budget, sub_seed),
            0,
        )
    }
}

pub struct DropOldestStrategy;

impl SelectionStrategy for DropOldestStrategy {
    fn name(&self) -> &'static str {
        "dropoldest"
    }

    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error> {
        finish(task, drop_oldest(task.candidates, task.budget), 0)
    }
}

pub struct OrbBufStrategy;

impl SelectionStrategy for OrbBufStrategy {
    fn name(&self) -> &'static str {
        "orbbuf"
    }

    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error> {
        finish(
            task,
            orbbuf_select(task.graph, task.candidates, task.budget),
            0,
        )
    }
}

/// Exhaustive search behind the strategy interface; subject to the oracle's
/// combinatorial guard.
pub struct BruteForceStrategy;

impl SelectionStrategy for BruteForceStrategy {
    fn name(&self) -> &'static str {
        "bruteforce"
    }

    fn select(&mut self, task: &SelectionTask) -> Result<SelectionResult, Error> {
        let empty = BTreeSet::new();
        let mode = match task.objective {
            Objective::Local { k } => BruteForceMode::Local { k, k_fixed: &empty },
            Objective::Global => BruteForceMode::Global,
        };
        brute_force_select(
            task.graph,
            task.candidates,
            task.existing,
            task.budget,
            mode,
        )
    }
}

type StrategyCtor = fn(u64) -> Box<dyn SelectionStrategy>;

/// The runtime policy table: every selectable strategy, by the name used in
/// CLI flags and simulator configs.
static REGISTRY: &[(&str, StrategyCtor)] = &[
    ("adaptslam", |_| Box::new(AdaptSlamStrategy)),
    ("random", |seed| Box::new(RandomStrategy::new(seed))),
    ("dropoldest", |_| Box::new(DropOldestStrategy)),
    ("orbbuf", |_| Box::new(OrbBufStrategy)),
    ("bruteforce", |_| Box::new(BruteForceStrategy)),
];

pub fn strategy_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|(name, _)| *name).collect()
}

/// Instantiates a strategy by registry name. The seed only matters for
/// stochastic strategies; deterministic ones ignore it.
pub fn make_strategy(name: &str, seed: u64) -> Result<Box<dyn SelectionStrategy>, Error> {
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, ctor)| ctor(seed))
        .ok_or_else(|| Error::UnknownStrategy(name.to_string()))
}
