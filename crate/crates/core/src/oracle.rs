//! Ground-truth machinery for testing the fast paths: exhaustive selection,
//! spanning-tree enumeration, the empirical submodularity ratio, and the
//! closed-form ratio lower bound.
//!
//! Everything here trades time for certainty. Enumeration sizes are guarded
//! by hard limits that fail loudly — an oracle that silently truncates is
//! worse than no oracle.

use std::collections::BTreeSet;

use crate::error::Error;
use crate::graph::{KeyframeId, PoseGraph};
use crate::selection::SelectionResult;
use crate::uncertainty::{global_uncertainty, local_uncertainty, Uncertainty};

/// Hard cap on subsets an exhaustive selection may evaluate.
const COMBINATION_GUARD: u128 = 10_000_000;
/// Spanning-tree enumeration is limited to this many nodes.
const SPANNING_TREE_MAX_NODES: usize = 8;
/// Submodularity-ratio enumeration is limited to this many universe elements.
const RATIO_MAX_UNIVERSE: usize = 10;
/// Differences below this are "zero" when forming Eq-style ratios of
/// log-domain objective values.
const RATIO_EPS: f64 = 1e-12;

/// Which objective an exhaustive selection optimizes.
pub enum BruteForceMode<'a> {
    Local {
        k: KeyframeId,
        k_fixed: &'a BTreeSet<KeyframeId>,
    },
    Global,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    result
}

/// Visits every k-subset of 0..m as ascending index slices, in lexicographic
/// order. The closure may abort the walk with an error.
fn for_each_combination(
    m: usize,
    k: usize,
    mut f: impl FnMut(&[usize]) -> Result<(), Error>,
) -> Result<(), Error> {
    if k > m {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx)?;
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            return Ok(());
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn scratch_value(
    graph: &PoseGraph,
    existing: &BTreeSet<KeyframeId>,
    subset: &BTreeSet<KeyframeId>,
    mode: &BruteForceMode,
) -> Result<f64, Error> {
    match mode {
        BruteForceMode::Local { k, k_fixed } => {
            Ok(local_uncertainty(graph, subset, k_fixed, *k)?.value())
        }
        BruteForceMode::Global => {
            let full: BTreeSet<KeyframeId> = existing.union(subset).copied().collect();
            if full.len() < 2 {
                return Ok(f64::INFINITY);
            }
            Ok(global_uncertainty(graph, &full)?.value())
        }
    }
}

/// Exhaustive selection: scores every size-s subset of the candidates from
/// scratch and returns the exact argmin, ties to the lexicographically
/// smallest subset. Refuses instances beyond the combinatorial guard.
pub fn brute_force_select(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    existing: &BTreeSet<KeyframeId>,
    s: usize,
    mode: BruteForceMode,
) -> Result<SelectionResult, Error> {
    for &c in candidates {
        if !graph.contains(c) {
            return Err(Error::UnknownKeyframe(c));
        }
    }
    let pool: Vec<KeyframeId> = candidates.iter().copied().collect();
    let s = s.min(pool.len());
    let combinations = binomial(pool.len(), s);
    if combinations > COMBINATION_GUARD {
        return Err(Error::CombinatorialGuard {
            combinations,
            guard: COMBINATION_GUARD,
        });
    }
    let mut best: Option<(f64, Vec<KeyframeId>)> = None;
    let mut evaluations = 0u64;
    for_each_combination(pool.len(), s, |idx| {
        let subset: BTreeSet<KeyframeId> = idx.iter().map(|&i| pool[i]).collect();
        let value = scratch_value(graph, existing, &subset, &mode)?;
        evaluations += 1;
        // Strict improvement keeps the first (lexicographically smallest)
        // optimal subset, matching the selectors' tie-break.
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, subset.into_iter().collect()));
        }
        Ok(())
    })?;
    let (value, chosen) = best.expect("at least the empty combination is visited");
    Ok(SelectionResult {
        chosen,
        uncertainty: Uncertainty(value),
        singular: value.is_infinite(),
        evaluations,
    })
}

/// Exhaustive optimum of the whole local-map problem: jointly enumerates the
/// local set (size l_loc) and the fixed set (size l_f) and minimizes the
/// combined uncertainty. Exact-size enumeration suffices because both
/// objectives are monotone — extra connected keyframes and extra fixed
/// anchors never hurt — so some full-size pair attains the optimum.
pub fn joint_brute_force(
    graph: &PoseGraph,
    candidates: &BTreeSet<KeyframeId>,
    k: KeyframeId,
    k_g_user: &BTreeSet<KeyframeId>,
    l_loc: usize,
    l_f: usize,
) -> Result<(Vec<KeyframeId>, Vec<KeyframeId>, Uncertainty), Error> {
    let local_pool: Vec<KeyframeId> = candidates.iter().copied().collect();
    let fixed_pool: Vec<KeyframeId> = k_g_user.iter().copied().collect();
    let l_loc = l_loc.min(local_pool.len());
    let l_f = l_f.min(fixed_pool.len());
    let combinations =
        binomial(local_pool.len(), l_loc).saturating_mul(binomial(fixed_pool.len(), l_f));
    if combinations > COMBINATION_GUARD {
        return Err(Error::CombinatorialGuard {
            combinations,
            guard: COMBINATION_GUARD,
        });
    }
    let mut best: Option<(f64, Vec<KeyframeId>, Vec<KeyframeId>)> = None;
    for_each_combination(local_pool.len(), l_loc, |li| {
        let k_loc: BTreeSet<KeyframeId> = li.iter().map(|&i| local_pool[i]).collect();
        for_each_combination(fixed_pool.len(), l_f, |fi| {
            let k_fixed: BTreeSet<KeyframeId> = fi.iter().map(|&i| fixed_pool[i]).collect();
            let value = local_uncertainty(graph, &k_loc, &k_fixed, k)?.value();
            if best.as_ref().is_none_or(|(v, _, _)| value < *v) {
                best = Some((
                    value,
                    k_loc.iter().copied().collect(),
                    k_fixed.iter().copied().collect(),
                ));
            }
            Ok(())
        })
    })?;
    let (value, k_loc, k_fixed) = best.expect("the empty pair is always visited");
    Ok((k_loc, k_fixed, Uncertainty(value)))
}

struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the two sets; false when they were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Weighted spanning-tree count by direct enumeration: Σ over spanning trees
/// of Π edge weights, on the simple graph with parallel category weights
/// summed. This is the independent side of the matrix-tree cross-check.
pub fn spanning_tree_weight(graph: &PoseGraph) -> Result<f64, Error> {
    let nodes: Vec<KeyframeId> = graph.nodes().collect();
    let n = nodes.len();
    if n == 0 {
        return Err(Error::TooFewKeyframes(0));
    }
    if n > SPANNING_TREE_MAX_NODES {
        return Err(Error::EnumerationGuard {
            max: SPANNING_TREE_MAX_NODES,
            got: n,
        });
    }
    if n == 1 {
        // The single node is itself the one spanning tree: empty product.
        return Ok(1.0);
    }
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let w = graph.weight_between(nodes[i], nodes[j]);
            if w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    if edges.len() < n - 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for_each_combination(edges.len(), n - 1, |idx| {
        let mut dsu = Dsu::new(n);
        let mut product = 1.0;
        for &ei in idx {
            let (a, b, w) = edges[ei];
            if !dsu.union(a, b) {
                // A cycle: n−1 edges with a cycle cannot span.
                return Ok(());
            }
            product *= w;
        }
        // n−1 successful unions on n nodes guarantee a spanning tree.
        total += product;
        Ok(())
    })?;
    Ok(total)
}

/// Exact submodularity ratio: the minimum over all L ⊆ V, S ⊆ V with
/// |S| ≤ s, and x ∉ S ∪ L of the marginal-gain ratio
/// [f(L∪{x}) − f(L)] / [f(L∪S∪{x}) − f(L∪S)], with 0/0 taken as 1 and
/// positive-over-zero pairs skipped (they constrain nothing). Submodular
/// objectives score ≥ 1; values below 1 measure how far greedy guarantees
/// degrade.
pub fn submodularity_ratio<F>(
    objective: F,
    universe: &BTreeSet<KeyframeId>,
    s: usize,
) -> Result<f64, Error>
where
    F: FnMut(&BTreeSet<KeyframeId>) -> f64,
{
    let elems: Vec<KeyframeId> = universe.iter().copied().collect();
    let n = elems.len();
    if n > RATIO_MAX_UNIVERSE {
        return Err(Error::EnumerationGuard {
            max: RATIO_MAX_UNIVERSE,
            got: n,
        });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let mut f = objective;
    let values: Vec<f64> = (0..1usize << n)
        .map(|mask| {
            let set: BTreeSet<KeyframeId> = (0..n)
                .filter(|&i| mask & (1 << i) != 0)
                .map(|i| elems[i])
                .collect();
            f(&set)
        })
        .collect();
    let mut gamma = f64::INFINITY;
    for l_mask in 0..1usize << n {
        for s_mask in 0..1usize << n {
            if (s_mask as u32).count_ones() as usize > s {
                continue;
            }
            let ls = l_mask | s_mask;
            for x in 0..n {
                let bit = 1usize << x;
                if ls & bit != 0 {
                    continue;
                }
                let num = values[l_mask | bit] - values[l_mask];
                let den = values[ls | bit] - values[ls];
                if den.abs() <= RATIO_EPS {
                    if num.abs() <= RATIO_EPS {
                        gamma = gamma.min(1.0);
                    }
                } else {
                    gamma = gamma.min(num / den);
                }
            }
        }
    }
    Ok(gamma)
}

/// Outcome of the closed-form ratio bound: a usable number, or a named
/// reason why the bound says nothing about this instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioFloor {
    Value(f64),
    Vacuous(&'static str),
}

/// Closed-form lower bound on the submodularity ratio of the global
/// objective when adding `k_add` candidates on top of `k_base`:
/// 1 + (1/ϑ)·ln(1 − 4|K_add|²·w²_max / (|K_base|·w_min − w_max)), where
/// w_min/w_max range over pairs inside K_base ∪ K_add and
/// ϑ = min over m ∈ K_add of Σ_{n ∈ K_base} ln w(n, m). The bound applies
/// only when w_max / (|K_base|·w_min) < 1; outside that regime (or when a
/// pair has no edge, the log argument turns non-positive, or ϑ collapses to
/// zero because all weights are 1) it is reported vacuous.
pub fn ratio_floor(
    graph: &PoseGraph,
    k_base: &BTreeSet<KeyframeId>,
    k_add: &BTreeSet<KeyframeId>,
) -> Result<RatioFloor, Error> {
    if k_base.is_empty() || k_add.is_empty() {
        return Err(Error::Config(
            "ratio bound needs non-empty base and add sets".into(),
        ));
    }
    for &id in k_base.iter().chain(k_add.iter()) {
        if !graph.contains(id) {
            return Err(Error::UnknownKeyframe(id));
        }
    }
    if let Some(&id) = k_base.intersection(k_add).next() {
        return Err(Error::OverlappingSets(id));
    }
    let union: Vec<KeyframeId> = k_base.union(k_add).copied().collect();
    let mut w_min = f64::INFINITY;
    let mut w_max: f64 = 0.0;
    for i in 0..union.len() {
        for j in i + 1..union.len() {
            let w = graph.weight_between(union[i], union[j]);
            w_min = w_min.min(w);
            w_max = w_max.max(w);
        }
    }
    if w_min <= 0.0 {
        return Ok(RatioFloor::Vacuous(
            "a pair inside the base/add union has no edge",
        ));
    }
    if w_max / (k_base.len() as f64 * w_min) >= 1.0 {
        return Ok(RatioFloor::Vacuous(
            "weight spread violates the hypothesis w_max/(|K_base|·w_min) < 1",
        ));
    }
    let theta = k_add
        .iter()
        .map(|&m| {
            k_base
                .iter()
                .map(|&n| graph.weight_between(n, m).ln())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    if theta <= 0.0 {
        return Ok(RatioFloor::Vacuous(
            "all base-to-add weights are 1, the log scale collapses",
        ));
    }
    let denom = k_base.len() as f64 * w_min - w_max;
    let arg = 1.0 - 4.0 * (k_add.len() as f64).powi(2) * w_max * w_max / denom;
    if arg <= 0.0 {
        return Ok(RatioFloor::Vacuous(
            "the bound's log argument is non-positive",
        ));
    }
    Ok(RatioFloor::Value(1.0 + arg.ln() / theta))
}
