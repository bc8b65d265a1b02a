//! Incremental determinant and inverse updates for candidate scoring.
//!
//! During selection, every candidate keyframe n extends the current reduced
//! information matrix A (over chosen rows Λ, with the anchor's row deleted)
//! to `[[A + diag(a), −a], [−aᵀ, d]]`, where `a_i` is the weight from n to
//! row i and `d` is n's total weight into the whole chosen set. Its
//! determinant is `(d − aᵀ(A′)⁻¹a) · det(A′)` with `A′ = A + diag(a)`, and
//! both factors come from sequential Sherman–Morrison rank-1 corrections of
//! the cached inverse B = A⁻¹ — no per-candidate refactorization.
//!
//! Scoring touches only the rows where `a` is nonzero: the corrections close
//! over the support-indexed block of B, so a candidate with few edges into
//! the chosen set costs O(nnz(a)³) instead of O(dim³).
//!
//! Every cofactor of a graph Laplacian is the same weighted spanning-tree
//! count, so anchoring on the newest keyframe (or any seed node) yields the
//! same determinant as the lowest-id anchor used by the scratch evaluators.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::graph::{KeyframeId, PoseGraph, ReducedLaplacian};
use crate::uncertainty::{check_symmetry, Ldlt, Uncertainty, PIVOT_RTOL};

/// Rebuild the factorization from the tracked matrix after this many
/// accepted extensions, bounding accumulated rank-1 rounding drift.
const REFRESH_INTERVAL: usize = 50;

/// Candidate extension of a [`ReuseState`]: `a[i]` is the total edge weight
/// from the candidate to row i, `d` its total weight into the whole tracked
/// set (rows plus anchor).
#[derive(Debug, Clone)]
pub struct CandidateDelta {
    pub a: Vec<f64>,
    pub d: f64,
    /// Positions of the nonzero entries of `a`, ascending.
    support: Vec<usize>,
}

impl CandidateDelta {
    pub fn new(a: Vec<f64>, d: f64) -> Self {
        let support = a
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        CandidateDelta { a, d, support }
    }
}

/// Cached determinant/inverse state of the reduced information matrix over
/// `rows`, anchored on `anchor` (whose row is deleted). The determinant is
/// tracked in log space: weighted spanning-tree counts overflow f64 well
/// before realistic map sizes are reached.
#[derive(Debug, Clone)]
pub struct ReuseState {
    rows: Vec<KeyframeId>,
    index: BTreeMap<KeyframeId, usize>,
    /// `None` only before the first node is tracked (empty global seed).
    anchor: Option<KeyframeId>,
    matrix: DMatrix<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
    /// B_i·B_iᵀ per column of the inverse, applied as the first correction
    /// of each Sherman–Morrison sweep.
    outer: Vec<DMatrix<f64>>,
    commits: usize,
}

impl ReuseState {
    /// Initializes from an explicit reduced matrix whose rows are
    /// `reduced.node_order` and whose deleted anchor is `anchor`.
    pub fn init(reduced: &ReducedLaplacian, anchor: Option<KeyframeId>) -> Result<Self, Error> {
        check_symmetry(&reduced.matrix)?;
        Self::from_parts(reduced.matrix.clone(), reduced.node_order.clone(), anchor)
    }

    fn from_parts(
        matrix: DMatrix<f64>,
        rows: Vec<KeyframeId>,
        anchor: Option<KeyframeId>,
    ) -> Result<Self, Error> {
        debug_assert_eq!(matrix.nrows(), rows.len());
        let factor = Ldlt::factor(&matrix).ok_or(Error::SingularMatrix)?;
        let log_det = factor.log_det();
        let inv = factor.inverse();
        let outer = outer_products(&inv);
        let index = rows.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Ok(ReuseState {
            rows,
            index,
            anchor,
            matrix,
            inv,
            log_det,
            outer,
            commits: 0,
        })
    }

    /// State for local selection: rows are the chosen set Λ in pick order,
    /// anchored on the new keyframe `k`. Row diagonals include each row's
    /// edge weight to `k`.
    pub fn for_local(
        graph: &PoseGraph,
        lambda: &[KeyframeId],
        k: KeyframeId,
    ) -> Result<Self, Error> {
        if !graph.contains(k) {
            return Err(Error::UnknownKeyframe(k));
        }
        let mut seen = BTreeSet::new();
        for &id in lambda {
            if !graph.contains(id) {
                return Err(Error::UnknownKeyframe(id));
            }
            if id == k {
                return Err(Error::NewKeyframeInSet(k));
            }
            if !seen.insert(id) {
                return Err(Error::DuplicateNodeOrder(id));
            }
        }
        let matrix = anchored_matrix(graph, lambda, k);
        Self::from_parts(matrix, lambda.to_vec(), Some(k))
    }

    /// State for global selection: the seed set is tracked with its lowest
    /// id as anchor. An empty seed yields a zero-dimensional state whose
    /// first extension installs the anchor.
    pub fn for_global(graph: &PoseGraph, seed: &BTreeSet<KeyframeId>) -> Result<Self, Error> {
        for &id in seed {
            if !graph.contains(id) {
                return Err(Error::UnknownKeyframe(id));
            }
        }
        let Some(&anchor) = seed.iter().next() else {
            return Self::from_parts(DMatrix::zeros(0, 0), Vec::new(), None);
        };
        let rows: Vec<KeyframeId> = seed.iter().copied().filter(|&id| id != anchor).collect();
        let matrix = anchored_matrix(graph, &rows, anchor);
        Self::from_parts(matrix, rows, Some(anchor))
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Number of tracked nodes: rows plus the anchor.
    pub fn node_count(&self) -> usize {
        self.rows.len() + usize::from(self.anchor.is_some())
    }

    pub fn rows(&self) -> &[KeyframeId] {
        &self.rows
    }

    pub fn anchor(&self) -> Option<KeyframeId> {
        self.anchor
    }

    pub fn det_a(&self) -> f64 {
        self.log_det.exp()
    }

    pub fn log_det_a(&self) -> f64 {
        self.log_det
    }

    pub fn inv_a(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn outer_products(&self) -> &[DMatrix<f64>] {
        &self.outer
    }

    /// Uncertainty of the tracked set itself; +∞ while fewer than two nodes
    /// are tracked (a map needs an anchor and at least one estimated pose).
    pub fn tracked_uncertainty(&self) -> Uncertainty {
        if self.node_count() < 2 {
            Uncertainty::INFINITE
        } else {
            Uncertainty(-self.log_det)
        }
    }

    /// Builds the extension vector for candidate `n` from the graph.
    pub fn delta_for(&self, graph: &PoseGraph, n: KeyframeId) -> CandidateDelta {
        debug_assert!(self.index.get(&n).is_none() && self.anchor != Some(n));
        let mut a = vec![0.0; self.rows.len()];
        let mut to_anchor = 0.0;
        for (nbr, w) in graph.neighbors(n) {
            if Some(nbr) == self.anchor {
                to_anchor = w;
            } else if let Some(&i) = self.index.get(&nbr) {
                a[i] = w;
            }
        }
        let d = to_anchor + a.iter().sum::<f64>();
        CandidateDelta::new(a, d)
    }

    fn check_delta(&self, delta: &CandidateDelta) -> Result<(), Error> {
        if delta.a.len() != self.rows.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rows.len(),
                got: delta.a.len(),
            });
        }
        Ok(())
    }

    /// Sequential Sherman–Morrison corrections restricted to the support of
    /// `a`: returns (Σ ln pivot, aᵀ(A′)⁻¹a). Only the support × support
    /// block of B participates, so the cost is O(nnz(a)³).
    fn restricted_corrections(&self, delta: &CandidateDelta) -> Result<(f64, f64), Error> {
        let s = delta.support.len();
        if s == 0 {
            return Ok((0.0, 0.0));
        }
        let m = self.rows.len();
        let b = self.inv.as_slice();
        let mut block = vec![0.0; s * s];
        let mut a_s = vec![0.0; s];
        for (q, &jq) in delta.support.iter().enumerate() {
            a_s[q] = delta.a[jq];
            for (p, &jp) in delta.support.iter().enumerate() {
                block[p + q * s] = b[jp + jq * m];
            }
        }
        // aᵀBa over the untouched block.
        let mut quad = 0.0;
        for q in 0..s {
            let mut col = 0.0;
            for p in 0..s {
                col += a_s[p] * block[p + q * s];
            }
            quad += a_s[q] * col;
        }
        let mut log_ratio = 0.0;
        for t in 0..s {
            let pivot = 1.0 + a_s[t] * block[t + t * s];
            if pivot <= 0.0 {
                return Err(Error::DegenerateUpdate(pivot));
            }
            log_ratio += pivot.ln();
            let c = a_s[t] / pivot;
            // aᵀu_t over the running column t, then subtract its correction
            // from the quadratic form and from the later columns.
            let mut au = 0.0;
            for p in 0..s {
                au += a_s[p] * block[p + t * s];
            }
            quad -= c * au * au;
            for q in t + 1..s {
                let f = c * block[q + t * s];
                if f != 0.0 {
                    for p in 0..s {
                        block[p + q * s] -= f * block[p + t * s];
                    }
                }
            }
        }
        Ok((log_ratio, quad))
    }

    /// Full-dimension sequential Sherman–Morrison: the corrected inverse
    /// (A + diag(a))⁻¹ plus Σ ln pivot. The precomputed outer product serves
    /// the first correction, where the running inverse still equals B.
    fn corrected_inverse(&self, delta: &CandidateDelta) -> Result<(DMatrix<f64>, f64), Error> {
        let mut b = self.inv.clone();
        let mut log_ratio = 0.0;
        for (t, &i) in delta.support.iter().enumerate() {
            let a_i = delta.a[i];
            let pivot = 1.0 + a_i * b[(i, i)];
            if pivot <= 0.0 {
                return Err(Error::DegenerateUpdate(pivot));
            }
            log_ratio += pivot.ln();
            let c = a_i / pivot;
            if t == 0 {
                b -= &self.outer[i] * c;
            } else {
                let u = b.column(i).clone_owned();
                let m = b.nrows();
                for q in 0..m {
                    let f = c * u[q];
                    if f != 0.0 {
                        for p in 0..m {
                            b[(p, q)] -= f * u[p];
                        }
                    }
                }
            }
        }
        Ok((b, log_ratio))
    }

    /// (A + diag(a))⁻¹ via sequential rank-1 corrections of the cached B.
    pub fn extended_inverse(&self, delta: &CandidateDelta) -> Result<DMatrix<f64>, Error> {
        self.check_delta(delta)?;
        Ok(self.corrected_inverse(delta)?.0)
    }

    /// det(A + diag(a)) = det(A) · Π (1 + a_i · running-Bᵢᵢ).
    pub fn extended_determinant(&self, delta: &CandidateDelta) -> Result<f64, Error> {
        Ok(self.extended_log_determinant(delta)?.exp())
    }

    /// ln det(A + diag(a)); the log form survives weighted spanning-tree
    /// counts that overflow a plain double.
    pub fn extended_log_determinant(&self, delta: &CandidateDelta) -> Result<f64, Error> {
        self.check_delta(delta)?;
        let (log_ratio, _) = self.restricted_corrections(delta)?;
        Ok(self.log_det + log_ratio)
    }

    /// Uncertainty of the tracked set extended by the candidate:
    /// −ln[(d − aᵀ(A′)⁻¹a) · det(A′)]. +∞ when the Schur complement falls to
    /// the singularity tolerance, i.e. the candidate cannot reach an anchor.
    pub fn candidate_uncertainty(&self, delta: &CandidateDelta) -> Result<Uncertainty, Error> {
        self.check_delta(delta)?;
        let (log_ratio, quad) = self.restricted_corrections(delta)?;
        let sigma = delta.d - quad;
        if sigma <= PIVOT_RTOL * delta.d.max(1.0) {
            return Ok(Uncertainty::INFINITE);
        }
        Ok(Uncertainty(-(sigma.ln() + self.log_det + log_ratio)))
    }

    /// Commits candidate `n`: the tracked matrix gains row/column n, and the
    /// cached inverse/determinant are updated through the same corrections
    /// used for scoring. Fails with [`Error::SingularMatrix`] when the
    /// candidate leaves the extended matrix singular (disconnected pick).
    pub fn extend(&mut self, n: KeyframeId, delta: &CandidateDelta) -> Result<(), Error> {
        self.check_delta(delta)?;
        if self.anchor.is_none() && self.rows.is_empty() {
            // First tracked node: it becomes the anchor of a 0×0 matrix.
            self.anchor = Some(n);
            return Ok(());
        }
        let (b_prime, log_ratio) = self.corrected_inverse(delta)?;
        let m = self.rows.len();
        let v = &b_prime * DMatrix::from_column_slice(m, 1, &delta.a);
        let quad: f64 = (0..m).map(|i| delta.a[i] * v[(i, 0)]).sum();
        let sigma = delta.d - quad;
        if sigma <= PIVOT_RTOL * delta.d.max(1.0) {
            return Err(Error::SingularMatrix);
        }
        // New matrix [[A + diag(a), −a], [−aᵀ, d]].
        let mut matrix = DMatrix::zeros(m + 1, m + 1);
        matrix.view_mut((0, 0), (m, m)).copy_from(&self.matrix);
        for i in 0..m {
            matrix[(i, i)] += delta.a[i];
            matrix[(i, m)] = -delta.a[i];
            matrix[(m, i)] = -delta.a[i];
        }
        matrix[(m, m)] = delta.d;
        // Block inverse from the Schur complement σ.
        let mut inv = DMatrix::zeros(m + 1, m + 1);
        for i in 0..m {
            for j in 0..m {
                inv[(i, j)] = b_prime[(i, j)] + v[(i, 0)] * v[(j, 0)] / sigma;
            }
            inv[(i, m)] = v[(i, 0)] / sigma;
            inv[(m, i)] = v[(i, 0)] / sigma;
        }
        inv[(m, m)] = 1.0 / sigma;
        self.log_det += sigma.ln() + log_ratio;
        self.matrix = matrix;
        self.inv = inv;
        self.outer = outer_products(&self.inv);
        self.index.insert(n, m);
        self.rows.push(n);
        self.commits += 1;
        if self.commits >= REFRESH_INTERVAL {
            self.refresh()?;
        }
        Ok(())
    }

    /// Rebuilds determinant, inverse, and outer products from the tracked
    /// matrix by fresh factorization, clearing accumulated rank-1 drift.
    pub fn refresh(&mut self) -> Result<(), Error> {
        let factor = Ldlt::factor(&self.matrix).ok_or(Error::SingularMatrix)?;
        self.log_det = factor.log_det();
        self.inv = factor.inverse();
        self.outer = outer_products(&self.inv);
        self.commits = 0;
        Ok(())
    }
}

/// Reduced information matrix over `rows` with `anchor`'s row/column
/// deleted: off-diagonals from edges among the rows, diagonals additionally
/// carrying each row's weight to the anchor.
fn anchored_matrix(graph: &PoseGraph, rows: &[KeyframeId], anchor: KeyframeId) -> DMatrix<f64> {
    let m = rows.len();
    let mut matrix = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i + 1..m {
            let w = graph.weight_between(rows[i], rows[j]);
            if w > 0.0 {
                matrix[(i, j)] = -w;
                matrix[(j, i)] = -w;
                matrix[(i, i)] += w;
                matrix[(j, j)] += w;
            }
        }
        matrix[(i, i)] += graph.weight_between(rows[i], anchor);
    }
    matrix
}

fn outer_products(inv: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    (0..inv.ncols())
        .map(|i| {
            let col = inv.column(i);
            &col * col.transpose()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeCategory;
    use crate::uncertainty::local_uncertainty;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn state_from(matrix: DMatrix<f64>) -> ReuseState {
        let rows: Vec<KeyframeId> = (1..=matrix.nrows() as u64).collect();
        ReuseState::from_parts(matrix, rows, Some(0)).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn init_scalar() {
        let s = state_from(DMatrix::from_row_slice(1, 1, &[2.0]));
        assert_relative_eq!(s.det_a(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(s.inv_a()[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.outer_products()[0][(0, 0)], 0.25, max_relative = 1e-12);
    }

    #[test]
    fn init_two_by_two() {
        let s = state_from(DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert_relative_eq!(s.det_a(), 3.0, max_relative = 1e-12);
        for (i, j, v) in [(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)] {
            assert_relative_eq!(s.inv_a()[(i, j)], v / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn init_rejects_singular() {
        let reduced = ReducedLaplacian {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
            node_order: vec![1, 2],
        };
        assert!(matches!(
            ReuseState::init(&reduced, Some(3)),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn inverse_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spd = random_spd(&mut rng, 10);
        let s = state_from(spd.clone());
        let prod = &spd * s.inv_a();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expected).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn outer_products_match_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = state_from(random_spd(&mut rng, 6));
        for i in 0..6 {
            let col = s.inv_a().column(i).clone_owned();
            let expect = &col * col.transpose();
            assert_eq!(s.outer_products()[i], expect);
        }
    }

    #[test]
    fn zero_vector_update_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = state_from(random_spd(&mut rng, 5));
        let delta = CandidateDelta::new(vec![0.0; 5], 3.0);
        assert_eq!(s.extended_inverse(&delta).unwrap(), *s.inv_a());
        assert_relative_eq!(
            s.extended_determinant(&delta).unwrap(),
            s.det_a(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn scalar_update() {
        let s = state_from(DMatrix::from_row_slice(1, 1, &[2.0]));
        let delta = CandidateDelta::new(vec![1.0], 1.5);
        let inv = s.extended_inverse(&delta).unwrap();
        assert_relative_eq!(inv[(0, 0)], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(
            s.extended_determinant(&delta).unwrap(),
            3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn extended_inverse_matches_fresh_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = 8;
            let spd = random_spd(&mut rng, n);
            let s = state_from(spd.clone());
            let a: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.6) {
                        rng.gen_range(0.0..10.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let delta = CandidateDelta::new(a.clone(), 1.0);
            let got = s.extended_inverse(&delta).unwrap();
            let mut shifted = spd.clone();
            for i in 0..n {
                shifted[(i, i)] += a[i];
            }
            let fresh = Ldlt::factor(&shifted).unwrap().inverse();
            for i in 0..n {
                for j in 0..n {
                    assert_relative_eq!(
                        got[(i, j)],
                        fresh[(i, j)],
                        max_relative = 1e-7,
                        epsilon = 1e-10
                    );
                }
            }
            let fresh_det = Ldlt::factor(&shifted).unwrap().log_det();
            assert_relative_eq!(
                s.extended_log_determinant(&delta).unwrap(),
                fresh_det,
                max_relative = 1e-7
            );
            // Multiply-back invariant.
            let prod = &shifted * &got;
            for i in 0..n {
                for j in 0..n {
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = state_from(DMatrix::from_row_slice(1, 1, &[2.0]));
        let delta = CandidateDelta::new(vec![1.0, 2.0], 3.0);
        assert!(matches!(
            s.candidate_uncertainty(&delta),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn degenerate_pivot_reports_refresh_needed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = state_from(random_spd(&mut rng, 3));
        // Corrupt the cached inverse the way accumulated drift would.
        s.inv[(0, 0)] = -5.0;
        let delta = CandidateDelta::new(vec![1.0, 0.0, 0.0], 2.0);
        assert!(matches!(
            s.candidate_uncertainty(&delta),
            Err(Error::DegenerateUpdate(_))
        ));
        s.refresh().unwrap();
        assert!(s.candidate_uncertainty(&delta).is_ok());
    }

    fn chain_graph(n: u64, rng: &mut ChaCha8Rng) -> PoseGraph {
        let mut g = PoseGraph::new();
        for id in 1..=n {
            g.add_keyframe(id).unwrap();
        }
        for id in 1..n {
            g.add_edge(id, id + 1, EdgeCategory::Vis, rng.gen_range(1.0..40.0))
                .unwrap();
        }
        for a in 1..=n {
            for b in a + 2..=n {
                if rng.gen_bool(0.3) {
                    g.add_edge(a, b, EdgeCategory::Vis, rng.gen_range(1.0..40.0))
                        .unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn disconnected_candidate_is_infinite() {
        let mut g = PoseGraph::new();
        for id in [1, 2, 3] {
            g.add_keyframe(id).unwrap();
        }
        g.add_edge(1, 2, EdgeCategory::Vis, 4.0).unwrap();
        let s = ReuseState::for_local(&g, &[1], 2).unwrap();
        // Keyframe 3 has no edges at all: a = 0, d = 0.
        let delta = s.delta_for(&g, 3);
        assert_eq!(delta.d, 0.0);
        assert!(s.candidate_uncertainty(&delta).unwrap().is_singular());
    }

    #[test]
    fn anchor_only_candidate_drops_uncertainty_by_log_weight() {
        let mut g = PoseGraph::new();
        for id in [1, 2, 3] {
            g.add_keyframe(id).unwrap();
        }
        g.add_edge(1, 2, EdgeCategory::Vis, 4.0).unwrap();
        g.add_edge(2, 3, EdgeCategory::Vis, 8.0).unwrap();
        // Λ = {1}, k = 2; candidate 3 touches only the anchor.
        let s = ReuseState::for_local(&g, &[1], 2).unwrap();
        let delta = s.delta_for(&g, 3);
        assert_eq!(delta.a, vec![0.0]);
        assert_eq!(delta.d, 8.0);
        let before = s.tracked_uncertainty().value();
        let after = s.candidate_uncertainty(&delta).unwrap().value();
        assert_relative_eq!(after, before - 8.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn candidate_uncertainty_matches_scratch_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let g = chain_graph(6, &mut rng);
            let k = 6u64;
            // Base {4, 5} stays connected to the anchor through chain edges.
            let lambda = [4u64, 5];
            let s = ReuseState::for_local(&g, &lambda, k).unwrap();
            for n in [1u64, 2, 3] {
                let delta = s.delta_for(&g, n);
                let got = s.candidate_uncertainty(&delta).unwrap();
                let mut k_loc: BTreeSet<KeyframeId> = lambda.iter().copied().collect();
                k_loc.insert(n);
                let scratch = local_uncertainty(&g, &k_loc, &BTreeSet::new(), k).unwrap();
                assert_eq!(got.is_singular(), scratch.is_singular());
                if !got.is_singular() {
                    assert_relative_eq!(got.value(), scratch.value(), max_relative = 1e-7);
                }
            }
        }
    }

    #[test]
    fn extend_tracks_scratch_across_many_commits() {
        // Survives the refresh boundary: > 50 commits on a long chain.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 60u64;
        let g = chain_graph(n, &mut rng);
        let k = 1u64;
        let mut s = ReuseState::for_local(&g, &[], k).unwrap();
        let mut lambda: BTreeSet<KeyframeId> = BTreeSet::new();
        for id in 2..=n {
            let delta = s.delta_for(&g, id);
            s.extend(id, &delta).unwrap();
            lambda.insert(id);
            let scratch = local_uncertainty(&g, &lambda, &BTreeSet::new(), k).unwrap();
            assert_relative_eq!(
                s.tracked_uncertainty().value(),
                scratch.value(),
                max_relative = 1e-7,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn empty_global_seed_bootstraps_through_first_two_picks() {
        let mut g = PoseGraph::new();
        for id in [4, 7, 9] {
            g.add_keyframe(id).unwrap();
        }
        g.add_edge(4, 7, EdgeCategory::Vis, 5.0).unwrap();
        g.add_edge(7, 9, EdgeCategory::Vis, 2.0).unwrap();
        let mut s = ReuseState::for_global(&g, &BTreeSet::new()).unwrap();
        assert_eq!(s.node_count(), 0);
        // Any singleton is an undefined map: scored infinite.
        let d4 = s.delta_for(&g, 4);
        assert!(s.candidate_uncertainty(&d4).unwrap().is_singular());
        s.extend(4, &d4).unwrap();
        assert_eq!(s.node_count(), 1);
        assert_eq!(s.anchor(), Some(4));
        // Second pick scores the pair: −ln w(4, 7).
        let d7 = s.delta_for(&g, 7);
        let u = s.candidate_uncertainty(&d7).unwrap();
        assert_relative_eq!(u.value(), -(5.0f64.ln()), max_relative = 1e-12);
        s.extend(7, &d7).unwrap();
        assert_relative_eq!(
            s.tracked_uncertainty().value(),
            -(5.0f64.ln()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn extend_rejects_disconnected_pick() {
        let mut g = PoseGraph::new();
        for id in [1, 2, 3] {
            g.add_keyframe(id).unwrap();
        }
        g.add_edge(1, 2, EdgeCategory::Vis, 3.0).unwrap();
        let mut s = ReuseState::for_local(&g, &[1], 2).unwrap();
        let delta = s.delta_for(&g, 3);
        assert!(matches!(s.extend(3, &delta), Err(Error::SingularMatrix)));
    }

    #[test]
    fn global_seed_matches_global_uncertainty() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let g = chain_graph(7, &mut rng);
            let seed: BTreeSet<KeyframeId> = [2u64, 3, 5].into_iter().collect();
            let scratch = crate::uncertainty::global_uncertainty(&g, &seed).unwrap();
            match ReuseState::for_global(&g, &seed) {
                Ok(s) => {
                    assert!(!scratch.is_singular());
                    assert_relative_eq!(
                        s.tracked_uncertainty().value(),
                        scratch.value(),
                        max_relative = 1e-9
                    );
                }
                // {2, 3, 5} disconnects when no sampled extra edge links 5
                // to the rest; the scratch evaluator must agree.
                Err(Error::SingularMatrix) => assert!(scratch.is_singular()),
                Err(other) => panic!("unexpected error: {other}"),
            }
        }
    }
}
