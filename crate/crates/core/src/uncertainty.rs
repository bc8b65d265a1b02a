//! D-optimality uncertainty of global and local pose graphs.
//!
//! Uncertainty is the negative natural log-determinant of a reduced weighted
//! Laplacian. The determinant equals the graph's weighted spanning-tree
//! count, so a disconnected (singular) map has determinant 0 and uncertainty
//! +∞. The constant base information factor common to all measurements is
//! dropped: it shifts every selection objective by the same additive
//! constant and never changes an argmin.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::graph::{build_laplacian, KeyframeId, PoseGraph, ReducedLaplacian};

/// Relative pivot tolerance: a factorization pivot at or below
/// `PIVOT_RTOL × max diagonal` declares the matrix singular.
pub(crate) const PIVOT_RTOL: f64 = 1e-10;

const SYMMETRY_ATOL: f64 = 1e-9;

/// Log-scale uncertainty value; `+∞` exactly when the underlying reduced
/// Laplacian is singular (some node cannot reach an anchor).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Uncertainty(pub f64);

impl Uncertainty {
    pub const INFINITE: Uncertainty = Uncertainty(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    /// True when the map is disconnected from its anchors.
    pub fn is_singular(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl fmt::Display for Uncertainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// LDLᵀ factorization of a symmetric positive-definite matrix, done without
/// square roots on a flat column-major buffer. `ld` holds the unit lower
/// triangle below the diagonal and the pivots D on the diagonal.
#[derive(Debug, Clone)]
pub(crate) struct Ldlt {
    dim: usize,
    ld: Vec<f64>,
}

impl Ldlt {
    /// Factors `matrix`; `None` when any pivot falls at or below the relative
    /// tolerance, i.e. the matrix is not positive definite.
    pub(crate) fn factor(matrix: &DMatrix<f64>) -> Option<Ldlt> {
        Self::factor_flat(matrix.as_slice(), matrix.nrows())
    }

    /// Same, over a column-major flat buffer of a symmetric `dim × dim` matrix.
    pub(crate) fn factor_flat(flat: &[f64], dim: usize) -> Option<Ldlt> {
        debug_assert_eq!(flat.len(), dim * dim);
        let mut ld = flat.to_vec();
        let mut max_diag: f64 = 0.0;
        for j in 0..dim {
            max_diag = max_diag.max(ld[j + j * dim].abs());
        }
        let tol = PIVOT_RTOL * max_diag;
        for j in 0..dim {
            // d_j = a_jj − Σ_{k<j} l_jk² d_k
            let mut d = ld[j + j * dim];
            for k in 0..j {
                let l_jk = ld[j + k * dim];
                d -= l_jk * l_jk * ld[k + k * dim];
            }
            if d <= tol {
                return None;
            }
            ld[j + j * dim] = d;
            // l_ij = (a_ij − Σ_{k<j} l_ik l_jk d_k) / d_j
            for i in j + 1..dim {
                let mut v = ld[i + j * dim];
                for k in 0..j {
                    v -= ld[i + k * dim] * ld[j + k * dim] * ld[k + k * dim];
                }
                ld[i + j * dim] = v / d;
            }
        }
        Some(Ldlt { dim, ld })
    }

    /// Natural log of the determinant: Σ ln(pivot).
    pub(crate) fn log_det(&self) -> f64 {
        (0..self.dim).map(|j| self.ld[j + j * self.dim].ln()).sum()
    }

    /// Dense inverse via one L D Lᵀ solve per identity column.
    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim;
        let mut inv = DMatrix::zeros(n, n);
        let mut col = vec![0.0; n];
        for c in 0..n {
            col.fill(0.0);
            col[c] = 1.0;
            // Forward substitution with the unit lower triangle.
            for i in 0..n {
                let mut v = col[i];
                for k in 0..i {
                    v -= self.ld[i + k * n] * col[k];
                }
                col[i] = v;
            }
            for (i, v) in col.iter_mut().enumerate() {
                *v /= self.ld[i + i * n];
            }
            // Back substitution with the transpose.
            for i in (0..n).rev() {
                let mut v = col[i];
                for k in i + 1..n {
                    v -= self.ld[k + i * n] * col[k];
                }
                col[i] = v;
            }
            for i in 0..n {
                inv[(i, c)] = col[i];
            }
        }
        inv
    }
}

pub(crate) fn check_symmetry(matrix: &DMatrix<f64>) -> Result<(), Error> {
    let n = matrix.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_ATOL {
        return Err(Error::AsymmetricMatrix(worst));
    }
    Ok(())
}

/// Log-determinant of a reduced Laplacian via LDLᵀ; `−∞` when the matrix is
/// not positive definite (the map is disconnected from its anchors).
pub fn log_det(reduced: &ReducedLaplacian) -> Result<f64, Error> {
    log_det_dense(&reduced.matrix)
}

pub(crate) fn log_det_dense(matrix: &DMatrix<f64>) -> Result<f64, Error> {
    check_symmetry(matrix)?;
    Ok(match Ldlt::factor(matrix) {
        Some(f) => f.log_det(),
        None => f64::NEG_INFINITY,
    })
}

/// Uncertainty of the global map over `k_g_edge`: the Laplacian is built on
/// those nodes only (edges with both endpoints inside), anchored on the
/// lowest keyframe id.
pub fn global_uncertainty(
    graph: &PoseGraph,
    k_g_edge: &BTreeSet<KeyframeId>,
) -> Result<Uncertainty, Error> {
    if k_g_edge.len() < 2 {
        return Err(Error::TooFewKeyframes(k_g_edge.len()));
    }
    let order: Vec<KeyframeId> = k_g_edge.iter().copied().collect();
    let lap = build_laplacian(graph, &order)?;
    let reduced = lap.reduce(&BTreeSet::from([0]))?;
    Ok(Uncertainty(-log_det(&reduced)?))
}

/// The local information matrix over rows `k_loc ∪ {k}` (ascending id):
/// off-diagonals come from edges inside the row set, while each diagonal
/// additionally accumulates the node's edge weights into `k_fixed`. Fixed
/// keyframes contribute weight but no rows or columns — holding their poses
/// constant is equivalent to anchoring them. Edges from `k` itself to fixed
/// keyframes are included in `k`'s diagonal.
pub fn local_information_matrix(
    graph: &PoseGraph,
    k_loc: &BTreeSet<KeyframeId>,
    k_fixed: &BTreeSet<KeyframeId>,
    k: KeyframeId,
) -> Result<(DMatrix<f64>, Vec<KeyframeId>), Error> {
    if k_loc.contains(&k) || k_fixed.contains(&k) {
        return Err(Error::NewKeyframeInSet(k));
    }
    if let Some(&overlap) = k_loc.intersection(k_fixed).next() {
        return Err(Error::OverlappingSets(overlap));
    }
    for &id in k_loc.iter().chain(k_fixed.iter()).chain([k].iter()) {
        if !graph.contains(id) {
            return Err(Error::UnknownKeyframe(id));
        }
    }
    let mut rows: Vec<KeyframeId> = k_loc.iter().copied().collect();
    let pos = rows.binary_search(&k).unwrap_err();
    rows.insert(pos, k);
    let n = rows.len();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = graph.weight_between(rows[i], rows[j]);
            if w > 0.0 {
                matrix[(i, j)] = -w;
                matrix[(j, i)] = -w;
                matrix[(i, i)] += w;
                matrix[(j, j)] += w;
            }
        }
        for &f in k_fixed {
            matrix[(i, i)] += graph.weight_between(rows[i], f);
        }
    }
    Ok((matrix, rows))
}

/// Uncertainty of the local map for new keyframe `k` with optimized set
/// `k_loc` and pose-constant set `k_fixed`, anchored on the lowest id of
/// `k_loc ∪ {k}`. With an empty `k_loc` the anchored matrix is 0×0 (nothing
/// left to estimate) and the uncertainty is 0.
pub fn local_uncertainty(
    graph: &PoseGraph,
    k_loc: &BTreeSet<KeyframeId>,
    k_fixed: &BTreeSet<KeyframeId>,
    k: KeyframeId,
) -> Result<Uncertainty, Error> {
    let (matrix, _rows) = local_information_matrix(graph, k_loc, k_fixed, k)?;
    let n = matrix.nrows();
    if n == 1 {
        return Ok(Uncertainty(0.0));
    }
    // Rows are ascending, so the lowest-id anchor sits at position 0.
    let reduced = matrix.view((1, 1), (n - 1, n - 1)).into_owned();
    Ok(Uncertainty(-log_det_dense(&reduced)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeCategory;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reduced(matrix: DMatrix<f64>) -> ReducedLaplacian {
        let node_order = (1..=matrix.nrows() as u64).collect();
        ReducedLaplacian { matrix, node_order }
    }

    /// Cofactor-expansion determinant; exponential, test-only.
    fn naive_det(m: &DMatrix<f64>) -> f64 {
        let n = m.nrows();
        if n == 0 {
            return 1.0;
        }
        if n == 1 {
            return m[(0, 0)];
        }
        let mut det = 0.0;
        for c in 0..n {
            let minor = m.clone().remove_row(0).remove_column(c);
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            det += sign * m[(0, c)] * naive_det(&minor);
        }
        det
    }

    #[test]
    fn log_det_one_by_one() {
        let r = reduced(DMatrix::from_row_slice(1, 1, &[3.0]));
        assert_relative_eq!(log_det(&r).unwrap(), 3.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_det_two_by_two() {
        let r = reduced(DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]));
        assert_relative_eq!(log_det(&r).unwrap(), 3.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_det_matches_cofactor_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 8;
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let spd = &m * m.transpose() + DMatrix::identity(n, n) * (n as f64);
            let expected = naive_det(&spd);
            let got = log_det_dense(&spd).unwrap().exp();
            assert_relative_eq!(got, expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn log_det_rejects_asymmetry() {
        let mut m = DMatrix::identity(3, 3);
        m[(0, 1)] = 0.5;
        assert!(matches!(log_det_dense(&m), Err(Error::AsymmetricMatrix(_))));
    }

    #[test]
    fn log_det_singular_is_negative_infinity() {
        let r = reduced(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert_eq!(log_det(&r).unwrap(), f64::NEG_INFINITY);
        let indefinite = reduced(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert_eq!(log_det(&indefinite).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ldlt_inverse_multiplies_back_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10;
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &m * m.transpose() + DMatrix::identity(n, n) * (n as f64);
        let inv = Ldlt::factor(&spd).unwrap().inverse();
        let prod = &spd * &inv;
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expected).abs() < 1e-8);
            }
        }
    }

    fn graph_with(edges: &[(u64, u64, f64)], nodes: &[u64]) -> PoseGraph {
        let mut g = PoseGraph::new();
        for &id in nodes {
            g.add_keyframe(id).unwrap();
        }
        for &(a, b, w) in edges {
            g.add_edge(a, b, EdgeCategory::Vis, w).unwrap();
        }
        g
    }

    #[test]
    fn global_uncertainty_two_nodes_unit_edge() {
        let g = graph_with(&[(1, 2, 1.0)], &[1, 2]);
        let u = global_uncertainty(&g, &BTreeSet::from([1, 2])).unwrap();
        assert_relative_eq!(u.value(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn global_uncertainty_unit_triangle() {
        let g = graph_with(&[(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)], &[1, 2, 3]);
        let u = global_uncertainty(&g, &BTreeSet::from([1, 2, 3])).unwrap();
        assert_relative_eq!(u.value(), -(3.0f64.ln()), max_relative = 1e-12);
    }

    #[test]
    fn global_uncertainty_needs_two_nodes() {
        let g = graph_with(&[], &[1]);
        assert!(matches!(
            global_uncertainty(&g, &BTreeSet::from([1])),
            Err(Error::TooFewKeyframes(1))
        ));
    }

    #[test]
    fn global_uncertainty_disconnected_is_infinite() {
        let g = graph_with(&[(1, 2, 2.0)], &[1, 2, 3]);
        let u = global_uncertainty(&g, &BTreeSet::from([1, 2, 3])).unwrap();
        assert!(u.is_singular());
    }

    #[test]
    fn local_uncertainty_single_edge_pair() {
        let g = graph_with(&[(2, 3, 1.0)], &[2, 3]);
        let u = local_uncertainty(&g, &BTreeSet::from([2]), &BTreeSet::new(), 3).unwrap();
        assert_relative_eq!(u.value(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn local_information_matrix_with_fixed_keyframe() {
        // Fixed node 1 adds weight 4 to node 2's diagonal only.
        let g = graph_with(&[(1, 2, 4.0), (2, 3, 1.0)], &[1, 2, 3]);
        let (matrix, rows) =
            local_information_matrix(&g, &BTreeSet::from([2]), &BTreeSet::from([1]), 3).unwrap();
        assert_eq!(rows, vec![2, 3]);
        assert_eq!(
            matrix,
            DMatrix::from_row_slice(2, 2, &[5.0, -1.0, -1.0, 1.0])
        );
        let u = local_uncertainty(&g, &BTreeSet::from([2]), &BTreeSet::from([1]), 3).unwrap();
        assert_relative_eq!(u.value(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn local_uncertainty_validation() {
        let g = graph_with(&[(1, 2, 1.0)], &[1, 2, 3]);
        assert!(matches!(
            local_uncertainty(&g, &BTreeSet::from([2]), &BTreeSet::from([2]), 3),
            Err(Error::OverlappingSets(2))
        ));
        assert!(matches!(
            local_uncertainty(&g, &BTreeSet::from([3]), &BTreeSet::new(), 3),
            Err(Error::NewKeyframeInSet(3))
        ));
    }

    #[test]
    fn local_uncertainty_empty_local_set_is_zero() {
        let g = graph_with(&[(1, 2, 3.0)], &[1, 2]);
        let u = local_uncertainty(&g, &BTreeSet::new(), &BTreeSet::from([1]), 2).unwrap();
        assert_eq!(u.value(), 0.0);
    }

    /// Random connected graph on ids 1..=n: a path backbone plus extra edges.
    fn random_connected(rng: &mut ChaCha8Rng, n: u64) -> PoseGraph {
        let mut g = PoseGraph::new();
        for id in 1..=n {
            g.add_keyframe(id).unwrap();
        }
        for id in 1..n {
            g.add_edge(id, id + 1, EdgeCategory::Vis, rng.gen_range(1.0..50.0))
                .unwrap();
        }
        for a in 1..=n {
            for b in a + 2..=n {
                if rng.gen_bool(0.4) {
                    g.add_edge(a, b, EdgeCategory::Vis, rng.gen_range(1.0..50.0))
                        .unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn local_equals_global_style_reduction_with_fixed_nodes() {
        // Per the fixed-keyframe equivalence: deleting the fixed rows/columns
        // of the full Laplacian (plus the lowest-id anchor) reproduces the
        // local matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let g = random_connected(&mut rng, 7);
            let k = 7u64;
            let k_loc = BTreeSet::from([2, 4, 5]);
            let k_fixed = BTreeSet::from([1, 3]);
            let local = local_uncertainty(&g, &k_loc, &k_fixed, k).unwrap();

            let all: Vec<u64> = vec![1, 2, 3, 4, 5, 7];
            let lap = build_laplacian(&g, &all).unwrap();
            // Remove fixed positions {0, 2} and the anchor (lowest of
            // k_loc ∪ {k} = 2, at position 1).
            let removed = BTreeSet::from([0usize, 2, 1]);
            let red = lap.reduce(&removed).unwrap();
            let expected = -log_det(&red).unwrap();
            assert_relative_eq!(local.value(), expected, max_relative = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn local_without_fixed_equals_global(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_connected(&mut rng, 6);
            let k = 6u64;
            let k_loc = BTreeSet::from([1, 2, 4]);
            let local = local_uncertainty(&g, &k_loc, &BTreeSet::new(), k).unwrap();
            let mut setk = k_loc.clone();
            setk.insert(k);
            let global = global_uncertainty(&g, &setk).unwrap();
            // A disconnected subset is singular on both sides.
            prop_assert_eq!(local.is_singular(), global.is_singular());
            if !local.is_singular() {
                prop_assert!((local.value() - global.value()).abs() < 1e-9);
            }
        }

        #[test]
        fn adding_an_edge_never_increases_uncertainty(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = random_connected(&mut rng, 6);
            let set: BTreeSet<u64> = (1..=6).collect();
            let before = global_uncertainty(&g, &set).unwrap();
            // Find a missing pair and connect it.
            let mut added = false;
            'outer: for a in 1..=6u64 {
                for b in a + 1..=6 {
                    if g.total_edge_weight(a, b).unwrap() == 0.0 {
                        g.add_edge(a, b, EdgeCategory::Vis, rng.gen_range(1.0..50.0)).unwrap();
                        added = true;
                        break 'outer;
                    }
                }
            }
            prop_assume!(added);
            let after = global_uncertainty(&g, &set).unwrap();
            prop_assert!(after.value() <= before.value() + 1e-9);
        }
    }
}
