//! Weighted pose graph over keyframes, Laplacian assembly, and parsing of
//! line-delimited keyframe streams.
//!
//! The graph is purely combinatorial: nodes are keyframe ids, edges carry a
//! category (IMU or covisibility) and a weight ≥ 1. A pair of keyframes can
//! hold at most one edge per category, so the only multigraph multiplicity is
//! an IMU edge next to a covisibility edge. All matrix rows and columns are
//! ordered by ascending keyframe id unless a caller passes an explicit order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::Error;

/// Monotonically increasing identifier assigned to each keyframe.
pub type KeyframeId = u64;

/// Constraint category between two keyframes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeCategory {
    /// Inertial constraint; only allowed between consecutive keyframes.
    Imu,
    /// Covisibility constraint; weight is the number of shared map points.
    Vis,
}

impl EdgeCategory {
    fn name(self) -> &'static str {
        match self {
            EdgeCategory::Imu => "IMU",
            EdgeCategory::Vis => "vis",
        }
    }
}

/// A single undirected edge. `head` is always the lower keyframe id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub head: KeyframeId,
    pub tail: KeyframeId,
    pub category: EdgeCategory,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct PairWeights {
    imu: Option<f64>,
    vis: Option<f64>,
}

impl PairWeights {
    fn slot(&mut self, category: EdgeCategory) -> &mut Option<f64> {
        match category {
            EdgeCategory::Imu => &mut self.imu,
            EdgeCategory::Vis => &mut self.vis,
        }
    }
}

/// Undirected weighted multigraph over keyframes.
///
/// Immutable once a selection run starts; the simulator mutates it only
/// between slots.
#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    nodes: BTreeSet<KeyframeId>,
    pairs: BTreeMap<(KeyframeId, KeyframeId), PairWeights>,
    /// Total (category-summed) weight to each neighbor, kept in sync with
    /// `pairs` so candidate scoring can walk a node's neighborhood directly.
    adjacency: BTreeMap<KeyframeId, BTreeMap<KeyframeId, f64>>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a keyframe node. Ids may arrive in any order here; stream
    /// ingestion additionally enforces increasing order.
    pub fn add_keyframe(&mut self, id: KeyframeId) -> Result<(), Error> {
        if !self.nodes.insert(id) {
            return Err(Error::DuplicateKeyframe(id));
        }
        self.adjacency.entry(id).or_default();
        Ok(())
    }

    /// Adds an undirected edge. Rejects weights below 1, self-loops, repeated
    /// (pair, category) combinations, unknown endpoints, and IMU edges whose
    /// endpoints are not consecutive in the current id order.
    pub fn add_edge(
        &mut self,
        head: KeyframeId,
        tail: KeyframeId,
        category: EdgeCategory,
        weight: f64,
    ) -> Result<(), Error> {
        if head == tail {
            return Err(Error::SelfLoop(head));
        }
        if !(weight >= 1.0) || !weight.is_finite() {
            return Err(Error::InvalidWeight { head, tail, weight });
        }
        let (lo, hi) = (head.min(tail), head.max(tail));
        if !self.nodes.contains(&lo) {
            return Err(Error::UnknownKeyframe(lo));
        }
        if !self.nodes.contains(&hi) {
            return Err(Error::UnknownKeyframe(hi));
        }
        if category == EdgeCategory::Imu && self.nodes.range(lo + 1..hi).next().is_some() {
            return Err(Error::NonConsecutiveImu { head: lo, tail: hi });
        }
        let slot = self.pairs.entry((lo, hi)).or_default().slot(category);
        if slot.is_some() {
            return Err(Error::DuplicateEdge {
                head: lo,
                tail: hi,
                category: category.name(),
            });
        }
        *slot = Some(weight);
        *self
            .adjacency
            .get_mut(&lo)
            .expect("node present")
            .entry(hi)
            .or_insert(0.0) += weight;
        *self
            .adjacency
            .get_mut(&hi)
            .expect("node present")
            .entry(lo)
            .or_insert(0.0) += weight;
        Ok(())
    }

    /// Sum of all edge weights between `n` and `m` across categories;
    /// 0 when no edge links them.
    pub fn total_edge_weight(&self, n: KeyframeId, m: KeyframeId) -> Result<f64, Error> {
        if !self.nodes.contains(&n) {
            return Err(Error::UnknownKeyframe(n));
        }
        if !self.nodes.contains(&m) {
            return Err(Error::UnknownKeyframe(m));
        }
        Ok(self.weight_between(n, m))
    }

    /// Unchecked total weight lookup; 0 for unknown nodes or absent edges.
    pub(crate) fn weight_between(&self, n: KeyframeId, m: KeyframeId) -> f64 {
        self.adjacency
            .get(&n)
            .and_then(|nbrs| nbrs.get(&m))
            .copied()
            .unwrap_or(0.0)
    }

    /// Neighbors of `n` with their total edge weights, ascending by id.
    pub fn neighbors(&self, n: KeyframeId) -> impl Iterator<Item = (KeyframeId, f64)> + '_ {
        self.adjacency
            .get(&n)
            .into_iter()
            .flat_map(|nbrs| nbrs.iter().map(|(&m, &w)| (m, w)))
    }

    pub fn contains(&self, id: KeyframeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = KeyframeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn newest(&self) -> Option<KeyframeId> {
        self.nodes.iter().next_back().copied()
    }

    /// All edges, ascending by (head, tail, category).
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.pairs.iter().flat_map(|(&(head, tail), w)| {
            let imu = w.imu.map(|weight| Edge {
                head,
                tail,
                category: EdgeCategory::Imu,
                weight,
            });
            let vis = w.vis.map(|weight| Edge {
                head,
                tail,
                category: EdgeCategory::Vis,
                weight,
            });
            imu.into_iter().chain(vis)
        })
    }

    /// Ingests one stream record: the keyframe itself, its IMU edge to the
    /// previous keyframe (when flagged), and its covisibility edges, which
    /// must reference earlier keyframes. Zero-weight covisibility entries are
    /// dropped; weights strictly between 0 and 1 are rejected.
    pub fn ingest(&mut self, record: &KeyframeRecord, imu_weight: f64) -> Result<(), Error> {
        let prev = self.newest();
        if let Some(prev) = prev {
            if record.id <= prev {
                return Err(Error::NonMonotoneId {
                    prev,
                    got: record.id,
                });
            }
        }
        self.add_keyframe(record.id)?;
        if record.imu_to_prev {
            let prev = prev.ok_or_else(|| Error::StreamParse {
                line: 0,
                message: format!("keyframe {} has no predecessor for its IMU edge", record.id),
            })?;
            self.add_edge(prev, record.id, EdgeCategory::Imu, imu_weight)?;
        }
        for &(other, weight) in &record.covis {
            if weight == 0.0 {
                continue;
            }
            if other >= record.id {
                return Err(Error::StreamParse {
                    line: 0,
                    message: format!(
                        "keyframe {}: covisibility entries must reference earlier keyframes, got {}",
                        record.id, other
                    ),
                });
            }
            self.add_edge(other, record.id, EdgeCategory::Vis, weight)?;
        }
        Ok(())
    }

    /// Builds a graph from a line-delimited keyframe stream.
    pub fn from_stream<R: BufRead>(reader: R, imu_weight: f64) -> Result<Self, Error> {
        let records = parse_stream(reader)?;
        let mut graph = PoseGraph::new();
        for record in &records {
            graph.ingest(record, imu_weight)?;
        }
        Ok(graph)
    }
}

/// One keyframe line of a stream file.
///
/// Serialized form: `{"id": 3, "timestamp_s": 1.5, "imu_to_prev": true,
/// "covis": [[1, 12.0], [2, 30.0]]}` — one JSON object per line. Covisibility
/// entries point at earlier keyframes only, so each unordered pair appears at
/// most once across the stream.
#[derive(Debug, Clone, Deserialize)]
pub struct KeyframeRecord {
    pub id: KeyframeId,
    pub timestamp_s: f64,
    pub imu_to_prev: bool,
    #[serde(default)]
    pub covis: Vec<(KeyframeId, f64)>,
}

/// Parses a keyframe stream, reporting the 1-based line number on failure.
/// Requires strictly increasing ids and non-decreasing timestamps.
pub fn parse_stream<R: BufRead>(reader: R) -> Result<Vec<KeyframeRecord>, Error> {
    let mut records: Vec<KeyframeRecord> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KeyframeRecord =
            serde_json::from_str(&line).map_err(|e| Error::StreamParse {
                line: line_no,
                message: e.to_string(),
            })?;
        if let Some(last) = records.last() {
            if record.id <= last.id {
                return Err(Error::StreamParse {
                    line: line_no,
                    message: format!(
                        "keyframe ids must be strictly increasing ({} after {})",
                        record.id, last.id
                    ),
                });
            }
            if record.timestamp_s < last.timestamp_s {
                return Err(Error::StreamParse {
                    line: line_no,
                    message: format!(
                        "timestamps must be non-decreasing ({} after {})",
                        record.timestamp_s, last.timestamp_s
                    ),
                });
            }
        }
        if record.imu_to_prev && records.is_empty() {
            return Err(Error::StreamParse {
                line: line_no,
                message: "first keyframe cannot carry an IMU edge to a predecessor".into(),
            });
        }
        for &(other, weight) in &record.covis {
            if weight > 0.0 && weight < 1.0 {
                return Err(Error::StreamParse {
                    line: line_no,
                    message: format!(
                        "covisibility weight {} to keyframe {} is below the minimum of 1",
                        weight, other
                    ),
                });
            }
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::StreamParse {
                    line: line_no,
                    message: format!(
                        "covisibility weight {} to keyframe {} is invalid",
                        weight, other
                    ),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Weighted Laplacian over an explicit node order: off-diagonal `[i, j]` is
/// the negated total edge weight between nodes i and j, the diagonal is the
/// sum of incident total weights, so every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub matrix: DMatrix<f64>,
    pub node_order: Vec<KeyframeId>,
}

/// Laplacian with anchor rows and columns removed. Positive definite exactly
/// when every surviving node reaches an anchor through the kept subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLaplacian {
    pub matrix: DMatrix<f64>,
    pub node_order: Vec<KeyframeId>,
}

/// Assembles the weighted Laplacian of `graph` restricted to `node_order`,
/// using only edges with both endpoints inside that set.
pub fn build_laplacian(graph: &PoseGraph, node_order: &[KeyframeId]) -> Result<Laplacian, Error> {
    let mut seen = BTreeSet::new();
    for &id in node_order {
        if !graph.contains(id) {
            return Err(Error::UnknownKeyframe(id));
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateNodeOrder(id));
        }
    }
    let n = node_order.len();
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let w = graph.weight_between(node_order[i], node_order[j]);
            if w > 0.0 {
                matrix[(i, j)] = -w;
                matrix[(j, i)] = -w;
                matrix[(i, i)] += w;
                matrix[(j, j)] += w;
            }
        }
    }
    Ok(Laplacian {
        matrix,
        node_order: node_order.to_vec(),
    })
}

impl Laplacian {
    /// Deletes the rows and columns at `removed` positions, preserving the
    /// relative order of the survivors.
    pub fn reduce(&self, removed: &BTreeSet<usize>) -> Result<ReducedLaplacian, Error> {
        let dim = self.node_order.len();
        if removed.is_empty() {
            return Err(Error::NoAnchor);
        }
        if let Some(&position) = removed.iter().find(|&&p| p >= dim) {
            return Err(Error::AnchorOutOfRange { position, dim });
        }
        if removed.len() == dim {
            return Err(Error::EmptyReduction);
        }
        let kept: Vec<usize> = (0..dim).filter(|p| !removed.contains(p)).collect();
        let m = kept.len();
        let mut matrix = DMatrix::zeros(m, m);
        for (ri, &pi) in kept.iter().enumerate() {
            for (rj, &pj) in kept.iter().enumerate() {
                matrix[(ri, rj)] = self.matrix[(pi, pj)];
            }
        }
        Ok(ReducedLaplacian {
            matrix,
            node_order: kept.iter().map(|&p| self.node_order[p]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph_with_nodes(ids: &[KeyframeId]) -> PoseGraph {
        let mut g = PoseGraph::new();
        for &id in ids {
            g.add_keyframe(id).unwrap();
        }
        g
    }

    #[test]
    fn total_weight_sums_categories() {
        let mut g = graph_with_nodes(&[1, 2]);
        g.add_edge(1, 2, EdgeCategory::Vis, 2.0).unwrap();
        g.add_edge(1, 2, EdgeCategory::Imu, 500.0).unwrap();
        assert_eq!(g.total_edge_weight(1, 2).unwrap(), 502.0);
        assert_eq!(g.total_edge_weight(2, 1).unwrap(), 502.0);
    }

    #[test]
    fn total_weight_absent_edge_is_zero() {
        let mut g = graph_with_nodes(&[1, 2, 3]);
        g.add_edge(1, 2, EdgeCategory::Vis, 7.0).unwrap();
        assert_eq!(g.total_edge_weight(1, 3).unwrap(), 0.0);
        assert_eq!(g.total_edge_weight(1, 2).unwrap(), 7.0);
    }

    #[test]
    fn total_weight_unknown_node_errors() {
        let g = graph_with_nodes(&[1, 2]);
        assert!(matches!(
            g.total_edge_weight(1, 9),
            Err(Error::UnknownKeyframe(9))
        ));
    }

    #[test]
    fn edge_validation() {
        let mut g = graph_with_nodes(&[1, 2, 3]);
        assert!(matches!(
            g.add_edge(1, 1, EdgeCategory::Vis, 2.0),
            Err(Error::SelfLoop(1))
        ));
        assert!(matches!(
            g.add_edge(1, 2, EdgeCategory::Vis, 0.5),
            Err(Error::InvalidWeight { .. })
        ));
        assert!(matches!(
            g.add_edge(1, 9, EdgeCategory::Vis, 2.0),
            Err(Error::UnknownKeyframe(9))
        ));
        g.add_edge(1, 2, EdgeCategory::Vis, 2.0).unwrap();
        assert!(matches!(
            g.add_edge(2, 1, EdgeCategory::Vis, 3.0),
            Err(Error::DuplicateEdge { .. })
        ));
        // A second category on the same pair is the one allowed multiplicity.
        g.add_edge(1, 2, EdgeCategory::Imu, 500.0).unwrap();
    }

    #[test]
    fn imu_edges_must_be_consecutive() {
        let mut g = graph_with_nodes(&[1, 2, 3]);
        assert!(matches!(
            g.add_edge(1, 3, EdgeCategory::Imu, 500.0),
            Err(Error::NonConsecutiveImu { head: 1, tail: 3 })
        ));
        g.add_edge(2, 3, EdgeCategory::Imu, 500.0).unwrap();

        // Consecutive means adjacent in the current id order, not id-difference 1.
        let mut sparse = graph_with_nodes(&[1, 3]);
        sparse.add_edge(1, 3, EdgeCategory::Imu, 500.0).unwrap();
    }

    #[test]
    fn duplicate_keyframe_rejected() {
        let mut g = graph_with_nodes(&[1]);
        assert!(matches!(
            g.add_keyframe(1),
            Err(Error::DuplicateKeyframe(1))
        ));
    }

    #[test]
    fn unit_triangle_laplacian() {
        let mut g = graph_with_nodes(&[1, 2, 3]);
        g.add_edge(1, 2, EdgeCategory::Vis, 1.0).unwrap();
        g.add_edge(2, 3, EdgeCategory::Vis, 1.0).unwrap();
        g.add_edge(1, 3, EdgeCategory::Vis, 1.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2, 3]).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        assert_eq!(lap.matrix, expected);
    }

    #[test]
    fn single_weighted_edge_laplacian() {
        let mut g = graph_with_nodes(&[1, 2]);
        g.add_edge(1, 2, EdgeCategory::Vis, 3.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2]).unwrap();
        assert_eq!(
            lap.matrix,
            DMatrix::from_row_slice(2, 2, &[3.0, -3.0, -3.0, 3.0])
        );
    }

    #[test]
    fn laplacian_matches_elementwise_construction() {
        // Independent double loop over the defining formula.
        let mut g = graph_with_nodes(&[1, 2, 3, 4]);
        g.add_edge(1, 2, EdgeCategory::Vis, 4.0).unwrap();
        g.add_edge(1, 2, EdgeCategory::Imu, 500.0).unwrap();
        g.add_edge(2, 3, EdgeCategory::Vis, 9.0).unwrap();
        g.add_edge(1, 4, EdgeCategory::Vis, 2.5).unwrap();
        g.add_edge(3, 4, EdgeCategory::Vis, 7.0).unwrap();
        let order = [1u64, 2, 3, 4];
        let lap = build_laplacian(&g, &order).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j {
                    (0..4)
                        .filter(|&q| q != i)
                        .map(|q| g.total_edge_weight(order[i], order[q]).unwrap())
                        .sum::<f64>()
                } else {
                    -g.total_edge_weight(order[i], order[j]).unwrap()
                };
                assert!((lap.matrix[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_order_validation() {
        let g = graph_with_nodes(&[1, 2]);
        assert!(matches!(
            build_laplacian(&g, &[1, 1]),
            Err(Error::DuplicateNodeOrder(1))
        ));
        assert!(matches!(
            build_laplacian(&g, &[1, 9]),
            Err(Error::UnknownKeyframe(9))
        ));
    }

    #[test]
    fn reduce_removes_rows_and_columns() {
        let mut g = graph_with_nodes(&[1, 2, 3]);
        g.add_edge(1, 2, EdgeCategory::Vis, 1.0).unwrap();
        g.add_edge(2, 3, EdgeCategory::Vis, 1.0).unwrap();
        g.add_edge(1, 3, EdgeCategory::Vis, 1.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2, 3]).unwrap();
        let red = lap.reduce(&BTreeSet::from([0])).unwrap();
        assert_eq!(
            red.matrix,
            DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0])
        );
        assert_eq!(red.node_order, vec![2, 3]);
    }

    #[test]
    fn reduce_two_node_path() {
        let mut g = graph_with_nodes(&[1, 2]);
        g.add_edge(1, 2, EdgeCategory::Vis, 3.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2]).unwrap();
        let red = lap.reduce(&BTreeSet::from([0])).unwrap();
        assert_eq!(red.matrix, DMatrix::from_row_slice(1, 1, &[3.0]));
    }

    #[test]
    fn reduce_matches_index_slicing() {
        let mut g = graph_with_nodes(&[1, 2, 3, 4, 5]);
        g.add_edge(1, 2, EdgeCategory::Vis, 2.0).unwrap();
        g.add_edge(2, 3, EdgeCategory::Vis, 3.0).unwrap();
        g.add_edge(3, 4, EdgeCategory::Vis, 4.0).unwrap();
        g.add_edge(4, 5, EdgeCategory::Vis, 5.0).unwrap();
        g.add_edge(1, 5, EdgeCategory::Vis, 6.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2, 3, 4, 5]).unwrap();
        let removed = BTreeSet::from([1usize, 3]);
        let red = lap.reduce(&removed).unwrap();
        let kept = [0usize, 2, 4];
        for (ri, &pi) in kept.iter().enumerate() {
            for (rj, &pj) in kept.iter().enumerate() {
                assert_eq!(red.matrix[(ri, rj)], lap.matrix[(pi, pj)]);
            }
        }
        assert_eq!(red.node_order, vec![1, 3, 5]);
    }

    #[test]
    fn reduce_validation() {
        let mut g = graph_with_nodes(&[1, 2]);
        g.add_edge(1, 2, EdgeCategory::Vis, 1.0).unwrap();
        let lap = build_laplacian(&g, &[1, 2]).unwrap();
        assert!(matches!(lap.reduce(&BTreeSet::new()), Err(Error::NoAnchor)));
        assert!(matches!(
            lap.reduce(&BTreeSet::from([0, 1])),
            Err(Error::EmptyReduction)
        ));
        assert!(matches!(
            lap.reduce(&BTreeSet::from([7])),
            Err(Error::AnchorOutOfRange {
                position: 7,
                dim: 2
            })
        ));
    }

    #[test]
    fn parse_stream_round_trip() {
        let input = "\
{\"id\": 1, \"timestamp_s\": 0.0, \"imu_to_prev\": false, \"covis\": []}
{\"id\": 2, \"timestamp_s\": 0.5, \"imu_to_prev\": true, \"covis\": [[1, 12.0]]}
{\"id\": 3, \"timestamp_s\": 1.0, \"imu_to_prev\": true, \"covis\": [[1, 3.0], [2, 8.0]]}
";
        let graph = PoseGraph::from_stream(input.as_bytes(), 500.0).unwrap();
        assert_eq!(graph.node_count(), 3);
        assert_eq!(graph.total_edge_weight(1, 2).unwrap(), 512.0);
        assert_eq!(graph.total_edge_weight(2, 3).unwrap(), 508.0);
        assert_eq!(graph.total_edge_weight(1, 3).unwrap(), 3.0);
    }

    #[test]
    fn parse_stream_reports_line_numbers() {
        let input = "{\"id\": 1, \"timestamp_s\": 0.0, \"imu_to_prev\": false}\nnot json\n";
        match parse_stream(input.as_bytes()) {
            Err(Error::StreamParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_stream_rejects_bad_records() {
        let dup = "{\"id\": 2, \"timestamp_s\": 0.0, \"imu_to_prev\": false}\n\
                   {\"id\": 2, \"timestamp_s\": 1.0, \"imu_to_prev\": false}\n";
        assert!(matches!(
            parse_stream(dup.as_bytes()),
            Err(Error::StreamParse { line: 2, .. })
        ));

        let ts = "{\"id\": 1, \"timestamp_s\": 5.0, \"imu_to_prev\": false}\n\
                  {\"id\": 2, \"timestamp_s\": 1.0, \"imu_to_prev\": false}\n";
        assert!(matches!(
            parse_stream(ts.as_bytes()),
            Err(Error::StreamParse { line: 2, .. })
        ));

        let first_imu = "{\"id\": 1, \"timestamp_s\": 0.0, \"imu_to_prev\": true}\n";
        assert!(matches!(
            parse_stream(first_imu.as_bytes()),
            Err(Error::StreamParse { line: 1, .. })
        ));

        let small_weight = "{\"id\": 1, \"timestamp_s\": 0.0, \"imu_to_prev\": false}\n\
             {\"id\": 2, \"timestamp_s\": 1.0, \"imu_to_prev\": false, \"covis\": [[1, 0.25]]}\n";
        assert!(matches!(
            parse_stream(small_weight.as_bytes()),
            Err(Error::StreamParse { line: 2, .. })
        ));
    }

    #[test]
    fn ingest_drops_zero_weight_and_rejects_forward_references() {
        let mut g = PoseGraph::new();
        g.ingest(
            &KeyframeRecord {
                id: 1,
                timestamp_s: 0.0,
                imu_to_prev: false,
                covis: vec![],
            },
            500.0,
        )
        .unwrap();
        g.ingest(
            &KeyframeRecord {
                id: 2,
                timestamp_s: 1.0,
                imu_to_prev: false,
                covis: vec![(1, 0.0)],
            },
            500.0,
        )
        .unwrap();
        assert_eq!(g.total_edge_weight(1, 2).unwrap(), 0.0);

        let forward = KeyframeRecord {
            id: 3,
            timestamp_s: 2.0,
            imu_to_prev: false,
            covis: vec![(5, 2.0)],
        };
        assert!(g.ingest(&forward, 500.0).is_err());
    }

    /// Random small graph: node ids, then an arbitrary subset of pairs with
    /// weights in [1, 500], each pair carrying one or two categories.
    fn arb_edges(n: usize) -> impl Strategy<Value = Vec<(usize, usize, f64, bool)>> {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        let per_pair = (any::<bool>(), 1.0f64..500.0, any::<bool>());
        proptest::collection::vec(per_pair, pairs.len()).prop_map(move |choices| {
            pairs
                .iter()
                .zip(choices)
                .filter(|(_, (present, _, _))| *present)
                .map(|(&(i, j), (_, w, both))| (i, j, w, both))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn laplacian_symmetric_with_zero_row_sums(
            n in 2usize..7,
            edges_seed in arb_edges(6),
        ) {
            let ids: Vec<KeyframeId> = (1..=n as u64).collect();
            let mut g = graph_with_nodes(&ids);
            for (i, j, w, both) in edges_seed {
                if i >= n || j >= n { continue; }
                g.add_edge(ids[i], ids[j], EdgeCategory::Vis, w).unwrap();
                if both && j == i + 1 {
                    g.add_edge(ids[i], ids[j], EdgeCategory::Imu, 500.0).unwrap();
                }
            }
            let lap = build_laplacian(&g, &ids).unwrap();
            for i in 0..n {
                let row_sum: f64 = (0..n).map(|j| lap.matrix[(i, j)]).sum();
                prop_assert!(row_sum.abs() < 1e-12);
                for j in 0..n {
                    prop_assert_eq!(lap.matrix[(i, j)], lap.matrix[(j, i)]);
                    if i != j {
                        prop_assert!(lap.matrix[(i, j)] <= 0.0);
                    }
                }
            }
        }

        #[test]
        fn laplacian_invariant_under_insertion_order(
            edges_seed in arb_edges(5),
            seed in any::<u64>(),
        ) {
            let ids: Vec<KeyframeId> = (1..=5).collect();
            let mut forward = graph_with_nodes(&ids);
            for &(i, j, w, _) in &edges_seed {
                forward.add_edge(ids[i], ids[j], EdgeCategory::Vis, w).unwrap();
            }
            // Deterministic shuffle of the same edge list.
            let mut shuffled = edges_seed.clone();
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let mut reordered = graph_with_nodes(&ids);
            for &(i, j, w, _) in &shuffled {
                reordered.add_edge(ids[i], ids[j], EdgeCategory::Vis, w).unwrap();
            }
            let a = build_laplacian(&forward, &ids).unwrap();
            let b = build_laplacian(&reordered, &ids).unwrap();
            prop_assert_eq!(a.matrix, b.matrix);
        }

        #[test]
        fn parallel_edges_merge_exactly(
            w_vis in 1.0f64..500.0,
            w_imu in 1.0f64..500.0,
        ) {
            let mut multi = graph_with_nodes(&[1, 2]);
            multi.add_edge(1, 2, EdgeCategory::Vis, w_vis).unwrap();
            multi.add_edge(1, 2, EdgeCategory::Imu, w_imu).unwrap();
            let mut merged = graph_with_nodes(&[1, 2]);
            merged.add_edge(1, 2, EdgeCategory::Vis, w_vis + w_imu).unwrap();
            let a = build_laplacian(&multi, &[1, 2]).unwrap();
            let b = build_laplacian(&merged, &[1, 2]).unwrap();
            prop_assert_eq!(a.matrix, b.matrix);
        }
    }
}
