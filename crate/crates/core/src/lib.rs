//! Pose-graph uncertainty quantification and budget-constrained keyframe
//! selection for edge-assisted visual-inertial SLAM.
//!
//! The library is organised around a weighted pose graph whose vertices are
//! keyframes and whose edges carry inter-keyframe constraints (IMU or visual
//! covisibility). Estimation uncertainty of a candidate map is measured by
//! the negative log-determinant of the graph's reduced weighted Laplacian;
//! selection routines pick keyframe subsets that minimise that uncertainty
//! under a size budget.
//!
//! Modules:
//! - [`graph`]: the pose graph, Laplacian assembly, and keyframe-stream parsing
//! - [`uncertainty`]: log-determinant kernels and global/local uncertainty
//! - [`reuse`]: incremental determinant updates shared across candidate scores
//! - [`selection`]: greedy and beam-search selection plus the strategy registry
//! - [`baselines`]: random / drop-oldest / covisibility-buffer selectors
//! - [`oracle`]: slow, independent reference computations used for verification
//! - [`sim`]: a deterministic slotted simulator of keyframe offloading

pub mod baselines;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod reuse;
pub mod selection;
pub mod sim;
pub mod uncertainty;

pub use error::Error;
pub use graph::{EdgeCategory, KeyframeId, PoseGraph};
