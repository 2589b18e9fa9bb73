//! Pairwise pixel affinities and everything built on top of them.
//!
//! Instance masks are encoded as 8-neighbour affinity maps, affinity maps are
//! grouped into candidate regions (thresholded connected components,
//! graph-based hierarchical grouping, watershed + ultrametric contour maps),
//! candidates are ranked by an affinity objectness score, and proposals are
//! evaluated with average recall / average precision.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`). Concrete
//! aliases for both widths are exported at the crate root.

pub mod affinity;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod grouping;
pub mod io;
pub mod mask;
pub mod objectness;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod synth;
mod unionfind;

pub use affinity::{AffinityMap, AggregationMode, EdgeMap, Neighbor, SupervisionTarget};
pub use error::{Error, Result};
pub use evalkit::{EvalReport, IoUThresholdGrid};
pub use grouping::{Arc, Provenance, RegionHierarchy, RegionSet, SuperpixelPartition};
pub use mask::{BinaryMask, GridDims, InstanceLabelMap, InstanceSet, Pixel, RunLengthMask};
pub use objectness::{ObjectnessBreakdown, ScoredRegion};
pub use scalar::Real;

pub type AffinityMap32 = AffinityMap<f32>;
pub type AffinityMap64 = AffinityMap<f64>;
pub type EdgeMap32 = EdgeMap<f32>;
pub type EdgeMap64 = EdgeMap<f64>;
pub type SupervisionTarget32 = SupervisionTarget<f32>;
pub type SupervisionTarget64 = SupervisionTarget<f64>;
pub type Arc32 = Arc<f32>;
pub type Arc64 = Arc<f64>;
pub type RegionHierarchy32 = RegionHierarchy<f32>;
pub type RegionHierarchy64 = RegionHierarchy<f64>;
pub type ObjectnessBreakdown32 = ObjectnessBreakdown<f32>;
pub type ObjectnessBreakdown64 = ObjectnessBreakdown<f64>;
pub type ScoredRegion32 = ScoredRegion<f32>;
pub type ScoredRegion64 = ScoredRegion<f64>;
