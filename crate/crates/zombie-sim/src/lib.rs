//! Deterministic multi-core cache-hierarchy simulator with zombie-line
//! tracking: flush-based side channels, their mitigation, an analytical
//! slowdown model, and a hardware-style attack detector.

pub mod adt;
pub mod attacks;
pub mod cache;
pub mod hierarchy;
pub mod model;
pub mod workload;

pub use attacks::{AttackKind, AttackReport, SpyConfig};
pub use cache::{AccessOutcome, CacheGeometry, CoreId, Indexing, LineAddr, LineData, Replacement};
pub use hierarchy::{
    AccessResponse, Counted, FlushTiming, Hierarchy, HierarchyConfig, Mode, StatsCounters,
};
pub use model::ModelParams;
