//! Comparison energies, guiding spirals and their barrier audit, and the
//! cutoff-regularised system.

pub mod barrier;
pub mod comparison;
pub mod modified;
pub mod spiral;

pub use barrier::{barrier_audit, barrier_check, BarrierReport, ProbeCrossing};
pub use comparison::{build_comparison, ComparisonPair, ComparisonSummary};
pub use modified::{build_modified, ModifiedSystem, ModifiedSummary};
pub use spiral::{build_spiral, build_spiral_with, ray_angle, ClosedCurve, Orientation, SpiralArc, SpiralCurve, SpiralTurn};
