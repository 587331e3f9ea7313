//! Centralized-training oracles, finite-difference gradient checking,
//! and the gradient-deviation estimator.

mod deviation;
mod equivalence;
mod fd;

pub use deviation::{estimate_deviation, DeviationReport};
pub use equivalence::{centralized_step, check_equivalence, EquivalenceReport};
pub use fd::{finite_difference_check, FdReport, FdTarget, FD_ABS_FLOOR, FD_STEP};
