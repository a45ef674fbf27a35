//! Post-run verification: storage functions and convergence metrics.

mod metrics;
mod storage;

pub use metrics::{
    convergence_metrics, cost_savings, reaching_times, AnalysisError, Criterion, LyapunovCheck,
    SegmentReaching, Settling, Thresholds, VerificationReport,
};
pub use storage::{network_energy, primal_dual_reference, storage_s1, storage_s2, storage_s3};
