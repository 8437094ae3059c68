//! Latency measurement and the ablation sweep.

mod ablation;
mod timing;

#[cfg(test)]
mod tests;

pub use ablation::{ablation_column, run_ablation_suite, AblationRow, AblationTable};
pub use timing::{time_model, LatencyStats, TimingReport, MIN_TRIALS, REFERENCE_FEATURE_MS, REFERENCE_TESTING_MS};
