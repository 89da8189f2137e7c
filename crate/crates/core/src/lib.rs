//! Weighted sequential multiple testing.
//!
//! `J` data streams are observed in parallel, each testing a simple null
//! against a simple alternative. Prior weights `W_j > 0` shift each stream's
//! log-likelihood ratio by `log W_j`. Two procedures are provided:
//!
//! * the weighted gap procedure, for a known number `m` of signals;
//! * the weighted gap-intersection procedure, for a signal count known only
//!   to lie in `[l, u]`.
//!
//! Thresholds are calibrated on the realized weights so that the family-wise
//! error rates stay below their targets. The [`montecarlo`] module runs the
//! Gaussian simulation study and [`oracle`] (feature `oracle`) carries the
//! brute-force validators.

pub mod error;
pub mod model;
pub mod montecarlo;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod procedures;
pub mod thresholds;
pub mod weights;

pub use error::{Error, Result};
pub use model::{kl_info, llr_increment, sample_increment, worst_case_rates, KlInfo, Rate, StreamModel, TrialState, TruthAssignment};
pub use montecarlo::{
    optimality_ratio, run_replication, run_scenario, run_sweep, trace_replication, ProcedureKind, RepRecord, RunOptions, ScenarioResult,
    ScenarioSpec,
};
pub use procedures::{
    conservative_gap_time, count_positive_wllr, gap_step, gi_step, lower_bound_gap, lower_bound_gi, ordered_wllr,
    run_gap, run_gi, Decision, FiredRule, GIConfig, GapConfig, StopStatus, Trial,
};
pub use thresholds::{calibrate_gap, calibrate_gi, fwe_bound_gap, fwe_bounds_gi, GIThresholds, GapThreshold, Threshold};
pub use weights::{c_w, c_w_bruteforce, generate_weights, guess_probabilities, wllr, WeightGenSpec, WeightVector};
