//! Simulator and verification laboratory for the d-dimensional East
//! kinetically constrained model.
//!
//! - [`lattice`]: sites, windows, configurations, initial measures and the
//!   East constraint.
//! - [`sim`]: the graphical construction (Poisson clocks, Bernoulli bits)
//!   and its queryable event log.
//! - [`exact`]: exact generators on small regions, transient expectations
//!   by uniformization, spectral gaps.
//! - [`estimators`]: Monte Carlo persistence and relaxation curves,
//!   exponential fits, occupation-time statistics.
//! - [`theory`]: oriented-path lemma checker, hyperplane profiles,
//!   closed-form constants and the occupation-time cascade probe.

pub mod estimators;
pub mod exact;
pub mod lattice;
pub mod sim;
pub mod streams;
pub mod theory;

pub use lattice::{
    build_lambda_region, condition_c_params, east_constraint, sample_initial, spin_at_site,
    Configuration, MeasureSpec, ModelParams, Region, Site, Spin, Window,
};
pub use sim::{simulate, simulate_with, EventLog, RingRecord, SimOptions};
pub use estimators::{
    estimate_persistence, estimate_relaxation, fit_exponential, occupation_statistics,
    DecaySeries, Ensemble, FitResult, Observable,
};
pub use theory::{compute_constants, verify_oriented_path_lemma, GeometrySet, PathResult};
