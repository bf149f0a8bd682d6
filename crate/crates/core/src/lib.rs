//! Scenario-sampling characterisation of "almost" robustly forward invariant
//! safe sets for black-box systems.
//!
//! A [`ScenarioSystem`] is sampled from the boundary band of a lattice cover;
//! runs that reach the failure region prune the cells that led there, runs
//! that leave the cover grow it. [`characterize`] repeats this over a
//! schedule of shrinking (ε, β, δ). [`cbf`] holds the two-robot case study and
//! [`rates`] the Monte Carlo and importance-sampling baselines.

#![allow(clippy::needless_range_loop)]

pub mod cbf;
pub mod cover;
pub mod error;
pub mod quantify;
pub mod rates;
pub mod rng;
pub mod scenario;
pub mod toys;

pub use cover::{
    build_cover, critical_band, refine, refine_to, remove_cells, CellId, CellIndex, CellLookup, CoverLattice,
    DeltaVector, DiskGraph, ExcludedRegion, Lattice,
};
pub use error::{Error, Result};
pub use quantify::{
    characterize, characterize_from, consensus_distance, cover_distance, derived_failure_rate, quantify,
    reference_cover, required_samples, validate_safe_set, Achieved, AuditRecord, DecaySchedule, Event, PruneScope,
    QuantifierConfig, SafeSetResult, Stage, StageDefaults, StageSummary, Termination, ValidationReport,
};
pub use rates::{clopper_pearson, is_failure_rate, mc_failure_rate, RateEstimate, SeparationTilt};
pub use rng::RandomSource;
pub use scenario::{
    check_step_bound, compose_scenario, rollout, DomainBox, Environment, ExitHandling, FailureRegion, Outcome,
    RunRecord, ScenarioSystem, StateVector, TestingPolicy,
};
