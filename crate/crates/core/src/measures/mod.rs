//! Stationary measures of the random system.
//!
//! Two estimators are provided. [`cesaro_measure`] averages push-forwards
//! of the noise along random orbits. [`build_ulam`] discretizes the
//! annealed transfer operator on a [`Grid3`]; its closed communicating
//! classes ([`stationary_components`]) are the discrete ergodic
//! components, and their stationary laws the candidate physical measures.

mod basin;
mod cesaro;
mod components;
mod diagnostics;
mod grid;
mod residual;
mod ulam;

pub use basin::{
    basin_partition, binomial_standard_error, birkhoff_vector, component_means, mixture_fit, BasinPartition,
};
pub use cesaro::cesaro_measure;
pub use components::{
    closed_classes, mutual_singularity, stationary_components, stationary_components_with, stationary_on_class,
    tarjan_scc, Component, PhysicalMeasureSet, Stationary, ITERATION_BUDGET, STATIONARY_TOLERANCE,
};
pub use diagnostics::{abs_continuity_diagnostic, AbsContinuityReport, DensityLevel, BOUNDED_FACTOR};
pub use grid::{Grid3, Histogram};
pub use residual::{
    standard_observables, stationarity_residual, stationarity_residual_subcell, ObservableResidual,
    ResidualReport,
};
pub use ulam::{build_ulam, SparseStochastic, UlamOperator};
