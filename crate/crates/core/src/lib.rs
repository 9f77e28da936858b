//! Causal regularization for linear structural equation models observed in
//! two environments: an observational one and one with an additive covariate
//! shift.
//!
//! The estimator interpolates between pooled least squares (`λ = 0`) and the
//! causal Dantzig (`λ = ∞`). Around it sit resampling-based model selection on
//! risk stability, a bootstrap interval for the worst-case risk, finite-sample
//! bounds, and an exact population oracle for simulated models.

pub mod bootstrap;
pub mod bounds;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod moments;
pub mod population;
pub mod rng;
pub mod selection;
pub mod sem;

pub use bootstrap::{bootstrap_worst_risk_ci, BootstrapResult, ModelChoice};
pub use bounds::{
    normalized_excess_risk, phi, sample_risk_bound, worst_risk_bound, BoundInputs, VarianceSource,
};
pub use error::{Error, Result};
pub use estimator::{
    default_grid, fit, fit_on_datasets, fit_path, CausalRegularizer, Fit, Lambda,
    RegularizationPath,
};
pub use linalg::{pinv_psd, psd_sqrt, solve_spd, sym_eigen, SymMatrix};
pub use moments::{
    compute_moments, empirical_risk, regularizer_norm_hat, risk_diff_hat, risk_sum_hat,
    MomentSummary,
};
pub use population::{
    compute_population, monte_carlo_worst_risk, population_beta_lambda, population_rdiff,
    population_worst_risk, PopulationQuantities,
};
pub use selection::{
    make_split, make_vfold, population_selector, s_optimal_selector, sample_selector, FoldFits,
    ResamplingPlan, SelectorResult,
};
pub use sem::{
    benchmark_structure, sample_sem, validate_structure, Dataset, EnvPair, NoiseSpec,
    SemStructure, ShiftSpec,
};

pub use nalgebra::{DMatrix, DVector};
