//! Permanent approximations (Sinkhorn, scaled Sinkhorn, Bethe) and an
//! approximate profile maximum likelihood (PML) pipeline built on a convex
//! relaxation plus rounding.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod approx;
pub mod assignment;
pub mod discretization;
pub mod error;
pub mod estimator;
pub mod matrix;
pub mod numeric;
pub mod permanent;
pub mod profile;
pub mod rounding;
pub mod solver;

pub use allocation::AllocationMatrix;
pub use approx::{
    bethe_permanent, block_ones_matrix, functional_f, functional_u, functional_v,
    k_distinct_column_matrix, scaled_sinkhorn_permanent, sinkhorn_permanent, sinkhorn_scale,
    ApproximationReport, DoublyStochasticWitness, Method,
};
pub use discretization::{
    build_discretization, build_discretization_with_eps, discretize, DiscretizationSet,
};
pub use error::{Error, Result};
pub use estimator::{
    approximate_pml, approximate_pml_with, estimate_property, exact_pml_oracle, OracleResult,
    PmlOptions, PmlParams, PmlResult, Property, PropertyEstimate,
};
pub use matrix::{is_doubly_stochastic, NonNegMatrix};
pub use permanent::{log_permanent, permanent_naive, permanent_ryser};
pub use profile::{
    log_c_phi, profile_of_sequence, profile_probability_bruteforce, profile_probability_exact,
    profile_probability_grouped, profile_probability_matrix, sample_sequence, Profile,
    PseudoDistribution,
};
pub use rounding::{
    create_new_probability_values, round_allocation, structured_rounding, RoundingTrace,
};
pub use solver::{
    maximize_log_g, maximize_log_g_default, maximize_log_g_on_levels, ConvexSolution,
};
