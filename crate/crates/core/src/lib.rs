//! Numerical obstacle problems in one dimension and quantitative checks of
//! Tonelli partial regularity for their minimizers.
//!
//! The crate is organised bottom-up: [`expr`] and [`grid`] are plumbing,
//! [`lagrangian`] and [`obstacles`] describe the data of a problem,
//! [`variational`] solves it, [`theory`] builds the constant pipeline and
//! [`regularity`] assembles the diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

pub mod expr;
pub mod grid;
pub mod lagrangian;
pub mod obstacles;
pub mod regularity;
pub mod theory;
pub mod variational;

pub use expr::{Expr, ExprError, Var};
pub use grid::{GridError, GridFunction};
pub use lagrangian::{
    check_ellipticity, estimate_holder, CompactBox, HolderEstimate, Lagrangian, LagrangianError,
};
pub use obstacles::{
    condition_1_2_suite, dini_test, estimate_modulus, obstacle_omega, Modulus, Obstacle,
    ObstacleError, ObstaclePair, PairOptions, TwoArgModulus, Verdict,
};
pub use regularity::{
    derivative_modulus, discrete_derivative, singular_candidates, tonelli_report, Candidate,
    RegularityReport, ReportOptions,
};
pub use theory::{
    check_energy_estimate, check_p2, check_p3, compute_m_growth, compute_n, little_delta,
    max_delta0, DeltaPipeline, ProblemTheory, TheoryConstants, TheoryError, TheoryOptions,
};
pub use variational::{
    check_a1, check_a2, check_a3, functional, solve, taut_string_oracle, PairPlan, PlanarSet,
    ProblemSpec, SolveResult, SolverOptions, VariationalError,
};
