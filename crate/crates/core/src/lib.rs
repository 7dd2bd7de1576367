//! Mean-value calculus for sub-p-Laplace parabolic equations on the
//! Heisenberg group `H^n`.
//!
//! Coordinates are stored as `(x_1..x_n, x_{n+1}..x_{2n}, x_{2n+1})`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod dpp;
pub mod error;
pub mod fields;
pub mod heis;
pub mod mvp;
pub mod poly;
pub mod quadrature;
pub mod sum;

pub use calculus::{
    delta_h, delta_h_inf, frame_vector, jet, p_laplacian_normalized, HorizontalJet, PValue,
    ScalarField,
};
pub use error::{Error, Result};
pub use heis::{
    dilate, gauge, group_inv, group_mul, left_distance, polar_jacobian, polar_to_point, psi,
    HPoint, PolarCoord,
};
pub use quadrature::{
    ball_extremum, build_rule, m_constant, moment_check, weighted_ball_average, ExtremumMode,
    MomentReport, QuadratureRule, Resolution, SearchConfig,
};
pub use fields::{builtin_field, resolve_field};
pub use mvp::{
    alpha_beta, expansion_residual, mvp_blend, order_fit, spacetime_midrange,
    spacetime_weighted_mean, ExpansionReport, MvpParams,
};
pub use poly::Polynomial;
pub use dpp::{
    error_report, solve, DiscreteField, GridSpec, Interpolation, SolverConfig, SpaceTimeGrid,
};
