//! Projection dynamical systems for inverse quasi-variational inequalities:
//! find `u*` with `f(u*) ∈ Φ(u*)` and `⟨u*, y − f(u*)⟩ ≥ 0` for all `y ∈ Φ(u*)`.
//!
//! The crate provides the nominal, finite-time and fixed-time flows driven by
//! the residual `T(u) = f(u) − P_{Φ(u)}(f(u) − αu)`, their Euler and
//! Runge-Kutta discretisations, stability certificates with settling-time
//! bounds, and a traffic road-pricing benchmark built on Frank-Wolfe
//! user-equilibrium assignment.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod integrate;
pub mod problem;
pub mod traffic;

pub use analysis::{
    certify, certify_constants, certify_with, error_envelope, finite_time_bound, fixed_time_bound, ErrorEnvelope,
    EstimateSettings, FiniteTimeBound, FixedTimeBound, ProblemConstants, Report, StabilityCertificate,
};
pub use dynamics::{psi, residual, rhs, FlowParams, ZERO_RESIDUAL};
pub use error::{Error, Result};
pub use geometry::{FollowingBall, MovingSet, Projector, SetKind, Vector};
pub use integrate::{
    euler, find_monotone_step, integrate_reference, measure_settling, Record, StepSchedule, StopCriteria, Termination,
    Trajectory,
};
pub use problem::{IqviProblem, OperatorConstants, OperatorConstantsEstimate, OperatorKind, OperatorSpec, VectorField};
pub use traffic::{
    bpr_time, shortest_paths, solve_road_pricing, user_equilibrium, FrankWolfeVariant, Link, ODMatrix,
    RoadPricingOperator, RoadPricingRun, TrafficNetwork, UEResult, UeSettings,
};
