//! Time-barrier predefined-time stabilization.
//!
//! The reference law
//!
//! ```text
//! dx/dt = -beta x / (T_c - t) - q |x|^alpha sgn(x)
//! ```
//!
//! drives every initial state to the origin before the deadline `T_c` when
//! `beta (1 - alpha) >= 1`. This crate provides the law and its analytic
//! solution, an integrator that resolves the approach to `T_c`, numerical
//! Lyapunov certificates and batch sweeps.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod certify;
pub mod dynamics;
pub mod integrate;
pub mod params;
mod quadrature;
pub mod sweep;
pub mod systems;

pub use analytic::{
    autonomous_settling_integral, barrier_integral, exact_solution_scalar, settling_bound, AnalyticError,
    SettlingBound,
};
pub use certify::{
    check_dissipation, find_nonautonomy_witness, w_transform, CertificateReport, CertifyError, NonAutonomyWitness,
    WitnessVerdict,
};
pub use dynamics::{DynamicsError, DynamicsSpec, Lyapunov};
pub use integrate::{simulate, ResampleError, SimulateError, Trajectory, TrajectorySample};
pub use params::{barrier_exponent, validate_params, Admissibility, BarrierParams, NumericPolicy, PolicyError};
pub use sweep::{run_sweep, separation_table, SweepConfig, SweepError, SweepResult};
pub use systems::{make_autonomous_power_law, make_time_barrier_componentwise, make_time_barrier_scalar, with_bias};
