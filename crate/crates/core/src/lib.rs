#![allow(clippy::needless_range_loop)] // index loops mirror the matrix math
#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` deliberately catches NaN

//! Indirect optimal-control solver for control systems with input/output ports.
//!
//! The library solves fixed-horizon problems of the form
//!
//! ```text
//!     q̇ = F_u(q) + B(q) f'(t),        q(0) = q0,
//!     e  = Aᵀ(q) F_u(q),               e' = Bᵀ(q) ∂h/∂q,
//!     J  = ∫₀ᵗ¹ φ(q, u, e) dt  →  min over u(t) ∈ U,
//! ```
//!
//! where `f`, `f'` are known port input signals and `A(q)`, `B(q)` are the
//! port interconnection matrices. With `k = 0` ports the problem reduces to a
//! classic fixed-endpoint optimal-control problem.
//!
//! The solver pipeline is indirect: pointwise maximization of the (extended)
//! Hamiltonian over the control set, coupled state–costate integration with a
//! fixed-step RK4 scheme, and damped-Newton shooting on the initial costate.
//! Both the normal (`ν = -1`) and abnormal (`ν = 0`) multiplier classes are
//! handled. An independent direct-transcription optimizer ([`direct`]) serves
//! as a cross-check on achieved costs.
//!
//! Modules:
//! - [`expr`]: arithmetic expression trees with evaluation and symbolic
//!   differentiation,
//! - [`model`]: the declarative problem description and its text file format,
//! - [`dynamics`]: equations of motion, Hamiltonians, adjoint right-hand side,
//!   and the RK4 integrator,
//! - [`indirect`]: Hamiltonian maximization, shooting, and the certificate
//!   checks,
//! - [`direct`]: penalty-method direct transcription used as an oracle,
//! - [`mod@bench`]: the "cheapest stop" double-integrator benchmark family with
//!   its closed-form solution.
//!
//! All numeric code is generic over the scalar type through [`Scalar`];
//! `f64` aliases for the main types are exported at the crate root.

pub mod bench;
pub mod direct;
pub mod dynamics;
pub mod expr;
pub mod indirect;
pub mod model;
mod scalar;

pub use scalar::Scalar;

/// `f64` expression tree.
pub type Expr64 = expr::Expr<f64>;
/// `f64` problem description (the default precision everywhere).
pub type Problem64 = model::ControlProblem<f64>;
/// `f64` integrated trajectory.
pub type Trajectory64 = dynamics::Trajectory<f64>;
/// `f64` solved extremal candidate.
pub type Extremal64 = indirect::Extremal<f64>;
/// `f64` solver configuration.
pub type SolverConfig64 = indirect::SolverConfig<f64>;
/// `f64` direct-transcription solution.
pub type DirectSolution64 = direct::DirectSolution<f64>;
