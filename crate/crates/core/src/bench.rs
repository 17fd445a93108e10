//! "Cheapest stop" benchmark family: brake a unit-mass vehicle from
//! `(x0, v0)` to rest at `x1` in fixed time `t1`, minimizing `∫ u² dt`.
//!
//! The classic variant is the plain double integrator. The ported variant
//! adds one port channel: a column `B` feeding the input signal `f'` into
//! the dynamics and a column `A` reading the flow output, with the running
//! cost picking up `(e₁ + e₂)·f` where `e₁` is the `A`-side output and `e₂`
//! the `B`-side one.
//!
//! The closed-form solution of the classic variant (control linear in time)
//! makes this the main oracle for the solvers: `u(t) = αt + β` with the two
//! coefficients fixed by the terminal conditions, and `λ = (-2α, 2β + ...)`
//! recovering the shooting target.

use crate::model::{load_problem, ControlProblem, ModelError};
use crate::Scalar;

/// Parameters of the classic benchmark instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheapestStopParams<T> {
    /// Initial position.
    pub x0: T,
    /// Initial velocity.
    pub v0: T,
    /// Target position at `t1` (velocity target is rest).
    pub x1: T,
    /// Horizon, > 0.
    pub t1: T,
}

/// Port data for the ported variant; columns are length-2 (the state is
/// `(position, velocity)`).
#[derive(Debug, Clone, PartialEq)]
pub struct PortParams<T> {
    pub a_col: [T; 2],
    pub b_col: [T; 2],
    /// Input signal `f(t)`, an expression in `t`.
    pub f: String,
    /// Input signal `f'(t)`, an expression in `t`.
    pub fprime: String,
}

impl<T: Scalar> Default for PortParams<T> {
    fn default() -> Self {
        // A reads the position flow, B drives the actuated channel.
        PortParams {
            a_col: [T::one(), T::zero()],
            b_col: [T::zero(), T::one()],
            f: "0".to_string(),
            fprime: "0".to_string(),
        }
    }
}

/// Problem-file text for the classic instance.
pub fn classic_file<T: Scalar>(p: &CheapestStopParams<T>) -> String {
    format!(
        "# cheapest stop, classic\n\
         [dims]\nn = 2\nl = 1\nk = 0\nt1 = {t1}\n\n\
         [dynamics]\nq2\nu1\n\n\
         [cost]\nu1^2\n\n\
         [bounds]\n-inf inf\n\n\
         [boundary]\nq0 = {x0} {v0}\nterminal q1 = {x1}\nterminal q2 = 0\n",
        t1 = p.t1,
        x0 = p.x0,
        v0 = p.v0,
        x1 = p.x1,
    )
}

/// Classic double-integrator problem: `n = 2`, `l = 1`, `k = 0`.
pub fn classic_problem<T: Scalar>(
    p: &CheapestStopParams<T>,
) -> Result<ControlProblem<T>, ModelError> {
    load_problem(&classic_file(p))
}

/// Problem-file text for the ported instance.
pub fn ported_file<T: Scalar>(p: &CheapestStopParams<T>, port: &PortParams<T>) -> String {
    // e₂ = Bᵀ F_u spelled out over the state drift (q2, u1), so the cost
    // stays a function of (q, u, e, t) that any optimizer can evaluate.
    let e2 = format!("({}*q2 + {}*u1)", port.b_col[0], port.b_col[1]);
    format!(
        "# cheapest stop, ported\n\
         [dims]\nn = 2\nl = 1\nk = 1\nt1 = {t1}\n\n\
         [dynamics]\nq2\nu1\n\n\
         [port_A]\n{a1}\n{a2}\n\n\
         [port_B]\n{b1}\n{b2}\n\n\
         [cost]\nu1^2 + (e1 + {e2})*({f})\n\n\
         [bounds]\n-inf inf\n\n\
         [signals]\nf1 = {f}\nfprime1 = {fp}\n\n\
         [boundary]\nq0 = {x0} {v0}\nterminal q1 = {x1}\nterminal q2 = 0\n",
        t1 = p.t1,
        a1 = port.a_col[0],
        a2 = port.a_col[1],
        b1 = port.b_col[0],
        b2 = port.b_col[1],
        e2 = e2,
        f = port.f,
        fp = port.fprime,
        x0 = p.x0,
        v0 = p.v0,
        x1 = p.x1,
    )
}

/// Ported variant: `k = 1` with user-supplied `A`, `B` columns and signals.
pub fn ported_problem<T: Scalar>(
    p: &CheapestStopParams<T>,
    port: &PortParams<T>,
) -> Result<ControlProblem<T>, ModelError> {
    load_problem(&ported_file(p, port))
}

/// Closed-form solution of the classic instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticClassic<T> {
    /// Slope of the optimal control `u(t) = αt + β`.
    pub alpha: T,
    /// Intercept of the optimal control.
    pub beta: T,
    /// Optimal cost `∫ (αt + β)² dt`.
    pub j_star: T,
}

impl<T: Scalar> AnalyticClassic<T> {
    pub fn u_at(&self, t: T) -> T {
        self.alpha * t + self.beta
    }

    /// Initial costate of the matching extremal: `λ(0) = (-2α, 2β)`.
    pub fn lambda0(&self) -> [T; 2] {
        let two = T::lit(2.0);
        [-two * self.alpha, two * self.beta]
    }
}

/// Solve the 2×2 linear system pinning `u(t) = αt + β` to the terminal
/// conditions `x2(t1) = 0` and `x1(t1) = x1`:
///
/// ```text
///   v0 + β t1 + α t1²/2 = 0
///   x0 + v0 t1 + β t1²/2 + α t1³/6 = x1
/// ```
///
/// The determinant is `-t1⁴/12`, nonzero for every `t1 > 0`.
pub fn analytic_classic<T: Scalar>(p: &CheapestStopParams<T>) -> AnalyticClassic<T> {
    assert!(p.t1 > T::zero(), "horizon must be positive");
    let t1 = p.t1;
    let t2 = t1 * t1;
    let t3 = t2 * t1;
    let rhs1 = -p.v0;
    let rhs2 = p.x1 - p.x0 - p.v0 * t1;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let det = t1 * (t3 * sixth) - (t2 * half) * (t2 * half);
    let beta = (rhs1 * (t3 * sixth) - rhs2 * (t2 * half)) / det;
    let alpha = (t1 * rhs2 - (t2 * half) * rhs1) / det;
    // J* = α² t1³/3 + α β t1² + β² t1
    let third = T::one() / T::lit(3.0);
    let j_star = alpha * alpha * t3 * third + alpha * beta * t2 + beta * beta * t1;
    AnalyticClassic {
        alpha,
        beta,
        j_star,
    }
}
