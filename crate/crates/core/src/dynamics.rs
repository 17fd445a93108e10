//! Port-controlled equations of motion and their fixed-grid integration.
//!
//! [`Dynamics`] compiles a problem's expressions (drift, port matrices, cost,
//! and the symbolic derivatives the adjoint needs) once, then evaluates them
//! through a shared slot environment. The coupled state carried by
//! [`rk4_integrate`] is `(q, λ, y, I)` where `y` accumulates the running cost
//! and `I` accumulates the port power integral `∫ e·f + e'·f' dτ`.

use crate::expr::{Compiled, EvalError, Expr};
use crate::model::ControlProblem;
use crate::Scalar;

/// Time-gridded record of a coupled integration.
///
/// Per-node arrays are flat row-major: node `i` of `q` is
/// `q[i*n .. (i+1)*n]`, and similarly for the others.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub n: usize,
    pub l: usize,
    pub k: usize,
    /// Uniform grid `0 = t_0 < ... < t_N = t1`.
    pub times: Vec<T>,
    pub q: Vec<T>,
    pub lambda: Vec<T>,
    pub u: Vec<T>,
    pub f: Vec<T>,
    pub fprime: Vec<T>,
    pub e: Vec<T>,
    pub eprime: Vec<T>,
    /// Accumulated running cost; `y[0] = 0`.
    pub y: Vec<T>,
    /// Accumulated port integral; `i_acc[0] = 0`.
    pub i_acc: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn q_at(&self, node: usize) -> &[T] {
        &self.q[node * self.n..(node + 1) * self.n]
    }

    pub fn lambda_at(&self, node: usize) -> &[T] {
        &self.lambda[node * self.n..(node + 1) * self.n]
    }

    pub fn u_at(&self, node: usize) -> &[T] {
        &self.u[node * self.l..(node + 1) * self.l]
    }

    pub fn terminal_q(&self) -> &[T] {
        self.q_at(self.steps())
    }

    /// Achieved cost `J = y(t1)`.
    pub fn cost(&self) -> T {
        *self.y.last().unwrap()
    }

    /// Largest per-node `‖λ‖∞` over the grid.
    pub fn max_lambda_norm(&self) -> T {
        let mut m = T::zero();
        for v in &self.lambda {
            m = m.max(v.abs());
        }
        m
    }

    /// Smallest per-node `‖λ‖∞` over the grid.
    pub fn min_lambda_norm(&self) -> T {
        let mut m = T::infinity();
        for node in 0..self.times.len() {
            let mut norm = T::zero();
            for v in self.lambda_at(node) {
                norm = norm.max(v.abs());
            }
            m = m.min(norm);
        }
        m
    }
}

/// Integration failure; `E` is the control policy's error type.
#[derive(Debug, Clone, thiserror::Error)]
pub enum IntegrateError<E> {
    #[error("at t = {t}: {source}")]
    Eval { t: f64, source: EvalError },
    #[error("non-finite state at step {step} (t = {t}); integration aborted")]
    NonFinite { step: usize, t: f64 },
    #[error("at t = {t}: {source}")]
    Policy { t: f64, source: E },
}

/// Compiled evaluation machinery for one problem.
pub struct Dynamics<'p, T> {
    pub problem: &'p ControlProblem<T>,
    f: Vec<Compiled<T>>,
    /// Jacobian entries `∂F_i/∂q_j`, n×n row-major.
    df: Vec<Compiled<T>>,
    a: Vec<Compiled<T>>,
    b: Vec<Compiled<T>>,
    cost: Compiled<T>,
    /// `∂φ/∂q_j` with the e-symbols held fixed.
    dcost_dq: Vec<Compiled<T>>,
}

/// Scratch buffers for one integration or repeated point evaluation.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    env: Vec<T>,
    fval: Vec<T>,
    dfval: Vec<T>,
    aval: Vec<T>,
    bval: Vec<T>,
    dhdq: Vec<T>,
    pub e: Vec<T>,
    pub eprime: Vec<T>,
    pub sig_f: Vec<T>,
    pub sig_fp: Vec<T>,
}

impl<'p, T: Scalar> Dynamics<'p, T> {
    pub fn new(problem: &'p ControlProblem<T>) -> Self {
        let n = problem.n;
        let compile_all = |es: &[Expr<T>]| es.iter().map(Expr::compile).collect::<Vec<_>>();
        let mut df = Vec::with_capacity(n * n);
        for fi in &problem.dynamics {
            for j in 0..n {
                df.push(fi.diff(&format!("q{}", j + 1)).compile());
            }
        }
        let dcost_dq = (0..n)
            .map(|j| problem.running_cost.diff(&format!("q{}", j + 1)).compile())
            .collect();
        Dynamics {
            problem,
            f: compile_all(&problem.dynamics),
            df,
            a: compile_all(&problem.port_a),
            b: compile_all(&problem.port_b),
            cost: problem.running_cost.compile(),
            dcost_dq,
        }
    }

    pub fn workspace(&self) -> Workspace<T> {
        let p = self.problem;
        Workspace {
            env: vec![T::zero(); p.env_len()],
            fval: vec![T::zero(); p.n],
            dfval: vec![T::zero(); p.n * p.n],
            aval: vec![T::zero(); p.n * p.k],
            bval: vec![T::zero(); p.n * p.k],
            dhdq: vec![T::zero(); p.n],
            e: vec![T::zero(); p.k],
            eprime: vec![T::zero(); p.k],
            sig_f: vec![T::zero(); p.k],
            sig_fp: vec![T::zero(); p.k],
        }
    }

    fn fill_env(&self, ws: &mut Workspace<T>, q: &[T], u: &[T], t: T) {
        let p = self.problem;
        ws.env[..p.n].copy_from_slice(q);
        ws.env[p.n..p.n + p.l].copy_from_slice(u);
        ws.env[p.slot_t()] = t;
    }

    /// Evaluate `F_u`, the Jacobian `∂F/∂q`, the port matrices, the outputs
    /// `e` and `e'`, and `∂h/∂q = (∂F/∂q)ᵀ λ` at one point. The `e` values
    /// are bound into the environment for subsequent cost evaluations.
    fn eval_point(
        &self,
        ws: &mut Workspace<T>,
        q: &[T],
        lambda: &[T],
        u: &[T],
        t: T,
    ) -> Result<(), EvalError> {
        let p = self.problem;
        let (n, k) = (p.n, p.k);
        self.fill_env(ws, q, u, t);
        for i in 0..n {
            ws.fval[i] = self.f[i].eval(&ws.env)?;
        }
        for i in 0..n * n {
            ws.dfval[i] = self.df[i].eval(&ws.env)?;
        }
        for i in 0..n * k {
            ws.aval[i] = self.a[i].eval(&ws.env)?;
            ws.bval[i] = self.b[i].eval(&ws.env)?;
        }
        // ∂h/∂q, r-th component: Σ_s ∂F_s/∂q_r λ_s
        for r in 0..n {
            let mut acc = T::zero();
            for s in 0..n {
                acc = acc + ws.dfval[s * n + r] * lambda[s];
            }
            ws.dhdq[r] = acc;
        }
        // e = Aᵀ F_u, e' = Bᵀ ∂h/∂q
        for i in 0..k {
            let mut ei = T::zero();
            let mut epi = T::zero();
            for r in 0..n {
                ei = ei + ws.aval[r * k + i] * ws.fval[r];
                epi = epi + ws.bval[r * k + i] * ws.dhdq[r];
            }
            ws.e[i] = ei;
            ws.eprime[i] = epi;
            ws.env[p.slot_e(i)] = ei;
        }
        Ok(())
    }

    fn eval_signals(&self, ws: &mut Workspace<T>, t: T, h: T) {
        for i in 0..self.problem.k {
            ws.sig_f[i] = self.problem.f_value(i, t);
            ws.sig_fp[i] = self.problem.fprime_value(i, t, h);
        }
    }

    /// Coupled derivative from an already prepared workspace (after
    /// [`Dynamics::eval_point`] and [`Dynamics::eval_signals`]).
    fn derivs_from_ws(&self, ws: &Workspace<T>, nu: T, out: &mut [T]) -> Result<(), EvalError> {
        let p = self.problem;
        let (n, k) = (p.n, p.k);
        for r in 0..n {
            let mut qd = ws.fval[r];
            for i in 0..k {
                qd = qd + ws.bval[r * k + i] * ws.sig_fp[i];
            }
            out[r] = qd;
            let mut ld = -ws.dhdq[r];
            if nu != T::zero() {
                ld = ld - nu * self.dcost_dq[r].eval(&ws.env)?;
            }
            for i in 0..k {
                ld = ld + ws.aval[r * k + i] * ws.sig_f[i];
            }
            out[n + r] = ld;
        }
        out[2 * n] = self.cost.eval(&ws.env)?;
        let mut idot = T::zero();
        for i in 0..k {
            idot = idot + ws.e[i] * ws.sig_f[i] + ws.eprime[i] * ws.sig_fp[i];
        }
        out[2 * n + 1] = idot;
        Ok(())
    }

    /// `q̇ = F_u(q) + B(q) f'` with explicit port input values.
    pub fn vector_field(&self, q: &[T], u: &[T], fprime: &[T], t: T) -> Result<Vec<T>, EvalError> {
        let p = self.problem;
        let mut ws = self.workspace();
        let zeros = vec![T::zero(); p.n];
        self.eval_point(&mut ws, q, &zeros, u, t)?;
        let mut out = ws.fval.clone();
        for r in 0..p.n {
            for i in 0..p.k {
                out[r] = out[r] + ws.bval[r * p.k + i] * fprime[i];
            }
        }
        Ok(out)
    }

    /// Port output `e = Aᵀ(q) F_u(q)`.
    pub fn output_e(&self, q: &[T], u: &[T], t: T) -> Result<Vec<T>, EvalError> {
        let mut ws = self.workspace();
        let zeros = vec![T::zero(); self.problem.n];
        self.eval_point(&mut ws, q, &zeros, u, t)?;
        Ok(ws.e.clone())
    }

    /// Port output `e' = Bᵀ(q) (∂F_u/∂q)ᵀ λ`.
    pub fn output_eprime(&self, q: &[T], lambda: &[T], u: &[T], t: T) -> Result<Vec<T>, EvalError> {
        let mut ws = self.workspace();
        self.eval_point(&mut ws, q, lambda, u, t)?;
        Ok(ws.eprime.clone())
    }

    /// Drift pairing `h = ⟨λ, F_u(q)⟩`. The port term `⟨λ, B f'⟩` is
    /// control-independent and enters through the `I` accumulator instead.
    pub fn hamiltonian(&self, lambda: &[T], q: &[T], u: &[T], t: T) -> Result<T, EvalError> {
        let mut ws = self.workspace();
        self.fill_env(&mut ws, q, u, t);
        let mut h = T::zero();
        for i in 0..self.problem.n {
            h = h + lambda[i] * self.f[i].eval(&ws.env)?;
        }
        Ok(h)
    }

    /// Extended Hamiltonian `h + I + ν φ(q, u, e(q, u, t))`.
    pub fn extended_hamiltonian(
        &self,
        lambda: &[T],
        q: &[T],
        u: &[T],
        t: T,
        nu: T,
        i_acc: T,
    ) -> Result<T, EvalError> {
        let mut ws = self.workspace();
        self.eval_point(&mut ws, q, lambda, u, t)?;
        let mut h = T::zero();
        for i in 0..self.problem.n {
            h = h + lambda[i] * ws.fval[i];
        }
        let phi = self.cost.eval(&ws.env)?;
        Ok(h + i_acc + nu * phi)
    }

    /// Costate right-hand side `λ̇ = -(∂F_u/∂q)ᵀ λ - ν ∂φ/∂q + A(q) f`,
    /// with explicit port input values `f`.
    pub fn adjoint_rhs(
        &self,
        lambda: &[T],
        q: &[T],
        u: &[T],
        f: &[T],
        t: T,
        nu: T,
    ) -> Result<Vec<T>, EvalError> {
        let mut ws = self.workspace();
        self.eval_point(&mut ws, q, lambda, u, t)?;
        let p = self.problem;
        let mut out = vec![T::zero(); p.n];
        for r in 0..p.n {
            let mut v = -ws.dhdq[r];
            if nu != T::zero() {
                v = v - nu * self.dcost_dq[r].eval(&ws.env)?;
            }
            for i in 0..p.k {
                v = v + ws.aval[r * p.k + i] * f[i];
            }
            out[r] = v;
        }
        Ok(out)
    }

    /// Running-cost integrand with the `e` outputs bound.
    pub fn cost_integrand(&self, q: &[T], u: &[T], t: T) -> Result<T, EvalError> {
        let mut ws = self.workspace();
        let zeros = vec![T::zero(); self.problem.n];
        self.eval_point(&mut ws, q, &zeros, u, t)?;
        self.cost.eval(&ws.env)
    }
}

/// Classical fixed-step RK4 over a plain vector field; `observe` is called
/// with `(node_index, t, state)` at every node including the initial one.
/// Errors from `rhs` surface as [`IntegrateError::Policy`].
pub fn rk4<T, E, F, O>(
    mut rhs: F,
    y0: &[T],
    t0: T,
    t1: T,
    n_steps: usize,
    mut observe: O,
) -> Result<Vec<T>, IntegrateError<E>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]) -> Result<(), E>,
    O: FnMut(usize, T, &[T]),
{
    assert!(n_steps >= 2, "need at least 2 steps");
    let m = y0.len();
    let mut y = y0.to_vec();
    let mut k1 = vec![T::zero(); m];
    let mut k2 = vec![T::zero(); m];
    let mut k3 = vec![T::zero(); m];
    let mut k4 = vec![T::zero(); m];
    let mut tmp = vec![T::zero(); m];
    let span = t1 - t0;
    let steps_t = T::from_usize(n_steps).unwrap();
    let h = span / steps_t;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    observe(0, t0, &y);
    for step in 0..n_steps {
        let t = t0 + span * T::from_usize(step).unwrap() / steps_t;
        let wrap = |t: T, e: E| IntegrateError::Policy {
            t: t.to_f64().unwrap_or(f64::NAN),
            source: e,
        };
        rhs(t, &y, &mut k1).map_err(|e| wrap(t, e))?;
        for i in 0..m {
            tmp[i] = y[i] + h * half * k1[i];
        }
        rhs(t + h * half, &tmp, &mut k2).map_err(|e| wrap(t + h * half, e))?;
        for i in 0..m {
            tmp[i] = y[i] + h * half * k2[i];
        }
        rhs(t + h * half, &tmp, &mut k3).map_err(|e| wrap(t + h * half, e))?;
        for i in 0..m {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4).map_err(|e| wrap(t + h, e))?;
        for i in 0..m {
            y[i] = y[i] + h * sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite {
                step,
                t: (t + h).to_f64().unwrap_or(f64::NAN),
            });
        }
        let t_next = t0 + span * T::from_usize(step + 1).unwrap() / steps_t;
        observe(step + 1, t_next, &y);
    }
    Ok(y)
}

/// Integrate the coupled `(q, λ, y, I)` system on a uniform grid with a
/// control policy choosing `u` at every stage point.
///
/// The policy receives `(t, q, λ, I)` and writes the chosen control into its
/// out slice. Global error is O(h⁴) on smooth fields.
pub fn rk4_integrate<T, E, P>(
    dynamics: &Dynamics<'_, T>,
    lambda0: &[T],
    nu: T,
    n_steps: usize,
    mut policy: P,
) -> Result<Trajectory<T>, IntegrateError<E>>
where
    T: Scalar,
    P: FnMut(T, &[T], &[T], T, &mut [T]) -> Result<(), E>,
{
    assert!(n_steps >= 2, "need at least 2 steps");
    let p = dynamics.problem;
    let (n, l, k) = (p.n, p.l, p.k);
    let nodes = n_steps + 1;
    let mut traj = Trajectory {
        n,
        l,
        k,
        times: Vec::with_capacity(nodes),
        q: Vec::with_capacity(nodes * n),
        lambda: Vec::with_capacity(nodes * n),
        u: Vec::with_capacity(nodes * l),
        f: Vec::with_capacity(nodes * k),
        fprime: Vec::with_capacity(nodes * k),
        e: Vec::with_capacity(nodes * k),
        eprime: Vec::with_capacity(nodes * k),
        y: Vec::with_capacity(nodes),
        i_acc: Vec::with_capacity(nodes),
    };
    let mut ws = dynamics.workspace();
    let mut u = vec![T::zero(); l];
    let steps_t = T::from_usize(n_steps).unwrap();
    let h = p.t1 / steps_t;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);

    let mut state = vec![T::zero(); 2 * n + 2];
    state[..n].copy_from_slice(&p.q0);
    state[n..2 * n].copy_from_slice(lambda0);
    let mut k1 = vec![T::zero(); 2 * n + 2];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();

    for step in 0..=n_steps {
        let t = p.t1 * T::from_usize(step).unwrap() / steps_t;
        // Stage 1 doubles as the node evaluation that gets recorded.
        prepare(dynamics, &mut ws, &mut policy, &mut u, t, h, &state)?;
        traj.times.push(t);
        traj.q.extend_from_slice(&state[..n]);
        traj.lambda.extend_from_slice(&state[n..2 * n]);
        traj.u.extend_from_slice(&u);
        traj.f.extend_from_slice(&ws.sig_f);
        traj.fprime.extend_from_slice(&ws.sig_fp);
        traj.e.extend_from_slice(&ws.e);
        traj.eprime.extend_from_slice(&ws.eprime);
        traj.y.push(state[2 * n]);
        traj.i_acc.push(state[2 * n + 1]);
        if step == n_steps {
            break;
        }
        derivs(dynamics, &ws, nu, t, &mut k1)?;
        for i in 0..state.len() {
            tmp[i] = state[i] + h * half * k1[i];
        }
        prepare(
            dynamics,
            &mut ws,
            &mut policy,
            &mut u,
            t + h * half,
            h,
            &tmp,
        )?;
        derivs(dynamics, &ws, nu, t + h * half, &mut k2)?;
        for i in 0..state.len() {
            tmp[i] = state[i] + h * half * k2[i];
        }
        prepare(
            dynamics,
            &mut ws,
            &mut policy,
            &mut u,
            t + h * half,
            h,
            &tmp,
        )?;
        derivs(dynamics, &ws, nu, t + h * half, &mut k3)?;
        for i in 0..state.len() {
            tmp[i] = state[i] + h * k3[i];
        }
        prepare(dynamics, &mut ws, &mut policy, &mut u, t + h, h, &tmp)?;
        derivs(dynamics, &ws, nu, t + h, &mut k4)?;
        for i in 0..state.len() {
            state[i] = state[i] + h * sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(IntegrateError::NonFinite {
                step,
                t: (t + h).to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(traj)
}

/// RK4 over one interval `[t0, t0 + width]` with a constant control,
/// threading the full coupled state (the costate block rides along with
/// `ν = 0`). Used by rollouts that fix the control externally.
pub fn rk4_interval<T: Scalar>(
    dynamics: &Dynamics<'_, T>,
    mut state: Vec<T>,
    t0: T,
    width: T,
    steps: usize,
    u: &[T],
) -> Result<Vec<T>, EvalError> {
    let n = dynamics.problem.n;
    let mut ws = dynamics.workspace();
    let steps_t = T::from_usize(steps).unwrap();
    let h = width / steps_t;
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let two = T::lit(2.0);
    let m = state.len();
    let mut k1 = vec![T::zero(); m];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut tmp = k1.clone();
    let stage = |ws: &mut Workspace<T>, t: T, s: &[T], out: &mut [T]| -> Result<(), EvalError> {
        dynamics.eval_point(ws, &s[..n], &s[n..2 * n], u, t)?;
        dynamics.eval_signals(ws, t, h);
        dynamics.derivs_from_ws(ws, T::zero(), out)
    };
    for step in 0..steps {
        let t = t0 + width * T::from_usize(step).unwrap() / steps_t;
        stage(&mut ws, t, &state, &mut k1)?;
        for i in 0..m {
            tmp[i] = state[i] + h * half * k1[i];
        }
        stage(&mut ws, t + h * half, &tmp, &mut k2)?;
        for i in 0..m {
            tmp[i] = state[i] + h * half * k2[i];
        }
        stage(&mut ws, t + h * half, &tmp, &mut k3)?;
        for i in 0..m {
            tmp[i] = state[i] + h * k3[i];
        }
        stage(&mut ws, t + h, &tmp, &mut k4)?;
        for i in 0..m {
            state[i] = state[i] + h * sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
        }
    }
    Ok(state)
}

fn prepare<T: Scalar, E, P>(
    dynamics: &Dynamics<'_, T>,
    ws: &mut Workspace<T>,
    policy: &mut P,
    u: &mut [T],
    t: T,
    h: T,
    state: &[T],
) -> Result<(), IntegrateError<E>>
where
    P: FnMut(T, &[T], &[T], T, &mut [T]) -> Result<(), E>,
{
    let n = dynamics.problem.n;
    let te = t.to_f64().unwrap_or(f64::NAN);
    policy(t, &state[..n], &state[n..2 * n], state[2 * n + 1], u)
        .map_err(|e| IntegrateError::Policy { t: te, source: e })?;
    dynamics
        .eval_point(ws, &state[..n], &state[n..2 * n], u, t)
        .map_err(|source| IntegrateError::Eval { t: te, source })?;
    dynamics.eval_signals(ws, t, h);
    Ok(())
}

fn derivs<T: Scalar, E>(
    dynamics: &Dynamics<'_, T>,
    ws: &Workspace<T>,
    nu: T,
    t: T,
    out: &mut [T],
) -> Result<(), IntegrateError<E>> {
    dynamics
        .derivs_from_ws(ws, nu, out)
        .map_err(|source| IntegrateError::Eval {
            t: t.to_f64().unwrap_or(f64::NAN),
            source,
        })
}
