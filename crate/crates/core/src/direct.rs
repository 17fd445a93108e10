//! Direct transcription oracle: piecewise-constant control, RK4 rollout,
//! quadratic penalty on the terminal defect, projected gradient descent.
//!
//! Deliberately independent of the indirect machinery — no costates, no
//! Hamiltonians — so agreement between the two solvers is meaningful. Desk
//! scale only: at most 512 decision variables.

use crate::dynamics::Dynamics;
use crate::expr::EvalError;
use crate::indirect::Extremal;
use crate::model::ControlProblem;
use crate::Scalar;
use std::fmt;

/// Hard cap on `l · N_d`.
pub const MAX_DIMS: usize = 512;
/// Penalty weight schedule: `RHO_INIT` times ten per outer round up to
/// `RHO_FINAL`.
pub const RHO_INIT: f64 = 1e2;
pub const RHO_FINAL: f64 = 1e8;
/// Projected-gradient norm at which the inner optimizer stops.
pub const GRAD_TOL: f64 = 1e-6;
/// Total inner-iteration budget across all penalty rounds.
pub const MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, thiserror::Error)]
pub enum DirectError {
    #[error("transcription needs at least 2 intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("transcription size l*N_d = {0} exceeds the desk-scale cap {MAX_DIMS}")]
    TooLarge(usize),
    #[error("rollout failed: {0}")]
    Eval(#[from] EvalError),
}

/// Result of the direct optimization.
#[derive(Debug, Clone)]
pub struct DirectSolution<T> {
    pub n_d: usize,
    /// Piecewise-constant control, interval-major (`u[i*l..(i+1)*l]`).
    pub u: Vec<T>,
    /// Achieved cost `J` (quadrature of the running cost, no penalty part).
    pub cost: T,
    pub defect_norm: T,
    pub iterations: usize,
    /// Whether the final round met the gradient tolerance.
    pub converged: bool,
}

impl<T: Scalar> DirectSolution<T> {
    /// Control value at time `t` under the piecewise-constant grid.
    pub fn u_at(&self, t: T, t1: T, j: usize, l: usize) -> T {
        let frac = (t / t1).to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
        let i = ((frac * self.n_d as f64) as usize).min(self.n_d - 1);
        self.u[i * l + j]
    }
}

/// Finite-dimensional objective produced by transcribing a problem.
pub struct Transcription<'p, T> {
    dynamics: Dynamics<'p, T>,
    pub n_d: usize,
    steps_per_interval: usize,
}

impl<'p, T: Scalar> Transcription<'p, T> {
    pub fn new(problem: &'p ControlProblem<T>, n_d: usize) -> Result<Self, DirectError> {
        if n_d < 2 {
            return Err(DirectError::TooFewIntervals(n_d));
        }
        if problem.l * n_d > MAX_DIMS {
            return Err(DirectError::TooLarge(problem.l * n_d));
        }
        // Keep the total rollout around 100-200 RK4 steps regardless of N_d.
        let steps_per_interval = (120 / n_d).max(2);
        Ok(Transcription {
            dynamics: Dynamics::new(problem),
            n_d,
            steps_per_interval,
        })
    }

    pub fn problem(&self) -> &ControlProblem<T> {
        self.dynamics.problem
    }

    /// Roll the dynamics out under the control grid; returns the running
    /// cost and the terminal-constraint defect vector.
    pub fn rollout(&self, u_grid: &[T]) -> Result<(T, Vec<T>), DirectError> {
        let p = self.dynamics.problem;
        let (n, l) = (p.n, p.l);
        assert_eq!(u_grid.len(), l * self.n_d);
        let mut state = vec![T::zero(); 2 * n + 2];
        state[..n].copy_from_slice(&p.q0);
        let n_d_t = T::from_usize(self.n_d).unwrap();
        let width = p.t1 / n_d_t;
        for i in 0..self.n_d {
            let u = &u_grid[i * l..(i + 1) * l];
            let t0 = p.t1 * T::from_usize(i).unwrap() / n_d_t;
            state = crate::dynamics::rk4_interval(
                &self.dynamics,
                state,
                t0,
                width,
                self.steps_per_interval,
                u,
            )?;
        }
        let defect: Vec<T> = p
            .terminal
            .iter()
            .map(|c| state[c.state] - c.value)
            .collect();
        Ok((state[2 * n], defect))
    }

    /// Penalized objective `J + ρ ‖defect‖²`.
    pub fn objective(&self, u_grid: &[T], rho: T) -> Result<T, DirectError> {
        let (cost, defect) = self.rollout(u_grid)?;
        let pen = defect.iter().fold(T::zero(), |acc, d| acc + *d * *d);
        Ok(cost + rho * pen)
    }
}

/// Outcome of [`optimize`]: final point, iterations used, gradient-tolerance
/// flag.
pub struct OptimizeOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent with central-difference gradients and a
/// backtracking line search (Barzilai–Borwein trial steps). Deterministic.
pub fn optimize<T, F>(
    f: F,
    dims: usize,
    bounds: &[(T, T)],
    x0: Vec<T>,
    max_iters: usize,
) -> Result<OptimizeOutcome<T>, DirectError>
where
    T: Scalar,
    F: Fn(&[T]) -> Result<T, DirectError>,
{
    assert_eq!(bounds.len(), dims);
    assert_eq!(x0.len(), dims);
    let project = |x: &mut [T]| {
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = (*v).max(*lo).min(*hi);
        }
    };
    let mut x = x0;
    project(&mut x);
    // Degenerate box: the only feasible point, zero iterations.
    if bounds.iter().all(|(lo, hi)| lo == hi) {
        return Ok(OptimizeOutcome {
            x,
            iterations: 0,
            converged: true,
        });
    }
    let gtol = T::lit(GRAD_TOL);
    let mut fx = f(&x)?;
    let mut grad = vec![T::zero(); dims];
    let mut prev: Option<(Vec<T>, Vec<T>)> = None; // (x, grad)
    let mut alpha = T::lit(1.0);
    let mut iterations = 0;
    // Non-monotone (GLL) reference window: Barzilai–Borwein steps are
    // allowed to climb against the recent maximum, which is what makes them
    // effective on the stiff penalty rounds.
    let mut recent: Vec<T> = vec![fx];
    let mut stagnant = 0usize;

    while iterations < max_iters {
        // Central-difference gradient.
        for j in 0..dims {
            let h = T::lit(1e-6) * x[j].abs().max(T::one());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            grad[j] = (f(&xp)? - f(&xm)?) / (T::lit(2.0) * h);
        }
        // Projected-gradient stationarity measure.
        let mut pg = T::zero();
        for j in 0..dims {
            let stepped = (x[j] - grad[j]).max(bounds[j].0).min(bounds[j].1);
            pg = pg.max((stepped - x[j]).abs());
        }
        if pg < gtol {
            return Ok(OptimizeOutcome {
                x,
                iterations,
                converged: true,
            });
        }
        // Barzilai–Borwein trial step from the previous iterate.
        if let Some((px, pg_)) = &prev {
            let mut ss = T::zero();
            let mut sy = T::zero();
            for j in 0..dims {
                let s = x[j] - px[j];
                let yd = grad[j] - pg_[j];
                ss = ss + s * s;
                sy = sy + s * yd;
            }
            if sy > T::lit(1e-300) {
                alpha = (ss / sy).max(T::lit(1e-12)).min(T::lit(1e12));
            }
        }
        prev = Some((x.clone(), grad.clone()));
        // Backtracking against the worst of the last few values.
        let f_ref = recent.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
        let mut accepted = false;
        let mut a = alpha;
        for _ in 0..40 {
            let mut trial: Vec<T> = (0..dims).map(|j| x[j] - a * grad[j]).collect();
            project(&mut trial);
            let mut gd = T::zero();
            for j in 0..dims {
                gd = gd + grad[j] * (trial[j] - x[j]);
            }
            match f(&trial) {
                Ok(ft) if ft <= f_ref + T::lit(1e-4) * gd => {
                    let rel_drop = (fx - ft).abs() / (T::one() + fx.abs());
                    stagnant = if rel_drop < T::lit(1e-14) {
                        stagnant + 1
                    } else {
                        0
                    };
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
                _ => a = a * T::lit(0.5),
            }
        }
        iterations += 1;
        if !accepted || stagnant >= 5 {
            // Stalled within floating-point resolution of the objective.
            return Ok(OptimizeOutcome {
                x,
                iterations,
                converged: pg < gtol,
            });
        }
        recent.push(fx);
        if recent.len() > 10 {
            recent.remove(0);
        }
    }
    Ok(OptimizeOutcome {
        x,
        iterations,
        converged: false,
    })
}

/// Transcribe and optimize with the standard penalty schedule
/// (`ρ: 1e2 → 1e8, ×10 per round`), warm-starting each round.
pub fn solve_direct<T: Scalar>(
    problem: &ControlProblem<T>,
    n_d: usize,
) -> Result<DirectSolution<T>, DirectError> {
    let tr = Transcription::new(problem, n_d)?;
    let l = problem.l;
    let dims = l * n_d;
    // Interval bounds replicate the per-component control bounds.
    let bounds: Vec<(T, T)> = (0..dims)
        .map(|idx| problem.control_bounds[idx % l])
        .collect();
    // Start at the box midpoint, 0 on unbounded coordinates.
    let x0: Vec<T> = bounds
        .iter()
        .map(|(lo, hi)| {
            if lo.is_finite() && hi.is_finite() {
                (*lo + *hi) * T::lit(0.5)
            } else {
                T::zero().max(*lo).min(*hi)
            }
        })
        .collect();

    let mut x = x0;
    let mut total_iters = 0usize;
    let mut converged = false;
    let mut rho = T::lit(RHO_INIT);
    let rho_final = T::lit(RHO_FINAL);
    let rounds = 7; // 1e2, 1e3, ..., 1e8
    for round in 0..rounds {
        let budget = ((MAX_ITERS - total_iters) / (rounds - round)).max(1);
        let out = optimize(|u| tr.objective(u, rho), dims, &bounds, x, budget)?;
        x = out.x;
        total_iters += out.iterations;
        converged = out.converged;
        if rho >= rho_final {
            break;
        }
        rho = rho * T::lit(10.0);
    }
    let (cost, defect) = tr.rollout(&x)?;
    let defect_norm = defect.iter().fold(T::zero(), |m, d| m.max(d.abs()));
    Ok(DirectSolution {
        n_d,
        u: x,
        cost,
        defect_norm,
        iterations: total_iters,
        converged,
    })
}

/// Agreement report between the indirect extremal and the direct solution.
#[derive(Debug, Clone)]
pub struct CompareReport<T> {
    pub j_indirect: T,
    pub j_direct: T,
    /// `|J_i - J_d| / max(1, |J_d|)`.
    pub rel_gap: T,
    /// RMS distance between the trajectory control and the interpolated
    /// direct grid.
    pub control_rms: T,
    pub tol_rel: T,
    pub pass: bool,
}

impl<T: Scalar> fmt::Display for CompareReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "J indirect     = {}", self.j_indirect)?;
        writeln!(f, "J direct       = {}", self.j_direct)?;
        writeln!(
            f,
            "relative gap   = {:e}",
            self.rel_gap.to_f64().unwrap_or(f64::NAN)
        )?;
        writeln!(
            f,
            "control RMS    = {:e}",
            self.control_rms.to_f64().unwrap_or(f64::NAN)
        )?;
        write!(
            f,
            "verdict        = {} (tolerance {})",
            if self.pass { "pass" } else { "FAIL" },
            self.tol_rel
        )
    }
}

/// Compare an extremal with a direct solution of the same problem instance.
pub fn compare<T: Scalar>(
    extremal: &Extremal<T>,
    direct: &DirectSolution<T>,
    problem: &ControlProblem<T>,
    tol_rel: T,
) -> CompareReport<T> {
    let j_i = extremal.cost;
    let j_d = direct.cost;
    let rel_gap = (j_i - j_d).abs() / T::one().max(j_d.abs());
    let traj = &extremal.trajectory;
    let mut acc = T::zero();
    let mut count = 0usize;
    for i in 0..traj.times.len() {
        let t = traj.times[i];
        for j in 0..problem.l {
            let d = traj.u_at(i)[j] - direct.u_at(t, problem.t1, j, problem.l);
            acc = acc + d * d;
            count += 1;
        }
    }
    let control_rms = (acc / T::from_usize(count).unwrap()).sqrt();
    CompareReport {
        j_indirect: j_i,
        j_direct: j_d,
        rel_gap,
        control_rms,
        tol_rel,
        pass: rel_gap <= tol_rel,
    }
}
