//! Command-line front end: load problem files, run the indirect solver, the
//! direct-oracle comparison, parameter sweeps, and validation. Trajectories
//! and sweep results are written as CSV (17 significant digits, `.` decimal
//! separator, `\n` line endings); a plain-text run report accompanies every
//! invocation.
//!
//! Exit codes: 0 success, 1 input error, 2 solver failure / comparison fail.

use clap::{Args, Parser, Subcommand, ValueEnum};
use portpmp::direct::{compare, solve_direct};
use portpmp::indirect::{check_certificate, solve, NuMode, SolveError, SolverConfig};
use portpmp::model::{load_problem, parse_problem, validate, ControlProblem};
use portpmp::{Extremal64, Problem64};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_SOLVER: u8 = 2;

#[derive(Parser)]
#[command(
    name = "portpmp",
    version,
    about = "Indirect optimal-control solver for port-driven systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file by indirect shooting; writes trajectory.csv and
    /// report.txt.
    Solve {
        /// Problem file (.ocp)
        file: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Output directory for artifacts
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve indirectly, then cross-check against the direct transcription
    /// oracle; exit 0 iff the costs agree within --tol-rel.
    Compare {
        file: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Relative cost-gap tolerance
        #[arg(long, default_value_t = 0.02)]
        tol_rel: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Re-solve over a range of one scalar parameter; writes sweep.csv.
    /// PARAM is `t1`, `q0[i]`, or `terminal[qi]`; VALUES is comma-separated.
    Sweep {
        file: PathBuf,
        param: String,
        /// Comma-separated values; may be negative or empty.
        #[arg(allow_hyphen_values = true)]
        values: String,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Check a problem file against the format and type invariants.
    Validate { file: PathBuf },
}

#[derive(Args)]
struct SolverFlags {
    /// RK4 steps on [0, t1]
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Shooting tolerance on the terminal defect (infinity norm)
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Extra shooting seed "v1,..,vn" (repeatable)
    #[arg(long = "seed-lambda", value_name = "v1,..,vn")]
    seed_lambda: Vec<String>,
    /// Multiplier class to attempt
    #[arg(long, value_enum, default_value_t = NuArg::Auto)]
    nu: NuArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NuArg {
    Auto,
    Normal,
    Abnormal,
}

impl From<NuArg> for NuMode {
    fn from(a: NuArg) -> Self {
        match a {
            NuArg::Auto => NuMode::Auto,
            NuArg::Normal => NuMode::Normal,
            NuArg::Abnormal => NuMode::Abnormal,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve { file, solver, out } => cmd_solve(&file, &solver, &out),
        Command::Compare {
            file,
            solver,
            tol_rel,
            out,
        } => cmd_compare(&file, &solver, tol_rel, &out),
        Command::Sweep {
            file,
            param,
            values,
            solver,
            out,
        } => cmd_sweep(&file, &param, &values, &solver, &out),
        Command::Validate { file } => cmd_validate(&file),
    };
    ExitCode::from(code)
}

fn fail_input(msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    EXIT_INPUT
}

fn load(file: &Path) -> Result<Problem64, u8> {
    let text = std::fs::read_to_string(file)
        .map_err(|e| fail_input(format_args!("cannot read {}: {e}", file.display())))?;
    load_problem(&text).map_err(fail_input)
}

fn build_config(flags: &SolverFlags, n: usize) -> Result<SolverConfig<f64>, u8> {
    if flags.steps < 2 {
        return Err(fail_input("--steps must be at least 2"));
    }
    if flags.tol.is_nan() || flags.tol <= 0.0 {
        return Err(fail_input("--tol must be positive"));
    }
    let mut cfg = SolverConfig {
        steps: flags.steps,
        tol: flags.tol,
        ..SolverConfig::default()
    };
    for arg in &flags.seed_lambda {
        let seed: Result<Vec<f64>, _> = arg.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match seed {
            Ok(v) if v.len() == n => cfg.extra_seeds.push(v),
            Ok(v) => {
                return Err(fail_input(format_args!(
                    "--seed-lambda needs {n} components, got {}",
                    v.len()
                )))
            }
            Err(e) => return Err(fail_input(format_args!("--seed-lambda: {e}"))),
        }
    }
    Ok(cfg)
}

fn config_line(cfg: &SolverConfig<f64>, nu: NuArg) -> String {
    let nu = match nu {
        NuArg::Auto => "auto",
        NuArg::Normal => "normal",
        NuArg::Abnormal => "abnormal",
    };
    format!(
        "steps={} tol={:e} nu={} extra_seeds={}",
        cfg.steps,
        cfg.tol,
        nu,
        cfg.extra_seeds.len()
    )
}

fn command_echo() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn write_artifact(out_dir: &Path, name: &str, content: &str) -> Result<PathBuf, u8> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| fail_input(format_args!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| fail_input(format_args!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// 17 significant digits, locale-independent.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn trajectory_csv(p: &ControlProblem<f64>, ex: &Extremal64) -> String {
    let traj = &ex.trajectory;
    let mut s = String::from("t");
    for i in 1..=p.n {
        write!(s, ",q{i}").unwrap();
    }
    for i in 1..=p.n {
        write!(s, ",lambda{i}").unwrap();
    }
    for i in 1..=p.l {
        write!(s, ",u{i}").unwrap();
    }
    for i in 1..=p.k {
        write!(s, ",f{i}").unwrap();
    }
    for i in 1..=p.k {
        write!(s, ",fprime{i}").unwrap();
    }
    for i in 1..=p.k {
        write!(s, ",e{i}").unwrap();
    }
    for i in 1..=p.k {
        write!(s, ",eprime{i}").unwrap();
    }
    s.push_str(",y,I\n");
    for node in 0..traj.times.len() {
        write!(s, "{}", num(traj.times[node])).unwrap();
        let row = |s: &mut String, data: &[f64], width: usize| {
            for j in 0..width {
                write!(s, ",{}", num(data[node * width + j])).unwrap();
            }
        };
        row(&mut s, &traj.q, p.n);
        row(&mut s, &traj.lambda, p.n);
        row(&mut s, &traj.u, p.l);
        row(&mut s, &traj.f, p.k);
        row(&mut s, &traj.fprime, p.k);
        row(&mut s, &traj.e, p.k);
        row(&mut s, &traj.eprime, p.k);
        writeln!(s, ",{},{}", num(traj.y[node]), num(traj.i_acc[node])).unwrap();
    }
    s
}

fn cmd_solve(file: &Path, flags: &SolverFlags, out: &Path) -> u8 {
    let started = Instant::now();
    let problem = match load(file) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let cfg = match build_config(flags, problem.n) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut report = String::new();
    writeln!(report, "command: {}", command_echo()).unwrap();
    writeln!(report, "config: {}", config_line(&cfg, flags.nu)).unwrap();

    match solve(&problem, &cfg, flags.nu.into()) {
        Ok(ex) => {
            let cert = check_certificate(&ex, &problem, &cfg);
            writeln!(report, "status: converged").unwrap();
            writeln!(report, "nu: {}", ex.nu).unwrap();
            writeln!(report, "J: {}", num(ex.cost)).unwrap();
            writeln!(report, "residual_norm: {:e}", ex.residual_norm()).unwrap();
            writeln!(report, "nontrivial: {}", ex.nontrivial).unwrap();
            writeln!(report, "certificate:").unwrap();
            for line in cert.to_string().lines() {
                writeln!(report, "  {line}").unwrap();
            }
            writeln!(report, "wall_time_ms: {}", started.elapsed().as_millis()).unwrap();
            let csv = trajectory_csv(&problem, &ex);
            if write_artifact(out, "trajectory.csv", &csv).is_err()
                || write_artifact(out, "report.txt", &report).is_err()
            {
                return EXIT_INPUT;
            }
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            let status = match &e {
                SolveError::Invalid(_) => "invalid-problem",
                SolveError::Failed { .. } => "solver-failed",
            };
            writeln!(report, "status: {status}").unwrap();
            for line in e.to_string().lines() {
                writeln!(report, "  {line}").unwrap();
            }
            writeln!(report, "wall_time_ms: {}", started.elapsed().as_millis()).unwrap();
            let _ = write_artifact(out, "report.txt", &report);
            eprint!("{report}");
            match e {
                SolveError::Invalid(_) => EXIT_INPUT,
                SolveError::Failed { .. } => EXIT_SOLVER,
            }
        }
    }
}

fn cmd_compare(file: &Path, flags: &SolverFlags, tol_rel: f64, out: &Path) -> u8 {
    let started = Instant::now();
    let problem = match load(file) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let cfg = match build_config(flags, problem.n) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let mut report = String::new();
    writeln!(report, "command: {}", command_echo()).unwrap();
    writeln!(
        report,
        "config: {} tol_rel={tol_rel}",
        config_line(&cfg, flags.nu)
    )
    .unwrap();

    let ex = match solve(&problem, &cfg, flags.nu.into()) {
        Ok(ex) => ex,
        Err(e) => {
            writeln!(report, "status: solver-failed").unwrap();
            for line in e.to_string().lines() {
                writeln!(report, "  {line}").unwrap();
            }
            let _ = write_artifact(out, "report.txt", &report);
            eprint!("{report}");
            return match e {
                SolveError::Invalid(_) => EXIT_INPUT,
                SolveError::Failed { .. } => EXIT_SOLVER,
            };
        }
    };
    let direct = match solve_direct(&problem, 50) {
        Ok(d) => d,
        Err(e) => {
            writeln!(report, "status: direct-oracle-failed\n  {e}").unwrap();
            let _ = write_artifact(out, "report.txt", &report);
            eprint!("{report}");
            return EXIT_SOLVER;
        }
    };
    let rep = compare(&ex, &direct, &problem, tol_rel);
    writeln!(report, "status: {}", if rep.pass { "pass" } else { "fail" }).unwrap();
    writeln!(report, "nu: {}", ex.nu).unwrap();
    for line in rep.to_string().lines() {
        writeln!(report, "  {line}").unwrap();
    }
    writeln!(report, "direct_defect: {:e}", direct.defect_norm).unwrap();
    writeln!(report, "direct_iterations: {}", direct.iterations).unwrap();
    writeln!(report, "wall_time_ms: {}", started.elapsed().as_millis()).unwrap();
    if write_artifact(out, "report.txt", &report).is_err() {
        return EXIT_INPUT;
    }
    print!("{report}");
    if rep.pass {
        EXIT_OK
    } else {
        EXIT_SOLVER
    }
}

/// Apply a sweep parameter assignment to a copy of the problem.
fn set_param(problem: &ControlProblem<f64>, param: &str, value: f64) -> Option<Problem64> {
    let mut p = problem.clone();
    if param == "t1" {
        p.t1 = value;
        return Some(p);
    }
    if let Some(inner) = param.strip_prefix("q0[").and_then(|s| s.strip_suffix(']')) {
        let i: usize = inner.parse().ok().filter(|&i| i >= 1 && i <= p.n)?;
        p.q0[i - 1] = value;
        return Some(p);
    }
    if let Some(inner) = param
        .strip_prefix("terminal[")
        .and_then(|s| s.strip_suffix(']'))
    {
        let i: usize = inner
            .strip_prefix('q')
            .and_then(|s| s.parse().ok())
            .filter(|&i| i >= 1 && i <= p.n)?;
        let c = p.terminal.iter_mut().find(|c| c.state == i - 1)?;
        c.value = value;
        return Some(p);
    }
    None
}

fn cmd_sweep(file: &Path, param: &str, values: &str, flags: &SolverFlags, out: &Path) -> u8 {
    let problem = match load(file) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let cfg = match build_config(flags, problem.n) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let vals: Vec<f64> = match values
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect()
    {
        Ok(v) => v,
        Err(e) => return fail_input(format_args!("bad sweep values: {e}")),
    };
    // Reject unknown parameter paths before spending solver time.
    if set_param(&problem, param, problem.t1).is_none() {
        return fail_input(format_args!("unknown sweep parameter `{param}`"));
    }

    // Rows are independent; solve them concurrently but emit in input order.
    let mode: NuMode = flags.nu.into();
    let mut rows: Vec<Option<(f64, f64, bool)>> = vec![None; vals.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = vals
            .iter()
            .map(|&v| {
                let problem = &problem;
                let cfg = &cfg;
                scope.spawn(move || match set_param(problem, param, v) {
                    Some(p) => match solve(&p, cfg, mode) {
                        Ok(ex) => (ex.cost, ex.nu, true),
                        Err(_) => (f64::NAN, f64::NAN, false),
                    },
                    None => (f64::NAN, f64::NAN, false),
                })
            })
            .collect();
        for (slot, h) in rows.iter_mut().zip(handles) {
            *slot = Some(h.join().expect("sweep worker panicked"));
        }
    });

    let mut csv = String::from("parameter,J,nu,converged\n");
    for (v, row) in vals.iter().zip(&rows) {
        let (j, nu, ok) = row.unwrap();
        writeln!(csv, "{},{},{},{}", num(*v), num(j), num(nu), ok).unwrap();
    }
    if write_artifact(out, "sweep.csv", &csv).is_err() {
        return EXIT_INPUT;
    }
    print!("{csv}");
    EXIT_OK
}

fn cmd_validate(file: &Path) -> u8 {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return fail_input(format_args!("cannot read {}: {e}", file.display())),
    };
    match parse_problem::<f64>(&text) {
        Ok(problem) => {
            let issues = validate(&problem);
            if issues.is_empty() {
                println!(
                    "ok: {} (n={}, l={}, k={})",
                    file.display(),
                    problem.n,
                    problem.l,
                    problem.k
                );
                EXIT_OK
            } else {
                for d in issues {
                    eprintln!("diagnostic: {d}");
                }
                EXIT_INPUT
            }
        }
        Err(e) => fail_input(e),
    }
}
