//! Declarative problem description and its text file format.
//!
//! A problem file is line-oriented UTF-8; `#` starts a comment. Sections:
//!
//! ```text
//! [dims]       n = 2        # state dimension (>= 1)
//!              l = 1        # control dimension (>= 1)
//!              k = 0        # port dimension (>= 0; 0 means port-free)
//!              t1 = 1.0     # fixed final time (> 0)
//! [dynamics]   n lines: drift expressions over q1..qn, u1..ul, t
//! [port_A]     n*k lines, row-major, expressions over q1..qn (k >= 1 only)
//! [port_B]     n*k lines, row-major, expressions over q1..qn (k >= 1 only)
//! [cost]       one expression over q1..qn, u1..ul, e1..ek, t
//! [bounds]     l lines "lo hi"; `inf` / `-inf` allowed
//! [signals]    f<i> = <expr in t> | table (rows "time value" follow)
//!              fprime<i> = <expr in t> | table | linked
//! [boundary]   q0 = v1 .. vn
//!              terminal q<i> = value     (at most n lines)
//! ```
//!
//! Omitted signals default to zero. `linked` derives `fprime_i` from `f_i`
//! by central differences on the integration grid. A loaded problem always
//! satisfies [`validate`]; the loader rejects anything that would not.

use crate::expr::{parse, Expr, ExprKind, ParseError, Symbols};
use crate::Scalar;
use std::fmt;

/// Time-dependent port input channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Signal<T> {
    /// Expression in the single variable `t`.
    Expr(Expr<T>),
    /// Sampled values with linear interpolation, clamped outside the range.
    Table(Vec<(T, T)>),
}

impl<T: Scalar> Signal<T> {
    pub fn zero() -> Self {
        Signal::Expr(Expr::constant(T::zero()))
    }

    pub fn value(&self, t: T) -> T {
        match self {
            Signal::Expr(e) => e.eval_slots(&[t]).unwrap_or_else(|_| T::nan()),
            Signal::Table(rows) => {
                if rows.is_empty() {
                    return T::zero();
                }
                if t <= rows[0].0 {
                    return rows[0].1;
                }
                let last = rows.len() - 1;
                if t >= rows[last].0 {
                    return rows[last].1;
                }
                let i = rows.partition_point(|(ti, _)| *ti <= t) - 1;
                let (t0, v0) = rows[i];
                let (t1, v1) = rows[i + 1];
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }
}

/// `fprime` channel: its own signal, or derived from the paired `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum FprimeSignal<T> {
    Signal(Signal<T>),
    /// Central difference of the paired `f` signal on the time grid.
    Linked,
}

/// Terminal equality constraint `q[state](t1) = value` (0-based index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalConstraint<T> {
    pub state: usize,
    pub value: T,
}

/// Full declarative optimal-control problem. Immutable after load; safe to
/// share read-only across concurrent solver runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem<T> {
    pub n: usize,
    pub l: usize,
    pub k: usize,
    pub t1: T,
    /// Drift field `F_u`, one expression per state component.
    pub dynamics: Vec<Expr<T>>,
    /// `A(q)`, n×k row-major; empty when `k = 0`.
    pub port_a: Vec<Expr<T>>,
    /// `B(q)`, n×k row-major; empty when `k = 0`.
    pub port_b: Vec<Expr<T>>,
    /// Running cost integrand `φ(q, u, e, t)`.
    pub running_cost: Expr<T>,
    /// Per-component closed intervals defining the control set `U`.
    pub control_bounds: Vec<(T, T)>,
    pub signal_f: Vec<Signal<T>>,
    pub signal_fprime: Vec<FprimeSignal<T>>,
    pub q0: Vec<T>,
    pub terminal: Vec<TerminalConstraint<T>>,
}

impl<T: Scalar> ControlProblem<T> {
    /// Shared variable layout for all problem expressions:
    /// `q1..qn, u1..ul, t, e1..ek` (slots in that order).
    pub fn symbols(n: usize, l: usize, k: usize) -> Symbols {
        let mut names: Vec<String> = (1..=n).map(|i| format!("q{i}")).collect();
        names.extend((1..=l).map(|i| format!("u{i}")));
        names.push("t".to_string());
        names.extend((1..=k).map(|i| format!("e{i}")));
        Symbols::new(names)
    }

    pub fn slot_q(&self, i: usize) -> usize {
        i
    }

    pub fn slot_u(&self, i: usize) -> usize {
        self.n + i
    }

    pub fn slot_t(&self) -> usize {
        self.n + self.l
    }

    pub fn slot_e(&self, i: usize) -> usize {
        self.n + self.l + 1 + i
    }

    /// Length of the evaluation environment for problem expressions.
    pub fn env_len(&self) -> usize {
        self.n + self.l + 1 + self.k
    }

    pub fn f_value(&self, i: usize, t: T) -> T {
        self.signal_f[i].value(t)
    }

    /// `fprime_i(t)`; `h` is the grid step used for `linked` channels.
    pub fn fprime_value(&self, i: usize, t: T, h: T) -> T {
        match &self.signal_fprime[i] {
            FprimeSignal::Signal(s) => s.value(t),
            FprimeSignal::Linked => {
                let f = &self.signal_f[i];
                (f.value(t + h) - f.value(t - h)) / (T::lit(2.0) * h)
            }
        }
    }
}

/// One invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Name of the offending field, e.g. `t1` or `bounds[2]`.
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(field: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        field: field.into(),
        message: message.into(),
    }
}

/// Check every type invariant; empty iff the problem is well-formed.
pub fn validate<T: Scalar>(p: &ControlProblem<T>) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if p.n < 1 {
        out.push(diag("n", "state dimension must be >= 1"));
    }
    if p.l < 1 {
        out.push(diag("l", "control dimension must be >= 1"));
    }
    if !(p.t1 > T::zero()) {
        out.push(diag("t1", format!("final time must be > 0, got {}", p.t1)));
    }
    if p.dynamics.len() != p.n {
        out.push(diag(
            "dynamics",
            format!("expected {} expressions, got {}", p.n, p.dynamics.len()),
        ));
    }
    for (name, m) in [("port_A", &p.port_a), ("port_B", &p.port_b)] {
        if m.len() != p.n * p.k {
            out.push(diag(
                name,
                format!("expected {} entries, got {}", p.n * p.k, m.len()),
            ));
        }
    }
    if p.control_bounds.len() != p.l {
        out.push(diag(
            "bounds",
            format!("expected {} intervals, got {}", p.l, p.control_bounds.len()),
        ));
    }
    for (i, (lo, hi)) in p.control_bounds.iter().enumerate() {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            out.push(diag(
                format!("bounds[{}]", i + 1),
                format!("empty interval [{lo}, {hi}]"),
            ));
        }
    }
    if p.signal_f.len() != p.k || p.signal_fprime.len() != p.k {
        out.push(diag(
            "signals",
            format!("expected {} f and fprime channels", p.k),
        ));
    }
    for (i, s) in p.signal_f.iter().enumerate() {
        if let Signal::Table(rows) = s {
            if rows.windows(2).any(|w| w[0].0 >= w[1].0) {
                out.push(diag(
                    format!("f{}", i + 1),
                    "table times must be strictly increasing",
                ));
            }
        }
    }
    if p.q0.len() != p.n {
        out.push(diag(
            "q0",
            format!("expected {} values, got {}", p.n, p.q0.len()),
        ));
    }
    if p.terminal.len() > p.n {
        out.push(diag(
            "terminal",
            format!(
                "{} constraints exceed state dimension {}",
                p.terminal.len(),
                p.n
            ),
        ));
    }
    for c in &p.terminal {
        if c.state >= p.n {
            out.push(diag("terminal", format!("q{} out of range", c.state + 1)));
        }
    }
    for (i, a) in p.terminal.iter().enumerate() {
        if p.terminal[..i].iter().any(|b| b.state == a.state) {
            out.push(diag(
                "terminal",
                format!("duplicate constraint on q{}", a.state + 1),
            ));
        }
    }
    // Expressions may reference only the symbols their section allows.
    let env = p.env_len();
    let q_mask = |s: usize| s < p.n;
    let qut_mask = |s: usize| s < p.n + p.l + 1;
    for (i, e) in p.dynamics.iter().enumerate() {
        check_slots(e, env, &qut_mask, &format!("dynamics[{}]", i + 1), &mut out);
    }
    for (name, m) in [("port_A", &p.port_a), ("port_B", &p.port_b)] {
        for (i, e) in m.iter().enumerate() {
            check_slots(e, env, &q_mask, &format!("{name}[{}]", i + 1), &mut out);
        }
    }
    check_slots(&p.running_cost, env, &|_| true, "cost", &mut out);
    out
}

fn check_slots<T: Scalar>(
    e: &Expr<T>,
    env_len: usize,
    allowed: &dyn Fn(usize) -> bool,
    field: &str,
    out: &mut Vec<Diagnostic>,
) {
    match &e.kind {
        ExprKind::Const(_) => {}
        ExprKind::Var { name, slot } => {
            let s = *slot as usize;
            if s >= env_len || !allowed(s) {
                out.push(diag(field, format!("symbol `{name}` not allowed here")));
            }
        }
        ExprKind::Neg(a) => check_slots(a, env_len, allowed, field, out),
        ExprKind::Bin(_, a, b) => {
            check_slots(a, env_len, allowed, field, out);
            check_slots(b, env_len, allowed, field, out);
        }
        ExprKind::Call(_, args) => {
            for a in args {
                check_slots(a, env_len, allowed, field, out);
            }
        }
    }
}

/// Problem-file loading error, with the 1-based source line where known.
#[derive(Debug, Clone, thiserror::Error)]
pub enum ModelError {
    #[error("line {line}: {err}")]
    Expr { line: usize, err: ParseError },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing mandatory field: {0}")]
    MissingField(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Parse a problem file without the final validation gate; diagnostics can
/// then be collected separately with [`validate`].
pub fn parse_problem<T: Scalar>(source: &str) -> Result<ControlProblem<T>, ModelError> {
    Loader::scan(source)?.assemble()
}

/// Parse and validate a problem file. Deterministic: the same text always
/// yields the same problem.
pub fn load_problem<T: Scalar>(source: &str) -> Result<ControlProblem<T>, ModelError> {
    let p = parse_problem(source)?;
    let issues = validate(&p);
    if !issues.is_empty() {
        let msg = issues
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(ModelError::Invalid(msg));
    }
    Ok(p)
}

struct Loader<'a> {
    sections: Vec<(String, Vec<(usize, &'a str)>)>,
}

impl<'a> Loader<'a> {
    fn scan(source: &'a str) -> Result<Self, ModelError> {
        let mut sections: Vec<(String, Vec<(usize, &'a str)>)> = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| ModelError::Syntax {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                if sections.iter().any(|(n, _)| n == name) {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        msg: format!("duplicate section [{name}]"),
                    });
                }
                sections.push((name.to_string(), Vec::new()));
            } else {
                match sections.last_mut() {
                    Some((_, lines)) => lines.push((line_no, line)),
                    None => {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            msg: "content before first section header".into(),
                        })
                    }
                }
            }
        }
        Ok(Loader { sections })
    }

    fn section(&self, name: &str) -> Option<&[(usize, &'a str)]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, lines)| lines.as_slice())
    }

    fn assemble<T: Scalar>(&self) -> Result<ControlProblem<T>, ModelError> {
        for (name, _) in &self.sections {
            if !matches!(
                name.as_str(),
                "dims"
                    | "dynamics"
                    | "port_A"
                    | "port_B"
                    | "cost"
                    | "bounds"
                    | "signals"
                    | "boundary"
            ) {
                return Err(ModelError::Syntax {
                    line: 0,
                    msg: format!("unknown section [{name}]"),
                });
            }
        }

        // [dims]
        let dims = self
            .section("dims")
            .ok_or(ModelError::MissingField("[dims]".into()))?;
        let (mut n, mut l, mut k, mut t1) = (None, None, None, None);
        for &(line, text) in dims {
            let (key, value) = split_kv(line, text)?;
            match key {
                "n" => n = Some(parse_usize(line, value)?),
                "l" => l = Some(parse_usize(line, value)?),
                "k" => k = Some(parse_usize(line, value)?),
                "t1" => t1 = Some(parse_number::<T>(line, value)?),
                other => {
                    return Err(ModelError::Syntax {
                        line,
                        msg: format!("unknown [dims] key `{other}`"),
                    })
                }
            }
        }
        let n = n.ok_or(ModelError::MissingField("dims.n".into()))?;
        let l = l.ok_or(ModelError::MissingField("dims.l".into()))?;
        let k = k.unwrap_or(0);
        let t1 = t1.ok_or(ModelError::MissingField("dims.t1".into()))?;
        if n < 1 || l < 1 {
            return Err(ModelError::Dimension(format!(
                "n = {n}, l = {l} must be >= 1"
            )));
        }

        let table = ControlProblem::<T>::symbols(n, l, k);
        let qut = n + l + 1;
        let parse_expr = |line: usize, src: &str, max_slot: usize, section: &str| {
            let e: Expr<T> = parse(src, &table).map_err(|err| ModelError::Expr { line, err })?;
            let mut bad = Vec::new();
            check_slots(&e, max_slot, &|_| true, section, &mut bad);
            if let Some(d) = bad.into_iter().next() {
                return Err(ModelError::Syntax {
                    line,
                    msg: d.message,
                });
            }
            Ok(e)
        };

        // [dynamics]
        let dyn_lines = self
            .section("dynamics")
            .ok_or(ModelError::MissingField("[dynamics]".into()))?;
        if dyn_lines.len() != n {
            return Err(ModelError::Dimension(format!(
                "[dynamics] needs {n} expressions, found {}",
                dyn_lines.len()
            )));
        }
        let dynamics = dyn_lines
            .iter()
            .map(|&(line, src)| parse_expr(line, src, qut, "dynamics"))
            .collect::<Result<Vec<_>, _>>()?;

        // [port_A] / [port_B]
        let load_port = |name: &str| -> Result<Vec<Expr<T>>, ModelError> {
            let lines = self.section(name).unwrap_or(&[]);
            if lines.len() != n * k {
                return Err(ModelError::Dimension(format!(
                    "[{name}] needs {} entries (n*k, row-major), found {}",
                    n * k,
                    lines.len()
                )));
            }
            lines
                .iter()
                .map(|&(line, src)| parse_expr(line, src, n, name))
                .collect()
        };
        let port_a = load_port("port_A")?;
        let port_b = load_port("port_B")?;

        // [cost]
        let cost_lines = self
            .section("cost")
            .ok_or(ModelError::MissingField("[cost]".into()))?;
        if cost_lines.len() != 1 {
            return Err(ModelError::Dimension(format!(
                "[cost] needs exactly one expression, found {}",
                cost_lines.len()
            )));
        }
        let running_cost = parse_expr(cost_lines[0].0, cost_lines[0].1, qut + k, "cost")?;

        // [bounds]
        let bound_lines = self
            .section("bounds")
            .ok_or(ModelError::MissingField("[bounds]".into()))?;
        if bound_lines.len() != l {
            return Err(ModelError::Dimension(format!(
                "[bounds] needs {l} lines, found {}",
                bound_lines.len()
            )));
        }
        let mut control_bounds = Vec::with_capacity(l);
        for &(line, text) in bound_lines {
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(ModelError::Syntax {
                    line,
                    msg: "bounds line must be `lo hi`".into(),
                });
            }
            control_bounds.push((
                parse_bound::<T>(line, toks[0])?,
                parse_bound::<T>(line, toks[1])?,
            ));
        }

        // [signals]
        let mut signal_f: Vec<Option<Signal<T>>> = vec![None; k];
        let mut signal_fprime: Vec<Option<FprimeSignal<T>>> = vec![None; k];
        let t_table = Symbols::new(["t"]);
        if let Some(lines) = self.section("signals") {
            // (is_fprime, channel index, rows collected so far)
            type OpenTable<T> = Option<(bool, usize, Vec<(T, T)>)>;
            let mut current_table: OpenTable<T> = None;
            fn flush<T>(
                ct: &mut OpenTable<T>,
                f: &mut [Option<Signal<T>>],
                fp: &mut [Option<FprimeSignal<T>>],
            ) {
                if let Some((is_fprime, idx, rows)) = ct.take() {
                    if is_fprime {
                        fp[idx] = Some(FprimeSignal::Signal(Signal::Table(rows)));
                    } else {
                        f[idx] = Some(Signal::Table(rows));
                    }
                }
            }
            for &(line, text) in lines {
                if let Some(eq) = text.find('=') {
                    flush(&mut current_table, &mut signal_f, &mut signal_fprime);
                    let key = text[..eq].trim();
                    let value = text[eq + 1..].trim();
                    let (is_fprime, idx) = parse_signal_key(line, key, k)?;
                    match value {
                        "table" => current_table = Some((is_fprime, idx, Vec::new())),
                        "linked" if is_fprime => signal_fprime[idx] = Some(FprimeSignal::Linked),
                        "linked" => {
                            return Err(ModelError::Syntax {
                                line,
                                msg: "`linked` is only valid for fprime channels".into(),
                            })
                        }
                        expr_src => {
                            let e: Expr<T> = parse(expr_src, &t_table)
                                .map_err(|err| ModelError::Expr { line, err })?;
                            if is_fprime {
                                signal_fprime[idx] = Some(FprimeSignal::Signal(Signal::Expr(e)));
                            } else {
                                signal_f[idx] = Some(Signal::Expr(e));
                            }
                        }
                    }
                } else if let Some((_, _, rows)) = current_table.as_mut() {
                    let toks: Vec<&str> = text.split_whitespace().collect();
                    if toks.len() != 2 {
                        return Err(ModelError::Syntax {
                            line,
                            msg: "table row must be `time value`".into(),
                        });
                    }
                    rows.push((parse_number(line, toks[0])?, parse_number(line, toks[1])?));
                } else {
                    return Err(ModelError::Syntax {
                        line,
                        msg: "expected `f<i> = ...` or `fprime<i> = ...`".into(),
                    });
                }
            }
            flush(&mut current_table, &mut signal_f, &mut signal_fprime);
        }
        let signal_f: Vec<Signal<T>> = signal_f
            .into_iter()
            .map(|s| s.unwrap_or_else(Signal::zero))
            .collect();
        let signal_fprime: Vec<FprimeSignal<T>> = signal_fprime
            .into_iter()
            .map(|s| {
                s.unwrap_or(FprimeSignal::Signal(Signal::Expr(
                    Expr::constant(T::zero()),
                )))
            })
            .collect();

        // [boundary]
        let boundary = self
            .section("boundary")
            .ok_or(ModelError::MissingField("[boundary]".into()))?;
        let mut q0: Option<Vec<T>> = None;
        let mut terminal = Vec::new();
        for &(line, text) in boundary {
            if let Some(rest) = text.strip_prefix("q0") {
                let rest = rest.trim_start();
                let rest = rest.strip_prefix('=').ok_or_else(|| ModelError::Syntax {
                    line,
                    msg: "expected `q0 = v1 .. vn`".into(),
                })?;
                let vals = rest
                    .split_whitespace()
                    .map(|tok| parse_number::<T>(line, tok))
                    .collect::<Result<Vec<_>, _>>()?;
                if vals.len() != n {
                    return Err(ModelError::Dimension(format!(
                        "q0 needs {n} values, found {}",
                        vals.len()
                    )));
                }
                if q0.replace(vals).is_some() {
                    return Err(ModelError::Syntax {
                        line,
                        msg: "duplicate q0".into(),
                    });
                }
            } else if let Some(rest) = text.strip_prefix("terminal") {
                let rest = rest.trim_start();
                let eq = rest.find('=').ok_or_else(|| ModelError::Syntax {
                    line,
                    msg: "expected `terminal q<i> = value`".into(),
                })?;
                let name = rest[..eq].trim();
                let idx: usize = name
                    .strip_prefix('q')
                    .and_then(|s| s.parse().ok())
                    .filter(|&i| i >= 1 && i <= n)
                    .ok_or_else(|| ModelError::Syntax {
                        line,
                        msg: format!("`{name}` is not a state component (q1..q{n})"),
                    })?;
                let value = parse_number::<T>(line, rest[eq + 1..].trim())?;
                terminal.push(TerminalConstraint {
                    state: idx - 1,
                    value,
                });
            } else {
                return Err(ModelError::Syntax {
                    line,
                    msg: "expected `q0 = ...` or `terminal q<i> = ...`".into(),
                });
            }
        }
        let q0 = q0.ok_or(ModelError::MissingField("boundary.q0".into()))?;

        Ok(ControlProblem {
            n,
            l,
            k,
            t1,
            dynamics,
            port_a,
            port_b,
            running_cost,
            control_bounds,
            signal_f,
            signal_fprime,
            q0,
            terminal,
        })
    }
}

fn split_kv(line: usize, text: &str) -> Result<(&str, &str), ModelError> {
    let eq = text.find('=').ok_or_else(|| ModelError::Syntax {
        line,
        msg: "expected `key = value`".into(),
    })?;
    Ok((text[..eq].trim(), text[eq + 1..].trim()))
}

fn parse_usize(line: usize, text: &str) -> Result<usize, ModelError> {
    text.parse().map_err(|_| ModelError::Syntax {
        line,
        msg: format!("`{text}` is not a non-negative integer"),
    })
}

fn parse_number<T: Scalar>(line: usize, text: &str) -> Result<T, ModelError> {
    text.parse::<f64>()
        .ok()
        .and_then(T::from_f64)
        .filter(|v| v.is_finite())
        .ok_or_else(|| ModelError::Syntax {
            line,
            msg: format!("`{text}` is not a finite number"),
        })
}

fn parse_bound<T: Scalar>(line: usize, text: &str) -> Result<T, ModelError> {
    match text {
        "inf" | "+inf" => Ok(T::infinity()),
        "-inf" => Ok(T::neg_infinity()),
        _ => parse_number(line, text),
    }
}

fn parse_signal_key(line: usize, key: &str, k: usize) -> Result<(bool, usize), ModelError> {
    let (is_fprime, idx_str) = if let Some(rest) = key.strip_prefix("fprime") {
        (true, rest)
    } else if let Some(rest) = key.strip_prefix('f') {
        (false, rest)
    } else {
        return Err(ModelError::Syntax {
            line,
            msg: format!("unknown signal key `{key}`"),
        });
    };
    let idx: usize = idx_str.parse().map_err(|_| ModelError::Syntax {
        line,
        msg: format!("unknown signal key `{key}`"),
    })?;
    if idx < 1 || idx > k {
        return Err(ModelError::Syntax {
            line,
            msg: format!("signal index {idx} out of range 1..={k}"),
        });
    }
    Ok((is_fprime, idx - 1))
}

/// Emit a problem in the file format; the result reloads to a problem equal
/// under structural comparison.
pub fn serialize<T: Scalar>(p: &ControlProblem<T>) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    writeln!(s, "[dims]").unwrap();
    writeln!(s, "n = {}", p.n).unwrap();
    writeln!(s, "l = {}", p.l).unwrap();
    writeln!(s, "k = {}", p.k).unwrap();
    writeln!(s, "t1 = {}", p.t1).unwrap();
    writeln!(s, "\n[dynamics]").unwrap();
    for e in &p.dynamics {
        writeln!(s, "{e}").unwrap();
    }
    if p.k > 0 {
        writeln!(s, "\n[port_A]").unwrap();
        for e in &p.port_a {
            writeln!(s, "{e}").unwrap();
        }
        writeln!(s, "\n[port_B]").unwrap();
        for e in &p.port_b {
            writeln!(s, "{e}").unwrap();
        }
    }
    writeln!(s, "\n[cost]").unwrap();
    writeln!(s, "{}", p.running_cost).unwrap();
    writeln!(s, "\n[bounds]").unwrap();
    for (lo, hi) in &p.control_bounds {
        writeln!(s, "{} {}", fmt_bound(*lo), fmt_bound(*hi)).unwrap();
    }
    if p.k > 0 {
        writeln!(s, "\n[signals]").unwrap();
        for (i, sig) in p.signal_f.iter().enumerate() {
            write_signal(&mut s, &format!("f{}", i + 1), sig);
        }
        for (i, sig) in p.signal_fprime.iter().enumerate() {
            match sig {
                FprimeSignal::Linked => writeln!(s, "fprime{} = linked", i + 1).unwrap(),
                FprimeSignal::Signal(sig) => write_signal(&mut s, &format!("fprime{}", i + 1), sig),
            }
        }
    }
    writeln!(s, "\n[boundary]").unwrap();
    let q0 =
        p.q0.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
    writeln!(s, "q0 = {q0}").unwrap();
    for c in &p.terminal {
        writeln!(s, "terminal q{} = {}", c.state + 1, c.value).unwrap();
    }
    s
}

fn fmt_bound<T: Scalar>(v: T) -> String {
    if v == T::infinity() {
        "inf".into()
    } else if v == T::neg_infinity() {
        "-inf".into()
    } else {
        v.to_string()
    }
}

fn write_signal<T: Scalar>(out: &mut String, key: &str, sig: &Signal<T>) {
    use std::fmt::Write;
    match sig {
        Signal::Expr(e) => writeln!(out, "{key} = {e}").unwrap(),
        Signal::Table(rows) => {
            writeln!(out, "{key} = table").unwrap();
            for (t, v) in rows {
                writeln!(out, "{t} {v}").unwrap();
            }
        }
    }
}
