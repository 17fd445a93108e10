//! Scalar arithmetic expressions over named variables.
//!
//! An [`Expr`] is an immutable tree parsed from text (see [`parse`]) against a
//! fixed [`Symbols`] table. It supports evaluation in IEEE floating point,
//! exact symbolic differentiation, substitution, a canonical printer whose
//! output reparses to a structurally equal tree, and compilation to a flat
//! postfix program ([`Compiled`]) for hot evaluation loops.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?            // right-associative
//! atom   := NUMBER | IDENT | IDENT "(" expr ("," expr)* ")" | "(" expr ")"
//! ```
//!
//! so `^` binds tighter than unary minus, which binds tighter than `*` `/`,
//! which bind tighter than `+` `-`. Exponents are restricted to numeric
//! constants (possibly negated) so that differentiation stays total.
//!
//! Functions: `sin cos exp log sqrt abs sgn min max le`. `sgn` is the sign
//! function with `sgn(0) = 0`; `le(a, b)` is `1` when `a <= b` and `0`
//! otherwise. The last two exist mostly so derivatives of `abs`, `min`, and
//! `max` remain expressible inside the grammar: `abs` differentiates to
//! `sgn(u)*u'` and `min`/`max` select the first argument on ties.

mod parse;

pub use parse::{parse, ParseError, ParseErrorKind};

use crate::Scalar;
use std::fmt;
use std::sync::Arc;

/// Span sentinel for synthetic nodes (results of `diff`, `substitute`, ...).
pub const NO_SPAN: u32 = u32::MAX;

/// Ordered variable table; a variable's slot is its index here.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Symbols {
    names: Vec<String>,
}

impl Symbols {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        debug_assert!(
            names.iter().collect::<std::collections::HashSet<_>>().len() == names.len(),
            "duplicate symbol names"
        );
        Symbols { names }
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sgn,
    Min,
    Max,
    Le,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sgn => "sgn",
            Func::Min => "min",
            Func::Max => "max",
            Func::Le => "le",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max | Func::Le => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sgn" => Func::Sgn,
            "min" => Func::Min,
            "max" => Func::Max,
            "le" => Func::Le,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind<T> {
    Const(T),
    Var { name: Arc<str>, slot: u32 },
    Neg(Box<Expr<T>>),
    Bin(BinOp, Box<Expr<T>>, Box<Expr<T>>),
    Call(Func, Vec<Expr<T>>),
}

/// Parsed expression tree. `span` is the byte offset of the node in the
/// original source, or [`NO_SPAN`] for synthetic nodes.
#[derive(Debug, Clone)]
pub struct Expr<T> {
    pub kind: ExprKind<T>,
    pub span: u32,
}

// Structural equality; spans are bookkeeping and intentionally ignored.
impl<T: PartialEq> PartialEq for Expr<T> {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Const(a), ExprKind::Const(b)) => a == b,
            (ExprKind::Var { name: a, .. }, ExprKind::Var { name: b, .. }) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a == b,
            (ExprKind::Bin(op_a, la, ra), ExprKind::Bin(op_b, lb, rb)) => {
                op_a == op_b && la == lb && ra == rb
            }
            (ExprKind::Call(fa, args_a), ExprKind::Call(fb, args_b)) => {
                fa == fb && args_a == args_b
            }
            _ => false,
        }
    }
}

/// Evaluation failure: a genuine domain error is reported rather than letting
/// a NaN propagate silently.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("unbound variable `{name}`")]
    UnboundVar { name: String },
    #[error("log of non-positive value {arg} (at offset {})", fmt_span(*.span))]
    LogNonPositive { arg: f64, span: u32 },
    #[error("sqrt of negative value {arg} (at offset {})", fmt_span(*.span))]
    SqrtNegative { arg: f64, span: u32 },
    #[error("division by zero (at offset {})", fmt_span(*.span))]
    DivByZero { span: u32 },
    #[error("{base}^{exponent} undefined (at offset {})", fmt_span(*.span))]
    PowDomain { base: f64, exponent: f64, span: u32 },
}

fn fmt_span(span: u32) -> String {
    if span == NO_SPAN {
        "<derived>".to_string()
    } else {
        span.to_string()
    }
}

impl EvalError {
    pub fn span(&self) -> Option<u32> {
        let s = match self {
            EvalError::UnboundVar { .. } => return None,
            EvalError::LogNonPositive { span, .. } => *span,
            EvalError::SqrtNegative { span, .. } => *span,
            EvalError::DivByZero { span } => *span,
            EvalError::PowDomain { span, .. } => *span,
        };
        (s != NO_SPAN).then_some(s)
    }
}

/// Non-smooth construct encountered while differentiating; the derivative
/// uses the documented one-sided convention at the kink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffWarning {
    pub func: Func,
    pub span: u32,
}

impl fmt::Display for DiffWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "derivative of `{}` uses one-sided convention at kinks (offset {})",
            self.func.name(),
            fmt_span(self.span)
        )
    }
}

impl<T: Scalar> Expr<T> {
    pub fn constant(value: T) -> Self {
        Expr {
            kind: ExprKind::Const(value),
            span: NO_SPAN,
        }
    }

    pub fn var(name: impl Into<Arc<str>>, slot: usize) -> Self {
        Expr {
            kind: ExprKind::Var {
                name: name.into(),
                slot: slot as u32,
            },
            span: NO_SPAN,
        }
    }

    pub(crate) fn zero() -> Self {
        Expr::constant(T::zero())
    }

    pub(crate) fn one() -> Self {
        Expr::constant(T::one())
    }

    fn as_const(&self) -> Option<T> {
        match self.kind {
            ExprKind::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is_const(&self, v: T) -> bool {
        self.as_const() == Some(v)
    }

    // --- simplifying constructors, used when building derivative trees ---
    //
    // Folding here is conservative: constants combine, additive/multiplicative
    // identities drop out, nothing is reassociated, and division keeps its
    // denominator unless it is a nonzero literal.

    pub(crate) fn add(a: Expr<T>, b: Expr<T>) -> Expr<T> {
        if a.is_const(T::zero()) {
            return b;
        }
        if b.is_const(T::zero()) {
            return a;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x + y);
        }
        Expr {
            kind: ExprKind::Bin(BinOp::Add, Box::new(a), Box::new(b)),
            span: NO_SPAN,
        }
    }

    pub(crate) fn sub(a: Expr<T>, b: Expr<T>) -> Expr<T> {
        if b.is_const(T::zero()) {
            return a;
        }
        if a.is_const(T::zero()) {
            return Expr::negate(b);
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x - y);
        }
        Expr {
            kind: ExprKind::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
            span: NO_SPAN,
        }
    }

    pub(crate) fn mul(a: Expr<T>, b: Expr<T>) -> Expr<T> {
        if a.is_const(T::zero()) || b.is_const(T::zero()) {
            return Expr::zero();
        }
        if a.is_const(T::one()) {
            return b;
        }
        if b.is_const(T::one()) {
            return a;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x * y);
        }
        Expr {
            kind: ExprKind::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
            span: NO_SPAN,
        }
    }

    pub(crate) fn div(a: Expr<T>, b: Expr<T>) -> Expr<T> {
        if a.is_const(T::zero()) {
            return Expr::zero();
        }
        if b.is_const(T::one()) {
            return a;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if y != T::zero() {
                return Expr::constant(x / y);
            }
        }
        Expr {
            kind: ExprKind::Bin(BinOp::Div, Box::new(a), Box::new(b)),
            span: NO_SPAN,
        }
    }

    pub(crate) fn negate(a: Expr<T>) -> Expr<T> {
        if let Some(x) = a.as_const() {
            return Expr::constant(-x);
        }
        if let ExprKind::Neg(inner) = a.kind {
            return *inner;
        }
        Expr {
            kind: ExprKind::Neg(Box::new(a)),
            span: NO_SPAN,
        }
    }

    pub(crate) fn pow_const(a: Expr<T>, c: T) -> Expr<T> {
        if c == T::zero() {
            return Expr::one();
        }
        if c == T::one() {
            return a;
        }
        Expr {
            kind: ExprKind::Bin(BinOp::Pow, Box::new(a), Box::new(Expr::constant(c))),
            span: NO_SPAN,
        }
    }

    pub(crate) fn call(f: Func, args: Vec<Expr<T>>) -> Expr<T> {
        Expr {
            kind: ExprKind::Call(f, args),
            span: NO_SPAN,
        }
    }

    /// Evaluate with variables bound by slot index.
    pub fn eval_slots(&self, env: &[T]) -> Result<T, EvalError> {
        match &self.kind {
            ExprKind::Const(c) => Ok(*c),
            ExprKind::Var { name, slot } => {
                env.get(*slot as usize)
                    .copied()
                    .ok_or_else(|| EvalError::UnboundVar {
                        name: name.to_string(),
                    })
            }
            ExprKind::Neg(a) => Ok(-a.eval_slots(env)?),
            ExprKind::Bin(op, a, b) => {
                let x = a.eval_slots(env)?;
                let y = b.eval_slots(env)?;
                apply_bin(*op, x, y, self.span)
            }
            ExprKind::Call(f, args) => {
                let x = args[0].eval_slots(env)?;
                let y = if args.len() > 1 {
                    Some(args[1].eval_slots(env)?)
                } else {
                    None
                };
                apply_func(*f, x, y, self.span)
            }
        }
    }

    /// Evaluate with variables bound by name. Unbound variables are errors.
    pub fn eval(&self, env: &std::collections::HashMap<String, T>) -> Result<T, EvalError> {
        match &self.kind {
            ExprKind::Const(c) => Ok(*c),
            ExprKind::Var { name, .. } => {
                env.get(name.as_ref())
                    .copied()
                    .ok_or_else(|| EvalError::UnboundVar {
                        name: name.to_string(),
                    })
            }
            ExprKind::Neg(a) => Ok(-a.eval(env)?),
            ExprKind::Bin(op, a, b) => {
                let x = a.eval(env)?;
                let y = b.eval(env)?;
                apply_bin(*op, x, y, self.span)
            }
            ExprKind::Call(f, args) => {
                let x = args[0].eval(env)?;
                let y = if args.len() > 1 {
                    Some(args[1].eval(env)?)
                } else {
                    None
                };
                apply_func(*f, x, y, self.span)
            }
        }
    }

    /// Exact symbolic partial derivative with respect to `var`.
    pub fn diff(&self, var: &str) -> Expr<T> {
        self.diff_with_warnings(var).0
    }

    /// Like [`Expr::diff`], also reporting the non-smooth nodes crossed.
    pub fn diff_with_warnings(&self, var: &str) -> (Expr<T>, Vec<DiffWarning>) {
        let mut warnings = Vec::new();
        let d = self.diff_inner(var, &mut warnings);
        (d, warnings)
    }

    fn diff_inner(&self, var: &str, warn: &mut Vec<DiffWarning>) -> Expr<T> {
        match &self.kind {
            ExprKind::Const(_) => Expr::zero(),
            ExprKind::Var { name, .. } => {
                if name.as_ref() == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            ExprKind::Neg(a) => Expr::negate(a.diff_inner(var, warn)),
            ExprKind::Bin(op, a, b) => {
                match op {
                    BinOp::Add => {
                        let da = a.diff_inner(var, warn);
                        let db = b.diff_inner(var, warn);
                        Expr::add(da, db)
                    }
                    BinOp::Sub => {
                        let da = a.diff_inner(var, warn);
                        let db = b.diff_inner(var, warn);
                        Expr::sub(da, db)
                    }
                    BinOp::Mul => {
                        let da = a.diff_inner(var, warn);
                        let db = b.diff_inner(var, warn);
                        Expr::add(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db))
                    }
                    BinOp::Div => {
                        let da = a.diff_inner(var, warn);
                        let db = b.diff_inner(var, warn);
                        // (a'b - ab') / b^2
                        let num =
                            Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db));
                        let den = Expr::pow_const((**b).clone(), T::lit(2.0));
                        Expr::div(num, den)
                    }
                    BinOp::Pow => {
                        // Exponent is a constant by construction: c * a^(c-1) * a'
                        let c = b.as_const().expect("pow exponent is a constant");
                        let da = a.diff_inner(var, warn);
                        let base_pow = Expr::pow_const((**a).clone(), c - T::one());
                        Expr::mul(Expr::mul(Expr::constant(c), base_pow), da)
                    }
                }
            }
            ExprKind::Call(f, args) => {
                let a = &args[0];
                match f {
                    Func::Sin => {
                        let da = a.diff_inner(var, warn);
                        Expr::mul(Expr::call(Func::Cos, vec![a.clone()]), da)
                    }
                    Func::Cos => {
                        let da = a.diff_inner(var, warn);
                        Expr::negate(Expr::mul(Expr::call(Func::Sin, vec![a.clone()]), da))
                    }
                    Func::Exp => {
                        let da = a.diff_inner(var, warn);
                        Expr::mul(Expr::call(Func::Exp, vec![a.clone()]), da)
                    }
                    Func::Log => {
                        let da = a.diff_inner(var, warn);
                        Expr::div(da, a.clone())
                    }
                    Func::Sqrt => {
                        let da = a.diff_inner(var, warn);
                        Expr::div(
                            da,
                            Expr::mul(
                                Expr::constant(T::lit(2.0)),
                                Expr::call(Func::Sqrt, vec![a.clone()]),
                            ),
                        )
                    }
                    Func::Abs => {
                        // d|u| = sgn(u) u', with sgn(0) = 0.
                        let da = a.diff_inner(var, warn);
                        let d = Expr::mul(Expr::call(Func::Sgn, vec![a.clone()]), da);
                        if !d.is_const(T::zero()) {
                            warn.push(DiffWarning {
                                func: Func::Abs,
                                span: self.span,
                            });
                        }
                        d
                    }
                    Func::Sgn => {
                        let da = a.diff_inner(var, warn);
                        if !da.is_const(T::zero()) {
                            warn.push(DiffWarning {
                                func: Func::Sgn,
                                span: self.span,
                            });
                        }
                        Expr::zero()
                    }
                    Func::Le => {
                        let da = a.diff_inner(var, warn);
                        let db = args[1].diff_inner(var, warn);
                        if !da.is_const(T::zero()) || !db.is_const(T::zero()) {
                            warn.push(DiffWarning {
                                func: Func::Le,
                                span: self.span,
                            });
                        }
                        Expr::zero()
                    }
                    Func::Min | Func::Max => {
                        // Select the first argument's branch on ties.
                        let b = &args[1];
                        let da = a.diff_inner(var, warn);
                        let db = b.diff_inner(var, warn);
                        if da == db {
                            return da;
                        }
                        warn.push(DiffWarning {
                            func: *f,
                            span: self.span,
                        });
                        let sel = if *f == Func::Min {
                            Expr::call(Func::Le, vec![a.clone(), b.clone()])
                        } else {
                            Expr::call(Func::Le, vec![b.clone(), a.clone()])
                        };
                        let other = Expr::sub(Expr::one(), sel.clone());
                        Expr::add(Expr::mul(sel, da), Expr::mul(other, db))
                    }
                }
            }
        }
    }

    /// Replace every occurrence of variable `var` by `replacement`.
    pub fn substitute(&self, var: &str, replacement: &Expr<T>) -> Expr<T> {
        match &self.kind {
            ExprKind::Const(_) => self.clone(),
            ExprKind::Var { name, .. } => {
                if name.as_ref() == var {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            ExprKind::Neg(a) => Expr {
                kind: ExprKind::Neg(Box::new(a.substitute(var, replacement))),
                span: self.span,
            },
            ExprKind::Bin(op, a, b) => Expr {
                kind: ExprKind::Bin(
                    *op,
                    Box::new(a.substitute(var, replacement)),
                    Box::new(b.substitute(var, replacement)),
                ),
                span: self.span,
            },
            ExprKind::Call(f, args) => Expr {
                kind: ExprKind::Call(
                    *f,
                    args.iter()
                        .map(|a| a.substitute(var, replacement))
                        .collect(),
                ),
                span: self.span,
            },
        }
    }

    /// Polynomial degree of the expression in the variables selected by
    /// `mask` (indexed by slot), or `None` when not polynomial in them.
    pub fn poly_degree_in(&self, mask: &[bool]) -> Option<u32> {
        match &self.kind {
            ExprKind::Const(_) => Some(0),
            ExprKind::Var { slot, .. } => {
                if mask.get(*slot as usize).copied().unwrap_or(false) {
                    Some(1)
                } else {
                    Some(0)
                }
            }
            ExprKind::Neg(a) => a.poly_degree_in(mask),
            ExprKind::Bin(op, a, b) => {
                let da = a.poly_degree_in(mask)?;
                let db = b.poly_degree_in(mask)?;
                match op {
                    BinOp::Add | BinOp::Sub => Some(da.max(db)),
                    BinOp::Mul => Some(da + db),
                    BinOp::Div => (db == 0).then_some(da),
                    BinOp::Pow => {
                        if da == 0 {
                            return Some(0);
                        }
                        let c = b.as_const()?;
                        let cf = c.to_f64()?;
                        if cf >= 0.0 && cf.fract() == 0.0 && cf <= u32::MAX as f64 {
                            Some(da * cf as u32)
                        } else {
                            None
                        }
                    }
                }
            }
            ExprKind::Call(_, args) => {
                for a in args {
                    if a.poly_degree_in(mask)? != 0 {
                        return None;
                    }
                }
                Some(0)
            }
        }
    }

    /// Compile to a flat postfix program for repeated slot-environment
    /// evaluation.
    pub fn compile(&self) -> Compiled<T> {
        let mut c = Compiled {
            code: Vec::new(),
            spans: Vec::new(),
            max_stack: 0,
        };
        let mut depth = 0usize;
        compile_into(self, &mut c, &mut depth);
        c
    }
}

fn apply_bin<T: Scalar>(op: BinOp, x: T, y: T, span: u32) -> Result<T, EvalError> {
    match op {
        BinOp::Add => Ok(x + y),
        BinOp::Sub => Ok(x - y),
        BinOp::Mul => Ok(x * y),
        BinOp::Div => {
            if y == T::zero() {
                Err(EvalError::DivByZero { span })
            } else {
                Ok(x / y)
            }
        }
        BinOp::Pow => pow_checked(x, y, span),
    }
}

fn pow_checked<T: Scalar>(base: T, exponent: T, span: u32) -> Result<T, EvalError> {
    let e = exponent.to_f64().unwrap_or(f64::NAN);
    if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        let ei = e as i32;
        if base == T::zero() && ei < 0 {
            return Err(EvalError::PowDomain {
                base: 0.0,
                exponent: e,
                span,
            });
        }
        Ok(base.powi(ei))
    } else {
        let b = base.to_f64().unwrap_or(f64::NAN);
        if b < 0.0 || (b == 0.0 && e < 0.0) {
            return Err(EvalError::PowDomain {
                base: b,
                exponent: e,
                span,
            });
        }
        Ok(base.powf(exponent))
    }
}

fn apply_func<T: Scalar>(f: Func, x: T, y: Option<T>, span: u32) -> Result<T, EvalError> {
    Ok(match f {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= T::zero() {
                return Err(EvalError::LogNonPositive {
                    arg: x.to_f64().unwrap_or(f64::NAN),
                    span,
                });
            }
            x.ln()
        }
        Func::Sqrt => {
            if x < T::zero() {
                return Err(EvalError::SqrtNegative {
                    arg: x.to_f64().unwrap_or(f64::NAN),
                    span,
                });
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
        Func::Sgn => {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        Func::Min => {
            let y = y.unwrap();
            if x <= y {
                x
            } else {
                y
            }
        }
        Func::Max => {
            let y = y.unwrap();
            if x >= y {
                x
            } else {
                y
            }
        }
        Func::Le => {
            if x <= y.unwrap() {
                T::one()
            } else {
                T::zero()
            }
        }
    })
}

// --- canonical printer ---

fn precedence<T: Scalar>(e: &Expr<T>) -> u8 {
    match &e.kind {
        // A sign-negative constant prints with a leading `-`, so it binds
        // like a unary minus for parenthesization purposes.
        ExprKind::Const(c) if c.is_sign_negative() => 3,
        ExprKind::Const(_) | ExprKind::Var { .. } | ExprKind::Call(..) => 5,
        ExprKind::Bin(BinOp::Pow, ..) => 4,
        ExprKind::Neg(_) => 3,
        ExprKind::Bin(BinOp::Mul, ..) | ExprKind::Bin(BinOp::Div, ..) => 2,
        ExprKind::Bin(BinOp::Add, ..) | ExprKind::Bin(BinOp::Sub, ..) => 1,
    }
}

impl<T: Scalar> fmt::Display for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child<T: Scalar>(f: &mut fmt::Formatter<'_>, e: &Expr<T>, min_prec: u8) -> fmt::Result {
            if precedence(e) < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match &self.kind {
            ExprKind::Const(c) => write!(f, "{c}"),
            ExprKind::Var { name, .. } => write!(f, "{name}"),
            ExprKind::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 3)
            }
            ExprKind::Bin(op, a, b) => match op {
                BinOp::Add => {
                    child(f, a, 1)?;
                    write!(f, " + ")?;
                    child(f, b, 2)
                }
                BinOp::Sub => {
                    child(f, a, 1)?;
                    write!(f, " - ")?;
                    child(f, b, 2)
                }
                BinOp::Mul => {
                    child(f, a, 2)?;
                    write!(f, "*")?;
                    child(f, b, 3)
                }
                BinOp::Div => {
                    child(f, a, 2)?;
                    write!(f, "/")?;
                    child(f, b, 3)
                }
                BinOp::Pow => {
                    child(f, a, 5)?;
                    write!(f, "^")?;
                    // Right-associative; exponent is a literal (maybe negative).
                    child(f, b, 4)
                }
            },
            ExprKind::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// --- compiled form ---

#[derive(Debug, Clone)]
enum Instr<T> {
    Push(T),
    Load(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowI(i32),
    PowF(T),
    Fun(Func),
}

/// Flat postfix program; evaluation walks `code` once over a value stack.
#[derive(Debug, Clone)]
pub struct Compiled<T> {
    code: Vec<Instr<T>>,
    spans: Vec<u32>,
    max_stack: usize,
}

fn compile_into<T: Scalar>(e: &Expr<T>, out: &mut Compiled<T>, depth: &mut usize) {
    match &e.kind {
        ExprKind::Const(c) => {
            out.push(Instr::Push(*c), e.span, depth, 1);
        }
        ExprKind::Var { slot, .. } => {
            out.push(Instr::Load(*slot), e.span, depth, 1);
        }
        ExprKind::Neg(a) => {
            compile_into(a, out, depth);
            out.push(Instr::Neg, e.span, depth, 0);
        }
        ExprKind::Bin(BinOp::Pow, a, b) => {
            compile_into(a, out, depth);
            let c = b.as_const().expect("pow exponent is a constant");
            let cf = c.to_f64().unwrap_or(f64::NAN);
            if cf.fract() == 0.0 && cf.abs() <= i32::MAX as f64 {
                out.push(Instr::PowI(cf as i32), e.span, depth, 0);
            } else {
                out.push(Instr::PowF(c), e.span, depth, 0);
            }
        }
        ExprKind::Bin(op, a, b) => {
            compile_into(a, out, depth);
            compile_into(b, out, depth);
            *depth -= 1;
            let instr = match op {
                BinOp::Add => Instr::Add,
                BinOp::Sub => Instr::Sub,
                BinOp::Mul => Instr::Mul,
                BinOp::Div => Instr::Div,
                BinOp::Pow => unreachable!(),
            };
            out.push(instr, e.span, depth, 0);
        }
        ExprKind::Call(f, args) => {
            for a in args {
                compile_into(a, out, depth);
            }
            *depth -= args.len() - 1;
            out.push(Instr::Fun(*f), e.span, depth, 0);
        }
    }
}

impl<T: Scalar> Compiled<T> {
    fn push(&mut self, i: Instr<T>, span: u32, depth: &mut usize, grows: usize) {
        self.code.push(i);
        self.spans.push(span);
        *depth += grows;
        self.max_stack = self.max_stack.max(*depth);
    }

    pub fn eval(&self, env: &[T]) -> Result<T, EvalError> {
        let mut stack: [T; 64] = [T::zero(); 64];
        debug_assert!(self.max_stack <= 64, "expression too deep for fixed stack");
        let mut sp = 0usize;
        for (idx, instr) in self.code.iter().enumerate() {
            match instr {
                Instr::Push(c) => {
                    stack[sp] = *c;
                    sp += 1;
                }
                Instr::Load(slot) => {
                    stack[sp] = env[*slot as usize];
                    sp += 1;
                }
                Instr::Neg => stack[sp - 1] = -stack[sp - 1],
                Instr::Add => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] + stack[sp];
                }
                Instr::Sub => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] - stack[sp];
                }
                Instr::Mul => {
                    sp -= 1;
                    stack[sp - 1] = stack[sp - 1] * stack[sp];
                }
                Instr::Div => {
                    sp -= 1;
                    if stack[sp] == T::zero() {
                        return Err(EvalError::DivByZero {
                            span: self.spans[idx],
                        });
                    }
                    stack[sp - 1] = stack[sp - 1] / stack[sp];
                }
                Instr::PowI(p) => {
                    let b = stack[sp - 1];
                    if b == T::zero() && *p < 0 {
                        return Err(EvalError::PowDomain {
                            base: 0.0,
                            exponent: *p as f64,
                            span: self.spans[idx],
                        });
                    }
                    stack[sp - 1] = b.powi(*p);
                }
                Instr::PowF(c) => {
                    stack[sp - 1] = pow_checked(stack[sp - 1], *c, self.spans[idx])?;
                }
                Instr::Fun(f) => {
                    if f.arity() == 2 {
                        sp -= 1;
                        stack[sp - 1] =
                            apply_func(*f, stack[sp - 1], Some(stack[sp]), self.spans[idx])?;
                    } else {
                        stack[sp - 1] = apply_func(*f, stack[sp - 1], None, self.spans[idx])?;
                    }
                }
            }
        }
        debug_assert_eq!(sp, 1);
        Ok(stack[0])
    }
}

#[cfg(test)]
mod tests;
