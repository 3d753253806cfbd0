//! Symbolic scalar expressions over named variables.
//!
//! This is the lingua franca of the whole crate: vector fields, output maps,
//! storage functions and synthesized feedback laws are all trees of [`Expr`].
//! The language is deliberately small — arithmetic, integer powers, `sin`,
//! `cos`, `exp` and a signed real cube root `cbrt` — and supports exact
//! evaluation, symbolic differentiation, constant folding and substitution.
//!
//! Fractional powers are not representable. Odd rational powers such as
//! x^(4/3) must be written `cbrt(x)^4`, which keeps them well defined (and
//! sign-correct) for negative arguments, where IEEE `pow` would return NaN.
//!
//! Expressions are immutable; subtrees are shared via [`Arc`], so cloning is
//! cheap and values can be evaluated from multiple threads concurrently.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

mod compile;
mod eval;
mod parse;
mod print;
mod zero;

pub use compile::{CompiledExpr, SlotLayout};
pub use eval::{eval, Assignment, EvalError};
pub use parse::{parse, ParseError};
pub use zero::{is_probably_zero, ZeroTestOptions, ZeroVerdict};

pub(crate) use eval::{checked_add, checked_div, checked_mul, checked_sub, int_pow};

/// A symbolic scalar expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Variable(String),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Neg(Arc<Expr>),
    /// Integer power. The exponent may be negative; `b^0` evaluates to 1.
    IntPow(Arc<Expr>, i32),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Exp(Arc<Expr>),
    /// Real signed cube root: `cbrt(-8) = -2`.
    Cbrt(Arc<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Constant(c)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Variable(name.into())
    }

    pub fn zero() -> Expr {
        Expr::Constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::Constant(1.0)
    }

    pub fn pow(self, k: i32) -> Expr {
        Expr::IntPow(Arc::new(self), k)
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Arc::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Arc::new(self))
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Arc::new(self))
    }

    pub fn cbrt(self) -> Expr {
        Expr::Cbrt(Arc::new(self))
    }

    pub fn is_zero_const(&self) -> bool {
        matches!(self, Expr::Constant(c) if *c == 0.0)
    }

    pub fn is_one_const(&self) -> bool {
        matches!(self, Expr::Constant(c) if *c == 1.0)
    }

    /// The set of variable names occurring in the expression.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Constant(_) => {}
            Expr::Variable(v) => {
                out.insert(v.clone());
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Cbrt(a) => {
                a.collect_vars(out)
            }
            Expr::IntPow(a, _) => a.collect_vars(out),
        }
    }

    pub fn contains_var(&self, name: &str) -> bool {
        match self {
            Expr::Constant(_) => false,
            Expr::Variable(v) => v == name,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.contains_var(name) || b.contains_var(name)
            }
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Cbrt(a) => {
                a.contains_var(name)
            }
            Expr::IntPow(a, _) => a.contains_var(name),
        }
    }

    /// Simultaneous substitution of variables by expressions.
    ///
    /// Names not present in `map` are left untouched. The substitution does
    /// not cascade: replacement expressions are inserted verbatim.
    pub fn substitute(&self, map: &[(String, Expr)]) -> Expr {
        match self {
            Expr::Constant(_) => self.clone(),
            Expr::Variable(v) => map
                .iter()
                .find(|(name, _)| name == v)
                .map(|(_, e)| e.clone())
                .unwrap_or_else(|| self.clone()),
            Expr::Add(a, b) => Expr::Add(Arc::new(a.substitute(map)), Arc::new(b.substitute(map))),
            Expr::Sub(a, b) => Expr::Sub(Arc::new(a.substitute(map)), Arc::new(b.substitute(map))),
            Expr::Mul(a, b) => Expr::Mul(Arc::new(a.substitute(map)), Arc::new(b.substitute(map))),
            Expr::Div(a, b) => Expr::Div(Arc::new(a.substitute(map)), Arc::new(b.substitute(map))),
            Expr::Neg(a) => Expr::Neg(Arc::new(a.substitute(map))),
            Expr::IntPow(a, k) => Expr::IntPow(Arc::new(a.substitute(map)), *k),
            Expr::Sin(a) => Expr::Sin(Arc::new(a.substitute(map))),
            Expr::Cos(a) => Expr::Cos(Arc::new(a.substitute(map))),
            Expr::Exp(a) => Expr::Exp(Arc::new(a.substitute(map))),
            Expr::Cbrt(a) => Expr::Cbrt(Arc::new(a.substitute(map))),
        }
    }

    /// Shift every variable `x` in `names` to `x + offset`, dropping exact
    /// zero offsets. Used to move a nonzero equilibrium to the origin.
    pub fn shift_vars(&self, names: &[String], offsets: &[f64]) -> Expr {
        let map: Vec<(String, Expr)> = names
            .iter()
            .zip(offsets)
            .filter(|(_, o)| **o != 0.0)
            .map(|(n, o)| {
                (
                    n.clone(),
                    Expr::Add(Arc::new(Expr::var(n.clone())), Arc::new(Expr::constant(*o))),
                )
            })
            .collect();
        if map.is_empty() {
            self.clone()
        } else {
            self.substitute(&map)
        }
    }
}

/// Constant folding with a handful of identity rules.
///
/// Rules: constant subtrees collapse (only when the result is finite),
/// `0*x -> 0`, `x+0 -> x`, `x-0 -> x`, `0-x -> -x`, `x*1 -> x`, `x/1 -> x`,
/// `x^0 -> 1`, `x^1 -> x`, `-(-x) -> x`. The folded tree is
/// evaluation-equivalent to the input at every full assignment (the lone
/// caveat: `0*x` erases a domain error that `x` alone would raise).
pub fn fold(e: &Expr) -> Expr {
    match e {
        Expr::Constant(_) | Expr::Variable(_) => e.clone(),
        Expr::Add(a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
                if let Some(c) = finite(checked_add(*x, *y)) {
                    return Expr::Constant(c);
                }
            }
            if a.is_zero_const() {
                return b;
            }
            if b.is_zero_const() {
                return a;
            }
            Expr::Add(Arc::new(a), Arc::new(b))
        }
        Expr::Sub(a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
                if let Some(c) = finite(checked_sub(*x, *y)) {
                    return Expr::Constant(c);
                }
            }
            if b.is_zero_const() {
                return a;
            }
            if a.is_zero_const() {
                return fold(&Expr::Neg(Arc::new(b)));
            }
            Expr::Sub(Arc::new(a), Arc::new(b))
        }
        Expr::Mul(a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
                if let Some(c) = finite(checked_mul(*x, *y)) {
                    return Expr::Constant(c);
                }
            }
            if a.is_zero_const() || b.is_zero_const() {
                return Expr::zero();
            }
            if a.is_one_const() {
                return b;
            }
            if b.is_one_const() {
                return a;
            }
            Expr::Mul(Arc::new(a), Arc::new(b))
        }
        Expr::Div(a, b) => {
            let (a, b) = (fold(a), fold(b));
            if let (Expr::Constant(x), Expr::Constant(y)) = (&a, &b) {
                if let Some(c) = checked_div(*x, *y).ok().and_then(|c| finite(Ok(c))) {
                    return Expr::Constant(c);
                }
            }
            if b.is_one_const() {
                return a;
            }
            Expr::Div(Arc::new(a), Arc::new(b))
        }
        Expr::Neg(a) => {
            let a = fold(a);
            match a {
                Expr::Constant(c) => Expr::Constant(-c),
                Expr::Neg(inner) => inner.as_ref().clone(),
                other => Expr::Neg(Arc::new(other)),
            }
        }
        Expr::IntPow(a, k) => {
            let a = fold(a);
            if *k == 0 {
                return Expr::one();
            }
            if *k == 1 {
                return a;
            }
            if let Expr::Constant(c) = a {
                if let Some(v) = int_pow(c, *k).ok().and_then(|v| finite(Ok(v))) {
                    return Expr::Constant(v);
                }
            }
            Expr::IntPow(Arc::new(a), *k)
        }
        Expr::Sin(a) => fold_unary(a, f64::sin, Expr::Sin),
        Expr::Cos(a) => fold_unary(a, f64::cos, Expr::Cos),
        Expr::Exp(a) => fold_unary(a, f64::exp, Expr::Exp),
        Expr::Cbrt(a) => fold_unary(a, f64::cbrt, Expr::Cbrt),
    }
}

fn fold_unary(a: &Expr, op: fn(f64) -> f64, ctor: fn(Arc<Expr>) -> Expr) -> Expr {
    let a = fold(a);
    if let Expr::Constant(c) = a {
        let v = op(c);
        if v.is_finite() {
            return Expr::Constant(v);
        }
        return ctor(Arc::new(Expr::Constant(c)));
    }
    ctor(Arc::new(a))
}

fn finite(r: Result<f64, EvalError>) -> Option<f64> {
    match r {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

/// Symbolic partial derivative with respect to `var`, constant-folded.
///
/// `d/dx cbrt(x)` is represented as `1/(3*cbrt(x)^2)`, which raises a domain
/// error when evaluated at 0 — the true derivative is unbounded there. The
/// composite `cbrt(a)^k` differentiates to `(k/3)*cbrt(a)^(k-3) * a'`, so the
/// common storage-function gradient `(4/3)*cbrt(x)` stays finite at 0.
pub fn diff(e: &Expr, var: &str) -> Expr {
    fold(&diff_raw(e, var))
}

fn diff_raw(e: &Expr, var: &str) -> Expr {
    match e {
        Expr::Constant(_) => Expr::zero(),
        Expr::Variable(v) => {
            if v == var {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Add(a, b) => Expr::Add(Arc::new(diff_raw(a, var)), Arc::new(diff_raw(b, var))),
        Expr::Sub(a, b) => Expr::Sub(Arc::new(diff_raw(a, var)), Arc::new(diff_raw(b, var))),
        Expr::Mul(a, b) => {
            // a'b + ab'
            let left = Expr::Mul(Arc::new(diff_raw(a, var)), b.clone());
            let right = Expr::Mul(a.clone(), Arc::new(diff_raw(b, var)));
            Expr::Add(Arc::new(left), Arc::new(right))
        }
        Expr::Div(a, b) => {
            // (a'b - ab') / b^2
            let num = Expr::Sub(
                Arc::new(Expr::Mul(Arc::new(diff_raw(a, var)), b.clone())),
                Arc::new(Expr::Mul(a.clone(), Arc::new(diff_raw(b, var)))),
            );
            Expr::Div(Arc::new(num), Arc::new(Expr::IntPow(b.clone(), 2)))
        }
        Expr::Neg(a) => Expr::Neg(Arc::new(diff_raw(a, var))),
        Expr::IntPow(a, k) => {
            if *k == 0 {
                return Expr::zero();
            }
            if let Expr::Cbrt(inner) = a.as_ref() {
                // d/dx cbrt(g)^k = (k/3) cbrt(g)^(k-3) g'
                let coeff = Expr::constant(f64::from(*k) / 3.0);
                let power = Expr::IntPow(Arc::new(Expr::Cbrt(inner.clone())), *k - 3);
                return Expr::Mul(
                    Arc::new(Expr::Mul(Arc::new(coeff), Arc::new(power))),
                    Arc::new(diff_raw(inner, var)),
                );
            }
            // k a^(k-1) a'
            let power = Expr::IntPow(a.clone(), *k - 1);
            Expr::Mul(
                Arc::new(Expr::Mul(
                    Arc::new(Expr::constant(f64::from(*k))),
                    Arc::new(power),
                )),
                Arc::new(diff_raw(a, var)),
            )
        }
        Expr::Sin(a) => Expr::Mul(Arc::new(Expr::Cos(a.clone())), Arc::new(diff_raw(a, var))),
        Expr::Cos(a) => Expr::Neg(Arc::new(Expr::Mul(
            Arc::new(Expr::Sin(a.clone())),
            Arc::new(diff_raw(a, var)),
        ))),
        Expr::Exp(a) => Expr::Mul(Arc::new(Expr::Exp(a.clone())), Arc::new(diff_raw(a, var))),
        Expr::Cbrt(a) => {
            // a' / (3 cbrt(a)^2)
            let denom = Expr::Mul(
                Arc::new(Expr::constant(3.0)),
                Arc::new(Expr::IntPow(Arc::new(Expr::Cbrt(a.clone())), 2)),
            );
            Expr::Div(Arc::new(diff_raw(a, var)), Arc::new(denom))
        }
    }
}

/// Gradient of a scalar expression with respect to an ordered variable list.
pub fn gradient(e: &Expr, vars: &[String]) -> Vec<Expr> {
    vars.iter().map(|v| diff(e, v)).collect()
}

/// Left-associated sum of expressions; empty input folds to 0.
pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
    let mut acc: Option<Expr> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => Expr::Add(Arc::new(a), Arc::new(t)),
        });
    }
    fold(&acc.unwrap_or_else(Expr::zero))
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Arc::new(self), Arc::new(rhs))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Arc::new(self), Arc::new(rhs))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Arc::new(self), Arc::new(rhs))
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Div(Arc::new(self), Arc::new(rhs))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Arc::new(self))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_expr(self, f)
    }
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[cfg(test)]
mod tests;
