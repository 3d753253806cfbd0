//! Expression printing.
//!
//! Output reparses to an evaluation-equivalent tree: parentheses are inserted
//! wherever the grammar would otherwise reassociate (float addition is not
//! associative, so shape is preserved, not just precedence).

use std::fmt;

use super::Expr;

// Binding strength: Add/Sub = 1, Mul/Div = 2, Neg = 3, IntPow = 4, atoms = 5.
fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => 1,
        Expr::Mul(..) | Expr::Div(..) => 2,
        Expr::Neg(_) => 3,
        Expr::Constant(c) if *c < 0.0 => 3,
        Expr::IntPow(..) => 4,
        _ => 5,
    }
}

pub(super) fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Constant(c) => write!(f, "{c}"),
        Expr::Variable(v) => write!(f, "{v}"),
        Expr::Add(a, b) => {
            child(a, 1, false, f)?;
            write!(f, " + ")?;
            child(b, 1, true, f)
        }
        Expr::Sub(a, b) => {
            child(a, 1, false, f)?;
            write!(f, " - ")?;
            child(b, 1, true, f)
        }
        Expr::Mul(a, b) => {
            child(a, 2, false, f)?;
            write!(f, "*")?;
            child(b, 2, true, f)
        }
        Expr::Div(a, b) => {
            child(a, 2, false, f)?;
            write!(f, "/")?;
            child(b, 2, true, f)
        }
        Expr::Neg(a) => {
            write!(f, "-")?;
            if prec(a) <= 3 {
                write!(f, "(")?;
                write_expr(a, f)?;
                write!(f, ")")
            } else {
                write_expr(a, f)
            }
        }
        Expr::IntPow(a, k) => {
            if prec(a) < 5 {
                write!(f, "(")?;
                write_expr(a, f)?;
                write!(f, ")")?;
            } else {
                write_expr(a, f)?;
            }
            if *k < 0 {
                write!(f, "^({k})")
            } else {
                write!(f, "^{k}")
            }
        }
        Expr::Sin(a) => call("sin", a, f),
        Expr::Cos(a) => call("cos", a, f),
        Expr::Exp(a) => call("exp", a, f),
        Expr::Cbrt(a) => call("cbrt", a, f),
    }
}

fn call(name: &str, a: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    write!(f, "{name}(")?;
    write_expr(a, f)?;
    write!(f, ")")
}

/// Print a child of a binary operator of precedence `parent`, parenthesizing
/// when precedence demands it or when the right operand sits at the same
/// level (preserving association).
fn child(e: &Expr, parent: u8, right: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let p = prec(e);
    let needs = p < parent || (right && p == parent);
    if needs {
        write!(f, "(")?;
        write_expr(e, f)?;
        write!(f, ")")
    } else {
        write_expr(e, f)
    }
}
