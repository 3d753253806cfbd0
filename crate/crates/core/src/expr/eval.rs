//! IEEE double-precision evaluation of expression trees.

use std::collections::HashMap;

use super::Expr;

/// Binding of variable names to real values.
pub type Assignment = HashMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

pub(crate) fn checked_add(a: f64, b: f64) -> Result<f64, EvalError> {
    Ok(a + b)
}

pub(crate) fn checked_sub(a: f64, b: f64) -> Result<f64, EvalError> {
    Ok(a - b)
}

pub(crate) fn checked_mul(a: f64, b: f64) -> Result<f64, EvalError> {
    Ok(a * b)
}

pub(crate) fn checked_div(a: f64, b: f64) -> Result<f64, EvalError> {
    if b == 0.0 {
        Err(EvalError::DivisionByZero)
    } else {
        Ok(a / b)
    }
}

/// `b^k` for integer `k`; `b^0 = 1` (including `b = 0`), negative powers of
/// zero are a division by zero.
pub(crate) fn int_pow(b: f64, k: i32) -> Result<f64, EvalError> {
    if k < 0 && b == 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    Ok(b.powi(k))
}

/// Evaluate `e` under `a`. Every free variable must be bound. Returns a
/// finite real or a domain error; overflow to infinity (and NaN) surfaces as
/// [`EvalError::NonFinite`].
pub fn eval(e: &Expr, a: &Assignment) -> Result<f64, EvalError> {
    let v = eval_rec(e, a)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

fn eval_rec(e: &Expr, a: &Assignment) -> Result<f64, EvalError> {
    match e {
        Expr::Constant(c) => Ok(*c),
        Expr::Variable(name) => a
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::UnboundVariable(name.clone())),
        Expr::Add(x, y) => checked_add(eval_rec(x, a)?, eval_rec(y, a)?),
        Expr::Sub(x, y) => checked_sub(eval_rec(x, a)?, eval_rec(y, a)?),
        Expr::Mul(x, y) => checked_mul(eval_rec(x, a)?, eval_rec(y, a)?),
        Expr::Div(x, y) => checked_div(eval_rec(x, a)?, eval_rec(y, a)?),
        Expr::Neg(x) => Ok(-eval_rec(x, a)?),
        Expr::IntPow(x, k) => int_pow(eval_rec(x, a)?, *k),
        Expr::Sin(x) => Ok(eval_rec(x, a)?.sin()),
        Expr::Cos(x) => Ok(eval_rec(x, a)?.cos()),
        Expr::Exp(x) => Ok(eval_rec(x, a)?.exp()),
        Expr::Cbrt(x) => Ok(eval_rec(x, a)?.cbrt()),
    }
}
