//! Slot-compiled expressions for tight evaluation loops.
//!
//! The tree walker in [`super::eval`] resolves variables through a hash map
//! on every visit, which is too slow inside an ODE right-hand side. A
//! [`CompiledExpr`] is the same expression flattened to a postfix program
//! with variables resolved to indices into a caller-provided slot array.
//! Results are bit-identical to tree evaluation: both paths share the same
//! scalar kernels and apply them in the same order.

use std::collections::HashMap;

use super::eval::{checked_div, int_pow, EvalError};
use super::Expr;

/// An ordered set of variable names defining the slot indices of a value
/// array.
#[derive(Debug, Clone)]
pub struct SlotLayout {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl SlotLayout {
    pub fn new(names: impl IntoIterator<Item = String>) -> SlotLayout {
        let names: Vec<String> = names.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        SlotLayout { names, index }
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

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    IntPow(i32),
    Sin,
    Cos,
    Exp,
    Cbrt,
}

/// A compiled expression evaluable against a `&[f64]` slot array.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    max_stack: usize,
}

impl CompiledExpr {
    /// Compile `e` against `layout`; fails if a free variable has no slot.
    pub fn compile(e: &Expr, layout: &SlotLayout) -> Result<CompiledExpr, EvalError> {
        let mut ops = Vec::new();
        emit(e, layout, &mut ops)?;
        // Postfix stack depth is cheap to bound exactly.
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Add | Op::Sub | Op::Mul | Op::Div => depth -= 1,
                _ => {}
            }
            max_stack = max_stack.max(depth);
        }
        Ok(CompiledExpr { ops, max_stack })
    }

    /// Evaluate using a reusable scratch stack (hot-loop entry point).
    pub fn eval_with(&self, slots: &[f64], stack: &mut Vec<f64>) -> Result<f64, EvalError> {
        stack.clear();
        stack.reserve(self.max_stack);
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Load(i) => stack.push(slots[*i]),
                Op::Add => binary(stack, |a, b| a + b),
                Op::Sub => binary(stack, |a, b| a - b),
                Op::Mul => binary(stack, |a, b| a * b),
                Op::Div => {
                    let b = stack.pop().expect("stack underflow");
                    let a = stack.last_mut().expect("stack underflow");
                    *a = checked_div(*a, b)?;
                }
                Op::Neg => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = -*a;
                }
                Op::IntPow(k) => {
                    let a = stack.last_mut().expect("stack underflow");
                    *a = int_pow(*a, *k)?;
                }
                Op::Sin => unary(stack, f64::sin),
                Op::Cos => unary(stack, f64::cos),
                Op::Exp => unary(stack, f64::exp),
                Op::Cbrt => unary(stack, f64::cbrt),
            }
        }
        let v = stack.pop().expect("empty program");
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        let mut stack = Vec::with_capacity(self.max_stack);
        self.eval_with(slots, &mut stack)
    }
}

fn binary(stack: &mut Vec<f64>, op: fn(f64, f64) -> f64) {
    let b = stack.pop().expect("stack underflow");
    let a = stack.last_mut().expect("stack underflow");
    *a = op(*a, b);
}

fn unary(stack: &mut [f64], op: fn(f64) -> f64) {
    let a = stack.last_mut().expect("stack underflow");
    *a = op(*a);
}

fn emit(e: &Expr, layout: &SlotLayout, ops: &mut Vec<Op>) -> Result<(), EvalError> {
    match e {
        Expr::Constant(c) => ops.push(Op::Const(*c)),
        Expr::Variable(v) => {
            let slot = layout
                .slot(v)
                .ok_or_else(|| EvalError::UnboundVariable(v.clone()))?;
            ops.push(Op::Load(slot));
        }
        Expr::Add(a, b) => {
            emit(a, layout, ops)?;
            emit(b, layout, ops)?;
            ops.push(Op::Add);
        }
        Expr::Sub(a, b) => {
            emit(a, layout, ops)?;
            emit(b, layout, ops)?;
            ops.push(Op::Sub);
        }
        Expr::Mul(a, b) => {
            emit(a, layout, ops)?;
            emit(b, layout, ops)?;
            ops.push(Op::Mul);
        }
        Expr::Div(a, b) => {
            emit(a, layout, ops)?;
            emit(b, layout, ops)?;
            ops.push(Op::Div);
        }
        Expr::Neg(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Neg);
        }
        Expr::IntPow(a, k) => {
            emit(a, layout, ops)?;
            ops.push(Op::IntPow(*k));
        }
        Expr::Sin(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Sin);
        }
        Expr::Cos(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Cos);
        }
        Expr::Exp(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Exp);
        }
        Expr::Cbrt(a) => {
            emit(a, layout, ops)?;
            ops.push(Op::Cbrt);
        }
    }
    Ok(())
}
