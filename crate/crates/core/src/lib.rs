//! Analysis, synthesis and numerical certification for control-affine
//! nonlinear systems of relative degree one and two.
//!
//! The crate is organized as a pipeline:
//!
//! - [`expr`] — the small symbolic expression language everything is
//!   written in (parsing, evaluation, differentiation, folding).
//! - [`calculus`] — Lie derivatives, brackets, Jacobians and the modified
//!   fields of the global normal-form hypotheses.
//! - [`structure`] — vector relative degree, the decoupling matrix,
//!   involutivity and the sampled H1/H3 checks.
//! - [`synthesis`] — the dissipation-rendering, stabilizing and robust
//!   state-feedback laws, their storage functions, and positive-definiteness
//!   screening.
//! - [`sim`] — fixed-step RK4 simulation of the (possibly uncertain)
//!   closed loop with per-step dissipation monitors, plus an empirical
//!   input-to-state-stability probe for user-designated internal dynamics.
//!
//! Sampling-based verdicts are deterministic under a fixed seed and always
//! carry a witness when negative.

pub mod calculus;
pub mod expr;
pub mod sample;
pub mod sim;
pub mod structure;
pub mod synthesis;
pub mod testing;

pub use expr::Expr;
