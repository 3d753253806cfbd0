//! Probabilistic identically-zero test.
//!
//! Symbolic canonical simplification is out of scope for this crate, so
//! "is this expression the zero function on a region" is answered by seeded
//! sampling plus constant folding: sound when it answers *no*, heuristic
//! when it answers *yes*.

use super::{eval, fold, Assignment, Expr};
use crate::sample::{inf_norm, seeded_rng, BoxDomain};

#[derive(Debug, Clone, Copy)]
pub struct ZeroTestOptions {
    /// Number of samples drawn from the domain box.
    pub samples: usize,
    /// Relative tolerance: a sample passes when `|e(x)| <= tol*(1 + |x|_inf)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ZeroTestOptions {
    fn default() -> Self {
        ZeroTestOptions {
            samples: 50,
            tol: 1e-9,
            seed: 0,
        }
    }
}

/// Outcome of [`is_probably_zero`].
#[derive(Debug, Clone)]
pub struct ZeroVerdict {
    pub probably_zero: bool,
    /// Set when folding alone settled the question.
    pub structural: Option<bool>,
    /// A sample where the expression was distinctly nonzero.
    pub counterexample: Option<(Vec<f64>, f64)>,
    /// Samples skipped because evaluation raised a domain error.
    pub skipped: usize,
}

/// Test whether `e`, as a function of `vars` on `domain`, is plausibly the
/// zero function.
///
/// Returns true iff the constant-folded form is not a nonzero constant and
/// `|e(x)| <= tol*(1 + |x|_inf)` at every successfully evaluated sample.
/// Samples that raise a domain error are skipped and counted; if every
/// sample is skipped the verdict is false (no evidence).
pub fn is_probably_zero(
    e: &Expr,
    vars: &[String],
    domain: &BoxDomain,
    opts: &ZeroTestOptions,
) -> ZeroVerdict {
    assert!(opts.samples >= 1, "need at least one sample");
    assert!(opts.tol > 0.0, "tolerance must be positive");
    assert_eq!(vars.len(), domain.dim(), "domain dimension mismatch");

    if let Expr::Constant(c) = fold(e) {
        return ZeroVerdict {
            probably_zero: c == 0.0,
            structural: Some(c == 0.0),
            counterexample: None,
            skipped: 0,
        };
    }

    let mut rng = seeded_rng(opts.seed);
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    for _ in 0..opts.samples {
        let point = domain.sample(&mut rng);
        let a: Assignment = vars.iter().cloned().zip(point.iter().copied()).collect();
        match eval(e, &a) {
            Ok(v) => {
                evaluated += 1;
                if v.abs() > opts.tol * (1.0 + inf_norm(&point)) {
                    return ZeroVerdict {
                        probably_zero: false,
                        structural: None,
                        counterexample: Some((point, v)),
                        skipped,
                    };
                }
            }
            Err(_) => skipped += 1,
        }
    }
    ZeroVerdict {
        probably_zero: evaluated > 0,
        structural: None,
        counterexample: None,
        skipped,
    }
}
