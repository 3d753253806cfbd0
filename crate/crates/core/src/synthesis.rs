//! State-feedback synthesis.
//!
//! Three laws are built from a relative-degree profile and a pair of storage
//! shape functions `V1(xi1)`, `V2(xi2)`:
//!
//! - a dissipation-rendering law with a fresh input `v`, making the closed
//!   loop negative imaginary (output-strictly so when `lambda > 0`, with
//!   output strictness `epsilon = min(1, lambda)`);
//! - a stabilizing law — the same law with `v = 0` and positive definite
//!   `V1`, `V2`;
//! - a robust law absorbing an uncertainty output `w` that enters the plant
//!   input additively.
//!
//! Each law cancels the top chain derivatives `[L_f^{r_i} h_i]` through the
//! inverse of the decoupling matrix and injects the storage gradients plus
//! `lambda * xi3` damping. Gradients are always derived symbolically from
//! the supplied storage expressions, so the law and its certificate can
//! never drift apart.
//!
//! Positive (semi)definiteness of storage candidates is screened by seeded
//! sampling with axis probes and a shrinking-radius sweep: sound for
//! rejection, heuristic for acceptance, and every rejection carries a
//! witness point.

use nalgebra::DMatrix;

use crate::calculus::{invert_symbolic, CalculusError, ExprMatrix, VectorField};
use crate::expr::{diff, eval, fold, sum, Assignment, EvalError, Expr};
use crate::sample::{inf_norm, seeded_rng, BoxDomain};
use crate::structure::{AffineSystem, RelativeDegreeProfile, StructureError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("{what} uses variable `{name}` outside its declared coordinate list")]
    ForeignVariable { what: &'static str, name: String },
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("lambda must be strictly positive for this law, got {0}")]
    LambdaNotPositive(f64),
    #[error("{what} failed positive-{mode} screening at {point:?} (value {value:.3e})")]
    ScreeningFailed {
        what: String,
        mode: &'static str,
        point: Vec<f64>,
        value: f64,
    },
    #[error("gradient of {what} vanishes away from the origin, at {point:?}")]
    GradientVanishes { what: String, point: Vec<f64> },
    #[error("auxiliary input name `{0}` collides with a state name")]
    AuxNameCollision(String),
    #[error("uncertainty output dimension {got} does not match plant output count {expected}")]
    UncertaintyDimension { got: usize, expected: usize },
    #[error("storage spec declares {got} {what} coordinates, profile expects {expected}")]
    SpecDimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("uncertainty does not vanish at the origin: {what} = {value:.3e}")]
    UncertaintyNotAtRest { what: String, value: f64 },
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("evaluation failed during synthesis: {0}")]
    Eval(#[from] EvalError),
}

/// Storage shape functions over formal output-coordinate names.
///
/// `v1` is an expression over `xi1_vars` (the relative-degree-one
/// coordinates, in sorted output order) and `v2` over `xi2_vars`; the
/// synthesis composes them with the actual output expressions of a profile.
#[derive(Debug, Clone)]
pub struct StorageSpec {
    v1: Expr,
    xi1_vars: Vec<String>,
    v2: Expr,
    xi2_vars: Vec<String>,
    lambda: f64,
}

impl StorageSpec {
    pub fn new(
        v1: Expr,
        xi1_vars: Vec<String>,
        v2: Expr,
        xi2_vars: Vec<String>,
        lambda: f64,
    ) -> Result<Self, SynthesisError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(SynthesisError::InvalidLambda(lambda));
        }
        for name in v1.free_vars() {
            if !xi1_vars.contains(&name) {
                return Err(SynthesisError::ForeignVariable { what: "V1", name });
            }
        }
        for name in v2.free_vars() {
            if !xi2_vars.contains(&name) {
                return Err(SynthesisError::ForeignVariable { what: "V2", name });
            }
        }
        Ok(StorageSpec {
            v1,
            xi1_vars,
            v2,
            xi2_vars,
            lambda,
        })
    }

    /// The default choice `V1 = 1/2 |xi1|^2`, `V2 = 1/2 |xi2|^2`.
    pub fn default_quadratic(
        xi1_vars: Vec<String>,
        xi2_vars: Vec<String>,
        lambda: f64,
    ) -> Result<Self, SynthesisError> {
        let half_square = |vars: &[String]| {
            sum(vars
                .iter()
                .map(|v| Expr::constant(0.5) * Expr::var(v.clone()).pow(2)))
        };
        let v1 = half_square(&xi1_vars);
        let v2 = half_square(&xi2_vars);
        StorageSpec::new(v1, xi1_vars, v2, xi2_vars, lambda)
    }

    pub fn v1(&self) -> &Expr {
        &self.v1
    }

    pub fn v2(&self) -> &Expr {
        &self.v2
    }

    pub fn xi1_vars(&self) -> &[String] {
        &self.xi1_vars
    }

    pub fn xi2_vars(&self) -> &[String] {
        &self.xi2_vars
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Output strictness of the rendered loop: `epsilon = min(1, lambda)`.
    pub fn epsilon(&self) -> f64 {
        self.lambda.min(1.0)
    }
}

/// Sampling configuration for the storage screenings.
#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Half-width of the symmetric screening box per coordinate.
    pub screen_half: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            screen_half: 3.0,
            samples: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawKind {
    RenderNi,
    Stabilize,
    Robust,
}

impl LawKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LawKind::RenderNi => "render-ni",
            LawKind::Stabilize => "stabilize",
            LawKind::Robust => "robust",
        }
    }
}

/// How the decoupling-matrix inverse is applied.
#[derive(Debug, Clone)]
pub enum LawForm {
    /// Fully symbolic components, input-indexed.
    Symbolic(Vec<Expr>),
    /// `A(x) u = rhs(x, aux)` solved numerically point by point (symbolic
    /// inverses above 4x4 are not attempted).
    Pointwise { a: ExprMatrix, rhs: Vec<Expr> },
}

/// A synthesized state-feedback law `u(x, aux)`.
///
/// Auxiliary inputs (`v*` for the rendering law, `w*` for the robust law)
/// are indexed by original output position; the stabilizing law has none.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub kind: LawKind,
    pub form: LawForm,
    pub aux_names: Vec<String>,
    pub epsilon: f64,
    pub lambda: f64,
    pub profile: RelativeDegreeProfile,
    pub spec: StorageSpec,
}

impl FeedbackLaw {
    /// Symbolic components when the decoupling matrix admitted a symbolic
    /// inverse.
    pub fn components(&self) -> Option<&[Expr]> {
        match &self.form {
            LawForm::Symbolic(c) => Some(c),
            LawForm::Pointwise { .. } => None,
        }
    }

    pub fn p(&self) -> usize {
        self.profile.p()
    }

    /// Evaluate the input vector; `a` must bind all states and auxiliary
    /// names.
    pub fn eval_at(&self, a: &Assignment) -> Result<Vec<f64>, SynthesisError> {
        match &self.form {
            LawForm::Symbolic(components) => Ok(components
                .iter()
                .map(|c| eval(c, a))
                .collect::<Result<_, _>>()?),
            LawForm::Pointwise { a: amat, rhs } => {
                let a_num = amat.eval_at(a)?;
                let rhs_num: Vec<f64> = rhs.iter().map(|e| eval(e, a)).collect::<Result<_, _>>()?;
                let b = DMatrix::from_column_slice(rhs_num.len(), 1, &rhs_num);
                let sol = a_num
                    .lu()
                    .solve(&b)
                    .ok_or(CalculusError::SingularConstantMatrix)?;
                Ok(sol.column(0).iter().copied().collect())
            }
        }
    }

    /// Substitute each auxiliary input by a linear combination of new names:
    /// `aux_i := sum_j m[i][j] new_names[j]`. Used for the pairing-preserving
    /// input map of output transformations.
    pub fn substitute_aux_linear(&self, m: &DMatrix<f64>, new_names: &[String]) -> FeedbackLaw {
        assert_eq!(m.nrows(), self.aux_names.len());
        assert_eq!(m.ncols(), new_names.len());
        let map: Vec<(String, Expr)> = self
            .aux_names
            .iter()
            .enumerate()
            .map(|(i, old)| {
                let combo = sum(
                    (0..new_names.len())
                        .map(|j| Expr::constant(m[(i, j)]) * Expr::var(new_names[j].clone())),
                );
                (old.clone(), combo)
            })
            .collect();
        self.substituted(&map, new_names.to_vec())
    }

    /// Pin every auxiliary input to zero.
    pub fn with_aux_zero(&self) -> FeedbackLaw {
        let map: Vec<(String, Expr)> = self
            .aux_names
            .iter()
            .map(|n| (n.clone(), Expr::zero()))
            .collect();
        self.substituted(&map, Vec::new())
    }

    fn substituted(&self, map: &[(String, Expr)], aux_names: Vec<String>) -> FeedbackLaw {
        let form = match &self.form {
            LawForm::Symbolic(c) => {
                LawForm::Symbolic(c.iter().map(|e| fold(&e.substitute(map))).collect())
            }
            LawForm::Pointwise { a, rhs } => LawForm::Pointwise {
                a: a.clone(),
                rhs: rhs.iter().map(|e| fold(&e.substitute(map))).collect(),
            },
        };
        FeedbackLaw {
            kind: self.kind,
            form,
            aux_names,
            epsilon: self.epsilon,
            lambda: self.lambda,
            profile: self.profile.clone(),
            spec: self.spec.clone(),
        }
    }
}

/// The nonlinear-NI uncertainty block: `x_c' = f_c(x_c, u_c)`,
/// `y_c = h_c(x_c)`, with a declared storage function `V_c`.
#[derive(Debug, Clone)]
pub struct UncertaintyModel {
    states: Vec<String>,
    inputs: Vec<String>,
    f: VectorField,
    h: Vec<Expr>,
    v_c: Expr,
}

impl UncertaintyModel {
    pub fn new(
        states: Vec<String>,
        inputs: Vec<String>,
        f: Vec<Expr>,
        h: Vec<Expr>,
        v_c: Expr,
    ) -> Result<Self, SynthesisError> {
        let f = VectorField::with_inputs(states.clone(), inputs.clone(), f)?;
        for e in &h {
            for name in e.free_vars() {
                if !states.contains(&name) {
                    return Err(SynthesisError::ForeignVariable { what: "h_c", name });
                }
            }
        }
        for name in v_c.free_vars() {
            if !states.contains(&name) {
                return Err(SynthesisError::ForeignVariable { what: "V_c", name });
            }
        }
        // rest condition: f_c(0,0) = 0, h_c(0) = 0, V_c(0) = 0
        let origin: Assignment = states
            .iter()
            .chain(inputs.iter())
            .map(|n| (n.clone(), 0.0))
            .collect();
        for (i, fi) in f.components().iter().enumerate() {
            let v = eval(fi, &origin)?;
            if v.abs() > 1e-9 {
                return Err(SynthesisError::UncertaintyNotAtRest {
                    what: format!("f_c({})", i + 1),
                    value: v,
                });
            }
        }
        for (i, hi) in h.iter().enumerate() {
            let v = eval(hi, &origin)?;
            if v.abs() > 1e-9 {
                return Err(SynthesisError::UncertaintyNotAtRest {
                    what: format!("h_c({})", i + 1),
                    value: v,
                });
            }
        }
        let vc0 = eval(&v_c, &origin)?;
        if vc0.abs() > 1e-9 {
            return Err(SynthesisError::UncertaintyNotAtRest {
                what: "V_c".to_string(),
                value: vc0,
            });
        }
        Ok(UncertaintyModel {
            states,
            inputs,
            f,
            h,
            v_c,
        })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn p(&self) -> usize {
        self.h.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn f(&self) -> &VectorField {
        &self.f
    }

    pub fn h(&self) -> &[Expr] {
        &self.h
    }

    pub fn v_c(&self) -> &Expr {
        &self.v_c
    }
}

// ---------------------------------------------------------------------------
// law construction

/// Storage gradient terms in sorted output order: `dV1/dxi1_i` for the
/// degree-one block, `dV2/dxi2_j + lambda xi3_j` for the degree-two block,
/// all composed with the profile's output expressions.
fn gradient_terms(profile: &RelativeDegreeProfile, spec: &StorageSpec) -> Vec<Expr> {
    let xi1_map: Vec<(String, Expr)> = spec
        .xi1_vars
        .iter()
        .cloned()
        .zip(profile.xi1().iter().cloned())
        .collect();
    let xi2_map: Vec<(String, Expr)> = spec
        .xi2_vars
        .iter()
        .cloned()
        .zip(profile.xi2().iter().cloned())
        .collect();
    let mut terms = Vec::with_capacity(profile.p());
    for var in &spec.xi1_vars {
        let g = diff(&spec.v1, var);
        terms.push(fold(&g.substitute(&xi1_map)));
    }
    for (j, var) in spec.xi2_vars.iter().enumerate() {
        let g = diff(&spec.v2, var);
        let composed = fold(&g.substitute(&xi2_map));
        let damping = Expr::constant(spec.lambda) * profile.xi3()[j].clone();
        terms.push(fold(&(composed + damping)));
    }
    terms
}

fn check_spec_dims(
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
) -> Result<(), SynthesisError> {
    if spec.xi1_vars.len() != profile.p1() {
        return Err(SynthesisError::SpecDimension {
            what: "xi1",
            got: spec.xi1_vars.len(),
            expected: profile.p1(),
        });
    }
    if spec.xi2_vars.len() != profile.p2() {
        return Err(SynthesisError::SpecDimension {
            what: "xi2",
            got: spec.xi2_vars.len(),
            expected: profile.p2(),
        });
    }
    Ok(())
}

fn aux_names(prefix: &str, p: usize, states: &[String]) -> Result<Vec<String>, SynthesisError> {
    let names: Vec<String> = (1..=p).map(|i| format!("{prefix}{i}")).collect();
    for n in &names {
        if states.contains(n) {
            return Err(SynthesisError::AuxNameCollision(n.clone()));
        }
    }
    Ok(names)
}

fn assemble(
    kind: LawKind,
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
    aux: Vec<String>,
) -> Result<FeedbackLaw, SynthesisError> {
    let p = profile.p();
    let grads = gradient_terms(profile, spec);
    let chain_tops = profile.chain_top_derivatives(sys);

    // rhs_k = [aux at sorted slot k] - [A w]_k (robust) - L_f^{r_k} h_k - grad_k
    let mut rhs = Vec::with_capacity(p);
    for k in 0..p {
        let mut e = Expr::zero();
        if !aux.is_empty() {
            e = Expr::var(aux[profile.permutation()[k]].clone());
        }
        if kind == LawKind::Robust {
            let a_row_dot_w = sum(
                (0..p).map(|j| profile.a().get(k, j).clone() * Expr::var(aux[j].clone())),
            );
            e = e - a_row_dot_w;
        }
        rhs.push(fold(&(e - chain_tops[k].clone() - grads[k].clone())));
    }

    let form = match invert_symbolic(profile.a()) {
        Ok(a_inv) => LawForm::Symbolic(a_inv.mul_vector(&rhs).iter().map(fold).collect()),
        Err(CalculusError::SymbolicInverseUnsupported(_)) => LawForm::Pointwise {
            a: profile.a().clone(),
            rhs,
        },
        Err(e) => return Err(e.into()),
    };

    Ok(FeedbackLaw {
        kind,
        form,
        aux_names: aux,
        epsilon: spec.epsilon(),
        lambda: spec.lambda,
        profile: profile.clone(),
        spec: spec.clone(),
    })
}

/// The dissipation-rendering law with fresh input `v`:
/// `u = A^{-1} (v - [L_f^{r_i} h_i] - [grad V1; grad V2 + lambda xi3])`.
///
/// `V1`, `V2` may be any positive semidefinite functions; `lambda >= 0`.
/// With `lambda > 0` the closed loop is output-strict with
/// `epsilon = min(1, lambda)`.
pub fn render_ni(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
    opts: &SynthesisOptions,
) -> Result<FeedbackLaw, SynthesisError> {
    check_spec_dims(profile, spec)?;
    screen_storage(spec, Mode::Semidefinite, opts)?;
    let aux = aux_names("v", profile.p(), sys.states())?;
    assemble(LawKind::RenderNi, sys, profile, spec, aux)
}

/// The stabilizing law: the rendering law with `v = 0`, requiring
/// `lambda > 0` and strictly positive definite `V1`, `V2` whose gradients
/// vanish only at the origin.
pub fn stabilizing_law(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
    opts: &SynthesisOptions,
) -> Result<FeedbackLaw, SynthesisError> {
    check_spec_dims(profile, spec)?;
    if spec.lambda <= 0.0 {
        return Err(SynthesisError::LambdaNotPositive(spec.lambda));
    }
    screen_storage(spec, Mode::Definite, opts)?;
    screen_gradients(spec, opts)?;
    assemble(LawKind::Stabilize, sys, profile, spec, Vec::new())
}

/// The robust law against an additive NI uncertainty output `w`:
/// `u = A^{-1} ((I - A) w - [L_f^{r_i} h_i] - [grad V1; grad V2 + lambda xi3])`
/// (with the identity block permuted accordingly when the plant outputs are
/// not already sorted).
pub fn robust_law(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
    opts: &SynthesisOptions,
) -> Result<FeedbackLaw, SynthesisError> {
    check_spec_dims(profile, spec)?;
    if spec.lambda <= 0.0 {
        return Err(SynthesisError::LambdaNotPositive(spec.lambda));
    }
    screen_storage(spec, Mode::Definite, opts)?;
    screen_gradients(spec, opts)?;
    let aux = aux_names("w", profile.p(), sys.states())?;
    assemble(LawKind::Robust, sys, profile, spec, aux)
}

/// The closed-loop storage function
/// `V = V1(xi1) + V2(xi2) + 1/2 |xi3|^2`, composed with the profile's
/// coordinate expressions (a function of the plant state).
pub fn storage_v(profile: &RelativeDegreeProfile, spec: &StorageSpec) -> Expr {
    let xi1_map: Vec<(String, Expr)> = spec
        .xi1_vars
        .iter()
        .cloned()
        .zip(profile.xi1().iter().cloned())
        .collect();
    let xi2_map: Vec<(String, Expr)> = spec
        .xi2_vars
        .iter()
        .cloned()
        .zip(profile.xi2().iter().cloned())
        .collect();
    let v1 = fold(&spec.v1.substitute(&xi1_map));
    let v2 = fold(&spec.v2.substitute(&xi2_map));
    let kinetic = sum(profile
        .xi3()
        .iter()
        .map(|x| Expr::constant(0.5) * x.clone().pow(2)));
    fold(&(v1 + v2 + kinetic))
}

/// The interconnection storage function
/// `W = V + V_c(x_c) - h_c(x_c)' [xi1; xi2]`, over plant and uncertainty
/// state names (the cross term pairs uncertainty output `i` with plant
/// output `i` in original order).
pub fn storage_w(
    profile: &RelativeDegreeProfile,
    spec: &StorageSpec,
    unc: &UncertaintyModel,
) -> Result<Expr, SynthesisError> {
    if unc.p() != profile.p() {
        return Err(SynthesisError::UncertaintyDimension {
            got: unc.p(),
            expected: profile.p(),
        });
    }
    let v = storage_v(profile, spec);
    let sorted = profile.sorted_outputs();
    let mut outputs_original = vec![Expr::zero(); profile.p()];
    for (k, &orig) in profile.permutation().iter().enumerate() {
        outputs_original[orig] = sorted[k].clone();
    }
    let cross = sum(
        unc.h()
            .iter()
            .zip(&outputs_original)
            .map(|(hc, y)| hc.clone() * y.clone()),
    );
    Ok(fold(&(v + unc.v_c.clone() - cross)))
}

// ---------------------------------------------------------------------------
// positive-definiteness screening

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Definite,
    Semidefinite,
}

/// Outcome of a sampling screen; `pass = false` always carries a witness.
#[derive(Debug, Clone)]
pub struct ScreenVerdict {
    pub pass: bool,
    pub mode: Mode,
    pub witness: Option<(Vec<f64>, f64)>,
    pub samples_used: usize,
    pub skipped: usize,
}

/// Screen `e` (over `vars` on `domain`) for positive (semi)definiteness:
/// `e(0) = 0`, plus nonnegativity/positivity at `n` seeded samples,
/// axis probes, and a shrinking-radius sweep (radius factors 1, 0.1, 0.01 of
/// the box half-widths). Samples raising domain errors are skipped and
/// counted.
pub fn screen_positive_definite(
    e: &Expr,
    vars: &[String],
    domain: &BoxDomain,
    n: usize,
    mode: Mode,
    seed: u64,
) -> Result<ScreenVerdict, SynthesisError> {
    assert!(n >= 1, "need at least one sample");
    assert_eq!(vars.len(), domain.dim(), "domain dimension mismatch");
    let dim = vars.len();

    let value_at = |point: &[f64]| -> Result<f64, EvalError> {
        let a: Assignment = vars.iter().cloned().zip(point.iter().copied()).collect();
        eval(e, &a)
    };

    // the origin itself
    let origin = vec![0.0; dim];
    let v0 = value_at(&origin)?;
    if v0.abs() > 1e-12 {
        return Ok(ScreenVerdict {
            pass: false,
            mode,
            witness: Some((origin, v0)),
            samples_used: 1,
            skipped: 0,
        });
    }
    if dim == 0 {
        return Ok(ScreenVerdict {
            pass: true,
            mode,
            witness: None,
            samples_used: 1,
            skipped: 0,
        });
    }

    let half = domain.half_widths();
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for radius in [1.0, 0.1, 0.01] {
        for d in 0..dim {
            for sign in [1.0, -1.0] {
                let mut pt = vec![0.0; dim];
                pt[d] = sign * radius * half[d];
                probes.push(pt);
            }
        }
    }
    let mut rng = seeded_rng(seed);
    let sweep_dirs = (n / 20).max(8);
    for radius in [1.0, 0.1, 0.01] {
        for _ in 0..sweep_dirs {
            let mut dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0_f64)).collect();
            let norm = crate::sample::euclid_norm(&dir);
            if norm < 1e-12 {
                continue;
            }
            for (k, d) in dir.iter_mut().enumerate() {
                *d = *d / norm * radius * half[k];
            }
            probes.push(dir);
        }
    }
    for _ in 0..n {
        probes.push(domain.sample(&mut rng));
    }

    let mut used = 1usize;
    let mut skipped = 0usize;
    for pt in probes {
        if inf_norm(&pt) == 0.0 {
            continue;
        }
        match value_at(&pt) {
            Err(_) => skipped += 1,
            Ok(v) => {
                used += 1;
                let bad = match mode {
                    Mode::Definite => v <= 0.0,
                    Mode::Semidefinite => v < -1e-12 * (1.0 + inf_norm(&pt)),
                };
                if bad {
                    return Ok(ScreenVerdict {
                        pass: false,
                        mode,
                        witness: Some((pt, v)),
                        samples_used: used,
                        skipped,
                    });
                }
            }
        }
    }
    Ok(ScreenVerdict {
        pass: true,
        mode,
        witness: None,
        samples_used: used,
        skipped,
    })
}

fn screen_storage(
    spec: &StorageSpec,
    mode: Mode,
    opts: &SynthesisOptions,
) -> Result<(), SynthesisError> {
    for (what, e, vars) in [
        ("V1", &spec.v1, &spec.xi1_vars),
        ("V2", &spec.v2, &spec.xi2_vars),
    ] {
        let domain = BoxDomain::symmetric(opts.screen_half, vars.len());
        let verdict = screen_positive_definite(e, vars, &domain, opts.samples, mode, opts.seed)?;
        if !verdict.pass {
            let (point, value) = verdict.witness.unwrap_or((Vec::new(), f64::NAN));
            return Err(SynthesisError::ScreeningFailed {
                what: what.to_string(),
                mode: match mode {
                    Mode::Definite => "definite",
                    Mode::Semidefinite => "semidefinite",
                },
                point,
                value,
            });
        }
    }
    Ok(())
}

/// Reject storage specs whose gradient vanishes at a sampled non-origin
/// point (the stabilization argument needs the gradients to pin the origin).
fn screen_gradients(spec: &StorageSpec, opts: &SynthesisOptions) -> Result<(), SynthesisError> {
    for (what, e, vars) in [
        ("V1", &spec.v1, &spec.xi1_vars),
        ("V2", &spec.v2, &spec.xi2_vars),
    ] {
        if vars.is_empty() {
            continue;
        }
        let grads: Vec<Expr> = vars.iter().map(|v| diff(e, v)).collect();
        let domain = BoxDomain::symmetric(opts.screen_half, vars.len());
        let half = domain.half_widths();
        let mut rng = seeded_rng(opts.seed.wrapping_add(1));
        let mut probes: Vec<Vec<f64>> = Vec::new();
        for radius in [1.0, 0.1, 0.01] {
            for d in 0..vars.len() {
                for sign in [1.0, -1.0] {
                    let mut pt = vec![0.0; vars.len()];
                    pt[d] = sign * radius * half[d];
                    probes.push(pt);
                }
            }
        }
        for _ in 0..opts.samples {
            probes.push(domain.sample(&mut rng));
        }
        for pt in probes {
            if inf_norm(&pt) == 0.0 {
                continue;
            }
            let a: Assignment = vars.iter().cloned().zip(pt.iter().copied()).collect();
            let mut norm = 0.0_f64;
            let mut ok = true;
            for g in &grads {
                match eval(g, &a) {
                    Ok(v) => norm = norm.max(v.abs()),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok && norm <= 1e-12 * (1.0 + inf_norm(&pt)) {
                return Err(SynthesisError::GradientVanishes {
                    what: what.to_string(),
                    point: pt,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
