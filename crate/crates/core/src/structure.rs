//! Structural analysis of control-affine systems: vector relative degree,
//! the decoupling matrix, involutivity of the input distribution, and the
//! sampled global normal-form hypotheses.
//!
//! "In a neighbourhood of x0" is operationalized as a seeded sampled ball of
//! configurable radius; every verdict here is a semidecision — sound when it
//! rejects, heuristic when it accepts — and negative verdicts always carry a
//! concrete witness point.

use nalgebra::DMatrix;

use crate::calculus::{
    lie_bracket, lie_derivative, lie_derivative_matrix, tilde_fields, CalculusError, ExprMatrix,
    VectorField,
};
use crate::expr::{
    eval, fold, is_probably_zero, Assignment, EvalError, Expr, ZeroTestOptions,
};
use crate::sample::{inf_norm, seeded_rng, BoxDomain};

/// Tolerance for the `f(x_eq) = 0`, `h(x_eq) = 0` load-time checks.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("f({component}) = {value:.3e} at the declared equilibrium; systems must satisfy f(x_eq) = 0 (declare the true equilibrium to shift coordinates)")]
    NotAnEquilibrium { component: usize, value: f64 },
    #[error("h({output}) = {value:.3e} at the declared equilibrium; outputs must vanish there")]
    OutputNotZeroAtEquilibrium { output: usize, value: f64 },
    #[error("relative degree undefined for output {output}: the input never appears within two differentiations")]
    RelativeDegreeUndefined { output: usize },
    #[error("no vector relative degree at x0: |det A(x0)| = {det:.3e} is below tolerance; an output transformation may recover one")]
    SingularDecouplingMatrix { det: f64 },
    #[error("output transformation matrix is singular (|det| = {det:.3e})")]
    SingularTransform { det: f64 },
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error("evaluation failed during analysis: {0}")]
    Eval(#[from] EvalError),
}

/// The plant `x' = f(x) + g(x) u`, `y = h(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSystem {
    states: Vec<String>,
    f: VectorField,
    g: ExprMatrix,
    h: Vec<Expr>,
    x_eq: Vec<f64>,
}

impl AffineSystem {
    /// System with the equilibrium at the origin.
    pub fn new(
        states: Vec<String>,
        f: Vec<Expr>,
        g: ExprMatrix,
        h: Vec<Expr>,
    ) -> Result<Self, StructureError> {
        let n = states.len();
        Self::with_equilibrium(states, f, g, h, vec![0.0; n])
    }

    /// System with a declared equilibrium; `f` and `h` must vanish there
    /// (within [`EQUILIBRIUM_TOL`]).
    pub fn with_equilibrium(
        states: Vec<String>,
        f: Vec<Expr>,
        g: ExprMatrix,
        h: Vec<Expr>,
        x_eq: Vec<f64>,
    ) -> Result<Self, StructureError> {
        let n = states.len();
        if x_eq.len() != n {
            return Err(StructureError::Dimension {
                what: "equilibrium",
                got: x_eq.len(),
                expected: n,
            });
        }
        if g.nrows() != n {
            return Err(StructureError::Dimension {
                what: "input matrix rows",
                got: g.nrows(),
                expected: n,
            });
        }
        let f = VectorField::new(states.clone(), f)?;
        for (j, hi) in h.iter().enumerate() {
            for v in hi.free_vars() {
                if !states.contains(&v) {
                    return Err(StructureError::Calculus(CalculusError::UndeclaredVariable {
                        component: j,
                        name: v,
                    }));
                }
            }
        }
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                for v in g.get(i, j).free_vars() {
                    if !states.contains(&v) {
                        return Err(StructureError::Calculus(
                            CalculusError::UndeclaredVariable { component: i, name: v },
                        ));
                    }
                }
            }
        }

        let at_eq: Assignment = states
            .iter()
            .cloned()
            .zip(x_eq.iter().copied())
            .collect();
        for (i, fi) in f.components().iter().enumerate() {
            let v = eval(fi, &at_eq)?;
            if v.abs() > EQUILIBRIUM_TOL {
                return Err(StructureError::NotAnEquilibrium { component: i, value: v });
            }
        }
        for (i, hi) in h.iter().enumerate() {
            let v = eval(hi, &at_eq)?;
            if v.abs() > EQUILIBRIUM_TOL {
                return Err(StructureError::OutputNotZeroAtEquilibrium { output: i, value: v });
            }
        }
        Ok(AffineSystem { states, f, g, h, x_eq })
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

    pub fn f(&self) -> &VectorField {
        &self.f
    }

    pub fn g(&self) -> &ExprMatrix {
        &self.g
    }

    pub fn h(&self) -> &[Expr] {
        &self.h
    }

    pub fn x_eq(&self) -> &[f64] {
        &self.x_eq
    }

    /// Coordinate shift moving the declared equilibrium to the origin.
    /// Identity when the equilibrium already is the origin.
    pub fn shifted_to_origin(&self) -> AffineSystem {
        if self.x_eq.iter().all(|v| *v == 0.0) {
            return self.clone();
        }
        let shift = |e: &Expr| fold(&e.shift_vars(&self.states, &self.x_eq));
        AffineSystem {
            states: self.states.clone(),
            f: self.f.map(shift),
            g: self.g.map(shift),
            h: self.h.iter().map(shift).collect(),
            x_eq: vec![0.0; self.states.len()],
        }
    }
}

/// Sampling configuration for all structural checks.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Box over which uniform relative degree, involutivity and H3 are
    /// sampled.
    pub domain: BoxDomain,
    pub samples: usize,
    pub seed: u64,
    /// Relative tolerance of the probabilistic zero tests.
    pub zero_tol: f64,
    /// `|det A|` below this counts as singular.
    pub det_tol: f64,
    /// Singular values below `rank_rel_tol * sigma_max` count as zero.
    pub rank_rel_tol: f64,
    /// Radius of the sampled ball around `x0` in [`relative_degree`].
    pub neighborhood_radius: f64,
}

impl AnalysisOptions {
    pub fn new(domain: BoxDomain) -> Self {
        AnalysisOptions {
            domain,
            samples: 50,
            seed: 0,
            zero_tol: 1e-9,
            det_tol: 1e-9,
            rank_rel_tol: 1e-8,
            neighborhood_radius: 0.5,
        }
    }

    fn zero_opts(&self) -> ZeroTestOptions {
        ZeroTestOptions {
            samples: self.samples,
            tol: self.zero_tol,
            seed: self.seed,
        }
    }
}

/// Vector relative degree profile with outputs sorted ones-before-twos.
#[derive(Debug, Clone)]
pub struct RelativeDegreeProfile {
    r: Vec<u8>,
    permutation: Vec<usize>,
    p1: usize,
    a: ExprMatrix,
    lf_r_h: Vec<Expr>,
    xi1: Vec<Expr>,
    xi2: Vec<Expr>,
    xi3: Vec<Expr>,
}

impl RelativeDegreeProfile {
    /// Per-output relative degrees in sorted order (ones first).
    pub fn r(&self) -> &[u8] {
        &self.r
    }

    /// `permutation[k]` is the original index of sorted output `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Relative degrees indexed by original output position.
    pub fn r_original(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.r.len()];
        for (k, &orig) in self.permutation.iter().enumerate() {
            out[orig] = self.r[k];
        }
        out
    }

    pub fn p(&self) -> usize {
        self.r.len()
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.r.len() - self.p1
    }

    /// Decoupling matrix with rows in sorted output order.
    pub fn a(&self) -> &ExprMatrix {
        &self.a
    }

    /// `b1`: the relative-degree-one rows of the decoupling matrix.
    pub fn b1(&self) -> Vec<Vec<Expr>> {
        (0..self.p1).map(|i| self.a.row(i)).collect()
    }

    /// `b2`: the relative-degree-two rows of the decoupling matrix.
    pub fn b2(&self) -> Vec<Vec<Expr>> {
        (self.p1..self.p()).map(|i| self.a.row(i)).collect()
    }

    pub fn xi1(&self) -> &[Expr] {
        &self.xi1
    }

    pub fn xi2(&self) -> &[Expr] {
        &self.xi2
    }

    pub fn xi3(&self) -> &[Expr] {
        &self.xi3
    }

    /// `[L_f^{r_i} h_i]` in sorted order — the drift terms cancelled by the
    /// feedback laws.
    pub fn chain_top_derivatives(&self, _sys: &AffineSystem) -> Vec<Expr> {
        self.lf_r_h.clone()
    }

    /// Outputs in sorted order (`xi1` then `xi2`).
    pub fn sorted_outputs(&self) -> Vec<Expr> {
        self.xi1.iter().chain(&self.xi2).cloned().collect()
    }

    /// Permutation matrix `P` with `(P y)_sorted = y_original`.
    pub fn permutation_matrix(&self) -> DMatrix<f64> {
        let p = self.p();
        let mut m = DMatrix::zeros(p, p);
        for (k, &orig) in self.permutation.iter().enumerate() {
            m[(k, orig)] = 1.0;
        }
        m
    }
}

/// Determine the vector relative degree (each entry 1 or 2) near `x0`.
///
/// Zero-ness of `L_g h_i` is decided by seeded sampling in a ball of radius
/// `opts.neighborhood_radius` around `x0`; the decoupling matrix must be
/// nonsingular at `x0` itself.
pub fn relative_degree(
    sys: &AffineSystem,
    x0: &[f64],
    opts: &AnalysisOptions,
) -> Result<RelativeDegreeProfile, StructureError> {
    let sys = sys.shifted_to_origin();
    assert_eq!(x0.len(), sys.n(), "x0 dimension mismatch");
    let ball = BoxDomain::centered(x0, opts.neighborhood_radius);
    let zopts = opts.zero_opts();
    let states = sys.states().to_vec();

    struct OutputInfo {
        original: usize,
        r: u8,
        a_row: Vec<Expr>,
        xi3: Option<Expr>,
        chain_top: Expr,
    }

    let mut infos = Vec::with_capacity(sys.p());
    for (i, hi) in sys.h().iter().enumerate() {
        let lg_h = lie_derivative_matrix(hi, &states, sys.g());
        let lg_h_zero = lg_h
            .iter()
            .all(|e| is_probably_zero(e, &states, &ball, &zopts).probably_zero);
        if !lg_h_zero {
            infos.push(OutputInfo {
                original: i,
                r: 1,
                a_row: lg_h,
                xi3: None,
                chain_top: lie_derivative(hi, sys.f()),
            });
            continue;
        }
        let lf_h = lie_derivative(hi, sys.f());
        let lg_lf_h = lie_derivative_matrix(&lf_h, &states, sys.g());
        let lg_lf_h_zero = lg_lf_h
            .iter()
            .all(|e| is_probably_zero(e, &states, &ball, &zopts).probably_zero);
        if lg_lf_h_zero {
            return Err(StructureError::RelativeDegreeUndefined { output: i });
        }
        infos.push(OutputInfo {
            original: i,
            r: 2,
            a_row: lg_lf_h,
            chain_top: lie_derivative(&lf_h, sys.f()),
            xi3: Some(lf_h),
        });
    }

    // stable sort: ones before twos, original order within each group
    infos.sort_by_key(|info| info.r);
    let p1 = infos.iter().filter(|i| i.r == 1).count();

    let a = ExprMatrix::from_rows(infos.iter().map(|i| i.a_row.clone()).collect());
    let at_x0: Assignment = states
        .iter()
        .cloned()
        .zip(x0.iter().copied())
        .collect();
    let det = a.eval_at(&at_x0)?.determinant();
    if det.abs() <= opts.det_tol {
        return Err(StructureError::SingularDecouplingMatrix { det });
    }

    let xi1 = infos[..p1]
        .iter()
        .map(|i| sys.h()[i.original].clone())
        .collect();
    let xi2 = infos[p1..]
        .iter()
        .map(|i| sys.h()[i.original].clone())
        .collect();
    let xi3 = infos[p1..]
        .iter()
        .map(|i| i.xi3.clone().expect("degree-two output has xi3"))
        .collect();

    Ok(RelativeDegreeProfile {
        r: infos.iter().map(|i| i.r).collect(),
        permutation: infos.iter().map(|i| i.original).collect(),
        p1,
        a,
        lf_r_h: infos.iter().map(|i| i.chain_top.clone()).collect(),
        xi1,
        xi2,
        xi3,
    })
}

/// Witness of an involutivity failure.
#[derive(Debug, Clone)]
pub struct InvolutivityWitness {
    pub point: Vec<f64>,
    pub pair: (usize, usize),
    pub rank_g: usize,
    pub rank_augmented: usize,
}

#[derive(Debug, Clone)]
pub struct InvolutivityReport {
    pub involutive: bool,
    pub witness: Option<InvolutivityWitness>,
    pub samples_used: usize,
    pub skipped: usize,
}

/// Check involutivity of `G = span{g^1, ..., g^p}` by sampled rank tests:
/// at each sample, no bracket `[g^i, g^j]` may escape the span of `G`.
pub fn check_involutive(
    sys: &AffineSystem,
    opts: &AnalysisOptions,
) -> Result<InvolutivityReport, StructureError> {
    let sys = sys.shifted_to_origin();
    let p = sys.g().ncols();
    let states = sys.states().to_vec();
    let columns: Vec<VectorField> = (0..p)
        .map(|j| VectorField::new(states.clone(), sys.g().column(j)))
        .collect::<Result<_, _>>()?;
    let mut brackets = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            brackets.push(((i, j), lie_bracket(&columns[i], &columns[j])?));
        }
    }

    let mut rng = seeded_rng(opts.seed);
    let mut skipped = 0usize;
    let mut used = 0usize;
    for _ in 0..opts.samples {
        let point = opts.domain.sample(&mut rng);
        let a: Assignment = states
            .iter()
            .cloned()
            .zip(point.iter().copied())
            .collect();
        let g_num = match sys.g().eval_at(&a) {
            Ok(m) => m,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        used += 1;
        for ((i, j), bracket) in &brackets {
            let b_num = match bracket.eval_at(&a) {
                Ok(v) => v,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            };
            let mut aug = DMatrix::zeros(g_num.nrows(), p + 1);
            aug.view_mut((0, 0), (g_num.nrows(), p)).copy_from(&g_num);
            for (row, v) in b_num.iter().enumerate() {
                aug[(row, p)] = *v;
            }
            let sv_aug = aug.clone().svd(false, false).singular_values;
            let sigma_max = sv_aug.iter().cloned().fold(0.0_f64, f64::max);
            let tol = opts.rank_rel_tol * sigma_max;
            let rank_aug = sv_aug.iter().filter(|s| **s > tol).count();
            let sv_g = g_num.clone().svd(false, false).singular_values;
            let rank_g = sv_g.iter().filter(|s| **s > tol).count();
            if rank_aug > rank_g {
                return Ok(InvolutivityReport {
                    involutive: false,
                    witness: Some(InvolutivityWitness {
                        point,
                        pair: (*i, *j),
                        rank_g,
                        rank_augmented: rank_aug,
                    }),
                    samples_used: used,
                    skipped,
                });
            }
        }
    }
    Ok(InvolutivityReport {
        involutive: true,
        witness: None,
        samples_used: used,
        skipped,
    })
}

#[derive(Debug, Clone)]
pub struct H1Witness {
    pub point: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct H1Report {
    pub pass: bool,
    pub witness: Option<H1Witness>,
    pub samples_used: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub enum H3Report {
    Pass { pairs_checked: usize },
    Fail { pair: (usize, usize), witness: Vec<f64> },
    NotChecked { reason: String },
}

/// Structural verdicts for the global normal-form hypotheses. H2
/// (completeness of the modified fields) admits no general decision
/// procedure and is always recorded as an unverified assumption.
#[derive(Debug, Clone)]
pub struct StructureReport {
    pub involutive: InvolutivityReport,
    pub h1: H1Report,
    pub h3: H3Report,
    pub h2_assumed: bool,
    pub domain: BoxDomain,
    pub seed: u64,
}

/// Check H1 (uniform relative degree over the box) and H3 (commuting
/// modified input fields), and record H2 as assumed.
pub fn check_h1_h3(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    opts: &AnalysisOptions,
) -> Result<StructureReport, StructureError> {
    let shifted = sys.shifted_to_origin();
    let involutive = check_involutive(&shifted, opts)?;
    let h1 = check_h1(&shifted, profile, opts)?;
    let h3 = check_h3(&shifted, profile, opts);
    Ok(StructureReport {
        involutive,
        h1,
        h3,
        h2_assumed: true,
        domain: opts.domain.clone(),
        seed: opts.seed,
    })
}

fn check_h1(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    opts: &AnalysisOptions,
) -> Result<H1Report, StructureError> {
    let states = sys.states().to_vec();
    // the L_g h_i rows that must vanish identically for degree-two outputs
    let zero_rows: Vec<(usize, Vec<Expr>)> = profile
        .permutation()
        .iter()
        .enumerate()
        .filter(|(k, _)| profile.r()[*k] == 2)
        .map(|(_, &orig)| {
            (
                orig,
                lie_derivative_matrix(&sys.h()[orig], &states, sys.g()),
            )
        })
        .collect();

    // Ok(None) = pass, Ok(Some(reason)) = fail, Err(()) = evaluation error
    let check_point = |point: &[f64]| -> Result<Option<String>, ()> {
        let a: Assignment = states
            .iter()
            .cloned()
            .zip(point.iter().copied())
            .collect();
        let scale = 1.0 + inf_norm(point);
        for (orig, row) in &zero_rows {
            for e in row {
                let v = eval(e, &a).map_err(|_| ())?;
                if v.abs() > opts.zero_tol * scale {
                    return Ok(Some(format!(
                        "L_g h_{} = {v:.3e} is nonzero, so the relative degree drops to 1 here",
                        orig + 1
                    )));
                }
            }
        }
        let det = profile.a().eval_at(&a).map_err(|_| ())?.determinant();
        if det.abs() <= opts.det_tol {
            return Ok(Some(format!("|det A| = {:.3e} below tolerance", det.abs())));
        }
        Ok(None)
    };

    // deterministic probes first (center and axis points catch singular
    // sets through the middle of the box that random samples a.s. miss),
    // then the seeded random samples
    let mut points: Vec<Vec<f64>> = Vec::new();
    let center = opts.domain.center();
    let half = opts.domain.half_widths();
    points.push(center.clone());
    for radius in [1.0, 0.1] {
        for d in 0..center.len() {
            for sign in [1.0, -1.0] {
                let mut pt = center.clone();
                pt[d] += sign * radius * half[d];
                points.push(pt);
            }
        }
    }
    let mut rng = seeded_rng(opts.seed);
    for _ in 0..opts.samples {
        points.push(opts.domain.sample(&mut rng));
    }

    let mut skipped = 0usize;
    let mut used = 0usize;
    for point in points {
        match check_point(&point) {
            Err(()) => skipped += 1,
            Ok(None) => used += 1,
            Ok(Some(reason)) => {
                return Ok(H1Report {
                    pass: false,
                    witness: Some(H1Witness { point, reason }),
                    samples_used: used + 1,
                    skipped,
                });
            }
        }
    }
    Ok(H1Report {
        pass: true,
        witness: None,
        samples_used: used,
        skipped,
    })
}

fn check_h3(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
    opts: &AnalysisOptions,
) -> H3Report {
    let (_, g_tilde) = match tilde_fields(sys, profile) {
        Ok(t) => t,
        Err(e) => {
            return H3Report::NotChecked {
                reason: format!("modified input fields unavailable: {e}"),
            }
        }
    };
    let states = sys.states().to_vec();
    let columns: Vec<VectorField> = match (0..g_tilde.ncols())
        .map(|j| VectorField::new(states.clone(), g_tilde.column(j)))
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(c) => c,
        Err(e) => {
            return H3Report::NotChecked {
                reason: format!("modified input fields ill-formed: {e}"),
            }
        }
    };
    let zopts = opts.zero_opts();
    let mut pairs = 0usize;
    for i in 0..columns.len() {
        for j in (i + 1)..columns.len() {
            pairs += 1;
            let bracket = match lie_bracket(&columns[i], &columns[j]) {
                Ok(b) => b,
                Err(e) => {
                    return H3Report::NotChecked {
                        reason: format!("bracket of modified fields failed: {e}"),
                    }
                }
            };
            for comp in bracket.components() {
                let verdict = is_probably_zero(comp, &states, &opts.domain, &zopts);
                if !verdict.probably_zero {
                    let witness = verdict
                        .counterexample
                        .map(|(pt, _)| pt)
                        .unwrap_or_default();
                    return H3Report::Fail { pair: (i, j), witness };
                }
            }
        }
    }
    H3Report::Pass { pairs_checked: pairs }
}

/// A system with its outputs transformed by a constant nonsingular matrix,
/// together with the companion input map `u~ = T^{-T} u` that preserves the
/// dissipation pairing `u' y_dot`.
#[derive(Debug, Clone)]
pub struct OutputTransformed {
    pub system: AffineSystem,
    pub t: DMatrix<f64>,
    /// `T^{-T}`, the matrix mapping plant inputs to transformed-pairing
    /// inputs.
    pub t_inv_transpose: DMatrix<f64>,
}

/// Replace the output map by `h~ = T h`.
pub fn output_transform(
    sys: &AffineSystem,
    t: &DMatrix<f64>,
) -> Result<OutputTransformed, StructureError> {
    let p = sys.p();
    assert_eq!(t.nrows(), p, "transform must be p x p");
    assert_eq!(t.ncols(), p, "transform must be p x p");
    let det = t.clone().determinant();
    if det.abs() <= 1e-12 {
        return Err(StructureError::SingularTransform { det });
    }
    let t_inv_transpose = t
        .clone()
        .try_inverse()
        .ok_or(StructureError::SingularTransform { det })?
        .transpose();
    let h_new: Vec<Expr> = (0..p)
        .map(|i| {
            crate::expr::sum(
                (0..p).map(|j| Expr::constant(t[(i, j)]) * sys.h()[j].clone()),
            )
        })
        .collect();
    let system = AffineSystem::with_equilibrium(
        sys.states().to_vec(),
        sys.f().components().to_vec(),
        sys.g().clone(),
        h_new,
        sys.x_eq().to_vec(),
    )?;
    Ok(OutputTransformed {
        system,
        t: t.clone(),
        t_inv_transpose,
    })
}

/// Convenience: the full structural pipeline (profile, involutivity, H1/H3).
pub fn analyze(
    sys: &AffineSystem,
    x0: &[f64],
    opts: &AnalysisOptions,
) -> Result<(RelativeDegreeProfile, StructureReport), StructureError> {
    let profile = relative_degree(sys, x0, opts)?;
    let report = check_h1_h3(sys, &profile, opts)?;
    Ok((profile, report))
}

#[cfg(test)]
mod tests;
