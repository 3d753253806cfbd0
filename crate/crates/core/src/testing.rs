//! Deterministic random generators for exercising the analysis and
//! synthesis pipelines.
//!
//! These are used heavily by the crate's own test suites (and are handy for
//! users fuzzing their own configurations): random expressions from the
//! grammar, random polynomial vector fields, random plants in normal form
//! with a known mixed relative degree, and random linear systems whose
//! relative-degree structure is known exactly from integer matrix algebra.
//!
//! All generators draw from a caller-provided RNG, so corpora are frozen by
//! fixing a seed.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::calculus::{ExprMatrix, VectorField};
use crate::expr::{parse, Assignment, Expr};
use crate::structure::AffineSystem;
use crate::synthesis::{StorageSpec, UncertaintyModel};

/// Tuning knobs for [`random_expr`].
#[derive(Debug, Clone)]
pub struct ExprGenConfig {
    /// Magnitude range for constant leaves (sign is random).
    pub const_range: (f64, f64),
    /// Integer power exponent range.
    pub pow_range: (i32, i32),
}

impl Default for ExprGenConfig {
    fn default() -> Self {
        ExprGenConfig {
            const_range: (0.25, 3.0),
            pow_range: (-3, 4),
        }
    }
}

/// A random expression over `vars` with depth at most `depth`.
pub fn random_expr(rng: &mut impl Rng, vars: &[String], depth: usize, cfg: &ExprGenConfig) -> Expr {
    if depth == 0 || rng.gen_range(0..100) < 12 {
        return random_leaf(rng, vars, cfg);
    }
    let d = depth - 1;
    match rng.gen_range(0..100) {
        0..=17 => random_expr(rng, vars, d, cfg) + random_expr(rng, vars, d, cfg),
        18..=31 => random_expr(rng, vars, d, cfg) - random_expr(rng, vars, d, cfg),
        32..=49 => random_expr(rng, vars, d, cfg) * random_expr(rng, vars, d, cfg),
        50..=57 => random_expr(rng, vars, d, cfg) / random_expr(rng, vars, d, cfg),
        58..=65 => -random_expr(rng, vars, d, cfg),
        66..=75 => {
            let mut k = rng.gen_range(cfg.pow_range.0..=cfg.pow_range.1);
            if k == 0 {
                k = 2;
            }
            random_expr(rng, vars, d, cfg).pow(k)
        }
        76..=83 => random_expr(rng, vars, d, cfg).sin(),
        84..=91 => random_expr(rng, vars, d, cfg).cos(),
        92..=95 => random_expr(rng, vars, d, cfg).exp(),
        _ => random_expr(rng, vars, d, cfg).cbrt(),
    }
}

fn random_leaf(rng: &mut impl Rng, vars: &[String], cfg: &ExprGenConfig) -> Expr {
    if !vars.is_empty() && rng.gen_bool(0.6) {
        Expr::var(vars[rng.gen_range(0..vars.len())].clone())
    } else {
        let mag = rng.gen_range(cfg.const_range.0..cfg.const_range.1);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        Expr::constant(sign * mag)
    }
}

/// Uniform assignment of `vars` in `[-half, half]`.
pub fn random_assignment(rng: &mut impl Rng, vars: &[String], half: f64) -> Assignment {
    vars.iter()
        .map(|v| (v.clone(), rng.gen_range(-half..half)))
        .collect()
}

/// A random polynomial over `vars` with `terms` monomials of total degree in
/// `1..=max_degree` and small rational coefficients (zero constant term, so
/// the origin is preserved).
pub fn random_polynomial(
    rng: &mut impl Rng,
    vars: &[String],
    max_degree: u32,
    terms: usize,
) -> Expr {
    let mut acc = Expr::zero();
    for _ in 0..terms {
        let coeff = {
            let k = loop {
                let k = rng.gen_range(-8i32..=8);
                if k != 0 {
                    break k;
                }
            };
            f64::from(k) / 4.0
        };
        let mut mono = Expr::constant(coeff);
        let degree = rng.gen_range(1..=max_degree);
        for _ in 0..degree {
            let v = Expr::var(vars[rng.gen_range(0..vars.len())].clone());
            mono = mono * v;
        }
        acc = acc + mono;
    }
    crate::expr::fold(&acc)
}

/// A random polynomial vector field on the given states.
pub fn random_polynomial_field(
    rng: &mut impl Rng,
    states: &[String],
    max_degree: u32,
    terms: usize,
) -> VectorField {
    let components = states
        .iter()
        .map(|_| random_polynomial(rng, states, max_degree, terms))
        .collect();
    VectorField::new(states.to_vec(), components).expect("polynomials over declared states")
}

/// Positive definite diagonal quadratic `sum_i d_i v_i^2` with `d_i` in
/// `[0.25, 2]`; its gradient vanishes only at the origin.
pub fn random_pd_quadratic(rng: &mut impl Rng, vars: &[String]) -> Expr {
    let mut acc = Expr::zero();
    for v in vars {
        let d = rng.gen_range(0.25..2.0);
        acc = acc + Expr::constant(d) * Expr::var(v.clone()).pow(2);
    }
    crate::expr::fold(&acc)
}

/// A plant generated directly in normal form with known mixed relative
/// degree and a constant invertible decoupling matrix.
#[derive(Debug, Clone)]
pub struct NormalFormPlant {
    pub system: AffineSystem,
    pub p1: usize,
    pub p2: usize,
    /// Number of internal (z) states, stored first in the state vector.
    pub internal: usize,
    /// Expected relative degree of each output in original (shuffled) order.
    pub expected_r: Vec<u8>,
}

/// Build a random plant with `p1` relative-degree-one outputs, `p2`
/// relative-degree-two outputs and `internal` internal states.
///
/// State layout: `internal` z-states, then the p1 degree-one coordinates,
/// then the p2 degree-two coordinates, then their derivatives. Drift entries
/// are random polynomials vanishing at the origin; the internal dynamics are
/// a stable linear decay driven by the output coordinates, so closed loops
/// that regulate the outputs stay bounded. Outputs are shuffled so the
/// sorting path is exercised.
pub fn random_normal_form_plant(
    rng: &mut impl Rng,
    p1: usize,
    p2: usize,
    internal: usize,
) -> NormalFormPlant {
    let n = internal + p1 + 2 * p2;
    let p = p1 + p2;
    let states: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let z_states = &states[..internal];
    let xi1_states = &states[internal..internal + p1];
    let xi2_states = &states[internal + p1..internal + p1 + p2];
    let xi3_states = &states[internal + p1 + p2..];
    let output_coord_states: Vec<String> =
        xi1_states.iter().chain(xi2_states.iter()).cloned().collect();

    let mut f = Vec::with_capacity(n);
    for z in z_states {
        let decay = rng.gen_range(0.5..2.0);
        let forced = random_polynomial(rng, &output_coord_states, 2, 2);
        f.push(crate::expr::fold(
            &(Expr::constant(-decay) * Expr::var(z.clone()) + forced),
        ));
    }
    for _ in xi1_states {
        f.push(random_polynomial(rng, &states, 2, 3));
    }
    for xi3 in xi3_states {
        f.push(Expr::var(xi3.clone()));
    }
    for _ in xi3_states {
        f.push(random_polynomial(rng, &states, 2, 3));
    }

    let b = random_integer_invertible(rng, p, 3);
    let mut g = ExprMatrix::zeros(n, p);
    for (row, _) in xi1_states.iter().enumerate() {
        for j in 0..p {
            *g.get_mut(internal + row, j) = Expr::constant(b[(row, j)]);
        }
    }
    for (row, _) in xi3_states.iter().enumerate() {
        for j in 0..p {
            *g.get_mut(internal + p1 + p2 + row, j) = Expr::constant(b[(p1 + row, j)]);
        }
    }

    // outputs in shuffled order
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(rng);
    let h: Vec<Expr> = order
        .iter()
        .map(|&k| Expr::var(output_coord_states[k].clone()))
        .collect();
    let expected_r: Vec<u8> = order.iter().map(|&k| if k < p1 { 1 } else { 2 }).collect();

    let system =
        AffineSystem::new(states, f, g, h).expect("normal-form construction is well formed");
    NormalFormPlant {
        system,
        p1,
        p2,
        internal,
        expected_r,
    }
}

/// A random linear system with integer data and exactly known
/// relative-degree structure.
#[derive(Debug, Clone)]
pub struct LinearSystemCase {
    pub system: AffineSystem,
    pub f_mat: DMatrix<f64>,
    pub g_mat: DMatrix<f64>,
    pub h_mat: DMatrix<f64>,
    /// Expected relative degree per output, original order.
    pub expected_r: Vec<u8>,
}

/// Build `x' = Fx + Gu, y = Hx` (n <= 6, p <= 3) from a linear normal form
/// pushed through a random unimodular change of coordinates. All matrix
/// entries are small integers, so products like `H G` and `H F G` are exact
/// in doubles and the relative-degree structure is known without tolerance.
pub fn random_linear_system(rng: &mut impl Rng) -> LinearSystemCase {
    let p = rng.gen_range(1..=3usize);
    let r: Vec<u8> = (0..p).map(|_| rng.gen_range(1..=2u8)).collect();
    let p1 = r.iter().filter(|&&x| x == 1).count();
    let p2 = p - p1;
    let chain = p1 + 2 * p2;
    let m = rng.gen_range(0..=(6 - chain));
    let n = chain + m;

    // state layout: xi1 (p1), xi2 (p2), xi3 (p2), z (m)
    let mut f_hat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let is_xi2_row = i >= p1 && i < p1 + p2;
        if is_xi2_row {
            f_hat[(i, i + p2)] = 1.0; // xi2' = xi3
        } else {
            for j in 0..n {
                f_hat[(i, j)] = f64::from(rng.gen_range(-2i32..=2));
            }
        }
    }
    let b = random_integer_invertible(rng, p, 2);
    let mut g_hat = DMatrix::<f64>::zeros(n, p);
    for i in 0..p1 {
        for j in 0..p {
            g_hat[(i, j)] = b[(i, j)];
        }
    }
    for i in 0..p2 {
        for j in 0..p {
            g_hat[(p1 + p2 + i, j)] = b[(p1 + i, j)];
        }
    }

    // outputs pick the xi1/xi2 coordinates, in shuffled order
    let mut coords: Vec<(usize, u8)> = (0..p1)
        .map(|i| (i, 1u8))
        .chain((0..p2).map(|i| (p1 + i, 2u8)))
        .collect();
    coords.shuffle(rng);
    let mut h_hat = DMatrix::<f64>::zeros(p, n);
    let mut expected_r = Vec::with_capacity(p);
    for (row, (coord, deg)) in coords.iter().enumerate() {
        h_hat[(row, *coord)] = 1.0;
        expected_r.push(*deg);
    }

    let (s, s_inv) = random_unimodular(rng, n, 5);
    let f_mat = &s * &f_hat * &s_inv;
    let g_mat = &s * &g_hat;
    let h_mat = &h_hat * &s_inv;

    let states: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let linear_row = |row: nalgebra::RowDVectorView<f64>| -> Expr {
        crate::expr::sum(
            row.iter()
                .enumerate()
                .map(|(j, c)| Expr::constant(*c) * Expr::var(states[j].clone())),
        )
    };
    let f_exprs: Vec<Expr> = (0..n).map(|i| linear_row(f_mat.row(i))).collect();
    let h_exprs: Vec<Expr> = (0..p).map(|i| linear_row(h_mat.row(i))).collect();
    let mut g_exprs = ExprMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            *g_exprs.get_mut(i, j) = Expr::constant(g_mat[(i, j)]);
        }
    }

    let system = AffineSystem::new(states, f_exprs, g_exprs, h_exprs)
        .expect("linear construction is well formed");
    LinearSystemCase {
        system,
        f_mat,
        g_mat,
        h_mat,
        expected_r,
    }
}

/// A random integer matrix with nonzero determinant, entries in
/// `[-mag, mag]`.
pub fn random_integer_invertible(rng: &mut impl Rng, p: usize, mag: i32) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(p, p, |_, _| f64::from(rng.gen_range(-mag..=mag)));
        let det = m.clone().determinant();
        // integer matrix: determinant is an integer, so nonzero means >= 1
        if det.abs() >= 0.5 {
            return m;
        }
    }
}

/// A random unimodular matrix and its exact integer inverse, built from
/// `shears` elementary row operations.
pub fn random_unimodular(rng: &mut impl Rng, n: usize, shears: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut s = DMatrix::<f64>::identity(n, n);
    let mut s_inv = DMatrix::<f64>::identity(n, n);
    for _ in 0..shears {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        if n > 1 {
            while j == i {
                j = rng.gen_range(0..n);
            }
        }
        if i == j {
            continue;
        }
        let c = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        // row_i += c * row_j on S; inverse op applied on the right of S^-1
        let mut shear = DMatrix::<f64>::identity(n, n);
        shear[(i, j)] = c;
        s = &shear * &s;
        let mut unshear = DMatrix::<f64>::identity(n, n);
        unshear[(i, j)] = -c;
        s_inv = &s_inv * &unshear;
    }
    (s, s_inv)
}

/// A random well-conditioned nonsingular matrix (for output transformations).
pub fn random_nonsingular(rng: &mut impl Rng, p: usize) -> DMatrix<f64> {
    loop {
        let mut m = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        for i in 0..p {
            m[(i, i)] += if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
        let sv = m.clone().svd(false, false).singular_values;
        let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin > 1e-2 && smax / smin < 1e3 {
            return m;
        }
    }
}

/// A decaying test input `a * exp(-rate t) * cos(freq t + phase)` over the
/// time variable `t`.
pub fn decaying_signal(amplitude: f64, rate: f64, freq: f64, phase: f64) -> Expr {
    Expr::constant(amplitude)
        * (-(Expr::constant(rate) * Expr::var("t"))).exp()
        * (Expr::constant(freq) * Expr::var("t") + Expr::constant(phase)).cos()
}

/// The crate's running example: a four-state plant already in normal form
/// (one degree-one output, one degree-two output, scalar internal dynamics)
/// interconnected with a two-state NI uncertainty. This is the same scenario
/// shipped as the CLI example configuration.
#[derive(Debug, Clone)]
pub struct DemoScenario {
    pub plant: AffineSystem,
    pub uncertainty: UncertaintyModel,
    pub storage: StorageSpec,
    pub x0: Vec<f64>,
    pub xc0: Vec<f64>,
}

pub fn demo_scenario() -> DemoScenario {
    let states: Vec<String> = ["z", "xi1", "xi2", "xi3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let f = vec![
        parse("-z - z^3 + xi1^2").unwrap(),
        parse("sin(z)").unwrap(),
        parse("xi3").unwrap(),
        parse("xi1 + xi2^2 + xi3").unwrap(),
    ];
    let mut g = ExprMatrix::zeros(4, 2);
    *g.get_mut(1, 0) = Expr::one();
    *g.get_mut(3, 1) = Expr::one();
    let h = vec![Expr::var("xi1"), Expr::var("xi2")];
    let plant = AffineSystem::new(states, f, g, h).unwrap();

    let uncertainty = UncertaintyModel::new(
        vec!["xc1".to_string(), "xc2".to_string()],
        vec!["uc1".to_string(), "uc2".to_string()],
        vec![
            parse("-xc1 + uc1").unwrap(),
            parse("-xc2^3 + uc2").unwrap(),
        ],
        vec![Expr::var("xc1"), Expr::var("xc2")],
        parse("0.5*xc1^2 + 0.25*xc2^4").unwrap(),
    )
    .unwrap();

    let storage = StorageSpec::new(
        parse("xi1^2").unwrap(),
        vec!["xi1".to_string()],
        parse("cbrt(xi2)^4").unwrap(),
        vec!["xi2".to_string()],
        1.0,
    )
    .unwrap();

    DemoScenario {
        plant,
        uncertainty,
        storage,
        x0: vec![10.0, 3.0, -5.0, 7.0],
        xc0: vec![-8.0, 2.0],
    }
}
