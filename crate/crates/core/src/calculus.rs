//! Symbolic vector calculus: Lie derivatives, Jacobians, Lie brackets,
//! ad-iterates, and the modified fields used by the global normal-form
//! hypotheses.
//!
//! Everything operates on [`Expr`] vectors and matrices and returns folded
//! results; no simplification beyond constant folding is attempted, the
//! probabilistic zero test downstream copes with uncancelled `x - x` shapes.

use nalgebra::DMatrix;

use crate::expr::{diff, eval, fold, sum, Assignment, EvalError, Expr};
use crate::structure::{AffineSystem, RelativeDegreeProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalculusError {
    #[error("component count {components} does not match state count {states}")]
    DimensionMismatch { states: usize, components: usize },
    #[error("component {component} uses undeclared variable `{name}`")]
    UndeclaredVariable { component: usize, name: String },
    #[error("vector fields live on different state spaces")]
    StateSpaceMismatch,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("constant matrix is singular")]
    SingularConstantMatrix,
    #[error("symbolic inverse unsupported for non-constant {0}x{0} matrices")]
    SymbolicInverseUnsupported(usize),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// A smooth vector field on R^n given by one expression per coordinate.
///
/// `inputs` lists additional names (e.g. exogenous inputs) the components may
/// reference; it is empty for autonomous fields.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    states: Vec<String>,
    inputs: Vec<String>,
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(states: Vec<String>, components: Vec<Expr>) -> Result<Self, CalculusError> {
        Self::with_inputs(states, Vec::new(), components)
    }

    pub fn with_inputs(
        states: Vec<String>,
        inputs: Vec<String>,
        components: Vec<Expr>,
    ) -> Result<Self, CalculusError> {
        if states.len() != components.len() {
            return Err(CalculusError::DimensionMismatch {
                states: states.len(),
                components: components.len(),
            });
        }
        for (i, c) in components.iter().enumerate() {
            for v in c.free_vars() {
                if !states.contains(&v) && !inputs.contains(&v) {
                    return Err(CalculusError::UndeclaredVariable { component: i, name: v });
                }
            }
        }
        Ok(VectorField { states, inputs, components })
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expr {
        &self.components[i]
    }

    pub fn eval_at(&self, a: &Assignment) -> Result<Vec<f64>, EvalError> {
        self.components.iter().map(|c| eval(c, a)).collect()
    }

    /// Apply `op` to every component.
    pub fn map(&self, op: impl Fn(&Expr) -> Expr) -> VectorField {
        VectorField {
            states: self.states.clone(),
            inputs: self.inputs.clone(),
            components: self.components.iter().map(op).collect(),
        }
    }
}

/// A rectangular matrix of expressions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<Expr>) -> ExprMatrix {
        assert_eq!(entries.len(), rows * cols, "entry count mismatch");
        ExprMatrix { rows, cols, entries }
    }

    pub fn from_rows(rows: Vec<Vec<Expr>>) -> ExprMatrix {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == ncols), "ragged rows");
        ExprMatrix {
            rows: nrows,
            cols: ncols,
            entries: rows.into_iter().flatten().collect(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> ExprMatrix {
        ExprMatrix::new(rows, cols, vec![Expr::zero(); rows * cols])
    }

    pub fn identity(n: usize) -> ExprMatrix {
        let mut m = ExprMatrix::zeros(n, n);
        for i in 0..n {
            *m.get_mut(i, i) = Expr::one();
        }
        m
    }

    pub fn from_numeric(m: &DMatrix<f64>) -> ExprMatrix {
        ExprMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            entries: m.row_iter().flat_map(|r| r.iter().map(|v| Expr::constant(*v)).collect::<Vec<_>>()).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Expr {
        &mut self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> Vec<Expr> {
        (0..self.cols).map(|j| self.get(i, j).clone()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<Expr> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn map(&self, op: impl Fn(&Expr) -> Expr) -> ExprMatrix {
        ExprMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(op).collect(),
        }
    }

    pub fn eval_at(&self, a: &Assignment) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = eval(self.get(i, j), a)?;
            }
        }
        Ok(out)
    }

    /// Numeric form if every entry folds to a constant.
    pub fn as_constant(&self) -> Option<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                match fold(self.get(i, j)) {
                    Expr::Constant(c) => out[(i, j)] = c,
                    _ => return None,
                }
            }
        }
        Some(out)
    }

    /// Symbolic matrix product, folded.
    pub fn mul_matrix(&self, rhs: &ExprMatrix) -> ExprMatrix {
        assert_eq!(self.cols, rhs.rows, "inner dimension mismatch");
        let mut entries = Vec::with_capacity(self.rows * rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                entries.push(sum(
                    (0..self.cols).map(|k| self.get(i, k).clone() * rhs.get(k, j).clone()),
                ));
            }
        }
        ExprMatrix::new(self.rows, rhs.cols, entries)
    }

    /// Symbolic matrix-vector product, folded.
    pub fn mul_vector(&self, v: &[Expr]) -> Vec<Expr> {
        assert_eq!(self.cols, v.len(), "inner dimension mismatch");
        (0..self.rows)
            .map(|i| sum((0..self.cols).map(|k| self.get(i, k).clone() * v[k].clone())))
            .collect()
    }

    pub fn sub(&self, rhs: &ExprMatrix) -> ExprMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let entries = self
            .entries
            .iter()
            .zip(&rhs.entries)
            .map(|(a, b)| fold(&(a.clone() - b.clone())))
            .collect();
        ExprMatrix::new(self.rows, self.cols, entries)
    }
}

/// Lie derivative of a scalar along a vector field: `sum_i dh/dx_i * f_i`.
pub fn lie_derivative(h: &Expr, f: &VectorField) -> Expr {
    sum(f
        .states
        .iter()
        .zip(&f.components)
        .map(|(x, fi)| diff(h, x) * fi.clone()))
}

/// `k`-fold Lie derivative; `k = 0` returns `h` unchanged.
pub fn lie_derivative_iter(h: &Expr, f: &VectorField, k: usize) -> Expr {
    let mut acc = h.clone();
    for _ in 0..k {
        acc = lie_derivative(&acc, f);
    }
    acc
}

/// Row vector `L_g h` for a matrix of input columns: entry `j` is the Lie
/// derivative of `h` along column `j` of `g`.
pub fn lie_derivative_matrix(h: &Expr, states: &[String], g: &ExprMatrix) -> Vec<Expr> {
    assert_eq!(states.len(), g.nrows(), "g row count must match state count");
    let grads: Vec<Expr> = states.iter().map(|x| diff(h, x)).collect();
    (0..g.ncols())
        .map(|j| sum((0..g.nrows()).map(|i| grads[i].clone() * g.get(i, j).clone())))
        .collect()
}

/// Jacobian matrix: entry `(i, j)` is the partial of component `i` with
/// respect to state `j`.
pub fn jacobian(f: &VectorField) -> ExprMatrix {
    let mut rows = Vec::with_capacity(f.dim());
    for c in &f.components {
        rows.push(f.states.iter().map(|x| diff(c, x)).collect());
    }
    ExprMatrix::from_rows(rows)
}

/// Lie bracket `[f, g] = (dg/dx) f - (df/dx) g`.
pub fn lie_bracket(f: &VectorField, g: &VectorField) -> Result<VectorField, CalculusError> {
    if f.states != g.states {
        return Err(CalculusError::StateSpaceMismatch);
    }
    let jg_f = jacobian(g).mul_vector(&f.components);
    let jf_g = jacobian(f).mul_vector(&g.components);
    let components = jg_f
        .into_iter()
        .zip(jf_g)
        .map(|(a, b)| fold(&(a - b)))
        .collect();
    Ok(VectorField {
        states: f.states.clone(),
        inputs: Vec::new(),
        components,
    })
}

/// Repeated bracketing `ad_f^k g`; `k = 0` returns `g`.
pub fn ad_iter(f: &VectorField, g: &VectorField, k: usize) -> Result<VectorField, CalculusError> {
    let mut acc = g.clone();
    for _ in 0..k {
        acc = lie_bracket(f, &acc)?;
    }
    Ok(acc)
}

/// Symbolic determinant by Laplace expansion along the first row.
pub fn det_symbolic(m: &ExprMatrix) -> Result<Expr, CalculusError> {
    if m.nrows() != m.ncols() {
        return Err(CalculusError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(det_rec(m))
}

fn det_rec(m: &ExprMatrix) -> Expr {
    let n = m.nrows();
    match n {
        0 => Expr::one(),
        1 => m.get(0, 0).clone(),
        2 => fold(
            &(m.get(0, 0).clone() * m.get(1, 1).clone()
                - m.get(0, 1).clone() * m.get(1, 0).clone()),
        ),
        _ => {
            let mut terms = Vec::with_capacity(n);
            for j in 0..n {
                let minor = minor_matrix(m, 0, j);
                let term = m.get(0, j).clone() * det_rec(&minor);
                terms.push(if j % 2 == 0 { term } else { -term });
            }
            sum(terms)
        }
    }
}

fn minor_matrix(m: &ExprMatrix, drop_row: usize, drop_col: usize) -> ExprMatrix {
    let mut rows = Vec::with_capacity(m.nrows() - 1);
    for i in 0..m.nrows() {
        if i == drop_row {
            continue;
        }
        let mut row = Vec::with_capacity(m.ncols() - 1);
        for j in 0..m.ncols() {
            if j == drop_col {
                continue;
            }
            row.push(m.get(i, j).clone());
        }
        rows.push(row);
    }
    ExprMatrix::from_rows(rows)
}

/// Symbolic inverse of a square matrix.
///
/// Constant matrices are inverted numerically (exact LU in doubles); symbolic
/// matrices up to 4x4 use the adjugate formula, with each entry a quotient by
/// the symbolic determinant. Larger symbolic matrices are unsupported — the
/// synthesis laws only ever need the inverse evaluated along trajectories,
/// and the pointwise fallback lives there.
pub fn invert_symbolic(m: &ExprMatrix) -> Result<ExprMatrix, CalculusError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(CalculusError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if let Some(num) = m.as_constant() {
        let inv = num
            .try_inverse()
            .ok_or(CalculusError::SingularConstantMatrix)?;
        return Ok(ExprMatrix::from_numeric(&inv));
    }
    if n > 4 {
        return Err(CalculusError::SymbolicInverseUnsupported(n));
    }
    let det = det_rec(m);
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            // adjugate: entry (i, j) is the (j, i) cofactor
            let cof = det_rec(&minor_matrix(m, j, i));
            let signed = if (i + j) % 2 == 0 { cof } else { -cof };
            entries.push(fold(&(signed / det.clone())));
        }
    }
    Ok(ExprMatrix::new(n, n, entries))
}

/// The modified drift and input fields of the global normal-form hypotheses:
/// `f~ = f - g A^{-1} [L_f^{r_i} h_i]` and `g~ = g A^{-1}`.
///
/// Requires the decoupling matrix to be constant (any size) or symbolically
/// invertible (up to 4x4).
pub fn tilde_fields(
    sys: &AffineSystem,
    profile: &RelativeDegreeProfile,
) -> Result<(VectorField, ExprMatrix), CalculusError> {
    let a_inv = invert_symbolic(profile.a())?;
    let g_tilde = sys.g().mul_matrix(&a_inv).map(|e| fold(e));

    let chain_tops = profile.chain_top_derivatives(sys);
    let correction = g_tilde.mul_vector(&chain_tops);
    let components: Vec<Expr> = sys
        .f()
        .components()
        .iter()
        .zip(correction)
        .map(|(fi, ci)| fold(&(fi.clone() - ci)))
        .collect();
    let f_tilde = VectorField::new(sys.states().to_vec(), components)?;
    Ok((f_tilde, g_tilde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn vf(states: &[&str], comps: &[&str]) -> VectorField {
        VectorField::new(
            states.iter().map(|s| s.to_string()).collect(),
            comps.iter().map(|c| parse(c).unwrap()).collect(),
        )
        .unwrap()
    }

    fn assign(pairs: &[(&str, f64)]) -> Assignment {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn lie_derivative_double_integrator() {
        let f = vf(&["x1", "x2"], &["x2", "0"]);
        assert_eq!(lie_derivative(&Expr::var("x1"), &f), Expr::var("x2"));
    }

    #[test]
    fn lie_derivative_demo_plant_chain() {
        // drift of the shipped demo plant
        let f = vf(
            &["z", "xi1", "xi2", "xi3"],
            &["-z - z^3 + xi1^2", "sin(z)", "xi3", "xi1 + xi2^2 + xi3"],
        );
        assert_eq!(lie_derivative(&Expr::var("xi2"), &f), Expr::var("xi3"));
        let l2 = lie_derivative_iter(&Expr::var("xi2"), &f, 2);
        assert_eq!(l2, parse("xi1 + xi2^2 + xi3").unwrap());
    }

    #[test]
    fn lie_derivative_iter_edges() {
        let f = vf(&["x1", "x2"], &["x2", "0"]);
        let h = Expr::var("x1");
        assert_eq!(lie_derivative_iter(&h, &f, 0), h);
        assert_eq!(lie_derivative_iter(&h, &f, 2), Expr::zero());
    }

    #[test]
    fn jacobian_examples() {
        let f = vf(&["x1", "x2"], &["x2", "0"]);
        let j = jacobian(&f);
        assert_eq!(j.row(0), vec![Expr::zero(), Expr::one()]);
        assert_eq!(j.row(1), vec![Expr::zero(), Expr::zero()]);

        let constant = vf(&["x1", "x2"], &["3", "-1"]);
        assert_eq!(jacobian(&constant), ExprMatrix::zeros(2, 2));

        let demo = vf(
            &["z", "xi1", "xi2", "xi3"],
            &["-z - z^3 + xi1^2", "sin(z)", "xi3", "xi1 + xi2^2 + xi3"],
        );
        let j = jacobian(&demo);
        // row 1 of the Jacobian: [-1 - 3z^2, 2 xi1, 0, 0]
        let a = assign(&[("z", 2.0), ("xi1", 5.0), ("xi2", 0.0), ("xi3", 0.0)]);
        assert_eq!(eval(j.get(0, 0), &a).unwrap(), -13.0);
        assert_eq!(eval(j.get(0, 1), &a).unwrap(), 10.0);
        assert_eq!(*j.get(0, 2), Expr::zero());
        assert_eq!(*j.get(0, 3), Expr::zero());
    }

    #[test]
    fn lie_bracket_examples() {
        let f = vf(&["x1", "x2"], &["x2", "0"]);
        let g = vf(&["x1", "x2"], &["0", "1"]);
        let b = lie_bracket(&f, &g).unwrap();
        assert_eq!(b.components(), &[Expr::constant(-1.0), Expr::zero()]);

        let c1 = vf(&["x1", "x2"], &["2", "-3"]);
        let c2 = vf(&["x1", "x2"], &["5", "7"]);
        let b = lie_bracket(&c1, &c2).unwrap();
        assert_eq!(b.components(), &[Expr::zero(), Expr::zero()]);

        let g1 = vf(&["x1", "x2", "x3"], &["1", "0", "0"]);
        let g2 = vf(&["x1", "x2", "x3"], &["0", "1", "x1"]);
        let b = lie_bracket(&g1, &g2).unwrap();
        assert_eq!(b.components(), &[Expr::zero(), Expr::zero(), Expr::one()]);
    }

    #[test]
    fn ad_iter_examples() {
        let f = vf(&["x1", "x2"], &["x2", "0"]);
        let g = vf(&["x1", "x2"], &["0", "1"]);
        assert_eq!(ad_iter(&f, &g, 0).unwrap(), g);
        assert_eq!(ad_iter(&f, &g, 1).unwrap(), lie_bracket(&f, &g).unwrap());
        let k2 = ad_iter(&f, &g, 2).unwrap();
        assert_eq!(k2.components(), &[Expr::zero(), Expr::zero()]);
    }

    #[test]
    fn leibniz_rule_pointwise() {
        let f = vf(&["x", "y"], &["x*y - 1", "y^2 + x"]);
        let h1 = parse("sin(x) + y^2").unwrap();
        let h2 = parse("x^3 - y").unwrap();
        let lhs = lie_derivative(&(h1.clone() * h2.clone()), &f);
        let rhs = h1.clone() * lie_derivative(&h2, &f) + h2.clone() * lie_derivative(&h1, &f);
        let mut rng = crate::sample::seeded_rng(11);
        let domain = crate::sample::BoxDomain::symmetric(2.0, 2);
        for _ in 0..20 {
            let pt = domain.sample(&mut rng);
            let a = assign(&[("x", pt[0]), ("y", pt[1])]);
            let l = eval(&lhs, &a).unwrap();
            let r = eval(&rhs, &a).unwrap();
            assert!((l - r).abs() <= 1e-9 * (1.0 + l.abs()), "{l} vs {r}");
        }
    }

    #[test]
    fn symbolic_inverse_2x2() {
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::var("x"), Expr::one()],
            vec![Expr::zero(), Expr::constant(2.0)],
        ]);
        let inv = invert_symbolic(&m).unwrap();
        let a = assign(&[("x", 3.0)]);
        let num = m.eval_at(&a).unwrap();
        let num_inv = inv.eval_at(&a).unwrap();
        let prod = num * num_inv;
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_inverse_is_numeric() {
        let m = ExprMatrix::from_rows(vec![
            vec![Expr::constant(2.0), Expr::zero()],
            vec![Expr::zero(), Expr::constant(4.0)],
        ]);
        let inv = invert_symbolic(&m).unwrap();
        assert_eq!(*inv.get(0, 0), Expr::constant(0.5));
        assert_eq!(*inv.get(1, 1), Expr::constant(0.25));

        let singular = ExprMatrix::zeros(2, 2);
        assert!(matches!(
            invert_symbolic(&singular),
            Err(CalculusError::SingularConstantMatrix)
        ));
    }

    #[test]
    fn symbolic_inverse_unsupported_beyond_4() {
        let mut m = ExprMatrix::identity(5);
        *m.get_mut(0, 0) = Expr::var("x");
        assert!(matches!(
            invert_symbolic(&m),
            Err(CalculusError::SymbolicInverseUnsupported(5))
        ));
    }

    #[test]
    fn vector_field_rejects_undeclared_vars() {
        let err = VectorField::new(
            vec!["x".to_string()],
            vec![parse("x + u").unwrap()],
        )
        .unwrap_err();
        assert!(matches!(err, CalculusError::UndeclaredVariable { name, .. } if name == "u"));
    }
}
