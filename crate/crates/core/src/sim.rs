//! Closed-loop simulation and numerical dissipation certificates.
//!
//! Fixed-step classical RK4 on the stacked plant/uncertainty state, with the
//! interconnection wiring `u_c = y`, `w = y_c` evaluated inside every stage.
//! Every monitored quantity (output rates, storage derivatives, dissipation
//! residuals) is computed from symbolic gradients dotted with the evaluated
//! vector field at the grid point — never by differencing the stored
//! trajectory — so the per-step residual tolerances can be tight.

use std::io::Write;
use std::path::Path;

use crate::calculus::VectorField;
use crate::expr::{CompiledExpr, EvalError, Expr, SlotLayout};
use crate::structure::AffineSystem;
use crate::synthesis::{FeedbackLaw, LawForm, LawKind, UncertaintyModel};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("name `{0}` is used by more than one of: plant states, uncertainty states, auxiliary inputs, uncertainty inputs, `t`")]
    NameCollision(String),
    #[error("{what}: got {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("expression cannot be compiled for simulation: {0}")]
    Compile(#[from] EvalError),
}

/// The simulated interconnection: a plant, an optional feedback law, and an
/// optional NI uncertainty wired as `u_c = y`, `w = y_c` (the uncertainty
/// output adds to the plant input).
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: AffineSystem,
    pub law: Option<FeedbackLaw>,
    /// Scripted plant input over `t`, used when no law is installed.
    pub open_loop_u: Option<Vec<Expr>>,
    /// Scripted values over `t` for the law's auxiliary inputs (the fresh
    /// input `v` of the rendering law). Ignored when the robust law is wired
    /// to an uncertainty, which pins `w = y_c`.
    pub aux_signals: Option<Vec<Expr>>,
    pub uncertainty: Option<UncertaintyModel>,
}

impl ClosedLoop {
    pub fn new(plant: AffineSystem) -> ClosedLoop {
        ClosedLoop {
            plant,
            law: None,
            open_loop_u: None,
            aux_signals: None,
            uncertainty: None,
        }
    }

    pub fn with_law(mut self, law: FeedbackLaw) -> ClosedLoop {
        self.law = Some(law);
        self
    }

    pub fn with_uncertainty(mut self, unc: UncertaintyModel) -> ClosedLoop {
        self.uncertainty = Some(unc);
        self
    }

    pub fn with_aux_signals(mut self, signals: Vec<Expr>) -> ClosedLoop {
        self.aux_signals = Some(signals);
        self
    }

    pub fn with_open_loop_u(mut self, u: Vec<Expr>) -> ClosedLoop {
        self.open_loop_u = Some(u);
        self
    }
}

#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_final: f64,
    /// Trajectories whose sup norm exceeds this are flagged as diverged and
    /// truncated.
    pub divergence_guard: f64,
    /// When true, every step is re-taken as two half steps and the
    /// Richardson error estimate is tracked.
    pub step_doubling_check: bool,
    /// Warning threshold for the step-doubling estimate.
    pub step_warn_tol: f64,
}

impl IntegratorConfig {
    pub fn new(t_final: f64) -> IntegratorConfig {
        IntegratorConfig {
            dt: 1e-3,
            t_final,
            divergence_guard: 1e9,
            step_doubling_check: false,
            step_warn_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// Time-indexed record of a simulation run. Optional blocks (uncertainty
/// states, disturbances, storage values, residuals) are empty vectors when
/// not applicable.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub state_names: Vec<String>,
    pub unc_state_names: Vec<String>,
    pub p: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub unc_states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub output_rates: Vec<Vec<f64>>,
    pub aux_values: Vec<Vec<f64>>,
    pub storage_v: Vec<f64>,
    pub storage_v_dot: Vec<f64>,
    pub storage_w: Vec<f64>,
    pub wdot: Vec<f64>,
    pub res_osni_eq: Vec<f64>,
    pub res_osni_ineq: Vec<f64>,
    pub diverged: Option<Divergence>,
    pub max_step_error: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Sup norm over plant states (optionally also uncertainty states) at
    /// step `k`.
    pub fn state_norm(&self, k: usize, include_uncertainty: bool) -> f64 {
        let mut m = crate::sample::inf_norm(&self.states[k]);
        if include_uncertainty && !self.unc_states.is_empty() {
            m = m.max(crate::sample::inf_norm(&self.unc_states[k]));
        }
        m
    }
}

struct CompiledLaw {
    form: CompiledLawForm,
    /// original-output-indexed auxiliary slots
    aux_slots: Vec<usize>,
    robust_wired: bool,
    epsilon: f64,
    lambda: f64,
    /// permutation: sorted position -> original output index
    permutation: Vec<usize>,
    p1: usize,
}

enum CompiledLawForm {
    Symbolic(Vec<CompiledExpr>),
    Pointwise {
        a: Vec<CompiledExpr>,
        rhs: Vec<CompiledExpr>,
        p: usize,
    },
}

struct Engine {
    n: usize,
    nc: usize,
    p: usize,
    slots: Vec<f64>,
    t_slot: usize,
    xc_base: usize,
    uc_base: usize,
    f: Vec<CompiledExpr>,
    g: Vec<CompiledExpr>, // row-major n x p
    h: Vec<CompiledExpr>,
    h_jac: Vec<CompiledExpr>, // row-major p x n
    law: Option<CompiledLaw>,
    open_u: Option<Vec<CompiledExpr>>,
    aux_sig: Vec<CompiledExpr>,
    unc_f: Vec<CompiledExpr>,
    unc_h: Vec<CompiledExpr>,
    grad_v: Vec<CompiledExpr>,
    v_expr: Option<CompiledExpr>,
    grad_w: Vec<CompiledExpr>,
    w_expr: Option<CompiledExpr>,
    stack: Vec<f64>,
    // scratch for the pointwise law solve
    a_buf: Vec<f64>,
    b_buf: Vec<f64>,
}

#[derive(Default, Clone)]
struct StepRecord {
    u: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
    ydot: Vec<f64>,
    aux: Vec<f64>,
    v_val: Option<f64>,
    v_dot: Option<f64>,
    w_val: Option<f64>,
    w_dot: Option<f64>,
    res_eq: Option<f64>,
    res_ineq: Option<f64>,
}

impl Engine {
    fn build(
        cl: &ClosedLoop,
        storage_v: Option<&Expr>,
        storage_w: Option<&Expr>,
    ) -> Result<Engine, SimError> {
        let plant = &cl.plant;
        let n = plant.n();
        let p = plant.p();
        let nc = cl.uncertainty.as_ref().map_or(0, |u| u.n());

        let mut names: Vec<String> = plant.states().to_vec();
        let xc_base = names.len();
        if let Some(unc) = &cl.uncertainty {
            if unc.p() != p {
                return Err(SimError::Dimension {
                    what: "uncertainty port width",
                    got: unc.p(),
                    expected: p,
                });
            }
            names.extend(unc.states().iter().cloned());
        }
        let aux_base = names.len();
        if let Some(law) = &cl.law {
            names.extend(law.aux_names.iter().cloned());
        }
        let uc_base = names.len();
        if let Some(unc) = &cl.uncertainty {
            if unc.inputs().len() != p {
                return Err(SimError::Dimension {
                    what: "uncertainty input count",
                    got: unc.inputs().len(),
                    expected: p,
                });
            }
            names.extend(unc.inputs().iter().cloned());
        }
        let t_slot = names.len();
        names.push("t".to_string());
        {
            let mut seen = std::collections::HashSet::new();
            for name in &names {
                if !seen.insert(name.clone()) {
                    return Err(SimError::NameCollision(name.clone()));
                }
            }
        }
        let layout = SlotLayout::new(names);

        let compile = |e: &Expr| CompiledExpr::compile(e, &layout);
        let compile_vec = |es: &[Expr]| -> Result<Vec<CompiledExpr>, EvalError> {
            es.iter().map(compile).collect()
        };

        let f = compile_vec(plant.f().components())?;
        let mut g = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                g.push(compile(plant.g().get(i, j))?);
            }
        }
        let h = compile_vec(plant.h())?;
        let mut h_jac = Vec::with_capacity(p * n);
        for hi in plant.h() {
            for x in plant.states() {
                h_jac.push(compile(&crate::expr::diff(hi, x))?);
            }
        }

        let law = match &cl.law {
            None => None,
            Some(law) => {
                let aux_slots: Vec<usize> = (0..law.aux_names.len())
                    .map(|i| aux_base + i)
                    .collect();
                let form = match &law.form {
                    LawForm::Symbolic(components) => {
                        if components.len() != p {
                            return Err(SimError::Dimension {
                                what: "law components",
                                got: components.len(),
                                expected: p,
                            });
                        }
                        CompiledLawForm::Symbolic(compile_vec(components)?)
                    }
                    LawForm::Pointwise { a, rhs } => {
                        let mut a_c = Vec::with_capacity(p * p);
                        for i in 0..p {
                            for j in 0..p {
                                a_c.push(compile(a.get(i, j))?);
                            }
                        }
                        CompiledLawForm::Pointwise {
                            a: a_c,
                            rhs: compile_vec(rhs)?,
                            p,
                        }
                    }
                };
                Some(CompiledLaw {
                    form,
                    aux_slots,
                    robust_wired: law.kind == LawKind::Robust && cl.uncertainty.is_some(),
                    epsilon: law.epsilon,
                    lambda: law.lambda,
                    permutation: law.profile.permutation().to_vec(),
                    p1: law.profile.p1(),
                })
            }
        };

        let aux_sig = match (&cl.law, &cl.aux_signals) {
            (Some(law), Some(signals)) => {
                if signals.len() != law.aux_names.len() {
                    return Err(SimError::Dimension {
                        what: "aux signals",
                        got: signals.len(),
                        expected: law.aux_names.len(),
                    });
                }
                compile_vec(signals)?
            }
            _ => Vec::new(),
        };

        let open_u = match &cl.open_loop_u {
            None => None,
            Some(u) => {
                if u.len() != p {
                    return Err(SimError::Dimension {
                        what: "open-loop input",
                        got: u.len(),
                        expected: p,
                    });
                }
                Some(compile_vec(u)?)
            }
        };

        let (unc_f, unc_h) = match &cl.uncertainty {
            None => (Vec::new(), Vec::new()),
            Some(unc) => (compile_vec(unc.f().components())?, compile_vec(unc.h())?),
        };

        let (v_expr, grad_v) = match storage_v {
            None => (None, Vec::new()),
            Some(v) => {
                let grads: Vec<Expr> = plant
                    .states()
                    .iter()
                    .map(|x| crate::expr::diff(v, x))
                    .collect();
                (Some(compile(v)?), compile_vec(&grads)?)
            }
        };
        let (w_expr, grad_w) = match (storage_w, &cl.uncertainty) {
            (Some(w), Some(unc)) => {
                let mut stacked: Vec<String> = plant.states().to_vec();
                stacked.extend(unc.states().iter().cloned());
                let grads: Vec<Expr> = stacked
                    .iter()
                    .map(|x| crate::expr::diff(w, x))
                    .collect();
                (Some(compile(w)?), compile_vec(&grads)?)
            }
            _ => (None, Vec::new()),
        };

        Ok(Engine {
            n,
            nc,
            p,
            slots: vec![0.0; layout.len()],
            t_slot,
            xc_base,
            uc_base,
            f,
            g,
            h,
            h_jac,
            law,
            open_u,
            aux_sig,
            unc_f,
            unc_h,
            grad_v,
            v_expr,
            grad_w,
            w_expr,
            stack: Vec::with_capacity(32),
            a_buf: vec![0.0; p * p],
            b_buf: vec![0.0; p],
        })
    }

    /// Evaluate the stacked derivative at `(t, s)`. When `record` is set,
    /// also compute outputs, rates, storage values and residuals.
    fn derivative(
        &mut self,
        t: f64,
        s: &[f64],
        ds: &mut [f64],
        record: Option<&mut StepRecord>,
    ) -> Result<(), EvalError> {
        let n = self.n;
        let nc = self.nc;
        let p = self.p;
        self.slots[..n].copy_from_slice(&s[..n]);
        self.slots[self.xc_base..self.xc_base + nc].copy_from_slice(&s[n..n + nc]);
        self.slots[self.t_slot] = t;

        // outputs
        let mut y = vec![0.0; p];
        for (i, hi) in self.h.iter().enumerate() {
            y[i] = hi.eval_with(&self.slots, &mut self.stack)?;
        }

        // uncertainty output w = y_c and input wiring u_c = y
        let mut w = vec![0.0; p];
        let has_unc = nc > 0 || !self.unc_h.is_empty();
        if has_unc {
            for (i, hc) in self.unc_h.iter().enumerate() {
                w[i] = hc.eval_with(&self.slots, &mut self.stack)?;
            }
            for i in 0..p {
                self.slots[self.uc_base + i] = y[i];
            }
        }

        // auxiliary inputs of the law
        let mut aux = Vec::new();
        if let Some(law) = &self.law {
            aux = vec![0.0; law.aux_slots.len()];
            if law.robust_wired {
                aux.copy_from_slice(&w);
            } else if !self.aux_sig.is_empty() {
                for (i, sig) in self.aux_sig.iter().enumerate() {
                    aux[i] = sig.eval_with(&self.slots, &mut self.stack)?;
                }
            }
            for (i, &slot) in law.aux_slots.iter().enumerate() {
                self.slots[slot] = aux[i];
            }
        }

        // plant input
        let mut u = vec![0.0; p];
        if let Some(law) = &self.law {
            match &law.form {
                CompiledLawForm::Symbolic(components) => {
                    for (i, c) in components.iter().enumerate() {
                        u[i] = c.eval_with(&self.slots, &mut self.stack)?;
                    }
                }
                CompiledLawForm::Pointwise { a, rhs, p } => {
                    for (k, e) in a.iter().enumerate() {
                        self.a_buf[k] = e.eval_with(&self.slots, &mut self.stack)?;
                    }
                    for (k, e) in rhs.iter().enumerate() {
                        self.b_buf[k] = e.eval_with(&self.slots, &mut self.stack)?;
                    }
                    gauss_solve(&mut self.a_buf, &mut self.b_buf, *p)
                        .ok_or(EvalError::DivisionByZero)?;
                    u.copy_from_slice(&self.b_buf[..*p]);
                }
            }
        } else if let Some(open) = &self.open_u {
            for (i, e) in open.iter().enumerate() {
                u[i] = e.eval_with(&self.slots, &mut self.stack)?;
            }
        }

        // plant derivative: f + g (u + w)
        let mut u_eff = vec![0.0; p];
        for i in 0..p {
            u_eff[i] = u[i] + if has_unc { w[i] } else { 0.0 };
        }
        for i in 0..n {
            let mut dx = self.f[i].eval_with(&self.slots, &mut self.stack)?;
            for j in 0..p {
                dx += self.g[i * p + j].eval_with(&self.slots, &mut self.stack)? * u_eff[j];
            }
            ds[i] = dx;
        }
        // uncertainty derivative
        for k in 0..nc {
            ds[n + k] = self.unc_f[k].eval_with(&self.slots, &mut self.stack)?;
        }

        if let Some(rec) = record {
            let mut ydot = vec![0.0; p];
            for i in 0..p {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += self.h_jac[i * n + j].eval_with(&self.slots, &mut self.stack)? * ds[j];
                }
                ydot[i] = acc;
            }
            let mut v_val = None;
            let mut v_dot = None;
            if let Some(v) = &self.v_expr {
                v_val = Some(v.eval_with(&self.slots, &mut self.stack)?);
                let mut acc = 0.0;
                for j in 0..n {
                    acc += self.grad_v[j].eval_with(&self.slots, &mut self.stack)? * ds[j];
                }
                v_dot = Some(acc);
            }
            let mut w_val = None;
            let mut w_dot = None;
            if let Some(wst) = &self.w_expr {
                w_val = Some(wst.eval_with(&self.slots, &mut self.stack)?);
                let mut acc = 0.0;
                for j in 0..n + nc {
                    acc += self.grad_w[j].eval_with(&self.slots, &mut self.stack)? * ds[j];
                }
                w_dot = Some(acc);
            }

            let mut res_eq = None;
            let mut res_ineq = None;
            if let (Some(law), Some(vd)) = (&self.law, v_dot) {
                // pairing of the law's fresh input with the output rate
                let pair: f64 = aux.iter().zip(&ydot).map(|(a, yd)| a * yd).sum();
                let mut xi1_rate_sq = 0.0;
                let mut xi2_rate_sq = 0.0;
                for (k, &orig) in law.permutation.iter().enumerate() {
                    let r = ydot[orig] * ydot[orig];
                    if k < law.p1 {
                        xi1_rate_sq += r;
                    } else {
                        xi2_rate_sq += r;
                    }
                }
                let ydot_sq: f64 = ydot.iter().map(|v| v * v).sum();
                res_eq = Some(vd - pair + xi1_rate_sq + law.lambda * xi2_rate_sq);
                res_ineq = Some(pair - law.epsilon * ydot_sq - vd);
            }

            rec.u = u;
            rec.w = if has_unc { w } else { Vec::new() };
            rec.y = y;
            rec.ydot = ydot;
            rec.aux = aux;
            rec.v_val = v_val;
            rec.v_dot = v_dot;
            rec.w_val = w_val;
            rec.w_dot = w_dot;
            rec.res_eq = res_eq;
            rec.res_ineq = res_ineq;
        }
        Ok(())
    }
}

/// In-place partial-pivot Gaussian elimination; `a` is row-major `p x p`,
/// `b` the right-hand side, solution left in `b`.
fn gauss_solve(a: &mut [f64], b: &mut [f64], p: usize) -> Option<()> {
    for col in 0..p {
        let mut pivot = col;
        for row in col + 1..p {
            if a[row * p + col].abs() > a[pivot * p + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * p + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..p {
                a.swap(col * p + j, pivot * p + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * p + col];
        for row in col + 1..p {
            let factor = a[row * p + col] / d;
            if factor == 0.0 {
                continue;
            }
            for j in col..p {
                a[row * p + j] -= factor * a[col * p + j];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..p).rev() {
        let mut acc = b[col];
        for j in col + 1..p {
            acc -= a[col * p + j] * b[j];
        }
        b[col] = acc / a[col * p + col];
    }
    Some(())
}

/// Integrate the closed loop from `(x0, xc0)` on a uniform grid.
///
/// `storage_v` (a function of the plant state) and `storage_w` (plant plus
/// uncertainty state) enable the dissipation monitors. Divergence beyond the
/// guard and evaluation domain errors truncate the trajectory and set the
/// `diverged` flag; everything recorded up to that step is kept.
pub fn integrate(
    cl: &ClosedLoop,
    x0: &[f64],
    xc0: &[f64],
    cfg: &IntegratorConfig,
    storage_v: Option<&Expr>,
    storage_w: Option<&Expr>,
) -> Result<Trajectory, SimError> {
    assert!(cfg.dt > 0.0, "dt must be positive");
    assert!(cfg.t_final >= cfg.dt, "t_final must be at least dt");
    if x0.len() != cl.plant.n() {
        return Err(SimError::Dimension {
            what: "x0",
            got: x0.len(),
            expected: cl.plant.n(),
        });
    }
    let nc = cl.uncertainty.as_ref().map_or(0, |u| u.n());
    if xc0.len() != nc {
        return Err(SimError::Dimension {
            what: "xc0",
            got: xc0.len(),
            expected: nc,
        });
    }

    let mut engine = Engine::build(cl, storage_v, storage_w)?;
    let n = engine.n;
    let dim = n + nc;
    let steps = (cfg.t_final / cfg.dt).round() as usize;

    let mut traj = Trajectory {
        dt: cfg.dt,
        state_names: cl.plant.states().to_vec(),
        unc_state_names: cl
            .uncertainty
            .as_ref()
            .map_or(Vec::new(), |u| u.states().to_vec()),
        p: cl.plant.p(),
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        unc_states: Vec::with_capacity(if nc > 0 { steps + 1 } else { 0 }),
        inputs: Vec::with_capacity(steps + 1),
        disturbances: Vec::new(),
        outputs: Vec::with_capacity(steps + 1),
        output_rates: Vec::with_capacity(steps + 1),
        aux_values: Vec::new(),
        storage_v: Vec::new(),
        storage_v_dot: Vec::new(),
        storage_w: Vec::new(),
        wdot: Vec::new(),
        res_osni_eq: Vec::new(),
        res_osni_ineq: Vec::new(),
        diverged: None,
        max_step_error: None,
        epsilon: cl.law.as_ref().map(|l| l.epsilon),
        lambda: cl.law.as_ref().map(|l| l.lambda),
    };

    let mut s: Vec<f64> = x0.iter().chain(xc0.iter()).copied().collect();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut max_step_err: Option<f64> = None;
    let dt = cfg.dt;

    let mut ds = vec![0.0; dim];
    for step in 0..=steps {
        let t = step as f64 * dt;
        let mut rec = StepRecord::default();
        if let Err(e) = engine.derivative(t, &s, &mut ds, Some(&mut rec)) {
            traj.diverged = Some(Divergence {
                step,
                reason: format!("evaluation error at t = {t}: {e}"),
            });
            break;
        }

        traj.times.push(t);
        traj.states.push(s[..n].to_vec());
        if nc > 0 {
            traj.unc_states.push(s[n..].to_vec());
            traj.disturbances.push(rec.w);
        }
        traj.inputs.push(rec.u);
        traj.outputs.push(rec.y);
        traj.output_rates.push(rec.ydot);
        if !rec.aux.is_empty() {
            traj.aux_values.push(rec.aux);
        }
        if let Some(v) = rec.v_val {
            traj.storage_v.push(v);
            traj.storage_v_dot.push(rec.v_dot.unwrap());
        }
        if let Some(w) = rec.w_val {
            traj.storage_w.push(w);
            traj.wdot.push(rec.w_dot.unwrap());
        }
        if let Some(r) = rec.res_eq {
            traj.res_osni_eq.push(r);
            traj.res_osni_ineq.push(rec.res_ineq.unwrap());
        }

        if step == steps {
            break;
        }

        k1.copy_from_slice(&ds);
        let stage = |engine: &mut Engine,
                     t: f64,
                     base: &[f64],
                     k_in: &[f64],
                     h: f64,
                     tmp: &mut [f64],
                     k_out: &mut [f64]|
         -> Result<(), EvalError> {
            for i in 0..base.len() {
                tmp[i] = base[i] + h * k_in[i];
            }
            engine.derivative(t, tmp, k_out, None)
        };
        let result = stage(&mut engine, t + 0.5 * dt, &s, &k1, 0.5 * dt, &mut tmp, &mut k2)
            .and_then(|_| stage(&mut engine, t + 0.5 * dt, &s, &k2, 0.5 * dt, &mut tmp, &mut k3))
            .and_then(|_| stage(&mut engine, t + dt, &s, &k3, dt, &mut tmp, &mut k4));
        if let Err(e) = result {
            traj.diverged = Some(Divergence {
                step: step + 1,
                reason: format!("evaluation error inside step starting at t = {t}: {e}"),
            });
            break;
        }

        let mut next = vec![0.0; dim];
        for i in 0..dim {
            next[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        if cfg.step_doubling_check {
            if let Some(err) = step_doubling_error(&mut engine, t, &s, dt) {
                max_step_err = Some(max_step_err.map_or(err, |m: f64| m.max(err)));
            }
        }

        let norm = crate::sample::inf_norm(&next);
        if !norm.is_finite() || norm > cfg.divergence_guard {
            traj.diverged = Some(Divergence {
                step: step + 1,
                reason: format!("state norm {norm:.3e} exceeded the divergence guard at t = {:.6}", t + dt),
            });
            break;
        }
        s = next;
    }

    traj.max_step_error = max_step_err;
    Ok(traj)
}

/// One full step vs. two half steps, Richardson-scaled for RK4.
fn step_doubling_error(engine: &mut Engine, t: f64, s: &[f64], dt: f64) -> Option<f64> {
    let full = rk4_step(engine, t, s, dt)?;
    let half = rk4_step(engine, t, s, 0.5 * dt)?;
    let half2 = rk4_step(engine, t + 0.5 * dt, &half, 0.5 * dt)?;
    let err = full
        .iter()
        .zip(&half2)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Some(err / 15.0)
}

fn rk4_step(engine: &mut Engine, t: f64, s: &[f64], dt: f64) -> Option<Vec<f64>> {
    let dim = s.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    engine.derivative(t, s, &mut k1, None).ok()?;
    for i in 0..dim {
        tmp[i] = s[i] + 0.5 * dt * k1[i];
    }
    engine.derivative(t + 0.5 * dt, &tmp, &mut k2, None).ok()?;
    for i in 0..dim {
        tmp[i] = s[i] + 0.5 * dt * k2[i];
    }
    engine.derivative(t + 0.5 * dt, &tmp, &mut k3, None).ok()?;
    for i in 0..dim {
        tmp[i] = s[i] + dt * k3[i];
    }
    engine.derivative(t + dt, &tmp, &mut k4, None).ok()?;
    Some(
        (0..dim)
            .map(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// monitors

/// Summary of the dissipation residuals recorded along a trajectory.
#[derive(Debug, Clone)]
pub struct OsniSummary {
    /// Max of `|Vdot - v' ydot + |xi1dot|^2 + lambda |xi2dot|^2|` — the
    /// rendered loop satisfies this as an equality, not just an inequality.
    pub max_eq_residual: f64,
    /// Max violation of `v' ydot - eps |ydot|^2 - Vdot >= 0`.
    pub max_ineq_violation: f64,
    pub steps: usize,
}

pub fn monitor_osni(traj: &Trajectory) -> OsniSummary {
    let max_eq = traj
        .res_osni_eq
        .iter()
        .fold(0.0_f64, |m, r| m.max(r.abs()));
    let max_violation = traj
        .res_osni_ineq
        .iter()
        .fold(0.0_f64, |m, r| m.max(-r));
    OsniSummary {
        max_eq_residual: max_eq,
        max_ineq_violation: max_violation.max(0.0),
        steps: traj.res_osni_eq.len(),
    }
}

#[derive(Debug, Clone)]
pub struct StallWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub state_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LyapunovSummary {
    pub max_wdot: f64,
    /// Longest window where `Wdot ~ 0` while the plant state is clearly
    /// nonzero — the signature of a nonzero steady state the storage choice
    /// cannot rule out.
    pub stall: Option<StallWindow>,
}

/// Summarize the recorded `Wdot` series and scan for invariant-set stalls.
pub fn monitor_lyapunov(traj: &Trajectory, stall_tol: f64, state_tol: f64) -> LyapunovSummary {
    let max_wdot = traj
        .wdot
        .iter()
        .fold(f64::NEG_INFINITY, |m, w| m.max(*w));
    let mut best: Option<(usize, usize)> = None;
    let mut current: Option<usize> = None;
    for k in 0..traj.wdot.len() {
        let flat = traj.wdot[k].abs() <= stall_tol * (1.0 + traj.storage_w[k].abs());
        let nonzero = traj.state_norm(k, false) > state_tol;
        if flat && nonzero {
            current.get_or_insert(k);
        } else if let Some(start) = current.take() {
            if best.map_or(true, |(s, e)| k - 1 - start > e - s) {
                best = Some((start, k - 1));
            }
        }
    }
    if let Some(start) = current {
        let end = traj.wdot.len() - 1;
        if best.map_or(true, |(s, e)| end - start > e - s) {
            best = Some((start, end));
        }
    }
    // only report stalls that persist for at least 5% of the run
    let stall = best.and_then(|(s, e)| {
        if (e - s) * 20 >= traj.len() {
            Some(StallWindow {
                t_start: traj.times[s],
                t_end: traj.times[e],
                state_norm: traj.state_norm(e, false),
            })
        } else {
            None
        }
    });
    LyapunovSummary {
        max_wdot: if traj.wdot.is_empty() {
            f64::NAN
        } else {
            max_wdot
        },
        stall,
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// First entry into the tolerance ball that is never left.
    pub settling_time: Option<f64>,
    pub max_tail_norm: f64,
    pub diverged: bool,
}

/// Check that the plant state (optionally including the uncertainty state)
/// stays below `tol` over the final `window_frac` of the run.
pub fn convergence_check(
    traj: &Trajectory,
    tol: f64,
    window_frac: f64,
    include_uncertainty: bool,
) -> ConvergenceReport {
    assert!(tol > 0.0, "tolerance must be positive");
    let len = traj.len();
    if len == 0 || traj.diverged.is_some() {
        return ConvergenceReport {
            converged: false,
            settling_time: None,
            max_tail_norm: f64::INFINITY,
            diverged: traj.diverged.is_some(),
        };
    }
    let window = ((len as f64) * window_frac).ceil() as usize;
    let start = len.saturating_sub(window.max(1));
    let max_tail = (start..len)
        .map(|k| traj.state_norm(k, include_uncertainty))
        .fold(0.0_f64, f64::max);

    let mut settle_idx = None;
    for k in (0..len).rev() {
        if traj.state_norm(k, include_uncertainty) < tol {
            settle_idx = Some(k);
        } else {
            break;
        }
    }
    ConvergenceReport {
        converged: max_tail < tol,
        settling_time: settle_idx.map(|k| traj.times[k]),
        max_tail_norm: max_tail,
        diverged: false,
    }
}

// ---------------------------------------------------------------------------
// empirical ISS probe

#[derive(Debug, Clone)]
pub struct IssProbeConfig {
    pub dt: f64,
    pub t_final: f64,
    pub guard: f64,
    pub decay_rates: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub z0_scales: Vec<f64>,
    pub seed: u64,
}

impl Default for IssProbeConfig {
    fn default() -> Self {
        IssProbeConfig {
            dt: 1e-3,
            t_final: 40.0,
            guard: 1e9,
            decay_rates: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            amplitudes: vec![0.5, 1.5, 3.0],
            z0_scales: vec![0.5, 2.0, 10.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IssRun {
    pub description: String,
    pub z0: Vec<f64>,
    pub max_norm: f64,
    pub terminal_norm: f64,
    pub bounded: bool,
    /// Terminal norm below a tenth of the initial scale.
    pub decayed: bool,
}

#[derive(Debug, Clone)]
pub enum IssVerdict {
    /// Every probe stayed bounded and nothing grew — evidence only, never a
    /// proof.
    ConsistentWithIss,
    Falsified { run: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct IssReport {
    pub verdict: IssVerdict,
    pub runs: Vec<IssRun>,
}

/// Probe the user-designated internal dynamics `z' = f*(z, xi(t))` with a
/// battery of decaying inputs (a grid of decay rates and amplitudes with
/// seeded random phases) from several initial conditions.
///
/// Divergence or clear growth falsifies; anything else is merely
/// "consistent with ISS".
pub fn iss_probe(internal: &VectorField, cfg: &IssProbeConfig) -> Result<IssReport, SimError> {
    let mut rng = crate::sample::seeded_rng(cfg.seed);
    let mut scenarios = Vec::new();
    for &rate in &cfg.decay_rates {
        for &amp in &cfg.amplitudes {
            let signals: Vec<Expr> = internal
                .inputs()
                .iter()
                .map(|_| {
                    let freq = rand::Rng::gen_range(&mut rng, 0.5..3.0);
                    let phase = rand::Rng::gen_range(&mut rng, 0.0..std::f64::consts::TAU);
                    crate::testing::decaying_signal(amp, rate, freq, phase)
                })
                .collect();
            for &scale in &cfg.z0_scales {
                let z0: Vec<f64> = (0..internal.dim())
                    .map(|_| scale * rand::Rng::gen_range(&mut rng, -1.0..1.0_f64))
                    .collect();
                scenarios.push((format!("rate={rate} amp={amp} scale={scale}"), z0, signals.clone()));
            }
        }
    }

    let mut runs = Vec::new();
    let mut verdict = IssVerdict::ConsistentWithIss;
    for (i, (desc, z0, signals)) in scenarios.iter().enumerate() {
        let run = iss_probe_single(internal, z0, signals, cfg, desc.clone())?;
        if matches!(verdict, IssVerdict::ConsistentWithIss) {
            if !run.bounded {
                verdict = IssVerdict::Falsified {
                    run: i,
                    reason: format!("{desc}: diverged (max norm {:.3e})", run.max_norm),
                };
            } else if run.terminal_norm > 10.0 * (1.0 + crate::sample::inf_norm(z0)) {
                verdict = IssVerdict::Falsified {
                    run: i,
                    reason: format!(
                        "{desc}: grew from |z0| = {:.3e} to {:.3e} under a decaying input",
                        crate::sample::inf_norm(z0),
                        run.terminal_norm
                    ),
                };
            }
        }
        runs.push(run);
    }
    Ok(IssReport { verdict, runs })
}

/// A single probe run with explicit input signals (expressions over `t`).
pub fn iss_probe_single(
    internal: &VectorField,
    z0: &[f64],
    signals: &[Expr],
    cfg: &IssProbeConfig,
    description: String,
) -> Result<IssRun, SimError> {
    if signals.len() != internal.inputs().len() {
        return Err(SimError::Dimension {
            what: "probe signals",
            got: signals.len(),
            expected: internal.inputs().len(),
        });
    }
    if z0.len() != internal.dim() {
        return Err(SimError::Dimension {
            what: "probe z0",
            got: z0.len(),
            expected: internal.dim(),
        });
    }
    let mut names: Vec<String> = internal.states().to_vec();
    names.extend(internal.inputs().iter().cloned());
    names.push("t".to_string());
    {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.clone()) {
                return Err(SimError::NameCollision(n.clone()));
            }
        }
    }
    let layout = SlotLayout::new(names);
    let f: Vec<CompiledExpr> = internal
        .components()
        .iter()
        .map(|e| CompiledExpr::compile(e, &layout))
        .collect::<Result<_, _>>()?;
    let sig: Vec<CompiledExpr> = signals
        .iter()
        .map(|e| CompiledExpr::compile(e, &layout))
        .collect::<Result<_, _>>()?;

    let dim = internal.dim();
    let n_inputs = signals.len();
    let t_slot = dim + n_inputs;
    let mut slots = vec![0.0; layout.len()];
    let mut stack = Vec::with_capacity(32);
    let mut deriv = |t: f64, z: &[f64], dz: &mut [f64]| -> Result<(), EvalError> {
        slots[t_slot] = t;
        // inputs depend only on t; fill before states are read
        for k in 0..n_inputs {
            let v = sig[k].eval_with(&slots, &mut stack)?;
            slots[dim + k] = v;
        }
        slots[..dim].copy_from_slice(z);
        for i in 0..dim {
            dz[i] = f[i].eval_with(&slots, &mut stack)?;
        }
        Ok(())
    };

    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let dt = cfg.dt;
    let mut z = z0.to_vec();
    let mut max_norm = crate::sample::inf_norm(&z);
    let mut bounded = true;
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..steps {
        let t = step as f64 * dt;
        let ok = (|| -> Result<(), EvalError> {
            deriv(t, &z, &mut k1)?;
            for i in 0..dim {
                tmp[i] = z[i] + 0.5 * dt * k1[i];
            }
            deriv(t + 0.5 * dt, &tmp, &mut k2)?;
            for i in 0..dim {
                tmp[i] = z[i] + 0.5 * dt * k2[i];
            }
            deriv(t + 0.5 * dt, &tmp, &mut k3)?;
            for i in 0..dim {
                tmp[i] = z[i] + dt * k3[i];
            }
            deriv(t + dt, &tmp, &mut k4)
        })();
        if ok.is_err() {
            bounded = false;
            break;
        }
        for i in 0..dim {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let norm = crate::sample::inf_norm(&z);
        max_norm = max_norm.max(norm);
        if !norm.is_finite() || norm > cfg.guard {
            bounded = false;
            break;
        }
    }
    let terminal_norm = if bounded {
        crate::sample::inf_norm(&z)
    } else {
        f64::INFINITY
    };
    Ok(IssRun {
        description,
        z0: z0.to_vec(),
        max_norm,
        terminal_norm,
        bounded,
        decayed: bounded && terminal_norm <= 0.1 * (1.0 + crate::sample::inf_norm(z0)),
    })
}

// ---------------------------------------------------------------------------
// trajectory CSV

/// Write the trajectory in the fixed column order
/// `t, x_*, xc_*, u_*, w_*, y_*, ydot_*, V, W, res_osni_eq, res_osni_ineq,
/// Wdot`, with blocks that were not recorded omitted and declared in the
/// leading `#` manifest line.
pub fn write_csv(traj: &Trajectory, mut out: impl Write) -> std::io::Result<()> {
    let n = traj.state_names.len();
    let nc = traj.unc_state_names.len();
    let p = traj.p;
    let has_xc = !traj.unc_states.is_empty();
    let has_w = !traj.disturbances.is_empty();
    let has_v = !traj.storage_v.is_empty();
    let has_wst = !traj.storage_w.is_empty();
    let has_res = !traj.res_osni_eq.is_empty();

    let mut omitted = Vec::new();
    if !has_xc {
        omitted.push("xc");
    }
    if !has_w {
        omitted.push("w");
    }
    if !has_v {
        omitted.push("V");
    }
    if !has_wst {
        omitted.push("W");
        omitted.push("Wdot");
    }
    if !has_res {
        omitted.push("res_osni_eq");
        omitted.push("res_osni_ineq");
    }
    writeln!(
        out,
        "# trajectory n={n} nc={nc} p={p} dt={} diverged={} omitted={}",
        traj.dt,
        traj.diverged.is_some(),
        if omitted.is_empty() {
            "none".to_string()
        } else {
            omitted.join("+")
        }
    )?;

    let mut header: Vec<String> = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    if has_xc {
        header.extend((1..=nc).map(|i| format!("xc_{i}")));
    }
    header.extend((1..=p).map(|i| format!("u_{i}")));
    if has_w {
        header.extend((1..=p).map(|i| format!("w_{i}")));
    }
    header.extend((1..=p).map(|i| format!("y_{i}")));
    header.extend((1..=p).map(|i| format!("ydot_{i}")));
    if has_v {
        header.push("V".to_string());
    }
    if has_wst {
        header.push("W".to_string());
    }
    if has_res {
        header.push("res_osni_eq".to_string());
        header.push("res_osni_ineq".to_string());
    }
    if has_wst {
        header.push("Wdot".to_string());
    }
    writeln!(out, "{}", header.join(","))?;

    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for k in 0..traj.len() {
        row.clear();
        row.push(format!("{}", traj.times[k]));
        row.extend(traj.states[k].iter().map(|v| format!("{v}")));
        if has_xc {
            row.extend(traj.unc_states[k].iter().map(|v| format!("{v}")));
        }
        row.extend(traj.inputs[k].iter().map(|v| format!("{v}")));
        if has_w {
            row.extend(traj.disturbances[k].iter().map(|v| format!("{v}")));
        }
        row.extend(traj.outputs[k].iter().map(|v| format!("{v}")));
        row.extend(traj.output_rates[k].iter().map(|v| format!("{v}")));
        if has_v {
            row.push(format!("{}", traj.storage_v[k]));
        }
        if has_wst {
            row.push(format!("{}", traj.storage_w[k]));
        }
        if has_res {
            row.push(format!("{}", traj.res_osni_eq[k]));
            row.push(format!("{}", traj.res_osni_ineq[k]));
        }
        if has_wst {
            row.push(format!("{}", traj.wdot[k]));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Write the CSV atomically (temp file + rename).
pub fn save_csv(traj: &Trajectory, path: &Path) -> std::io::Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = std::fs::File::create(&tmp)?;
        let mut buf = std::io::BufWriter::new(file);
        write_csv(traj, &mut buf)?;
        buf.flush()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests;
