//! Backward-Euler integration of the gradient flow of `F` with an inner Newton
//! solver, at fixed or adaptive time step.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{SqrtDesign, Vandermonde};
use crate::diagnostics::kkt_from_gradient;
use crate::error::{Error, Result};
use crate::kernel::{self, WeightedOnb};
use crate::linalg::{self, UNIT_ROUNDOFF};
use crate::regularization::KernelProjector;
use crate::step::{self, HessianOptions, StepFactor, StepSystem};

/// Components smaller than this fraction of `‖z‖∞` are set to zero after an
/// accepted step, so they cannot underflow and flip sign later.
pub const SNAP_RELATIVE: f64 = 1e-150;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub tau0: f64,
    /// Growth factor applied to τ after an accepted step.
    pub alpha: f64,
    /// Shrink factor applied to τ after a failed step.
    pub beta: f64,
    pub eps: f64,
    pub r_max: usize,
    pub n_step: usize,
    /// Tolerance on `‖∇F‖∞`; `None` means `1e-13 · √M`.
    pub toll: Option<f64>,
    pub max_restarts: usize,
    /// When the step Hessian is indefinite, retry the Newton step with `μI`
    /// added and accept it only if `g` decreases, instead of failing.
    pub damped: bool,
    pub hessian: HessianOptions,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            tau0: 1.0,
            alpha: 1.15,
            beta: 1.0 / 1.15,
            eps: 1e-4,
            r_max: 5,
            n_step: 500,
            toll: None,
            max_restarts: 30,
            damped: false,
            hessian: HessianOptions::default(),
        }
    }
}

impl FlowParams {
    /// Constant time step. Without a shrinking τ to fall back on, indefinite
    /// step Hessians are handled by damping.
    pub fn fixed(tau: f64) -> Self {
        FlowParams { tau0: tau, alpha: 1.0, beta: 1.0, r_max: 50, damped: true, ..Default::default() }
    }

    pub fn toll_for(&self, m: usize) -> f64 {
        self.toll.unwrap_or(1e-13 * (m as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.alpha >= 1.0) {
            return bad("alpha must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta must lie in (0, 1]");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.r_max == 0 {
            return bad("r_max must be at least 1");
        }
        if let Some(t) = self.toll {
            if !(t > 0.0) {
                return bad("toll must be positive");
            }
        }
        Ok(())
    }
}

/// One accepted outer step (row 0 describes the starting point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub tau: f64,
    pub step_norm: f64,
    pub grad_inf: f64,
    pub kkt_residual: f64,
    pub newton_iters: usize,
    pub restarts: usize,
    pub energy: f64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub rows: Vec<TraceRow>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FlowTrace> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?;
        Ok(FlowTrace { rows })
    }
}

/// Final state of a flow run. Also carried by the non-convergence errors.
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    pub z: SqrtDesign,
    pub trace: FlowTrace,
    pub converged: bool,
    /// Time step that the next outer step would use.
    pub tau: f64,
}

impl FlowOutcome {
    pub fn steps(&self) -> usize {
        self.trace.last().map_or(0, |r| r.k)
    }

    pub fn grad_inf(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.grad_inf)
    }
}

/// The energy being minimized: `F`, or `F_η = F + η ‖π_K s(z)‖²`.
#[derive(Clone, Copy)]
pub struct Objective<'a> {
    vm: &'a Vandermonde,
    v: &'a DMatrix<f64>,
    penalty: Option<(f64, &'a KernelProjector)>,
}

/// Value and derivatives of the objective at one point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub onb: WeightedOnb,
    pub bergman: DVector<f64>,
    /// `∂_i E + 2η (π_K w)_i`, the gradient of the energy in `w`.
    pub grad_e: DVector<f64>,
    /// Gradient in `z`.
    pub grad: DVector<f64>,
    pub value: f64,
    pub proj_w: Option<DVector<f64>>,
}

impl<'a> Objective<'a> {
    pub fn energy_f(v: &'a Vandermonde) -> Self {
        Objective { vm: v, v: v.values(), penalty: None }
    }

    pub fn regularized(v: &'a Vandermonde, eta: f64, projector: &'a KernelProjector) -> Self {
        let penalty = if eta > 0.0 && projector.kernel_dim() > 0 { Some((eta, projector)) } else { None };
        Objective { vm: v, v: v.values(), penalty }
    }

    pub fn eta(&self) -> f64 {
        self.penalty.map_or(0.0, |(e, _)| e)
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn evaluate(&self, z: &SqrtDesign) -> Result<Evaluation> {
        let onb = kernel::onb_from_matrix(self.v, z)?;
        let n = onb.n();
        let bergman = kernel::bergman(&onb);
        let mut grad_e = kernel::grad_e_from_bergman(&bergman, n);
        let mut value = -onb.logdet() / n as f64 + z.values().norm_squared();
        let mut proj_w = None;
        if let Some((eta, p)) = self.penalty {
            let w = z.values().map(|v| v * v);
            let pw = p.apply(&w);
            value += eta * pw.norm_squared();
            grad_e.axpy(2.0 * eta, &pw, 1.0);
            proj_w = Some(pw);
        }
        let grad = kernel::grad_f_from_grad_e(z, &grad_e);
        Ok(Evaluation { onb, bergman, grad_e, grad, value, proj_w })
    }

    fn step_system<'b>(&'b self, eval: &'b Evaluation, z: &'b DVector<f64>, tau: f64) -> StepSystem<'b> {
        StepSystem {
            vtilde: eval.onb.values(),
            z,
            grad_e: &eval.grad_e,
            tau,
            penalty: self.penalty.map(|(eta, p)| (eta, p.range())),
            range: Some(match self.penalty {
                Some((_, p)) => p.range(),
                None => self.vm.phi2_range(),
            }),
        }
    }

    /// Dense `Hess F` (or `Hess F_η`) at an evaluated point.
    pub fn hessian(&self, eval: &Evaluation, z: &SqrtDesign, exec: linalg::Execution) -> DMatrix<f64> {
        let sys = self.step_system(eval, z.values(), f64::INFINITY);
        sys.assemble_dense(exec)
    }

    /// KKT residual of the energy in `w` at an evaluated point.
    pub fn kkt(&self, eval: &Evaluation, z: &SqrtDesign) -> f64 {
        kkt_from_gradient(&z.square(), &eval.grad_e).max_residual
    }
}

/// Result of the Newton iteration for one backward-Euler step.
#[derive(Clone, Debug)]
pub struct NewtonStep {
    pub z: SqrtDesign,
    pub eval: Evaluation,
    pub iters: usize,
    pub converged: bool,
}

/// Multiple of the unit roundoff used as the noise floor of `∂_i g`.
const NOISE_FACTOR: f64 = 64.0;

/// Required shrink factor of `‖∇g‖∞` for reusing a Hessian factorization.
const CHORD_CONTRACTION: f64 = 0.1;

/// Checks the stopping rule: `|∂_i g| ≤ ε |Δz_i|` and sign preservation.
///
/// `∂_i g` cannot be evaluated below roundoff, so each comparison also accepts
/// `|∂_i g| ≤ 64 u · scale_i` with `scale_i` the magnitude of the terms that
/// make up `∂_i g`. This covers `Δz_i = 0` as well as increments that have
/// themselves reached roundoff.
fn newton_converged(grad_g: &DVector<f64>, z_new: &DVector<f64>, z_old: &DVector<f64>, eval: &Evaluation, tau: f64, eps: f64) -> bool {
    let n = eval.onb.n() as f64;
    for i in 0..z_new.len() {
        let dz = z_new[i] - z_old[i];
        let zi = z_new[i].abs();
        let scale = eval.grad[i].abs() + 2.0 * zi * (1.0 + eval.bergman[i] / n) + (zi + z_old[i].abs()) / tau;
        let ok = grad_g[i].abs() <= (eps * dz.abs()).max(NOISE_FACTOR * UNIT_ROUNDOFF * scale);
        if !ok || sign(z_new[i]) != sign(z_old[i]) {
            return false;
        }
    }
    true
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Approximately minimizes `g(z) = F(z) + ‖z − z_old‖² / (2τ)` by Newton's method
/// started at `z_old`.
///
/// A factorization is reused for the next iteration while it keeps shrinking
/// `‖∇g‖∞` by at least `CHORD_CONTRACTION`; otherwise the Hessian is refactored.
pub fn newton_inner(
    obj: &Objective<'_>,
    z_old: &SqrtDesign,
    eval_old: &Evaluation,
    tau: f64,
    p: &FlowParams,
) -> Result<NewtonStep> {
    let zo = z_old.values();
    let mut z = zo.clone();
    let mut eval = eval_old.clone();
    let mut iters = 0;
    let mut cached: Option<StepFactor> = None;
    let mut prev_norm = f64::INFINITY;
    loop {
        let grad_g = &eval.grad + (&z - zo) / tau;
        if newton_converged(&grad_g, &z, zo, &eval, tau, p.eps) {
            return Ok(NewtonStep { z: SqrtDesign::new(z), eval, iters, converged: true });
        }
        if iters == p.r_max {
            return Ok(NewtonStep { z: SqrtDesign::new(z), eval, iters, converged: false });
        }
        let norm = grad_g.amax();
        if norm > CHORD_CONTRACTION * prev_norm {
            cached = None;
        }
        prev_norm = norm;
        let fac = match cached.take() {
            Some(f) => Ok(f),
            None => step::factor(&obj.step_system(&eval, &z, tau), &p.hessian),
        };
        match fac {
            Ok(fac) => {
                z -= fac.solve(&grad_g);
                zero_pinned(&mut z, zo);
                eval = obj.evaluate(&SqrtDesign::new(z.clone()))?;
                cached = Some(fac);
            }
            Err(Error::IndefiniteHessian { .. }) if p.damped => {
                (z, eval) = damped_step(obj, zo, &z, &eval, &grad_g, tau, &p.hessian)?;
                prev_norm = f64::INFINITY;
            }
            Err(e) => return Err(e),
        }
        iters += 1;
    }
}

fn zero_pinned(z: &mut DVector<f64>, zo: &DVector<f64>) {
    for i in 0..z.len() {
        if zo[i] == 0.0 {
            z[i] = 0.0;
        }
    }
}

/// One Levenberg–Marquardt step on `g`: the smallest `μ = 4ʲ/τ` for which
/// `Hess g + μI` factors and the step decreases `g`.
fn damped_step(
    obj: &Objective<'_>,
    zo: &DVector<f64>,
    z: &DVector<f64>,
    eval: &Evaluation,
    grad_g: &DVector<f64>,
    tau: f64,
    opts: &HessianOptions,
) -> Result<(DVector<f64>, Evaluation)> {
    let g = |value: f64, x: &DVector<f64>| value + (x - zo).norm_squared() / (2.0 * tau);
    let g0 = g(eval.value, z);
    let mut mu = 1.0 / tau;
    let mut last = Error::IndefiniteHessian { pivot: 0 };
    for _ in 0..60 {
        let tau_h = 1.0 / (1.0 / tau + mu);
        mu *= 4.0;
        let sys = obj.step_system(eval, z, tau_h);
        let fac = match step::factor(&sys, opts) {
            Ok(f) => f,
            Err(e @ Error::IndefiniteHessian { .. }) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut zc = z - fac.solve(grad_g);
        zero_pinned(&mut zc, zo);
        let ec = match obj.evaluate(&SqrtDesign::new(zc.clone())) {
            Ok(ec) => ec,
            Err(e @ Error::SupportRankDeficient { .. }) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        if g(ec.value, &zc) < g0 {
            return Ok((zc, ec));
        }
    }
    Err(last)
}

/// Constant-step integration. Any inner failure ends the run with `NonConvergence`.
pub fn solve_fixed_step(obj: &Objective<'_>, z0: &SqrtDesign, p: &FlowParams) -> Result<FlowOutcome> {
    let p = FlowParams { alpha: 1.0, beta: 1.0, ..p.clone() };
    match run(obj, z0, &p) {
        Err(Error::RestartBudgetExhausted { step, partial }) => Err(Error::NonConvergence { steps: step, partial }),
        other => other,
    }
}

/// Adaptive-step integration: τ grows by `alpha` on success and shrinks by
/// `beta` with a restart from the previous point on failure.
pub fn solve_adaptive(obj: &Objective<'_>, z0: &SqrtDesign, p: &FlowParams) -> Result<FlowOutcome> {
    run(obj, z0, p)
}

fn snap_small(z: &mut DVector<f64>) {
    let cut = SNAP_RELATIVE * linalg::norm_inf(z);
    for v in z.iter_mut() {
        if v.abs() < cut {
            *v = 0.0;
        }
    }
}

fn run(obj: &Objective<'_>, z0: &SqrtDesign, p: &FlowParams) -> Result<FlowOutcome> {
    p.validate()?;
    if z0.len() != obj.m() {
        return Err(Error::Dimension(format!("start has {} entries for {} points", z0.len(), obj.m())));
    }
    let start = Instant::now();
    let toll = p.toll_for(obj.m());
    let mut z = z0.clone();
    let mut eval = obj.evaluate(&z)?;
    let mut res = linalg::norm_inf(&eval.grad);
    if res == 0.0 {
        return Err(Error::ZeroGradientStart);
    }
    let mut trace = FlowTrace::default();
    trace.rows.push(TraceRow {
        k: 0,
        tau: p.tau0,
        step_norm: 0.0,
        grad_inf: res,
        kkt_residual: obj.kkt(&eval, &z),
        newton_iters: 0,
        restarts: 0,
        energy: eval.value,
        elapsed_s: start.elapsed().as_secs_f64(),
    });
    let mut tau = p.tau0;
    let mut k = 0;
    while k < p.n_step && res > toll {
        k += 1;
        let mut restarts = 0;
        let accepted = loop {
            let attempt = newton_inner(obj, &z, &eval, tau, p);
            let ok = match attempt {
                Ok(step) if step.converged => {
                    let slack = 64.0 * UNIT_ROUNDOFF * eval.value.abs().max(1.0);
                    if step.eval.value <= eval.value + slack {
                        Some(step)
                    } else {
                        None
                    }
                }
                Ok(_) | Err(Error::IndefiniteHessian { .. }) | Err(Error::SupportRankDeficient { .. }) => None,
                Err(e) => return Err(e),
            };
            if let Some(step) = ok {
                break step;
            }
            if p.beta == 1.0 || restarts >= p.max_restarts {
                let partial = FlowOutcome { z, trace, converged: false, tau };
                return Err(Error::RestartBudgetExhausted { step: k, partial: Box::new(partial) });
            }
            restarts += 1;
            tau *= p.beta;
        };
        let mut znew = accepted.z.values().clone();
        snap_small(&mut znew);
        let step_norm = (&znew - z.values()).norm();
        let znew = SqrtDesign::new(znew);
        let evalnew = if znew.values() == accepted.z.values() { accepted.eval } else { obj.evaluate(&znew)? };
        res = linalg::norm_inf(&evalnew.grad);
        trace.rows.push(TraceRow {
            k,
            tau,
            step_norm,
            grad_inf: res,
            kkt_residual: obj.kkt(&evalnew, &znew),
            newton_iters: accepted.iters,
            restarts,
            energy: evalnew.value,
            elapsed_s: start.elapsed().as_secs_f64(),
        });
        z = znew;
        eval = evalnew;
        tau *= p.alpha;
    }
    let converged = res <= toll;
    let outcome = FlowOutcome { z, trace, converged, tau };
    if converged {
        Ok(outcome)
    } else {
        Err(Error::NonConvergence { steps: k, partial: Box::new(outcome) })
    }
}
