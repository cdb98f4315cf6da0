//! The ODE side: `Ẋ = σ(K(t) X + b(t))` on `[0, 1]`, the limit objective
//! `E_∞`, and its derivatives.
//!
//! `gradient_einf` is the exact adjoint of the discretized solve (Euler or
//! RK4), so it agrees with finite differences of `objective_einf` to
//! rounding. The exponential-kernel state derivative is kept as a separate
//! route; it is exact only when the kernels `σ̇(KX+b)⊙K` commute along the
//! trajectory (always in d = 1), which is why the objective derivative uses
//! the tangent-linear route.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_float, Table};
use crate::model::{map_samples, residual_step, Activation, ObjectiveBreakdown, TrainingProblem};
use crate::spaces::{ContinuumParams, ContinuumPath, Element, Nodal, PathEval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OdeMethod {
    #[serde(rename = "explicit-euler")]
    Euler,
    #[default]
    #[serde(rename = "rk4")]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeSolveConfig {
    pub method: OdeMethod,
    pub steps: usize,
}

impl Default for OdeSolveConfig {
    fn default() -> Self {
        OdeSolveConfig {
            method: OdeMethod::Rk4,
            steps: 1024,
        }
    }
}

impl OdeSolveConfig {
    pub fn euler(steps: usize) -> Self {
        OdeSolveConfig {
            method: OdeMethod::Euler,
            steps,
        }
    }

    pub fn rk4(steps: usize) -> Self {
        OdeSolveConfig {
            method: OdeMethod::Rk4,
            steps,
        }
    }

    /// RK4 reference for comparison with an `n`-layer network: at least
    /// `max(1024, 16 n)` steps, rounded up to a multiple of `n` so every
    /// layer time `i/n` is a solver node.
    pub fn reference_for(n: usize) -> Self {
        let per_layer = 16usize.max(1024usize.div_ceil(n));
        OdeSolveConfig::rk4(n * per_layer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("solver steps must be at least 1"));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        1.0 / self.steps as f64
    }

    fn time(&self, j: usize) -> f64 {
        j as f64 / self.steps as f64
    }

    fn mid_time(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.steps as f64
    }
}

/// States on the uniform solver grid `t_j = j / steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl ContinuumTrajectory {
    pub fn output(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory is never empty")
    }

    /// Columns `t, x1..xd`.
    pub fn to_table(&self) -> Table {
        let d = self.states[0].len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        let mut table = Table::new(header);
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_float(*t)];
            row.extend(x.iter().map(|v| fmt_float(*v)));
            table.push(row);
        }
        table
    }
}

/// `σ(K(t) x + b(t))`.
pub fn vector_field<KP, BP>(t: f64, x: &DVector<f64>, k: &KP, b: &BP, sigma: Activation) -> DVector<f64>
where
    KP: PathEval<DMatrix<f64>> + ?Sized,
    BP: PathEval<DVector<f64>> + ?Sized,
{
    sigma.apply(&(k.eval_at(t) * x + b.eval_at(t)))
}

fn check_state(x: &DVector<f64>, j: usize) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("ODE state at step {j}"),
        })
    }
}

pub fn ode_solve<KP, BP>(
    x: &DVector<f64>,
    k: &KP,
    b: &BP,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<ContinuumTrajectory>
where
    KP: PathEval<DMatrix<f64>> + ?Sized,
    BP: PathEval<DVector<f64>> + ?Sized,
{
    cfg.validate()?;
    let k0 = k.eval_at(0.0);
    if k0.nrows() != x.len() {
        return Err(Error::shape("ODE input", k0.nrows(), x.len()));
    }
    if b.eval_at(0.0).len() != x.len() {
        return Err(Error::shape("ODE bias", x.len(), b.eval_at(0.0).len()));
    }
    let h = cfg.step();
    let mut states = Vec::with_capacity(cfg.steps + 1);
    states.push(x.clone());
    for j in 0..cfg.steps {
        let cur = &states[j];
        let next = match cfg.method {
            OdeMethod::Euler => {
                let t = cfg.time(j);
                residual_step(cur, &k.eval_at(t), &b.eval_at(t), sigma, h)
            }
            OdeMethod::Rk4 => {
                let (t0, tm, t1) = (cfg.time(j), cfg.mid_time(j), cfg.time(j + 1));
                let k1 = vector_field(t0, cur, k, b, sigma);
                let k2 = vector_field(tm, &(cur + &k1 * (0.5 * h)), k, b, sigma);
                let k3 = vector_field(tm, &(cur + &k2 * (0.5 * h)), k, b, sigma);
                let k4 = vector_field(t1, &(cur + &k3 * h), k, b, sigma);
                cur + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
            }
        };
        check_state(&next, j + 1)?;
        states.push(next);
    }
    Ok(ContinuumTrajectory {
        times: (0..=cfg.steps).map(|j| cfg.time(j)).collect(),
        states,
    })
}

/// `‖v̇‖²_{L²} + τ ‖v(0)‖²`, exact for the piecewise-linear representation.
pub fn reg_continuum<E: Element>(v: &ContinuumPath<E>, tau: f64) -> f64 {
    v.derivative_energy() + tau * v.values()[0].norm_squared()
}

pub fn reg_r1inf(k: &ContinuumPath<DMatrix<f64>>, tau1: f64) -> f64 {
    reg_continuum(k, tau1)
}

pub fn reg_r2inf(b: &ContinuumPath<DVector<f64>>, tau2: f64) -> f64 {
    reg_continuum(b, tau2)
}

/// `2⟨v̇, ẇ⟩_{L²} + 2τ⟨v(0), w(0)⟩`.
pub fn reg_continuum_directional<E: Element>(v: &ContinuumPath<E>, w: &ContinuumPath<E>, tau: f64) -> f64 {
    let segments = (v.node_count() - 1) as f64;
    let (vv, ww) = (v.values(), w.values());
    let mut acc = 0.0;
    for j in 0..vv.len() - 1 {
        acc += vv[j + 1].sub(&vv[j]).dot(&ww[j + 1].sub(&ww[j]));
    }
    2.0 * segments * acc + 2.0 * tau * vv[0].dot(&ww[0])
}

/// Nodal gradient of [`reg_continuum`]: `2(N−1)` times the tridiagonal
/// stiffness action, plus `2τ v_0` at the first node.
pub fn reg_continuum_gradient<E: Element>(v: &ContinuumPath<E>, tau: f64) -> Vec<E> {
    let vals = v.values();
    let scale = 2.0 * (vals.len() - 1) as f64;
    let mut g: Vec<E> = vals.iter().map(|e| E::zeros(e.dim())).collect();
    for j in 0..vals.len() - 1 {
        let jump = vals[j + 1].sub(&vals[j]).scale(scale);
        g[j + 1] = g[j + 1].add(&jump);
        g[j] = g[j].sub(&jump);
    }
    g[0] = g[0].add(&vals[0].scale(2.0 * tau));
    g
}

fn check_continuum_dims(problem: &TrainingProblem, theta: &ContinuumParams) -> Result<()> {
    let (d, m) = theta.dims();
    problem.check_dims(d, m)
}

pub fn objective_einf(
    problem: &TrainingProblem,
    theta: &ContinuumParams,
    cfg: &OdeSolveConfig,
) -> Result<ObjectiveBreakdown> {
    check_continuum_dims(problem, theta)?;
    let per_sample = map_samples(problem.data.len(), |s| {
        let (x, y) = problem.data.sample(s);
        let traj = ode_solve(x, &theta.k, &theta.b, problem.activation, cfg)?;
        let (out, _) = problem.classify(&theta.w, &theta.c, traj.output());
        Ok((out - y).norm_squared())
    })?;
    let hp = &problem.hyper;
    let r = [
        reg_r1inf(&theta.k, hp.tau1),
        reg_r2inf(&theta.b, hp.tau2),
        theta.w.norm_squared(),
        theta.c.norm_squared(),
    ];
    Ok(ObjectiveBreakdown::assemble(per_sample.into_iter().sum(), r, hp))
}

/// How [`gateaux_state`] evaluates the state derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateauxKernel {
    /// `∫₀¹ exp(∫_t¹ σ̇(KX+b)⊙K ds) ((LX+β)⊙σ̇(KX+b)) dt` with trapezoid
    /// quadrature on the solver grid. Exact only for commuting kernels.
    ExpIntegral,
    /// Integrates the linearized system alongside the state with the same
    /// scheme: the exact derivative of the discretized solution map.
    #[default]
    TangentLinear,
}

fn check_direction(theta: &ContinuumParams, xi: &ContinuumParams) -> Result<()> {
    if theta.dims() != xi.dims() || theta.node_count() != xi.node_count() {
        return Err(Error::shape(
            "continuum perturbation",
            format!("N={} (d, m)={:?}", theta.node_count(), theta.dims()),
            format!("N={} (d, m)={:?}", xi.node_count(), xi.dims()),
        ));
    }
    Ok(())
}

fn tangent_field(
    t: f64,
    x: &DVector<f64>,
    dx: &DVector<f64>,
    theta: &ContinuumParams,
    xi: &ContinuumParams,
    sigma: Activation,
) -> (DVector<f64>, DVector<f64>) {
    let k = theta.k.eval(t);
    let z = &k * x + theta.b.eval(t);
    let forcing = &k * dx + xi.k.eval(t) * x + xi.b.eval(t);
    (sigma.apply(&z), forcing.component_mul(&sigma.apply_deriv(&z)))
}

/// State and its derivative along `ξ` at `t = 1`.
fn tangent_linear(
    theta: &ContinuumParams,
    xi: &ContinuumParams,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let h = cfg.step();
    let mut state = x.clone();
    let mut dstate = DVector::zeros(x.len());
    for j in 0..cfg.steps {
        match cfg.method {
            OdeMethod::Euler => {
                let (f, df) = tangent_field(cfg.time(j), &state, &dstate, theta, xi, sigma);
                state += f * h;
                dstate += df * h;
            }
            OdeMethod::Rk4 => {
                let (t0, tm, t1) = (cfg.time(j), cfg.mid_time(j), cfg.time(j + 1));
                let (f1, d1) = tangent_field(t0, &state, &dstate, theta, xi, sigma);
                let (f2, d2) = tangent_field(
                    tm,
                    &(&state + &f1 * (0.5 * h)),
                    &(&dstate + &d1 * (0.5 * h)),
                    theta,
                    xi,
                    sigma,
                );
                let (f3, d3) = tangent_field(
                    tm,
                    &(&state + &f2 * (0.5 * h)),
                    &(&dstate + &d2 * (0.5 * h)),
                    theta,
                    xi,
                    sigma,
                );
                let (f4, d4) = tangent_field(t1, &(&state + &f3 * h), &(&dstate + &d3 * h), theta, xi, sigma);
                state += (f1 + (f2 + f3) * 2.0 + f4) * (h / 6.0);
                dstate += (d1 + (d2 + d3) * 2.0 + d4) * (h / 6.0);
            }
        }
        check_state(&state, j + 1)?;
        check_state(&dstate, j + 1)?;
    }
    Ok((state, dstate))
}

fn exp_integral(
    theta: &ContinuumParams,
    xi: &ContinuumParams,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<DVector<f64>> {
    let traj = ode_solve(x, &theta.k, &theta.b, sigma, cfg)?;
    let h = cfg.step();
    let m = cfg.steps;
    let mut kernels = Vec::with_capacity(m + 1);
    let mut forcings = Vec::with_capacity(m + 1);
    for (j, state) in traj.states.iter().enumerate() {
        let t = cfg.time(j);
        let k = theta.k.eval(t);
        let slope = sigma.apply_deriv(&(&k * state + theta.b.eval(t)));
        let mut c = k;
        for (r, s) in slope.iter().enumerate() {
            c.row_mut(r).scale_mut(*s);
        }
        kernels.push(c);
        forcings.push((xi.k.eval(t) * state + xi.b.eval(t)).component_mul(&slope));
    }
    // backward cumulative trapezoid for ∫_{t_j}^1 C, then trapezoid in t
    let d = x.len();
    let mut inner = DMatrix::zeros(d, d);
    let mut acc = DVector::zeros(d);
    for j in (0..=m).rev() {
        if j < m {
            inner += (&kernels[j] + &kernels[j + 1]) * (0.5 * h);
        }
        if !inner.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("integrated kernel at step {j}"),
            });
        }
        let weight = if j == 0 || j == m { 0.5 * h } else { h };
        acc += inner.clone().exp() * &forcings[j] * weight;
    }
    Ok(acc)
}

/// Derivative of `X(1)` along the nodal direction `ξ` (its `W`, `c` blocks
/// are ignored).
pub fn gateaux_state(
    theta: &ContinuumParams,
    xi: &ContinuumParams,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
    kernel: GateauxKernel,
) -> Result<DVector<f64>> {
    check_direction(theta, xi)?;
    cfg.validate()?;
    if x.len() != theta.dims().0 {
        return Err(Error::shape("ODE input", theta.dims().0, x.len()));
    }
    match kernel {
        GateauxKernel::ExpIntegral => exp_integral(theta, xi, x, sigma, cfg),
        GateauxKernel::TangentLinear => Ok(tangent_linear(theta, xi, x, sigma, cfg)?.1),
    }
}

/// Directional derivative of `E_∞` along `ξ`, with the loss term in full
/// chain-rule form `2⟨h(u) − y, ḣ(u)⊙(W D + V X(1) + γ)⟩`, `u = W X(1) + c`.
pub fn gateaux_objective(
    problem: &TrainingProblem,
    theta: &ContinuumParams,
    xi: &ContinuumParams,
    cfg: &OdeSolveConfig,
) -> Result<f64> {
    check_direction(theta, xi)?;
    check_continuum_dims(problem, theta)?;
    cfg.validate()?;
    let per_sample = map_samples(problem.data.len(), |s| {
        let (x, y) = problem.data.sample(s);
        let (x1, dx) = tangent_linear(theta, xi, x, problem.activation, cfg)?;
        let (out, u) = problem.classify(&theta.w, &theta.c, &x1);
        let du = &theta.w * dx + &xi.w * &x1 + &xi.c;
        let hd = u.map(|v| problem.classifier.deriv(v));
        Ok(2.0 * (out - y).dot(&hd.component_mul(&du)))
    })?;
    let hp = &problem.hyper;
    Ok(per_sample.into_iter().sum::<f64>()
        + hp.alpha1 * reg_continuum_directional(&theta.k, &xi.k, hp.tau1)
        + hp.alpha2 * reg_continuum_directional(&theta.b, &xi.b, hp.tau2)
        + hp.alpha3 * 2.0 * theta.w.dot(&xi.w)
        + hp.alpha4 * 2.0 * theta.c.dot(&xi.c))
}

/// Nodal gradient of `E_∞`, same shape as the parameters.
pub type ContinuumGradient = ContinuumParams;

struct NodalAccumulator {
    k: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl NodalAccumulator {
    /// Adds the sensitivity of the stage pre-activation `K(t) y + b(t)` with
    /// adjoint `zbar`, split between the two nodes bracketing `t`.
    fn add(&mut self, path: &ContinuumPath<DMatrix<f64>>, t: f64, zbar: &DVector<f64>, y: &DVector<f64>) {
        let (j, w) = path.locate(t);
        let outer = zbar * y.transpose();
        if w != 1.0 {
            self.k[j] += &outer * (1.0 - w);
            self.b[j] += zbar * (1.0 - w);
        }
        if w != 0.0 {
            self.k[j + 1] += outer * w;
            self.b[j + 1] += zbar * w;
        }
    }
}

struct SampleGradient {
    loss: f64,
    nodal: NodalAccumulator,
    w: DMatrix<f64>,
    c: DVector<f64>,
}

fn sample_gradient(
    problem: &TrainingProblem,
    theta: &ContinuumParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cfg: &OdeSolveConfig,
) -> Result<SampleGradient> {
    let sigma = problem.activation;
    let traj = ode_solve(x, &theta.k, &theta.b, sigma, cfg)?;
    let x1 = traj.output();
    let (out, u) = problem.classify(&theta.w, &theta.c, x1);
    let resid = out - y;
    let g_u = (&resid * 2.0).component_mul(&u.map(|v| problem.classifier.deriv(v)));

    let (d, _) = theta.dims();
    let nodes = theta.node_count();
    let mut acc = NodalAccumulator {
        k: vec![DMatrix::zeros(d, d); nodes],
        b: vec![DVector::zeros(d); nodes],
    };
    let h = cfg.step();
    let mut lambda = theta.w.transpose() * &g_u;

    // adjoint of one stage k = σ(K(t) y + b(t)) given kbar; returns ybar
    let stage = |acc: &mut NodalAccumulator, t: f64, y: &DVector<f64>, kbar: &DVector<f64>| {
        let k = theta.k.eval(t);
        let z = &k * y + theta.b.eval(t);
        let zbar = kbar.component_mul(&sigma.apply_deriv(&z));
        acc.add(&theta.k, t, &zbar, y);
        k.transpose() * zbar
    };

    for j in (0..cfg.steps).rev() {
        let xj = &traj.states[j];
        match cfg.method {
            OdeMethod::Euler => {
                let ybar = stage(&mut acc, cfg.time(j), xj, &(&lambda * h));
                lambda += ybar;
            }
            OdeMethod::Rk4 => {
                let (t0, tm, t1) = (cfg.time(j), cfg.mid_time(j), cfg.time(j + 1));
                let f1 = vector_field(t0, xj, &theta.k, &theta.b, sigma);
                let y2 = xj + &f1 * (0.5 * h);
                let f2 = vector_field(tm, &y2, &theta.k, &theta.b, sigma);
                let y3 = xj + &f2 * (0.5 * h);
                let f3 = vector_field(tm, &y3, &theta.k, &theta.b, sigma);
                let y4 = xj + &f3 * h;

                let mut k1bar = &lambda * (h / 6.0);
                let mut k2bar = &lambda * (h / 3.0);
                let mut k3bar = &lambda * (h / 3.0);
                let k4bar = &lambda * (h / 6.0);
                let mut xbar = lambda.clone();

                let ybar = stage(&mut acc, t1, &y4, &k4bar);
                k3bar += &ybar * h;
                xbar += ybar;
                let ybar = stage(&mut acc, tm, &y3, &k3bar);
                k2bar += &ybar * (0.5 * h);
                xbar += ybar;
                let ybar = stage(&mut acc, tm, &y2, &k2bar);
                k1bar += &ybar * (0.5 * h);
                xbar += ybar;
                xbar += stage(&mut acc, t0, xj, &k1bar);
                lambda = xbar;
            }
        }
    }
    Ok(SampleGradient {
        loss: resid.norm_squared(),
        nodal: acc,
        w: &g_u * x1.transpose(),
        c: g_u,
    })
}

/// Objective value and nodal gradient: the discrete adjoint of the solver.
pub fn value_and_gradient_einf(
    problem: &TrainingProblem,
    theta: &ContinuumParams,
    cfg: &OdeSolveConfig,
) -> Result<(ObjectiveBreakdown, ContinuumGradient)> {
    check_continuum_dims(problem, theta)?;
    cfg.validate()?;
    let per_sample = map_samples(problem.data.len(), |s| {
        let (x, y) = problem.data.sample(s);
        sample_gradient(problem, theta, x, y, cfg)
    })?;
    let hp = &problem.hyper;
    let mut grad = theta.zeros_like();
    let mut loss = 0.0;
    for sg in per_sample {
        loss += sg.loss;
        for (a, v) in grad.k.values_mut().iter_mut().zip(&sg.nodal.k) {
            *a += v;
        }
        for (a, v) in grad.b.values_mut().iter_mut().zip(&sg.nodal.b) {
            *a += v;
        }
        grad.w += sg.w;
        grad.c += sg.c;
    }
    for (a, v) in grad.k.values_mut().iter_mut().zip(reg_continuum_gradient(&theta.k, hp.tau1)) {
        *a += v * hp.alpha1;
    }
    for (a, v) in grad.b.values_mut().iter_mut().zip(reg_continuum_gradient(&theta.b, hp.tau2)) {
        *a += v * hp.alpha2;
    }
    grad.w += &theta.w * (2.0 * hp.alpha3);
    grad.c += &theta.c * (2.0 * hp.alpha4);
    let r = [
        reg_r1inf(&theta.k, hp.tau1),
        reg_r2inf(&theta.b, hp.tau2),
        theta.w.norm_squared(),
        theta.c.norm_squared(),
    ];
    Ok((ObjectiveBreakdown::assemble(loss, r, hp), grad))
}

pub fn gradient_einf(
    problem: &TrainingProblem,
    theta: &ContinuumParams,
    cfg: &OdeSolveConfig,
) -> Result<ContinuumGradient> {
    Ok(value_and_gradient_einf(problem, theta, cfg)?.1)
}
