//! Exact derivatives of the discrete objective.
//!
//! Two independent routes: the forward layer-product formula for directional
//! derivatives ([`state_jvp`], [`objective_directional`]) and a hand-written
//! reverse sweep ([`gradient_en`]). Each checks the other.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::log_log_fit;
use crate::model::{forward_pass, map_samples, Activation, ObjectiveBreakdown, TrainingProblem, Trajectory};
use crate::spaces::{DiscreteParams, DiscretePath, Element, Nodal};

/// Direction `ξ = (L, β, V, γ)`; same shape as the parameters.
pub type PerturbationSet = DiscreteParams;
/// `∇E_n`, blockwise.
pub type GradientSet = DiscreteParams;

fn check_direction(theta: &DiscreteParams, xi: &PerturbationSet) -> Result<()> {
    if theta.dims() != xi.dims() || theta.n() != xi.n() {
        return Err(Error::shape(
            "perturbation",
            format!("n={} (d, m)={:?}", theta.n(), theta.dims()),
            format!("n={} (d, m)={:?}", xi.n(), xi.dims()),
        ));
    }
    Ok(())
}

fn jvp_from_trajectory(
    traj: &Trajectory,
    theta: &DiscreteParams,
    xi: &PerturbationSet,
    sigma: Activation,
) -> DVector<f64> {
    let n = theta.n();
    let d = theta.dims().0;
    let h = 1.0 / n as f64;
    let slopes: Vec<DVector<f64>> = (0..n)
        .map(|i| sigma.apply_deriv(&(theta.k.get(i) * &traj.states[i] + theta.b.get(i))))
        .collect();

    // M_i = Π_{j>i} (I + h diag(σ̇_j) K_j), later layers on the left
    let mut products: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d); n];
    for i in (0..n.saturating_sub(1)).rev() {
        let mut a = theta.k.get(i + 1).clone();
        for (r, s) in slopes[i + 1].iter().enumerate() {
            a.row_mut(r).scale_mut(h * s);
        }
        for r in 0..d {
            a[(r, r)] += 1.0;
        }
        products[i] = &products[i + 1] * a;
    }

    let mut acc = DVector::zeros(d);
    for i in 0..n {
        let forcing = (xi.k.get(i) * &traj.states[i] + xi.b.get(i)).component_mul(&slopes[i]);
        acc += &products[i] * forcing;
    }
    acc * h
}

/// `d/dr X_n[x; θ + rξ]` at `r = 0`, by the explicit layer-product formula.
pub fn state_jvp(
    theta: &DiscreteParams,
    xi: &PerturbationSet,
    x: &DVector<f64>,
    sigma: Activation,
) -> Result<DVector<f64>> {
    check_direction(theta, xi)?;
    let traj = forward_pass(x, &theta.k, &theta.b, sigma)?;
    Ok(jvp_from_trajectory(&traj, theta, xi, sigma))
}

/// `2n Σ ⟨Δv_i, Δw_i⟩ + 2τ⟨v_0, w_0⟩`: directional derivative of the
/// discrete path regularizer at `v` in direction `w`.
pub fn reg_discrete_directional<E: Element>(v: &DiscretePath<E>, w: &DiscretePath<E>, tau: f64) -> f64 {
    let n = v.n() as f64;
    let mut jumps = 0.0;
    for i in 1..v.n() {
        jumps += v.get(i).sub(v.get(i - 1)).dot(&w.get(i).sub(w.get(i - 1)));
    }
    2.0 * n * jumps + 2.0 * tau * v.get(0).dot(w.get(0))
}

/// Gradient of the discrete path regularizer.
pub fn reg_discrete_gradient<E: Element>(v: &DiscretePath<E>, tau: f64) -> Vec<E> {
    let n = v.n();
    let mut g: Vec<E> = (0..n).map(|_| E::zeros(v.get(0).dim())).collect();
    for i in 1..n {
        let jump = v.get(i).sub(v.get(i - 1)).scale(2.0 * n as f64);
        g[i] = g[i].add(&jump);
        g[i - 1] = g[i - 1].sub(&jump);
    }
    g[0] = g[0].add(&v.get(0).scale(2.0 * tau));
    g
}

/// Directional derivative of `E_n` at `θ` along `ξ`, built on [`state_jvp`].
pub fn objective_directional(
    problem: &TrainingProblem,
    theta: &DiscreteParams,
    xi: &PerturbationSet,
) -> Result<f64> {
    check_direction(theta, xi)?;
    let (d, m) = theta.dims();
    problem.check_dims(d, m)?;
    let per_sample = map_samples(problem.data.len(), |s| {
        let (x, y) = problem.data.sample(s);
        let traj = forward_pass(x, &theta.k, &theta.b, problem.activation)?;
        let dx = jvp_from_trajectory(&traj, theta, xi, problem.activation);
        let xn = traj.output();
        let (out, u) = problem.classify(&theta.w, &theta.c, xn);
        let du = &theta.w * dx + &xi.w * xn + &xi.c;
        let hd = u.map(|v| problem.classifier.deriv(v));
        Ok(2.0 * (out - y).dot(&hd.component_mul(&du)))
    })?;
    let hp = &problem.hyper;
    let loss: f64 = per_sample.into_iter().sum();
    Ok(loss
        + hp.alpha1 * reg_discrete_directional(&theta.k, &xi.k, hp.tau1)
        + hp.alpha2 * reg_discrete_directional(&theta.b, &xi.b, hp.tau2)
        + hp.alpha3 * 2.0 * theta.w.dot(&xi.w)
        + hp.alpha4 * 2.0 * theta.c.dot(&xi.c))
}

struct SampleGradient {
    loss: f64,
    k: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    w: DMatrix<f64>,
    c: DVector<f64>,
}

fn sample_gradient(
    problem: &TrainingProblem,
    theta: &DiscreteParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<SampleGradient> {
    let sigma = problem.activation;
    let n = theta.n();
    let h = 1.0 / n as f64;
    let traj = forward_pass(x, &theta.k, &theta.b, sigma)?;
    let xn = traj.output();
    let (out, u) = problem.classify(&theta.w, &theta.c, xn);
    let resid = out - y;
    let g_u = (&resid * 2.0).component_mul(&u.map(|v| problem.classifier.deriv(v)));

    let mut k_bar = Vec::with_capacity(n);
    let mut b_bar = Vec::with_capacity(n);
    let mut lambda = theta.w.transpose() * &g_u;
    for i in (0..n).rev() {
        let xi = &traj.states[i];
        let z = theta.k.get(i) * xi + theta.b.get(i);
        let g_z = lambda.component_mul(&sigma.apply_deriv(&z)) * h;
        k_bar.push(&g_z * xi.transpose());
        lambda += theta.k.get(i).transpose() * &g_z;
        b_bar.push(g_z);
    }
    k_bar.reverse();
    b_bar.reverse();
    Ok(SampleGradient {
        loss: resid.norm_squared(),
        w: &g_u * xn.transpose(),
        c: g_u,
        k: k_bar,
        b: b_bar,
    })
}

/// Objective value and reverse-mode gradient in one sweep.
pub fn value_and_gradient_en(
    problem: &TrainingProblem,
    theta: &DiscreteParams,
) -> Result<(ObjectiveBreakdown, GradientSet)> {
    let (d, m) = theta.dims();
    problem.check_dims(d, m)?;
    let per_sample = map_samples(problem.data.len(), |s| {
        let (x, y) = problem.data.sample(s);
        sample_gradient(problem, theta, x, y)
    })?;

    let hp = &problem.hyper;
    let mut grad = theta.zeros_like();
    let mut loss = 0.0;
    for sg in per_sample {
        loss += sg.loss;
        for (acc, v) in grad.k.values_mut().iter_mut().zip(&sg.k) {
            *acc += v;
        }
        for (acc, v) in grad.b.values_mut().iter_mut().zip(&sg.b) {
            *acc += v;
        }
        grad.w += sg.w;
        grad.c += sg.c;
    }
    for (acc, v) in grad.k.values_mut().iter_mut().zip(reg_discrete_gradient(&theta.k, hp.tau1)) {
        *acc += v * hp.alpha1;
    }
    for (acc, v) in grad.b.values_mut().iter_mut().zip(reg_discrete_gradient(&theta.b, hp.tau2)) {
        *acc += v * hp.alpha2;
    }
    grad.w += &theta.w * (2.0 * hp.alpha3);
    grad.c += &theta.c * (2.0 * hp.alpha4);

    let r = [
        crate::model::reg_r1n(&theta.k, hp.tau1),
        crate::model::reg_r2n(&theta.b, hp.tau2),
        crate::model::reg_r3(&theta.w),
        crate::model::reg_r4(&theta.c),
    ];
    Ok((ObjectiveBreakdown::assemble(loss, r, hp), grad))
}

pub fn gradient_en(problem: &TrainingProblem, theta: &DiscreteParams) -> Result<GradientSet> {
    Ok(value_and_gradient_en(problem, theta)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdRow {
    pub r: f64,
    pub finite_difference: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub analytic: f64,
    pub rows: Vec<FdRow>,
    /// Log-log slope of error against `r`; `None` when fewer than two
    /// errors are nonzero (exact agreement).
    pub slope: Option<f64>,
}

/// Compares the central differences `(f(r) − f(−r)) / 2r` of the line
/// function `f(r) = E(θ + rξ)` with the analytic directional derivative.
pub fn fd_check(f: impl Fn(f64) -> Result<f64>, analytic: f64, steps: &[f64]) -> Result<FdReport> {
    if steps.is_empty() || steps.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::invalid("fd_check step sizes must be positive"));
    }
    if steps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("fd_check step sizes must be decreasing"));
    }
    let mut rows = Vec::with_capacity(steps.len());
    for &r in steps {
        let fd = (f(r)? - f(-r)?) / (2.0 * r);
        rows.push(FdRow {
            r,
            finite_difference: fd,
            error: (fd - analytic).abs(),
        });
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|row| (row.r, row.error)).collect();
    let slope = log_log_fit(&pts).ok().map(|fit| fit.slope);
    Ok(FdReport {
        analytic,
        rows,
        slope,
    })
}

/// Default step ladder for slope fits; wide enough that truncation error
/// dominates rounding for unit-scale parameters.
pub const FD_SLOPE_STEPS: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];
pub const FD_DEFAULT_STEP: f64 = 1e-5;

/// Coordinatewise central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + r;
        let up = f(&probe)?;
        probe[i] = x[i] - r;
        let down = f(&probe)?;
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * r);
    }
    Ok(g)
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}
