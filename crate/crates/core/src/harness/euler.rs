use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::continuum::{ode_solve, vector_field, ContinuumTrajectory, OdeSolveConfig};
use crate::error::{Error, Result};
use crate::model::{forward_pass, Activation, Trajectory};
use crate::spaces::{ContinuumPath, Element, MatrixPath, VectorPath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EulerBoundRow {
    pub i: usize,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EulerBoundReport {
    pub n: usize,
    /// Largest nodal gap between continuum and discrete parameters.
    pub delta_n: f64,
    pub k_sup: f64,
    /// Sup of the state norm over both trajectories.
    pub x_sup: f64,
    /// Largest one-step Taylor remainder of the reference solution.
    pub r_n: f64,
    pub d_n: f64,
    pub lipschitz: f64,
    pub rows: Vec<EulerBoundRow>,
}

impl EulerBoundReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.holds).count()
    }

    pub fn sup_lhs(&self) -> f64 {
        self.rows.iter().map(|r| r.lhs).fold(0.0, f64::max)
    }
}

struct Paired {
    n: usize,
    stride: usize,
    reference: ContinuumTrajectory,
    network: Trajectory,
}

fn solve_pair(
    k: &ContinuumPath<DMatrix<f64>>,
    b: &ContinuumPath<DVector<f64>>,
    kn: &MatrixPath,
    bn: &VectorPath,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<Paired> {
    let n = kn.n();
    if bn.n() != n {
        return Err(Error::shape("discrete bias layers", n, bn.n()));
    }
    if !cfg.steps.is_multiple_of(n) {
        return Err(Error::invalid(format!(
            "reference steps {} must be a multiple of n = {n}",
            cfg.steps
        )));
    }
    Ok(Paired {
        n,
        stride: cfg.steps / n,
        reference: ode_solve(x, k, b, sigma, cfg)?,
        network: forward_pass(x, kn, bn, sigma)?,
    })
}

/// Compares the `n`-layer states with a reference solution of the ODE at the
/// layer times and evaluates the explicit-Euler error bound
/// `rhs_i = n/(L‖K‖) · D_n · (exp(i L‖K‖/n) − 1)` with
/// `D_n = (1 + ‖X‖) L δ_n / n + R_n`. All constants are measured from the
/// objects passed in; `cfg` is the reference solver and its step count must
/// be a multiple of `n`.
pub fn euler_bound_check(
    k: &ContinuumPath<DMatrix<f64>>,
    b: &ContinuumPath<DVector<f64>>,
    kn: &MatrixPath,
    bn: &VectorPath,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<EulerBoundReport> {
    let p = solve_pair(k, b, kn, bn, x, sigma, cfg)?;
    let n = p.n;
    let nf = n as f64;
    let at = |i: usize| &p.reference.states[i * p.stride];

    let delta_n = (0..n)
        .map(|i| {
            let t = i as f64 / nf;
            let dk = k.eval(t).sub(kn.get(i)).norm();
            let db = b.eval(t).sub(bn.get(i)).norm();
            dk.max(db)
        })
        .fold(0.0, f64::max);
    let k_sup = k.sup_norm();
    let x_sup = p
        .reference
        .states
        .iter()
        .chain(&p.network.states)
        .map(|s| s.norm())
        .fold(0.0, f64::max);
    let r_n = (1..=n)
        .map(|i| {
            let prev = at(i - 1);
            let slope = vector_field((i - 1) as f64 / nf, prev, k, b, sigma);
            (at(i) - prev - slope / nf).norm()
        })
        .fold(0.0, f64::max);
    let lip = sigma.lipschitz();
    let d_n = (1.0 + x_sup) * lip * delta_n / nf + r_n;
    let rate = lip * k_sup;

    let rows = (0..=n)
        .map(|i| {
            let t = i as f64 / nf;
            let lhs = (at(i) - &p.network.states[i]).norm();
            let rhs = if rate == 0.0 {
                i as f64 * d_n
            } else {
                nf / rate * d_n * (t * rate).exp_m1()
            };
            EulerBoundRow {
                i,
                t,
                lhs,
                rhs,
                holds: lhs <= rhs,
            }
        })
        .collect();
    Ok(EulerBoundReport {
        n,
        delta_n,
        k_sup,
        x_sup,
        r_n,
        d_n,
        lipschitz: lip,
        rows,
    })
}

/// `sup_i sup_{t ∈ [t_i, t_{i+1}]} ‖X(t) − X_i‖`, sampled on the reference
/// grid.
pub fn trajectory_gap(
    k: &ContinuumPath<DMatrix<f64>>,
    b: &ContinuumPath<DVector<f64>>,
    kn: &MatrixPath,
    bn: &VectorPath,
    x: &DVector<f64>,
    sigma: Activation,
    cfg: &OdeSolveConfig,
) -> Result<f64> {
    let p = solve_pair(k, b, kn, bn, x, sigma, cfg)?;
    let mut gap: f64 = 0.0;
    for i in 0..p.n {
        let xi = &p.network.states[i];
        for j in i * p.stride..=(i + 1) * p.stride {
            gap = gap.max((&p.reference.states[j] - xi).norm());
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::restrict_nodal;
    use std::f64::consts::TAU;

    fn scalar_paths(kv: f64, bv: f64) -> (ContinuumPath<DMatrix<f64>>, ContinuumPath<DVector<f64>>) {
        (
            ContinuumPath::constant(2, DMatrix::from_element(1, 1, kv)).unwrap(),
            ContinuumPath::constant(2, DVector::from_element(1, bv)).unwrap(),
        )
    }

    fn smooth_paths(d: usize) -> (ContinuumPath<DMatrix<f64>>, ContinuumPath<DVector<f64>>) {
        let k = ContinuumPath::from_fn(1025, |t| DMatrix::from_fn(d, d, |r, c| {
            0.8 * ((r + 2 * c) as f64 + TAU * t).sin() - 0.2 * (r as f64 - c as f64)
        }))
        .unwrap();
        let b = ContinuumPath::from_fn(1025, |t| DVector::from_fn(d, |r, _| 0.3 * t - 0.1 * r as f64)).unwrap();
        (k, b)
    }

    #[test]
    fn exponential_case_analytic_gap() {
        let (k, b) = scalar_paths(1.0, 0.0);
        let n = 16;
        let kn = restrict_nodal(&k, n).unwrap();
        let bn = restrict_nodal(&b, n).unwrap();
        let x = DVector::from_element(1, 1.0);
        let report = euler_bound_check(&k, &b, &kn, &bn, &x, Activation::Identity, &OdeSolveConfig::reference_for(n)).unwrap();
        assert_eq!(report.delta_n, 0.0);
        let mut prev = -1.0;
        for row in &report.rows {
            let exact = (row.t).exp() - (1.0 + 1.0 / n as f64).powi(row.i as i32);
            assert!((row.lhs - exact).abs() < 1e-10, "{} vs {exact}", row.lhs);
            assert!(row.lhs >= prev);
            prev = row.lhs;
            assert!(row.holds);
        }
    }

    #[test]
    fn zero_parameters_zero_gap() {
        let (k, b) = scalar_paths(0.0, 0.0);
        let kn = restrict_nodal(&k, 8).unwrap();
        let bn = restrict_nodal(&b, 8).unwrap();
        let x = DVector::from_element(1, 0.7);
        let report = euler_bound_check(&k, &b, &kn, &bn, &x, Activation::Tanh, &OdeSolveConfig::reference_for(8)).unwrap();
        assert!(report.rows.iter().all(|r| r.lhs == 0.0 && r.holds));
        assert_eq!(trajectory_gap(&k, &b, &kn, &bn, &x, Activation::Tanh, &OdeSolveConfig::reference_for(8)).unwrap(), 0.0);
    }

    #[test]
    fn tanh_bound_holds_with_measured_delta() {
        let (k, b) = smooth_paths(2);
        let n = 64;
        let kn = crate::spaces::restrict_cell_average(&k, n).unwrap();
        let bn = crate::spaces::restrict_cell_average(&b, n).unwrap();
        let x = DVector::from_vec(vec![0.5, -0.4]);
        let report = euler_bound_check(&k, &b, &kn, &bn, &x, Activation::Tanh, &OdeSolveConfig::reference_for(n)).unwrap();
        assert!(report.delta_n > 0.0);
        assert_eq!(report.violations(), 0);
    }

    #[test]
    fn exponential_gap_halves() {
        let (k, b) = scalar_paths(1.0, 0.0);
        let x = DVector::from_element(1, 1.0);
        let gap = |n: usize| {
            trajectory_gap(
                &k,
                &b,
                &restrict_nodal(&k, n).unwrap(),
                &restrict_nodal(&b, n).unwrap(),
                &x,
                Activation::Identity,
                &OdeSolveConfig::reference_for(n),
            )
            .unwrap()
        };
        for n in [16usize, 32, 64] {
            let ratio = gap(n) / gap(2 * n);
            assert!((1.7..=2.3).contains(&ratio), "n = {n}: {ratio}");
        }
    }

    #[test]
    fn gap_shrinks_under_refinement() {
        let (k, b) = smooth_paths(3);
        let x = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let gap = |n: usize| {
            trajectory_gap(
                &k,
                &b,
                &crate::spaces::restrict_cell_average(&k, n).unwrap(),
                &crate::spaces::restrict_cell_average(&b, n).unwrap(),
                &x,
                Activation::Tanh,
                &OdeSolveConfig::reference_for(n),
            )
            .unwrap()
        };
        let (g32, g64, g128) = (gap(32), gap(64), gap(128));
        assert!(gap(256) < g32);
        for ratio in [g32 / g64, g64 / g128] {
            assert!((1.5..=2.5).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn reference_must_align_with_layers() {
        let (k, b) = scalar_paths(1.0, 0.0);
        let kn = restrict_nodal(&k, 3).unwrap();
        let bn = restrict_nodal(&b, 3).unwrap();
        let x = DVector::from_element(1, 1.0);
        assert!(euler_bound_check(&k, &b, &kn, &bn, &x, Activation::Tanh, &OdeSolveConfig::rk4(1024)).is_err());
    }
}
