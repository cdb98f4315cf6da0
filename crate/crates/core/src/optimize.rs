//! Gradient descent with Armijo backtracking, and seeded multistart.
//!
//! The optimizer works on flat parameter vectors; callers flatten a
//! [`ParamSet`](crate::spaces::ParamSet) with `to_flat` / `with_flat`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BACKTRACKS: usize = 60;

/// How the trial step of each line search is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// Always start from `initial_step`.
    Fixed,
    /// Start from twice the last accepted step.
    Growth,
    /// Barzilai–Borwein step `sᵀs / sᵀy`, falling back to `initial_step`.
    #[default]
    BarzilaiBorwein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub step_rule: StepRule,
    /// Heavy-ball coefficient; 0 gives plain gradient descent.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            max_iters: 5000,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            initial_step: 1e-2,
            step_rule: StepRule::BarzilaiBorwein,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::invalid("armijo_c1 must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid("backtrack must lie in (0, 1)"));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::invalid("initial_step must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One row of the optimization trace. Row 0 is the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    /// Accepted step length that produced this iterate (0 for the start).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: DVector<f64>,
    pub final_objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl OptimizeResult {
    pub fn grad_norm_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.grad_norm).collect()
    }

    pub fn objective_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.grad_norm)
    }

    /// Accepts a line-search failure as an unconverged result.
    pub fn or_partial(res: Result<OptimizeResult>) -> Result<OptimizeResult> {
        match res {
            Err(Error::LineSearchFailed { partial, .. }) => Ok(*partial),
            other => other,
        }
    }
}

fn check_finite(value: f64, grad: &DVector<f64>, iter: usize) -> Result<()> {
    if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("objective or gradient at iteration {iter}"),
        });
    }
    Ok(())
}

/// Minimizes `f`, which returns the objective value and its gradient.
/// Every accepted step satisfies the Armijo condition, so the objective
/// history is non-increasing.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, cfg: &OptimizeConfig) -> Result<OptimizeResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    cfg.validate()?;
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    check_finite(fx, &g, 0)?;
    let mut trace = vec![TraceRow {
        iter: 0,
        objective: fx,
        grad_norm: g.norm(),
        step: 0.0,
    }];
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut last_step = cfg.initial_step;
    let mut direction: Option<DVector<f64>> = None;

    let finish = |x: DVector<f64>, fx: f64, trace: Vec<TraceRow>, converged: bool| OptimizeResult {
        iterations: trace.len() - 1,
        x,
        final_objective: fx,
        trace,
        converged,
    };

    for iter in 1..=cfg.max_iters {
        if g.norm() <= cfg.grad_tol {
            return Ok(finish(x, fx, trace, true));
        }

        let mut p = -&g;
        if cfg.momentum > 0.0 {
            if let Some(d) = &direction {
                let candidate = &p + d * cfg.momentum;
                // restart whenever momentum stops giving a descent direction
                if candidate.dot(&g) < 0.0 {
                    p = candidate;
                }
            }
        }
        let slope = p.dot(&g);

        let mut alpha = match (cfg.step_rule, &prev) {
            (StepRule::Fixed, _) => cfg.initial_step,
            (StepRule::Growth, _) => 2.0 * last_step,
            (StepRule::BarzilaiBorwein, Some((s, y))) => {
                let sy = s.dot(y);
                if sy > 0.0 {
                    // scale by |g|/|p| so the rule measures steps along -g
                    (s.dot(s) / sy) * (g.norm() / p.norm())
                } else {
                    cfg.initial_step
                }
            }
            (StepRule::BarzilaiBorwein, None) => cfg.initial_step,
        };
        alpha = alpha.clamp(1e-12, 1e12);

        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let trial = &x + &p * alpha;
            if trial == x {
                // the step no longer moves the iterate
                break;
            }
            let (ft, gt) = f(&trial)?;
            if ft.is_finite() && ft <= fx + cfg.armijo_c1 * alpha * slope {
                check_finite(ft, &gt, iter)?;
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Err(Error::LineSearchFailed {
                iteration: iter,
                backtracks: MAX_BACKTRACKS,
                partial: Box::new(finish(x, fx, trace, false)),
            });
        };

        prev = Some((&x_new - &x, &g_new - &g));
        direction = Some(&p * alpha);
        last_step = alpha;
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(TraceRow {
            iter,
            objective: fx,
            grad_norm: g.norm(),
            step: alpha,
        });
    }
    let converged = g.norm() <= cfg.grad_tol;
    Ok(finish(x, fx, trace, converged))
}

/// Uniform noise of the given amplitude around zero: the default sampler.
pub fn uniform_noise(len: usize, amplitude: f64) -> impl Fn(&mut ChaCha8Rng) -> DVector<f64> + Sync {
    move |rng| DVector::from_fn(len, |_, _| rng.random_range(-amplitude..=amplitude))
}

#[derive(Debug, Clone)]
pub struct MultistartResult {
    pub best_index: usize,
    pub runs: Vec<OptimizeResult>,
}

impl MultistartResult {
    pub fn best(&self) -> &OptimizeResult {
        &self.runs[self.best_index]
    }
}

/// Runs `count` minimizations, run `i` starting from `sampler` seeded with
/// `cfg.seed + i`. Line-search failures count as unconverged runs. Ties go to
/// the lowest index, so the outcome does not depend on scheduling.
pub fn multistart<F, S>(f: F, sampler: S, count: usize, cfg: &OptimizeConfig) -> Result<MultistartResult>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + Sync,
    S: Fn(&mut ChaCha8Rng) -> DVector<f64> + Sync,
{
    if count == 0 {
        return Err(Error::invalid("multistart needs at least one run"));
    }
    let runs: Vec<OptimizeResult> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let x0 = sampler(&mut rng);
            OptimizeResult::or_partial(minimize(&f, x0, cfg))
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.final_objective < runs[best_index].final_objective {
            best_index = i;
        }
    }
    Ok(MultistartResult { best_index, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quadratic(center: DVector<f64>) -> impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + Sync {
        move |x| {
            let r = x - &center;
            Ok((r.norm_squared(), r * 2.0))
        }
    }

    fn rosenbrock(x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        Ok((f, g))
    }

    fn monotone(r: &OptimizeResult) -> bool {
        r.trace.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    #[test]
    fn quadratic_converges_to_center() {
        let center = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = uniform_noise(4, 5.0)(&mut rng);
        for rule in [StepRule::Fixed, StepRule::Growth, StepRule::BarzilaiBorwein] {
            let cfg = OptimizeConfig {
                step_rule: rule,
                initial_step: 0.1,
                grad_tol: 1e-8,
                max_iters: 200,
                ..Default::default()
            };
            let r = minimize(quadratic(center.clone()), x0.clone(), &cfg).unwrap();
            assert!(r.converged, "{rule:?}");
            assert!((&r.x - &center).norm() < 1e-6, "{rule:?}");
            assert!(r.iterations <= 200);
            assert!(monotone(&r));
        }
    }

    #[test]
    fn rosenbrock_reaches_minimizer() {
        let cfg = OptimizeConfig {
            max_iters: 100_000,
            grad_tol: 1e-8,
            initial_step: 1e-3,
            ..Default::default()
        };
        let r = OptimizeResult::or_partial(minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &cfg)).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{}", r.x);
        assert!(monotone(&r));
    }

    #[test]
    fn rosenbrock_with_plain_armijo() {
        let cfg = OptimizeConfig {
            max_iters: 100_000,
            grad_tol: 1e-6,
            initial_step: 1.0,
            step_rule: StepRule::Growth,
            momentum: 0.5,
            ..Default::default()
        };
        let r = OptimizeResult::or_partial(minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &cfg)).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3, "{}", r.x);
        assert!(monotone(&r));
    }

    #[test]
    fn critical_start_returns_immediately() {
        let center = DVector::from_vec(vec![0.25, 0.5]);
        let r = minimize(quadratic(center.clone()), center.clone(), &OptimizeConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.x, center);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |_: &DVector<f64>| Ok((f64::NAN, DVector::zeros(1)));
        assert!(matches!(
            minimize(f, DVector::zeros(1), &OptimizeConfig::default()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn wrong_gradient_fails_line_search_with_partial() {
        // gradient sign flipped: every step goes uphill
        let f = |x: &DVector<f64>| Ok((x.norm_squared(), -x * 2.0));
        let err = minimize(f, DVector::from_vec(vec![1.0]), &OptimizeConfig::default()).unwrap_err();
        match err {
            Error::LineSearchFailed { partial, backtracks, .. } => {
                assert_eq!(backtracks, MAX_BACKTRACKS);
                assert_eq!(partial.x[0], 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_seeds_give_identical_iterates() {
        let cfg = OptimizeConfig {
            seed: 42,
            max_iters: 300,
            ..Default::default()
        };
        let a = multistart(rosenbrock, uniform_noise(2, 0.1), 3, &cfg).unwrap();
        let b = multistart(rosenbrock, uniform_noise(2, 0.1), 3, &cfg).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.trace, rb.trace);
            assert_eq!(ra.x, rb.x);
        }
    }

    #[test]
    fn multistart_convex_runs_agree() {
        let center = DVector::from_vec(vec![-0.3, 0.8, 1.1]);
        let cfg = OptimizeConfig {
            grad_tol: 1e-9,
            ..Default::default()
        };
        let ms = multistart(quadratic(center.clone()), uniform_noise(3, 2.0), 6, &cfg).unwrap();
        for r in &ms.runs {
            assert!((&r.x - &center).norm() < 1e-6);
        }
    }

    #[test]
    fn multistart_single_run_equals_minimize() {
        let cfg = OptimizeConfig {
            seed: 9,
            ..Default::default()
        };
        let center = DVector::from_vec(vec![2.0, 1.0]);
        let ms = multistart(quadratic(center.clone()), uniform_noise(2, 0.1), 1, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0 = uniform_noise(2, 0.1)(&mut rng);
        let single = minimize(quadratic(center), x0, &cfg).unwrap();
        assert_eq!(ms.best().trace, single.trace);
    }

    #[test]
    fn multistart_double_well_finds_deeper_well() {
        // wells near ±1; the tilt makes the left one deeper
        let f = |x: &DVector<f64>| {
            let t = x[0];
            Ok(((t * t - 1.0).powi(2) + 0.3 * t, DVector::from_element(1, 4.0 * t * (t * t - 1.0) + 0.3)))
        };
        let cfg = OptimizeConfig {
            grad_tol: 1e-10,
            seed: 3,
            ..Default::default()
        };
        let ms = multistart(f, uniform_noise(1, 2.0), 8, &cfg).unwrap();
        let scan = (0..=10_000)
            .map(|i| {
                let t = -2.0 + 4.0 * i as f64 / 10_000.0;
                (t * t - 1.0).powi(2) + 0.3 * t
            })
            .fold(f64::INFINITY, f64::min);
        assert!(ms.best().final_objective <= scan + 1e-9);
        assert_relative_eq!(ms.best().final_objective, scan, epsilon = 1e-6);
    }

    #[test]
    fn scaled_objective_follows_same_path() {
        let center = DVector::from_vec(vec![1.0, 3.0]);
        let x0 = DVector::from_vec(vec![0.0, 0.0]);
        let cfg = OptimizeConfig {
            step_rule: StepRule::Fixed,
            initial_step: 0.1,
            ..Default::default()
        };
        let a = minimize(quadratic(center.clone()), x0.clone(), &cfg).unwrap();
        let c2 = center.clone();
        let scaled = move |x: &DVector<f64>| {
            let r = x - &c2;
            Ok((10.0 * r.norm_squared(), r * 20.0))
        };
        let cfg10 = OptimizeConfig {
            initial_step: 0.01,
            grad_tol: 1e-5,
            ..cfg
        };
        let b = minimize(scaled, x0, &cfg10).unwrap();
        assert_relative_eq!(a.x, b.x, epsilon = 1e-6);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OptimizeConfig {
            backtrack: 1.5,
            ..Default::default()
        };
        assert!(minimize(quadratic(DVector::zeros(1)), DVector::zeros(1), &cfg).is_err());
    }
}
