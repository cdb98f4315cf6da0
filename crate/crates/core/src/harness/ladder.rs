use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::value_and_gradient_en;
use crate::continuum::{objective_einf, value_and_gradient_einf, OdeSolveConfig};
use crate::error::{Error, Result};
use crate::harness::diagnostics::{smoothness_diagnostic, SMOOTHNESS_MARGIN};
use crate::model::{ObjectiveBreakdown, TrainingProblem};
use crate::optimize::{minimize, multistart, uniform_noise, OptimizeConfig, OptimizeResult};
use crate::spaces::{param_distance, prolong, upsample, ContinuumParams, DiscreteParams, ParamDistance, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    /// Nondecreasing layer counts.
    pub n_values: Vec<usize>,
    /// Nodes `N` of the continuum representation; at least `max n + 1`.
    pub continuum_nodes: usize,
    pub warm_start: bool,
    /// Amplitude of the uniform noise around zero used for cold starts.
    pub init_amplitude: f64,
    /// Cold starts run this many seeded minimizations and keep the best.
    pub multistart: usize,
    /// Iteration cap for the continuum fit; `None` uses the optimizer's.
    pub continuum_max_iters: Option<usize>,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            n_values: vec![4, 8, 16, 32, 64],
            continuum_nodes: 129,
            warm_start: true,
            init_amplitude: 0.1,
            multistart: 1,
            continuum_max_iters: None,
        }
    }
}

impl LadderConfig {
    pub fn validate(&self) -> Result<()> {
        let Some(&max_n) = self.n_values.iter().max() else {
            return Err(Error::invalid("ladder needs at least one n"));
        };
        if self.n_values.contains(&0) {
            return Err(Error::invalid("ladder layer counts must be positive"));
        }
        if self.n_values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("ladder n values must be nondecreasing"));
        }
        if self.continuum_nodes < max_n + 1 {
            return Err(Error::invalid(format!(
                "continuum_nodes = {} must be at least max n + 1 = {}",
                self.continuum_nodes,
                max_n + 1
            )));
        }
        if self.multistart == 0 {
            return Err(Error::invalid("multistart must be at least 1"));
        }
        if !(self.init_amplitude >= 0.0) {
            return Err(Error::invalid("init_amplitude must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRecord {
    pub n: usize,
    pub objective: ObjectiveBreakdown,
    /// `E_∞` at the continuum candidate `θ̂`; the same for every row.
    pub einf: f64,
    pub distance: ParamDistance,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Interior second-difference energy of `K^{(n)}`; `None` for `n < 3`.
    pub smoothness: Option<f64>,
}

impl LadderRecord {
    pub fn objective_gap(&self) -> f64 {
        (self.objective.total - self.einf).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumFit {
    pub theta: ContinuumParams,
    pub objective: ObjectiveBreakdown,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LadderOutcome {
    pub records: Vec<LadderRecord>,
    pub minimizers: Vec<DiscreteParams>,
    pub continuum: ContinuumFit,
    /// Wall-clock seconds per ladder row, then for the continuum fit. Kept
    /// apart from the records so those stay reproducible byte for byte.
    pub timings: Vec<f64>,
}

fn discrete_objective<'a>(
    problem: &'a TrainingProblem,
    template: &'a DiscreteParams,
) -> impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + Sync + 'a {
    move |x| {
        let (v, g) = value_and_gradient_en(problem, &template.with_flat(x)?)?;
        Ok((v.total, g.to_flat()))
    }
}

fn minimize_discrete(
    problem: &TrainingProblem,
    template: &DiscreteParams,
    start: Option<DVector<f64>>,
    cfg: &LadderConfig,
    opt: &OptimizeConfig,
) -> Result<OptimizeResult> {
    let f = discrete_objective(problem, template);
    match start {
        Some(x0) => OptimizeResult::or_partial(minimize(&f, x0, opt)),
        None if cfg.multistart > 1 => {
            let sampler = uniform_noise(template.len(), cfg.init_amplitude);
            let ms = multistart(&f, sampler, cfg.multistart, opt)?;
            Ok(ms.runs.into_iter().nth(ms.best_index).expect("best index is in range"))
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
            let x0 = uniform_noise(template.len(), cfg.init_amplitude)(&mut rng);
            OptimizeResult::or_partial(minimize(&f, x0, opt))
        }
    }
}

/// Minimizes `E_n` along the ladder, then `E_∞` starting from the finest
/// discrete minimizer, and measures each rung against the continuum result.
/// Line-search failures leave an unconverged row; the run continues.
pub fn ladder_run(
    problem: &TrainingProblem,
    cfg: &LadderConfig,
    opt: &OptimizeConfig,
    solver: &OdeSolveConfig,
) -> Result<LadderOutcome> {
    cfg.validate()?;
    opt.validate()?;
    solver.validate()?;
    if problem.data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (d, m) = (problem.data.input_dim(), problem.data.label_dim());

    let mut minimizers: Vec<DiscreteParams> = Vec::with_capacity(cfg.n_values.len());
    let mut runs = Vec::with_capacity(cfg.n_values.len());
    let mut timings = Vec::with_capacity(cfg.n_values.len() + 1);
    for &n in &cfg.n_values {
        let clock = Instant::now();
        let template = DiscreteParams::zeros(n, d, m)?;
        let start = match (cfg.warm_start, minimizers.last()) {
            (true, Some(prev)) => Some(
                ParamSet::new(upsample(&prev.k, n)?, upsample(&prev.b, n)?, prev.w.clone(), prev.c.clone())?
                    .to_flat(),
            ),
            _ => None,
        };
        let run = minimize_discrete(problem, &template, start, cfg, opt)?;
        log::info!(
            "n = {n}: E_n = {:.6e} after {} iterations (converged: {})",
            run.final_objective,
            run.iterations,
            run.converged
        );
        minimizers.push(template.with_flat(&run.x)?);
        runs.push(run);
        timings.push(clock.elapsed().as_secs_f64());
    }

    let clock = Instant::now();
    let finest = minimizers.last().expect("ladder is nonempty");
    let template = ContinuumParams::new(
        prolong(&finest.k, cfg.continuum_nodes)?,
        prolong(&finest.b, cfg.continuum_nodes)?,
        finest.w.clone(),
        finest.c.clone(),
    )?;
    let copt = OptimizeConfig {
        max_iters: cfg.continuum_max_iters.unwrap_or(opt.max_iters),
        ..*opt
    };
    let fit = OptimizeResult::or_partial(minimize(
        |x| {
            let (v, g) = value_and_gradient_einf(problem, &template.with_flat(x)?, solver)?;
            Ok((v.total, g.to_flat()))
        },
        template.to_flat(),
        &copt,
    ))?;
    let theta_hat = template.with_flat(&fit.x)?;
    let einf = objective_einf(problem, &theta_hat, solver)?;
    log::info!(
        "continuum: E_inf = {:.6e} after {} iterations (converged: {})",
        einf.total,
        fit.iterations,
        fit.converged
    );
    timings.push(clock.elapsed().as_secs_f64());

    let mut records = Vec::with_capacity(minimizers.len());
    for (theta, run) in minimizers.iter().zip(&runs) {
        records.push(LadderRecord {
            n: theta.n(),
            objective: problem.objective_en(theta)?,
            einf: einf.total,
            distance: param_distance(theta, &theta_hat)?,
            iterations: run.iterations,
            converged: run.converged,
            grad_norm: run.final_grad_norm(),
            smoothness: if theta.n() >= 3 {
                Some(smoothness_diagnostic(&theta.k, SMOOTHNESS_MARGIN)?)
            } else {
                None
            },
        });
    }
    Ok(LadderOutcome {
        records,
        minimizers,
        continuum: ContinuumFit {
            theta: theta_hat,
            objective: einf,
            iterations: fit.iterations,
            converged: fit.converged,
            grad_norm: fit.final_grad_norm(),
        },
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Classifier, HyperParams, TrainingSet};

    fn identity_problem() -> TrainingProblem {
        let x = DVector::from_element(1, 0.8);
        TrainingProblem::new(
            TrainingSet::new(vec![x.clone()], vec![x]).unwrap(),
            HyperParams::uniform(0.05, 1.0),
            Activation::Tanh,
            Classifier::Identity,
        )
        .unwrap()
    }

    fn quick() -> (OptimizeConfig, OdeSolveConfig) {
        (
            OptimizeConfig {
                max_iters: 400,
                grad_tol: 1e-7,
                seed: 17,
                ..Default::default()
            },
            OdeSolveConfig::rk4(128),
        )
    }

    #[test]
    fn repeated_n_gives_identical_rows() {
        let (opt, solver) = quick();
        let cfg = LadderConfig {
            n_values: vec![4, 4],
            continuum_nodes: 9,
            warm_start: false,
            ..Default::default()
        };
        let out = ladder_run(&identity_problem(), &cfg, &opt, &solver).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0], out.records[1]);
    }

    #[test]
    fn empty_data_rejected() {
        let (opt, solver) = quick();
        let p = TrainingProblem::new(TrainingSet::empty(1, 1), HyperParams::default(), Activation::Tanh, Classifier::Identity)
            .unwrap();
        assert!(matches!(ladder_run(&p, &LadderConfig::default(), &opt, &solver), Err(Error::EmptyData)));
    }

    #[test]
    fn identity_scenario_converges() {
        let (opt, solver) = quick();
        let cfg = LadderConfig {
            n_values: vec![2, 4, 8, 16],
            continuum_nodes: 33,
            ..Default::default()
        };
        let out = ladder_run(&identity_problem(), &cfg, &opt, &solver).unwrap();
        let first = &out.records[0];
        let last = out.records.last().unwrap();
        assert!(last.distance.total() <= first.distance.total());
        for r in &out.records {
            assert!(r.objective.total < 0.1, "{r:?}");
        }
        assert_eq!(out.timings.len(), 5);
    }

    #[test]
    fn invalid_ladders_rejected() {
        let bad = [
            LadderConfig { n_values: vec![], ..Default::default() },
            LadderConfig { n_values: vec![8, 4], ..Default::default() },
            LadderConfig { n_values: vec![4, 64], continuum_nodes: 64, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }
}
