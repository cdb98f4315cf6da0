use std::error::Error as StdError;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deeplimit_core::adjoint::{fd_gradient, relative_error, value_and_gradient_en, FD_SLOPE_STEPS};
use deeplimit_core::continuum::value_and_gradient_einf;
use deeplimit_core::harness::{
    euler_bound_check, ladder_run, morrey_property, rate_fit, recovery_check, trajectory_gap,
};
use deeplimit_core::io::{fmt_float, Table};
use deeplimit_core::optimize::uniform_noise;
use deeplimit_core::spaces::restrict_nodal;
use deeplimit_core::{
    fd_check, minimize, multistart, objective_einf, ContinuumParams, ContinuumPath, DiscreteParams, DiscretePath,
    Nodal, OdeSolveConfig, OptimizeResult, TrainingProblem, TrainingSet,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::output::RunOutput;

pub type CmdResult<T> = Result<T, Box<dyn StdError + Send + Sync>>;

pub const COMMANDS: [&str; 8] = [
    "train-discrete",
    "train-continuum",
    "ladder",
    "euler-bound",
    "grad-check",
    "recovery-check",
    "morrey-sweep",
    "rate-fit",
];

/// Runs `command` and returns the manifest path.
pub fn dispatch(command: &str, cfg: &RunConfig, out_dir: &Path) -> CmdResult<PathBuf> {
    let clock = Instant::now();
    let mut out = RunOutput::create(out_dir, command)?;
    let summary = match command {
        "train-discrete" => train_discrete(cfg, &mut out)?,
        "train-continuum" => train_continuum(cfg, &mut out)?,
        "ladder" => ladder(cfg, &mut out)?,
        "euler-bound" => euler_bound(cfg, &mut out)?,
        "grad-check" => grad_check(cfg, &mut out)?,
        "recovery-check" => recovery(cfg, &mut out)?,
        "morrey-sweep" => morrey(cfg, &mut out)?,
        "rate-fit" => rate(cfg, &mut out)?,
        other => return Err(format!("unknown command `{other}`; expected one of {}", COMMANDS.join(", ")).into()),
    };
    out.timing("total", clock.elapsed().as_secs_f64());
    Ok(out.finish(cfg, summary)?)
}

fn problem(cfg: &RunConfig) -> CmdResult<TrainingProblem> {
    let path = cfg.data.as_ref().ok_or("this command needs `data` in the config")?;
    let data = TrainingSet::from_csv(path, None).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(TrainingProblem::new(
        data,
        cfg.model.hyper(),
        cfg.model.activation,
        cfg.model.classifier,
    )?)
}

fn f(v: f64) -> String {
    fmt_float(v)
}

fn trace_table(res: &OptimizeResult) -> Table {
    let mut t = Table::new(["iter", "objective", "grad_norm", "step"]);
    for r in &res.trace {
        t.push(vec![r.iter.to_string(), f(r.objective), f(r.grad_norm), f(r.step)]);
    }
    t
}

/// Long format: one row per scalar entry. `node` is the layer index for
/// discrete parameters, the node index for continuum ones, empty for `W`, `c`.
fn params_table<K, B>(k: &K, b: &B, w: &DMatrix<f64>, c: &DVector<f64>) -> Table
where
    K: Nodal<DMatrix<f64>>,
    B: Nodal<DVector<f64>>,
{
    let mut t = Table::new(["block", "node", "row", "col", "value"]);
    for (j, m) in k.values().iter().enumerate() {
        for r in 0..m.nrows() {
            for col in 0..m.ncols() {
                t.push(vec!["K".into(), j.to_string(), r.to_string(), col.to_string(), f(m[(r, col)])]);
            }
        }
    }
    for (j, v) in b.values().iter().enumerate() {
        for r in 0..v.len() {
            t.push(vec!["b".into(), j.to_string(), r.to_string(), "0".into(), f(v[r])]);
        }
    }
    for r in 0..w.nrows() {
        for col in 0..w.ncols() {
            t.push(vec!["W".into(), String::new(), r.to_string(), col.to_string(), f(w[(r, col)])]);
        }
    }
    for r in 0..c.len() {
        t.push(vec!["c".into(), String::new(), r.to_string(), "0".into(), f(c[r])]);
    }
    t
}

fn train_discrete(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let p = problem(cfg)?;
    let opt = cfg.optimize_config();
    let template = DiscreteParams::zeros(cfg.train.n, p.data.input_dim(), p.data.label_dim())?;
    let obj = |x: &DVector<f64>| {
        let (v, g) = value_and_gradient_en(&p, &template.with_flat(x)?)?;
        Ok((v.total, g.to_flat()))
    };
    let sampler = uniform_noise(template.len(), cfg.train.init_amplitude);
    let res = if cfg.train.multistart > 1 {
        let ms = multistart(obj, sampler, cfg.train.multistart, &opt)?;
        ms.runs.into_iter().nth(ms.best_index).expect("best index is in range")
    } else {
        let x0 = sampler(&mut ChaCha8Rng::seed_from_u64(opt.seed));
        OptimizeResult::or_partial(minimize(obj, x0, &opt))?
    };
    let theta = template.with_flat(&res.x)?;
    out.table(None, &trace_table(&res))?;
    out.table(Some("params"), &params_table(&theta.k, &theta.b, &theta.w, &theta.c))?;
    Ok(json!({
        "n": cfg.train.n,
        "objective": p.objective_en(&theta)?,
        "iterations": res.iterations,
        "converged": res.converged,
        "grad_norm": res.final_grad_norm(),
    }))
}

fn train_continuum(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let p = problem(cfg)?;
    let opt = cfg.optimize_config();
    let template = ContinuumParams::zeros(cfg.train.nodes, p.data.input_dim(), p.data.label_dim())?;
    let obj = |x: &DVector<f64>| {
        let (v, g) = value_and_gradient_einf(&p, &template.with_flat(x)?, &cfg.solver)?;
        Ok((v.total, g.to_flat()))
    };
    let sampler = uniform_noise(template.len(), cfg.train.init_amplitude);
    let res = if cfg.train.multistart > 1 {
        let ms = multistart(obj, sampler, cfg.train.multistart, &opt)?;
        ms.runs.into_iter().nth(ms.best_index).expect("best index is in range")
    } else {
        let x0 = sampler(&mut ChaCha8Rng::seed_from_u64(opt.seed));
        OptimizeResult::or_partial(minimize(obj, x0, &opt))?
    };
    let theta = template.with_flat(&res.x)?;
    out.table(None, &trace_table(&res))?;
    out.table(Some("params"), &params_table(&theta.k, &theta.b, &theta.w, &theta.c))?;
    Ok(json!({
        "nodes": cfg.train.nodes,
        "objective": objective_einf(&p, &theta, &cfg.solver)?,
        "iterations": res.iterations,
        "converged": res.converged,
        "grad_norm": res.final_grad_norm(),
    }))
}

fn ladder(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let p = problem(cfg)?;
    let res = ladder_run(&p, &cfg.ladder, &cfg.optimize_config(), &cfg.solver)?;
    let mut t = Table::new([
        "n",
        "objective",
        "loss",
        "r1",
        "r2",
        "r3",
        "r4",
        "einf",
        "objective_gap",
        "distance",
        "d1",
        "d2",
        "dw",
        "dc",
        "iterations",
        "converged",
        "grad_norm",
        "smoothness",
    ]);
    for r in &res.records {
        let o = &r.objective;
        let d = &r.distance;
        t.push(vec![
            r.n.to_string(),
            f(o.total),
            f(o.loss),
            f(o.r1),
            f(o.r2),
            f(o.r3),
            f(o.r4),
            f(r.einf),
            f(r.objective_gap()),
            f(d.total()),
            f(d.d1),
            f(d.d2),
            f(d.w),
            f(d.c),
            r.iterations.to_string(),
            r.converged.to_string(),
            f(r.grad_norm),
            r.smoothness.map(f).unwrap_or_default(),
        ]);
    }
    out.table(None, &t)?;
    let th = &res.continuum.theta;
    out.table(Some("continuum_params"), &params_table(&th.k, &th.b, &th.w, &th.c))?;
    for (r, secs) in res.records.iter().zip(&res.timings) {
        out.timing(format!("n={}", r.n), *secs);
    }
    if let Some(secs) = res.timings.last() {
        out.timing("continuum", *secs);
    }

    let pairs: Vec<(f64, f64)> = res.records.iter().map(|r| (r.n as f64, r.distance.total())).collect();
    let rate = if pairs.len() >= 3 {
        match rate_fit(&pairs) {
            Ok(fit) => {
                log::info!("distance rate: slope {:.3} (R² {:.3})", fit.slope, fit.r_squared);
                json!(fit)
            }
            Err(e) => {
                log::warn!("distance rate fit skipped: {e}");
                Value::Null
            }
        }
    } else {
        Value::Null
    };
    Ok(json!({
        "rows": res.records.len(),
        "continuum": {
            "objective": res.continuum.objective,
            "iterations": res.continuum.iterations,
            "converged": res.continuum.converged,
            "grad_norm": res.continuum.grad_norm,
        },
        "distance_rate": rate,
    }))
}

type EulerInputs = (ContinuumPath<DMatrix<f64>>, ContinuumPath<DVector<f64>>, DVector<f64>);

fn euler_paths(cfg: &RunConfig) -> CmdResult<EulerInputs> {
    let e = &cfg.euler_bound;
    let d = e.dim;
    let k = ContinuumPath::from_fn(e.nodes, |t| DMatrix::identity(d, d) * (e.k_amplitude * (TAU * t).sin()))?;
    let b = ContinuumPath::from_fn(e.nodes, |t| DVector::from_element(d, e.b_slope * t))?;
    let x = if e.x0.len() == 1 {
        DVector::from_element(d, e.x0[0])
    } else {
        DVector::from_column_slice(&e.x0)
    };
    Ok((k, b, x))
}

fn euler_bound(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let (k, b, x) = euler_paths(cfg)?;
    let sigma = cfg.model.activation;
    let mut rows = Table::new(["n", "i", "t", "lhs", "rhs", "holds"]);
    let mut summary = Table::new([
        "n",
        "delta_n",
        "k_sup",
        "x_sup",
        "r_n",
        "d_n",
        "lipschitz",
        "sup_lhs",
        "violations",
        "trajectory_gap",
    ]);
    let mut violations = 0;
    for &n in &cfg.euler_bound.n_values {
        let (kn, bn) = (restrict_nodal(&k, n)?, restrict_nodal(&b, n)?);
        let reference = OdeSolveConfig::reference_for(n);
        let report = euler_bound_check(&k, &b, &kn, &bn, &x, sigma, &reference)?;
        let gap = trajectory_gap(&k, &b, &kn, &bn, &x, sigma, &reference)?;
        for r in &report.rows {
            rows.push(vec![n.to_string(), r.i.to_string(), f(r.t), f(r.lhs), f(r.rhs), r.holds.to_string()]);
        }
        summary.push(vec![
            n.to_string(),
            f(report.delta_n),
            f(report.k_sup),
            f(report.x_sup),
            f(report.r_n),
            f(report.d_n),
            f(report.lipschitz),
            f(report.sup_lhs()),
            report.violations().to_string(),
            f(gap),
        ]);
        violations += report.violations();
        if report.violations() > 0 {
            log::warn!("n = {n}: {} rows violate the bound", report.violations());
        }
    }
    out.table(None, &rows)?;
    out.table(Some("summary"), &summary)?;
    Ok(json!({ "violations": violations }))
}

fn grad_check(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let p = problem(cfg)?;
    let g = &cfg.grad_check;
    let template = DiscreteParams::zeros(g.n, p.data.input_dim(), p.data.label_dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords = Table::new(["instance", "coordinate", "analytic", "finite_difference", "relative_error"]);
    let mut dirs = Table::new(["instance", "direction", "analytic", "slope"]);
    let mut worst: f64 = 0.0;
    let mut slopes = Vec::new();
    for inst in 0..g.instances {
        let theta = template.random_like(&mut rng, g.amplitude);
        let (_, grad) = value_and_gradient_en(&p, &theta)?;
        let grad = grad.to_flat();
        let x = theta.to_flat();
        let fd = fd_gradient(|y| Ok(p.objective_en(&template.with_flat(y)?)?.total), &x, g.fd_step)?;
        for i in 0..x.len() {
            let err = relative_error(grad[i], fd[i]);
            worst = worst.max(err);
            coords.push(vec![inst.to_string(), i.to_string(), f(grad[i]), f(fd[i]), f(err)]);
        }
        for j in 0..g.directions {
            let xi = template.random_like(&mut rng, 1.0);
            let analytic = grad.dot(&xi.to_flat());
            let report = fd_check(|r| Ok(p.objective_en(&theta.offset(r, &xi)?)?.total), analytic, &FD_SLOPE_STEPS)?;
            if let Some(s) = report.slope {
                slopes.push(s);
            }
            dirs.push(vec![
                inst.to_string(),
                j.to_string(),
                f(analytic),
                report.slope.map(f).unwrap_or_default(),
            ]);
        }
    }
    out.table(None, &coords)?;
    out.table(Some("directional"), &dirs)?;
    let min_slope = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let max_slope = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(json!({
        "max_relative_error": worst,
        "min_slope": if slopes.is_empty() { Value::Null } else { json!(min_slope) },
        "max_slope": if slopes.is_empty() { Value::Null } else { json!(max_slope) },
    }))
}

fn recovery(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let r = &cfg.recovery;
    let k = ContinuumPath::from_fn(r.nodes, |t| DMatrix::from_element(1, 1, r.amplitude * (TAU * t).sin()))?;
    let rows = recovery_check(&k, cfg.model.tau1, &r.n_values)?;
    let mut t = Table::new(["n", "r1n", "r1inf", "d1", "d1_bound", "within_bound"]);
    for row in &rows {
        t.push(vec![
            row.n.to_string(),
            f(row.r1n),
            f(row.r1inf),
            f(row.d1),
            f(row.d1_bound),
            row.within_bound.to_string(),
        ]);
    }
    out.table(None, &t)?;
    Ok(json!({
        "all_within_bound": rows.iter().all(|r| r.within_bound),
        "r1inf": rows.first().map(|r| r.r1inf),
    }))
}

fn morrey(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let m = &cfg.morrey;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = Table::new(["path", "n", "dim", "lhs", "rhs", "holds"]);
    let mut violations = 0;
    for i in 0..m.paths {
        let n = rng.random_range(1..=m.max_n);
        let d = rng.random_range(1..=m.max_dim);
        let values = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-m.amplitude..=m.amplitude)))
            .collect();
        let report = morrey_property(&DiscretePath::new(values)?);
        if !report.holds {
            violations += 1;
        }
        t.push(vec![
            i.to_string(),
            n.to_string(),
            d.to_string(),
            f(report.lhs_sup_sq),
            f(report.rhs_bound),
            report.holds.to_string(),
        ]);
    }
    out.table(None, &t)?;
    Ok(json!({ "paths": m.paths, "violations": violations }))
}

fn rate(cfg: &RunConfig, out: &mut RunOutput) -> CmdResult<Value> {
    let r = &cfg.rate_fit;
    let input = r.input.as_ref().ok_or("rate-fit needs `rate_fit.input` in the config")?;
    let mut reader = csv::Reader::from_path(input).map_err(|e| format!("{}: {e}", input.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("{}: no column `{name}`", input.display()))
    };
    let (ni, vi) = (col("n")?, col(&r.column)?);
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record?;
        pairs.push((record[ni].parse::<f64>()?, record[vi].parse::<f64>()?));
    }
    let fit = rate_fit(&pairs)?;
    let mut t = Table::new(["column", "slope", "intercept", "r_squared", "used", "excluded"]);
    t.push(vec![
        r.column.clone(),
        f(fit.slope),
        f(fit.intercept),
        f(fit.r_squared),
        fit.used.to_string(),
        fit.excluded.to_string(),
    ]);
    out.table(None, &t)?;
    Ok(json!(fit))
}
