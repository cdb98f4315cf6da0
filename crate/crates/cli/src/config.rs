//! Run configuration: one TOML file per run, every section optional,
//! unknown keys rejected. See `docs/schema.md` for the full schema.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use deeplimit_core::harness::LadderConfig;
use deeplimit_core::{Activation, Classifier, HyperParams, OdeSolveConfig, OptimizeConfig, StepRule};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum ConfigError {
    Read(PathBuf, std::io::Error),
    Parse(PathBuf, toml::de::Error),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Read(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub activation: Activation,
    pub classifier: Classifier,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let h = HyperParams::default();
        ModelSection {
            activation: Activation::default(),
            classifier: Classifier::default(),
            alpha1: h.alpha1,
            alpha2: h.alpha2,
            alpha3: h.alpha3,
            alpha4: h.alpha4,
            tau1: h.tau1,
            tau2: h.tau2,
        }
    }
}

impl ModelSection {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            alpha4: self.alpha4,
            tau1: self.tau1,
            tau2: self.tau2,
        }
    }
}

/// Optimizer settings without the seed, which lives at the top level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
    pub step_rule: StepRule,
    pub momentum: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizeConfig::default();
        OptimizerSection {
            max_iters: o.max_iters,
            grad_tol: o.grad_tol,
            armijo_c1: o.armijo_c1,
            backtrack: o.backtrack,
            initial_step: o.initial_step,
            step_rule: o.step_rule,
            momentum: o.momentum,
        }
    }
}

impl OptimizerSection {
    pub fn with_seed(&self, seed: u64) -> OptimizeConfig {
        OptimizeConfig {
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            armijo_c1: self.armijo_c1,
            backtrack: self.backtrack,
            initial_step: self.initial_step,
            step_rule: self.step_rule,
            momentum: self.momentum,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Layer count for `train-discrete`.
    pub n: usize,
    /// Node count for `train-continuum`.
    pub nodes: usize,
    pub init_amplitude: f64,
    pub multistart: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            n: 16,
            nodes: 33,
            init_amplitude: 0.1,
            multistart: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub n: usize,
    /// Random parameter sets to check.
    pub instances: usize,
    pub amplitude: f64,
    pub fd_step: f64,
    /// Random directions per instance for the directional check.
    pub directions: usize,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        GradCheckSection {
            n: 16,
            instances: 10,
            amplitude: 0.5,
            fd_step: deeplimit_core::adjoint::FD_DEFAULT_STEP,
            directions: 2,
        }
    }
}

/// Parameters `K(t) = k_amplitude · sin(2πt) · I`, `b(t) = b_slope · t · 1`
/// on `nodes` nodes, and the initial state `x0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EulerBoundSection {
    pub n_values: Vec<usize>,
    pub dim: usize,
    pub nodes: usize,
    pub k_amplitude: f64,
    pub b_slope: f64,
    /// Initial state; a single value is broadcast to every component.
    pub x0: Vec<f64>,
}

impl Default for EulerBoundSection {
    fn default() -> Self {
        EulerBoundSection {
            n_values: vec![8, 16, 32, 64, 128, 256],
            dim: 2,
            nodes: 1025,
            k_amplitude: 1.0,
            b_slope: 0.3,
            x0: vec![0.5],
        }
    }
}

/// `K(t) = amplitude · sin(2πt)` as a `1 × 1` path on `nodes` nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverySection {
    pub n_values: Vec<usize>,
    pub nodes: usize,
    pub amplitude: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        RecoverySection {
            n_values: vec![4, 8, 16, 32, 64, 128, 256],
            nodes: 4097,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorreySection {
    pub paths: usize,
    pub max_n: usize,
    pub max_dim: usize,
    pub amplitude: f64,
}

impl Default for MorreySection {
    fn default() -> Self {
        MorreySection {
            paths: 1000,
            max_n: 64,
            max_dim: 4,
            amplitude: 5.0,
        }
    }
}

/// Reads `(n, column)` pairs from a CSV, by default a ladder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateFitSection {
    pub input: Option<PathBuf>,
    pub column: String,
}

impl Default for RateFitSection {
    fn default() -> Self {
        RateFitSection {
            input: None,
            column: "distance".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    /// Training data CSV; relative paths resolve against the config file.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub solver: OdeSolveConfig,
    pub ladder: LadderConfig,
    pub train: TrainSection,
    pub grad_check: GradCheckSection,
    pub euler_bound: EulerBoundSection,
    pub recovery: RecoverySection,
    pub morrey: MorreySection,
    pub rate_fit: RateFitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: "run".into(),
            data: None,
            out: None,
            seed: 0,
            model: ModelSection::default(),
            optimizer: OptimizerSection::default(),
            solver: OdeSolveConfig::default(),
            ladder: LadderConfig::default(),
            train: TrainSection::default(),
            grad_check: GradCheckSection::default(),
            euler_bound: EulerBoundSection::default(),
            recovery: RecoverySection::default(),
            morrey: MorreySection::default(),
            rate_fit: RateFitSection::default(),
        }
    }
}

fn positive(name: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
    }
    Ok(())
}

fn increasing(name: &str, v: &[usize]) -> Result<(), ConfigError> {
    if v.is_empty() || v.contains(&0) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::Invalid(format!("{name} must be a nonempty increasing list of positive integers")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(origin.to_path_buf(), e))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.rate_fit.input].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }

    pub fn optimize_config(&self) -> OptimizeConfig {
        self.optimizer.with_seed(self.seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let core = |e: deeplimit_core::Error| ConfigError::Invalid(e.to_string());
        self.model.hyper().validate().map_err(core)?;
        self.optimize_config().validate().map_err(core)?;
        self.solver.validate().map_err(core)?;
        self.ladder.validate().map_err(core)?;
        positive("train.n", self.train.n)?;
        positive("train.multistart", self.train.multistart)?;
        if self.train.nodes < 2 {
            return Err(ConfigError::Invalid("train.nodes must be at least 2".into()));
        }
        positive("grad_check.n", self.grad_check.n)?;
        positive("grad_check.instances", self.grad_check.instances)?;
        if !(self.grad_check.fd_step > 0.0) {
            return Err(ConfigError::Invalid("grad_check.fd_step must be positive".into()));
        }
        increasing("euler_bound.n_values", &self.euler_bound.n_values)?;
        positive("euler_bound.dim", self.euler_bound.dim)?;
        if self.euler_bound.nodes < 2 {
            return Err(ConfigError::Invalid("euler_bound.nodes must be at least 2".into()));
        }
        if !(self.euler_bound.x0.len() == 1 || self.euler_bound.x0.len() == self.euler_bound.dim) {
            return Err(ConfigError::Invalid(format!(
                "euler_bound.x0 needs 1 or {} entries, got {}",
                self.euler_bound.dim,
                self.euler_bound.x0.len()
            )));
        }
        increasing("recovery.n_values", &self.recovery.n_values)?;
        if self.recovery.nodes < 2 {
            return Err(ConfigError::Invalid("recovery.nodes must be at least 2".into()));
        }
        positive("morrey.paths", self.morrey.paths)?;
        positive("morrey.max_n", self.morrey.max_n)?;
        positive("morrey.max_dim", self.morrey.max_dim)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_toml(text, Path::new("configs/test.toml"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("data = \"data/toy.csv\"\n").unwrap();
        assert_eq!(cfg.data.as_deref(), Some(Path::new("configs/data/toy.csv")));
        assert_eq!(cfg.model.activation, Activation::Tanh);
        assert_eq!(cfg.model.classifier, Classifier::Identity);
        assert_eq!(cfg.model.hyper(), HyperParams::uniform(1.0, 1.0));
        assert_eq!(cfg.optimize_config(), OptimizeConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[model]\nalpha5 = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("alpha5"), "{err}");
        let err = parse("colour = 1\n").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse("seed = 1\n[model]\nalpha1 = \n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse("[model]\ntau1 = 0.0\n").unwrap_err().to_string().contains("tau1"));
        assert!(parse("[ladder]\nn_values = [8, 4]\n").is_err());
        assert!(parse("[euler_bound]\nn_values = [4, 4]\n").is_err());
        assert!(parse("[model]\nactivation = \"sigmoid\"\n").is_err());
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let text = "experiment = \"x\"\nseed = 9\ndata = \"/abs/d.csv\"\n\
                    [model]\nactivation = \"relu\"\nalpha3 = 0.25\n\
                    [optimizer]\nstep_rule = \"growth\"\nmomentum = 0.5\n\
                    [solver]\nmethod = \"explicit-euler\"\nsteps = 64\n\
                    [ladder]\nn_values = [2, 4]\ncontinuum_nodes = 9\ncontinuum_max_iters = 10\n";
        let cfg = parse(text).unwrap();
        let back = parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        let defaults = RunConfig::default();
        assert_eq!(parse(&defaults.to_toml()).unwrap(), defaults);
    }
}
