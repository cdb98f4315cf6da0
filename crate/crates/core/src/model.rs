//! The n-layer residual network, its loss and regularizers.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spaces::{DiscreteParams, DiscretePath, Element, MatrixPath, VectorPath};

/// Componentwise activation `σ`. Every variant satisfies `σ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    /// `σ̇(0)` is taken to be 0.
    Relu,
    /// `x · logistic(x)`, a smooth ReLU surrogate.
    Silu,
    Identity,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Silu,
        Activation::Identity,
    ];

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "activation",
                name: name.to_string(),
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Silu => "silu",
            Activation::Identity => "identity",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * logistic(x),
            Activation::Identity => x,
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = logistic(x);
                s + x * s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    /// `σ̈`, absent for ReLU.
    pub fn second_deriv(self, x: f64) -> Option<f64> {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                Some(-2.0 * t * (1.0 - t * t))
            }
            Activation::Relu => None,
            Activation::Silu => {
                let s = logistic(x);
                Some(s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s)))
            }
            Activation::Identity => Some(0.0),
        }
    }

    /// Global Lipschitz constant `L_σ`.
    pub fn lipschitz(self) -> f64 {
        match self {
            // sup |σ̇| for SiLU is about 1.0998
            Activation::Silu => 1.1,
            _ => 1.0,
        }
    }

    pub fn is_smooth(self) -> bool {
        self != Activation::Relu
    }

    pub fn apply(self, z: &DVector<f64>) -> DVector<f64> {
        z.map(|v| self.eval(v))
    }

    pub fn apply_deriv(self, z: &DVector<f64>) -> DVector<f64> {
        z.map(|v| self.deriv(v))
    }
}

/// Componentwise output map `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    #[default]
    Identity,
    Tanh,
}

impl Classifier {
    pub const ALL: [Classifier; 2] = [Classifier::Identity, Classifier::Tanh];

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "classifier",
                name: name.to_string(),
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Classifier::Identity => "identity",
            Classifier::Tanh => "tanh",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Classifier::Identity => x,
            Classifier::Tanh => x.tanh(),
        }
    }

    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Classifier::Identity => 1.0,
            Classifier::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    inputs: Vec<DVector<f64>>,
    labels: Vec<DVector<f64>>,
    d: usize,
    m: usize,
}

impl TrainingSet {
    pub fn new(inputs: Vec<DVector<f64>>, labels: Vec<DVector<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyData);
        }
        if inputs.len() != labels.len() {
            return Err(Error::shape("label count", inputs.len(), labels.len()));
        }
        let d = inputs[0].len();
        let m = labels[0].len();
        if d == 0 || m == 0 {
            return Err(Error::invalid("input and label dimensions must be positive"));
        }
        for (x, y) in inputs.iter().zip(&labels) {
            if x.len() != d {
                return Err(Error::shape("input dimension", d, x.len()));
            }
            if y.len() != m {
                return Err(Error::shape("label dimension", m, y.len()));
            }
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::NonFinite {
                    context: "training data".into(),
                });
            }
        }
        Ok(TrainingSet {
            inputs,
            labels,
            d,
            m,
        })
    }

    /// A set with no samples, for regularizer-only objectives.
    pub fn empty(d: usize, m: usize) -> Self {
        TrainingSet {
            inputs: Vec::new(),
            labels: Vec::new(),
            d,
            m,
        }
    }

    /// Reads `d` input columns followed by `m` label columns. With
    /// `input_dim = None` the inputs are the leading columns whose header
    /// starts with `x`.
    pub fn from_csv(path: impl AsRef<Path>, input_dim: Option<usize>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let d = match input_dim {
            Some(d) => d,
            None => headers.iter().take_while(|h| h.starts_with('x')).count(),
        };
        if d == 0 || d >= headers.len() {
            return Err(Error::invalid(format!(
                "{}: cannot split {} columns into inputs and labels",
                path.as_ref().display(),
                headers.len()
            )));
        }
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        Error::invalid(format!("row {}: `{s}` is not a number ({e})", row + 2))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            inputs.push(DVector::from_column_slice(&values[..d]));
            labels.push(DVector::from_column_slice(&values[d..]));
        }
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn label_dim(&self) -> usize {
        self.m
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[DVector<f64>] {
        &self.labels
    }

    pub fn sample(&self, s: usize) -> (&DVector<f64>, &DVector<f64>) {
        (&self.inputs[s], &self.labels[s])
    }
}

/// Regularization weights `α₁..α₄` and initial-value penalties `τ₁, τ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams::uniform(1.0, 1.0)
    }
}

impl HyperParams {
    pub fn uniform(alpha: f64, tau: f64) -> Self {
        HyperParams {
            alpha1: alpha,
            alpha2: alpha,
            alpha3: alpha,
            alpha4: alpha,
            tau1: tau,
            tau2: tau,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("alpha4", self.alpha4),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// States `X_0..X_n` of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn output(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least the input state")
    }
}

/// One residual update `x + h σ(K x + b)`. The layer recursion and the
/// explicit Euler solver both go through here so their arithmetic agrees
/// to the last bit.
pub fn residual_step(
    x: &DVector<f64>,
    k: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: Activation,
    h: f64,
) -> DVector<f64> {
    let z = k * x + b;
    x + sigma.apply(&z) * h
}

pub fn forward_pass(
    x: &DVector<f64>,
    k: &MatrixPath,
    b: &VectorPath,
    sigma: Activation,
) -> Result<Trajectory> {
    let d = k.dim_checked();
    if x.len() != d {
        return Err(Error::shape("network input", d, x.len()));
    }
    if b.n() != k.n() {
        return Err(Error::shape("bias layer count", k.n(), b.n()));
    }
    if b.get(0).len() != d {
        return Err(Error::shape("bias dimension", d, b.get(0).len()));
    }
    let n = k.n();
    let h = 1.0 / n as f64;
    let mut states = Vec::with_capacity(n + 1);
    states.push(x.clone());
    for i in 0..n {
        let next = residual_step(&states[i], k.get(i), b.get(i), sigma, h);
        if !next.is_finite() {
            return Err(Error::NonFinite {
                context: format!("forward pass, layer {}", i + 1),
            });
        }
        states.push(next);
    }
    Ok(Trajectory { states })
}

impl<E: Element> DiscretePath<E> {
    pub(crate) fn dim_checked(&self) -> usize {
        self.get(0).dim()
    }
}

/// `n Σ_{i≥1} |v_i − v_{i−1}|² + τ |v_0|²` for either flavor.
pub fn reg_discrete<E: Element>(path: &DiscretePath<E>, tau: f64) -> f64 {
    let n = path.n() as f64;
    let values: Vec<&E> = path.iter().collect();
    let jumps: f64 = values
        .windows(2)
        .map(|w| w[1].sub(w[0]).norm_squared())
        .sum();
    n * jumps + tau * values[0].norm_squared()
}

pub fn reg_r1n(k: &MatrixPath, tau1: f64) -> f64 {
    reg_discrete(k, tau1)
}

pub fn reg_r2n(b: &VectorPath, tau2: f64) -> f64 {
    reg_discrete(b, tau2)
}

pub fn reg_r3(w: &DMatrix<f64>) -> f64 {
    w.norm_squared()
}

pub fn reg_r4(c: &DVector<f64>) -> f64 {
    c.norm_squared()
}

/// Objective value with its unweighted parts. `total` applies the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub loss: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub total: f64,
}

impl ObjectiveBreakdown {
    pub fn assemble(loss: f64, r: [f64; 4], hyper: &HyperParams) -> Self {
        let total = loss
            + hyper.alpha1 * r[0]
            + hyper.alpha2 * r[1]
            + hyper.alpha3 * r[2]
            + hyper.alpha4 * r[3];
        ObjectiveBreakdown {
            loss,
            r1: r[0],
            r2: r[1],
            r3: r[2],
            r4: r[3],
            total,
        }
    }
}

/// Evaluates `f` for every sample index, in parallel for larger sets. The
/// result order is the sample order, so later reductions are deterministic.
pub(crate) fn map_samples<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if count >= 16 {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

/// Data, weights and nonlinearities shared by the discrete and continuum
/// objectives.
#[derive(Debug, Clone)]
pub struct TrainingProblem {
    pub data: TrainingSet,
    pub hyper: HyperParams,
    pub activation: Activation,
    pub classifier: Classifier,
}

impl TrainingProblem {
    pub fn new(
        data: TrainingSet,
        hyper: HyperParams,
        activation: Activation,
        classifier: Classifier,
    ) -> Result<Self> {
        hyper.validate()?;
        Ok(TrainingProblem {
            data,
            hyper,
            activation,
            classifier,
        })
    }

    /// `h(W x + c)` and the pre-image `W x + c`.
    pub fn classify(
        &self,
        w: &DMatrix<f64>,
        c: &DVector<f64>,
        x: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let u = w * x + c;
        let out = u.map(|v| self.classifier.eval(v));
        (out, u)
    }

    pub(crate) fn check_dims(&self, d: usize, m: usize) -> Result<()> {
        if self.data.input_dim() != d {
            return Err(Error::shape("parameter dimension d", self.data.input_dim(), d));
        }
        if self.data.label_dim() != m {
            return Err(Error::shape("parameter dimension m", self.data.label_dim(), m));
        }
        Ok(())
    }

    pub fn loss_en(&self, theta: &DiscreteParams) -> Result<f64> {
        let (d, m) = theta.dims();
        self.check_dims(d, m)?;
        let per_sample = map_samples(self.data.len(), |s| {
            let (x, y) = self.data.sample(s);
            let traj = forward_pass(x, &theta.k, &theta.b, self.activation)?;
            let (out, _) = self.classify(&theta.w, &theta.c, traj.output());
            Ok((out - y).norm_squared())
        })?;
        Ok(per_sample.into_iter().sum())
    }

    pub fn objective_en(&self, theta: &DiscreteParams) -> Result<ObjectiveBreakdown> {
        let loss = self.loss_en(theta)?;
        let r = [
            reg_r1n(&theta.k, self.hyper.tau1),
            reg_r2n(&theta.b, self.hyper.tau2),
            reg_r3(&theta.w),
            reg_r4(&theta.c),
        ];
        Ok(ObjectiveBreakdown::assemble(loss, r, &self.hyper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::{restrict_cell_average, ContinuumPath, Nodal};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar_k(vals: &[f64]) -> MatrixPath {
        DiscretePath::new(vals.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect()).unwrap()
    }

    fn scalar_b(vals: &[f64]) -> VectorPath {
        DiscretePath::new(vals.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap()
    }

    fn v1(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    fn scalar_params(n: usize, k: f64, b: f64, w: f64, c: f64) -> DiscreteParams {
        DiscreteParams::new(
            scalar_k(&vec![k; n]),
            scalar_b(&vec![b; n]),
            DMatrix::from_element(1, 1, w),
            v1(c),
        )
        .unwrap()
    }

    #[test]
    fn activations_vanish_at_zero() {
        for a in Activation::ALL {
            assert_eq!(a.eval(0.0), 0.0, "{}", a.name());
        }
        assert_eq!(Activation::Relu.deriv(0.0), 0.0);
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        let pts = [-2.3, -0.7, -0.1, 0.05, 0.4, 1.9];
        let r = 1e-5;
        for a in Activation::ALL {
            for &x in &pts {
                let fd = (a.eval(x + r) - a.eval(x - r)) / (2.0 * r);
                assert!((fd - a.deriv(x)).abs() < 1e-6, "{} at {x}", a.name());
                if let Some(dd) = a.second_deriv(x) {
                    let fd2 = (a.deriv(x + r) - a.deriv(x - r)) / (2.0 * r);
                    assert!((fd2 - dd).abs() < 1e-6, "{} second at {x}", a.name());
                }
            }
        }
        for c in Classifier::ALL {
            for &x in &pts {
                let fd = (c.eval(x + r) - c.eval(x - r)) / (2.0 * r);
                assert!((fd - c.deriv(x)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn names_roundtrip() {
        for a in Activation::ALL {
            assert_eq!(Activation::from_name(a.name()).unwrap(), a);
        }
        assert!(matches!(
            Classifier::from_name("softmax"),
            Err(Error::UnknownName { .. })
        ));
    }

    proptest! {
        #[test]
        fn activations_are_lipschitz(x in -20.0..20.0f64, y in -20.0..20.0f64) {
            for a in Activation::ALL {
                prop_assert!((a.eval(x) - a.eval(y)).abs() <= a.lipschitz() * (x - y).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn zero_parameters_fix_the_input() {
        let x = DVector::from_vec(vec![0.3, -1.2]);
        let traj = forward_pass(
            &x,
            &DiscretePath::zeros(5, 2).unwrap(),
            &DiscretePath::zeros(5, 2).unwrap(),
            Activation::Tanh,
        )
        .unwrap();
        assert!(traj.states.iter().all(|s| *s == x));
    }

    #[test]
    fn identity_network_compounds() {
        let traj = forward_pass(&v1(1.0), &scalar_k(&[1.0; 4]), &scalar_b(&[0.0; 4]), Activation::Identity)
            .unwrap();
        assert_relative_eq!(traj.output()[0], 2.44140625, epsilon = 1e-15);
    }

    #[test]
    fn tanh_two_layers_by_hand() {
        let traj = forward_pass(&v1(1.0), &scalar_k(&[1.0; 2]), &scalar_b(&[0.0; 2]), Activation::Tanh).unwrap();
        let x1 = 1.0 + 1f64.tanh() / 2.0;
        let x2 = x1 + x1.tanh() / 2.0;
        assert_relative_eq!(traj.output()[0], x2, epsilon = 1e-15);
    }

    #[test]
    fn forward_pass_rejects_bad_shapes_and_blowup() {
        let k = scalar_k(&[1.0; 3]);
        let b = scalar_b(&[0.0; 3]);
        assert!(forward_pass(&DVector::zeros(2), &k, &b, Activation::Tanh).is_err());
        assert!(forward_pass(&v1(1.0), &k, &scalar_b(&[0.0; 2]), Activation::Tanh).is_err());
        let huge = scalar_k(&[1e300; 3]);
        assert!(matches!(
            forward_pass(&v1(1e10), &huge, &b, Activation::Identity),
            Err(Error::NonFinite { .. })
        ));
    }

    fn single(x: f64, y: f64) -> TrainingSet {
        TrainingSet::new(vec![v1(x)], vec![v1(y)]).unwrap()
    }

    fn problem(data: TrainingSet, a: Activation) -> TrainingProblem {
        TrainingProblem::new(data, HyperParams::default(), a, Classifier::Identity).unwrap()
    }

    #[test]
    fn zero_params_loss_is_label_energy() {
        let data = TrainingSet::new(
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.5])],
            vec![DVector::from_vec(vec![3.0]), DVector::from_vec(vec![-4.0])],
        )
        .unwrap();
        let p = problem(data, Activation::Tanh);
        let theta = DiscreteParams::zeros(6, 2, 1).unwrap();
        let obj = p.objective_en(&theta).unwrap();
        assert_eq!(obj.loss, 25.0);
        assert_eq!(obj.total, 25.0);
    }

    #[test]
    fn identity_loss_closed_form() {
        let p = problem(single(1.0, 0.0), Activation::Identity);
        let loss = p.loss_en(&scalar_params(4, 1.0, 0.0, 1.0, 0.0)).unwrap();
        assert_relative_eq!(loss, 1.25f64.powi(8), max_relative = 1e-14);
        assert_relative_eq!(loss, 5.9604644775, epsilon = 1e-10);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let theta = scalar_params(3, 0.7, -0.2, 1.5, 0.1);
        let out = forward_pass(&v1(0.4), &theta.k, &theta.b, Activation::Tanh).unwrap();
        let y = 1.5 * out.output()[0] + 0.1;
        let p = problem(single(0.4, y), Activation::Tanh);
        assert_eq!(p.loss_en(&theta).unwrap(), 0.0);
    }

    #[test]
    fn discrete_regularizers() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, -1.0]);
        let k = DiscretePath::constant(5, a.clone()).unwrap();
        assert_relative_eq!(reg_r1n(&k, 0.5), 0.5 * 6.0);
        for n in [1usize, 2, 7, 40] {
            let k = scalar_k(&(0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>());
            assert_relative_eq!(reg_r1n(&k, 3.0), (n as f64 - 1.0) / n as f64, max_relative = 1e-13);
            let b = scalar_b(&(0..n).map(|i| i as f64 / n as f64).collect::<Vec<_>>());
            assert_relative_eq!(reg_r2n(&b, 3.0), (n as f64 - 1.0) / n as f64, max_relative = 1e-13);
        }
        assert_eq!(reg_r1n(&DiscretePath::zeros(4, 3).unwrap(), 1.0), 0.0);
        assert_eq!(reg_r2n(&DiscretePath::zeros(4, 3).unwrap(), 1.0), 0.0);
    }

    #[test]
    fn classifier_regularizers() {
        assert_eq!(reg_r3(&DMatrix::zeros(2, 2)), 0.0);
        assert_eq!(reg_r3(&DMatrix::identity(2, 2)), 2.0);
        let w = DMatrix::from_row_slice(2, 3, &[0.3, -1.1, 2.0, 0.7, 0.0, -0.25]);
        let oracle: f64 = [0.3f64, -1.1, 2.0, 0.7, 0.0, -0.25].iter().map(|v| v * v).sum();
        assert_relative_eq!(reg_r3(&w), oracle, epsilon = 1e-15);
        assert_eq!(reg_r4(&DVector::from_vec(vec![3.0, 4.0])), 25.0);
    }

    #[test]
    fn unbounded_classifier_family() {
        // x = y makes the network an exact fit for W = 1, c = 0 and for W = 2, c = -1
        // at x = 1; only the classifier penalties distinguish them.
        let hyper = HyperParams {
            alpha3: 0.3,
            alpha4: 0.7,
            ..HyperParams::default()
        };
        let p = TrainingProblem::new(single(1.0, 1.0), hyper, Activation::Tanh, Classifier::Identity).unwrap();
        let a = p.objective_en(&scalar_params(4, 0.0, 0.0, 1.0, 0.0)).unwrap();
        assert_eq!(a.loss, 0.0);
        assert_relative_eq!(a.total, 0.3);
        let b = p.objective_en(&scalar_params(4, 0.0, 0.0, 2.0, -1.0)).unwrap();
        assert_eq!(b.loss, 0.0);
        assert_relative_eq!(b.total, 0.3 * 4.0 + 0.7);
    }

    #[test]
    fn diverging_tanh_family_decreases_loss() {
        // Without an initial-value penalty a growing constant K drives tanh(K x)
        // towards sign(x); the loss decreases monotonically along the family.
        let data = TrainingSet::new(vec![v1(1.0), v1(-1.0)], vec![v1(2.0), v1(-2.0)]).unwrap();
        let p = problem(data, Activation::Tanh);
        let losses: Vec<f64> = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&k| p.loss_en(&scalar_params(8, k, 0.0, 1.0, 0.0)).unwrap())
            .collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn objective_is_sum_of_terms() {
        let data = TrainingSet::new(vec![v1(0.5), v1(-0.3)], vec![v1(0.1), v1(0.9)]).unwrap();
        let hyper = HyperParams {
            alpha1: 0.1,
            alpha2: 0.2,
            alpha3: 0.3,
            alpha4: 0.4,
            tau1: 2.0,
            tau2: 3.0,
        };
        let p = TrainingProblem::new(data, hyper, Activation::Silu, Classifier::Tanh).unwrap();
        let theta = DiscreteParams::new(
            scalar_k(&[0.3, -0.2, 0.8]),
            scalar_b(&[0.1, 0.0, -0.4]),
            DMatrix::from_element(1, 1, 1.3),
            v1(-0.2),
        )
        .unwrap();
        let o = p.objective_en(&theta).unwrap();
        let expected = p.loss_en(&theta).unwrap()
            + 0.1 * reg_r1n(&theta.k, 2.0)
            + 0.2 * reg_r2n(&theta.b, 3.0)
            + 0.3 * reg_r3(&theta.w)
            + 0.4 * reg_r4(&theta.c);
        assert_eq!(o.total, expected);
        assert!(o.total >= 0.3 * reg_r3(&theta.w));
    }

    #[test]
    fn objective_ignores_sample_order() {
        let xs: Vec<_> = (0..5).map(|i| v1(0.3 * i as f64 - 0.6)).collect();
        let ys: Vec<_> = (0..5).map(|i| v1((i as f64).sin())).collect();
        let theta = scalar_params(6, 0.9, 0.1, 1.1, 0.05);
        let fwd = problem(TrainingSet::new(xs.clone(), ys.clone()).unwrap(), Activation::Tanh);
        let rev = problem(
            TrainingSet::new(xs.into_iter().rev().collect(), ys.into_iter().rev().collect()).unwrap(),
            Activation::Tanh,
        );
        let a = fwd.objective_en(&theta).unwrap().total;
        let b = rev.objective_en(&theta).unwrap().total;
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn restriction_regularizer_limsup() {
        let tau = std::f64::consts::TAU;
        let k = ContinuumPath::from_fn(1025, |t| DMatrix::from_element(1, 1, (tau * t).sin())).unwrap();
        let r1inf = k.derivative_energy() + k.values()[0].norm_squared();
        let r1n = reg_r1n(&restrict_cell_average(&k, 256).unwrap(), 1.0);
        assert!(r1n <= 1.05 * r1inf, "{r1n} vs {r1inf}");
    }

    #[test]
    fn hyper_params_must_be_positive() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams {
            tau2: 0.0,
            ..HyperParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainingProblem::new(single(0.0, 0.0), bad, Activation::Tanh, Classifier::Identity).is_err());
    }

    #[test]
    fn training_set_validation() {
        assert!(matches!(TrainingSet::new(vec![], vec![]), Err(Error::EmptyData)));
        assert!(TrainingSet::new(vec![v1(1.0), DVector::zeros(2)], vec![v1(0.0), v1(0.0)]).is_err());
    }
}
