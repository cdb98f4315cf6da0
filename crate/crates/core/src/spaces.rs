//! Parameter paths on the layer grid and on `[0, 1]`, the maps between them,
//! and the discrete-to-continuum distances.
//!
//! A discrete path holds one value per layer node `t_i = i/n`, `i = 0..n-1`.
//! Its step extension takes the value `K_i` on the left-closed cell
//! `[t_i, t_{i+1})`, `K_0` for `t < 0` and `K_{n-1}` for `t >= 1`. The
//! convention is measure-zero for every L² quantity; it matters only for
//! point evaluation, where it makes explicit Euler with step `1/n` on the
//! step extension coincide with the layer recursion.
//!
//! A continuum path is piecewise linear on `N` uniform nodes `j/(N-1)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Whether a path carries `d x d` matrices (weights) or `d`-vectors (biases).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Matrix,
    Vector,
}

/// Values a parameter path can carry. Norms are Frobenius for matrices and
/// Euclidean for vectors.
pub trait Element: Clone + PartialEq + fmt::Debug + Send + Sync {
    const FLAVOR: Flavor;

    /// Neuron dimension `d`.
    fn dim(&self) -> usize;
    fn zeros(dim: usize) -> Self;
    /// Number of scalar entries.
    fn entry_count(dim: usize) -> usize;
    fn norm_squared(&self) -> f64;
    fn dot(&self, other: &Self) -> f64;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn scale(&self, a: f64) -> Self;
    /// `(1 - w) * self + w * other`.
    fn lerp(&self, other: &Self, w: f64) -> Self;
    fn is_finite(&self) -> bool;
    fn push_row_major(&self, out: &mut Vec<f64>);
    fn from_row_major(dim: usize, data: &[f64]) -> Self;

    fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

impl Element for DMatrix<f64> {
    const FLAVOR: Flavor = Flavor::Matrix;

    fn dim(&self) -> usize {
        self.nrows()
    }
    fn zeros(dim: usize) -> Self {
        DMatrix::zeros(dim, dim)
    }
    fn entry_count(dim: usize) -> usize {
        dim * dim
    }
    fn norm_squared(&self) -> f64 {
        nalgebra::Matrix::norm_squared(self)
    }
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn push_row_major(&self, out: &mut Vec<f64>) {
        for r in 0..self.nrows() {
            out.extend(self.row(r).iter());
        }
    }
    fn from_row_major(dim: usize, data: &[f64]) -> Self {
        DMatrix::from_row_slice(dim, dim, data)
    }
}

impl Element for DVector<f64> {
    const FLAVOR: Flavor = Flavor::Vector;

    fn dim(&self) -> usize {
        self.len()
    }
    fn zeros(dim: usize) -> Self {
        DVector::zeros(dim)
    }
    fn entry_count(dim: usize) -> usize {
        dim
    }
    fn norm_squared(&self) -> f64 {
        nalgebra::Matrix::norm_squared(self)
    }
    fn dot(&self, other: &Self) -> f64 {
        nalgebra::Matrix::dot(self, other)
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn lerp(&self, other: &Self, w: f64) -> Self {
        self * (1.0 - w) + other * w
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
    fn push_row_major(&self, out: &mut Vec<f64>) {
        out.extend(self.iter());
    }
    fn from_row_major(dim: usize, data: &[f64]) -> Self {
        DVector::from_row_slice(&data[..dim])
    }
}

/// Uniform layer grid with nodes `i/n`, `i = 0..n-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("grid needs at least one layer"));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }

    /// Index of the cell `[t_i, t_{i+1})` containing `t`, clamped to the grid.
    pub fn cell_of(&self, t: f64) -> usize {
        let n = self.n;
        if !(t > 0.0) {
            return 0;
        }
        let mut i = ((t * n as f64).floor() as usize).min(n - 1);
        // (t * n).floor() can land one cell off when t = k/n is not exact.
        if i + 1 < n && self.node(i + 1) <= t {
            i += 1;
        }
        if i > 0 && self.node(i) > t {
            i -= 1;
        }
        i
    }
}

/// Shared access to the nodal values of a path, discrete or continuum.
pub trait Nodal<E: Element>: Sized + Clone {
    fn values(&self) -> &[E];
    fn values_mut(&mut self) -> &mut [E];
    fn from_values(values: Vec<E>) -> Result<Self>;

    fn dim(&self) -> usize {
        self.values()[0].dim()
    }
}

fn validate_values<E: Element>(values: &[E], context: &'static str) -> Result<()> {
    let dim = values[0].dim();
    for v in values {
        if v.dim() != dim {
            return Err(Error::shape(context, dim, v.dim()));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

/// Grid-indexed path `K^{(n)}` or `b^{(n)}`: one value per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath<E> {
    values: Vec<E>,
}

pub type MatrixPath = DiscretePath<DMatrix<f64>>;
pub type VectorPath = DiscretePath<DVector<f64>>;

impl<E: Element> DiscretePath<E> {
    pub fn new(values: Vec<E>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("discrete path needs at least one value"));
        }
        validate_values(&values, "discrete path")?;
        Ok(DiscretePath { values })
    }

    pub fn constant(n: usize, value: E) -> Result<Self> {
        Grid::new(n)?;
        Self::new(vec![value; n])
    }

    pub fn zeros(n: usize, dim: usize) -> Result<Self> {
        Self::constant(n, E::zeros(dim))
    }

    /// Samples `f` at the layer nodes `i/n`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> E) -> Result<Self> {
        let grid = Grid::new(n)?;
        Self::new(grid.nodes().map(f).collect())
    }

    pub fn grid(&self) -> Grid {
        Grid {
            n: self.values.len(),
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize) -> &E {
        &self.values[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, E> {
        self.values.iter()
    }
}

impl<E: Element> Nodal<E> for DiscretePath<E> {
    fn values(&self) -> &[E] {
        &self.values
    }
    fn values_mut(&mut self) -> &mut [E] {
        &mut self.values
    }
    fn from_values(values: Vec<E>) -> Result<Self> {
        Self::new(values)
    }
}

/// Piecewise-linear path on `N >= 2` uniform nodes in `[0, 1]`; the
/// implemented representative of an `H¹` parameter function.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuumPath<E> {
    nodes: Vec<E>,
}

impl<E: Element> ContinuumPath<E> {
    pub fn new(nodes: Vec<E>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("continuum path needs at least two nodes"));
        }
        validate_values(&nodes, "continuum path")?;
        Ok(ContinuumPath { nodes })
    }

    pub fn constant(node_count: usize, value: E) -> Result<Self> {
        Self::new(vec![value; node_count])
    }

    pub fn zeros(node_count: usize, dim: usize) -> Result<Self> {
        Self::constant(node_count, E::zeros(dim))
    }

    /// Interpolates `f` at the nodes `j/(N-1)`.
    pub fn from_fn(node_count: usize, f: impl Fn(f64) -> E) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::invalid("continuum path needs at least two nodes"));
        }
        let last = (node_count - 1) as f64;
        Self::new((0..node_count).map(|j| f(j as f64 / last)).collect())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_time(&self, j: usize) -> f64 {
        j as f64 / (self.nodes.len() - 1) as f64
    }

    /// Segment index `j` and weight `w` with `K(t) = (1-w) K_j + w K_{j+1}`;
    /// `t` is clamped to `[0, 1]`.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let segments = self.nodes.len() - 1;
        let s = t.clamp(0.0, 1.0) * segments as f64;
        let j = (s.floor() as usize).min(segments - 1);
        (j, s - j as f64)
    }

    pub fn eval(&self, t: f64) -> E {
        let (j, w) = self.locate(t);
        if w == 0.0 {
            self.nodes[j].clone()
        } else if w == 1.0 {
            self.nodes[j + 1].clone()
        } else {
            self.nodes[j].lerp(&self.nodes[j + 1], w)
        }
    }

    /// Constant derivative on segment `[t_j, t_{j+1}]`.
    pub fn slope(&self, j: usize) -> E {
        let segments = (self.nodes.len() - 1) as f64;
        self.nodes[j + 1].sub(&self.nodes[j]).scale(segments)
    }

    /// Largest segment slope norm; a Lipschitz (hence Hölder-1/2) constant.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.nodes.len() - 1)
            .map(|j| self.slope(j).norm())
            .fold(0.0, f64::max)
    }

    /// `sup_t |K(t)|`, attained at a node for a piecewise-linear path.
    pub fn sup_norm(&self) -> f64 {
        self.nodes.iter().map(Element::norm).fold(0.0, f64::max)
    }

    /// Exact `∫₀¹ |K'(t)|² dt`.
    pub fn derivative_energy(&self) -> f64 {
        let segments = (self.nodes.len() - 1) as f64;
        self.nodes
            .windows(2)
            .map(|w| w[1].sub(&w[0]).norm_squared())
            .sum::<f64>()
            * segments
    }

    /// Exact `∫ K(t) dt` over `[a, b] ⊂ [0, 1]`.
    pub fn integral_over(&self, a: f64, b: f64) -> E {
        let mut acc = E::zeros(self.dim());
        for (lo, hi) in self.pieces(a, b) {
            let mid = self.eval(lo).add(&self.eval(hi)).scale(0.5 * (hi - lo));
            acc = acc.add(&mid);
        }
        acc
    }

    /// Splits `[a, b]` at interior breakpoints so `K` is linear on each piece.
    fn pieces(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut cuts = vec![a];
        let (mut j, _) = self.locate(a);
        j += 1;
        while j < self.nodes.len() - 1 {
            let t = self.node_time(j);
            if t >= b {
                break;
            }
            if t > a {
                cuts.push(t);
            }
            j += 1;
        }
        cuts.push(b);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

impl<E: Element> Nodal<E> for ContinuumPath<E> {
    fn values(&self) -> &[E] {
        &self.nodes
    }
    fn values_mut(&mut self) -> &mut [E] {
        &mut self.nodes
    }
    fn from_values(values: Vec<E>) -> Result<Self> {
        Self::new(values)
    }
}

/// Exact step-function extension `K̃^{(n)}` of a discrete path.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<E> {
    path: DiscretePath<E>,
}

impl<E: Element> StepFunction<E> {
    pub fn path(&self) -> &DiscretePath<E> {
        &self.path
    }

    pub fn eval(&self, t: f64) -> E {
        self.path.values[self.path.grid().cell_of(t)].clone()
    }

    /// `∫₀¹ K̃(t) dt`, summed cell by cell.
    pub fn integral(&self) -> E {
        let h = self.path.grid().spacing();
        let mut acc = E::zeros(self.path.values[0].dim());
        for v in &self.path.values {
            acc = acc.add(&v.scale(h));
        }
        acc
    }
}

/// Time-indexed parameter field usable as ODE coefficients.
pub trait PathEval<E: Element>: Sync {
    fn eval_at(&self, t: f64) -> E;
}

impl<E: Element> PathEval<E> for ContinuumPath<E> {
    fn eval_at(&self, t: f64) -> E {
        self.eval(t)
    }
}

impl<E: Element> PathEval<E> for StepFunction<E> {
    fn eval_at(&self, t: f64) -> E {
        self.eval(t)
    }
}

pub fn extend_piecewise_constant<E: Element>(path: &DiscretePath<E>) -> StepFunction<E> {
    StepFunction { path: path.clone() }
}

/// `|K̃^{(n)} - K|_{L²}` with exact per-piece quadrature. Works for either
/// flavor; `d1_distance` and `d2_distance` are the named entry points.
pub fn l2_step_distance<E: Element>(path: &DiscretePath<E>, k: &ContinuumPath<E>) -> Result<f64> {
    if path.dim() != k.dim() {
        return Err(Error::shape("step distance", path.dim(), k.dim()));
    }
    let grid = path.grid();
    let mut total = 0.0;
    for (i, c) in path.values.iter().enumerate() {
        let a = grid.node(i);
        let b = if i + 1 == grid.n() { 1.0 } else { grid.node(i + 1) };
        for (lo, hi) in k.pieces(a, b) {
            // ∫ |(1-s)u + s w|² ds over [0,1] = (|u|² + <u,w> + |w|²) / 3
            let u = k.eval(lo).sub(c);
            let w = k.eval(hi).sub(c);
            let piece = (u.norm_squared() + u.dot(&w) + w.norm_squared()) / 3.0;
            total += piece.max(0.0) * (hi - lo);
        }
    }
    Ok(total.sqrt())
}

pub fn d1_distance(path: &MatrixPath, k: &ContinuumPath<DMatrix<f64>>) -> Result<f64> {
    l2_step_distance(path, k)
}

pub fn d2_distance(path: &VectorPath, b: &ContinuumPath<DVector<f64>>) -> Result<f64> {
    l2_step_distance(path, b)
}

/// Cell averages `n ∫_{i/n}^{(i+1)/n} K(t) dt`: the recovery-sequence restriction.
pub fn restrict_cell_average<E: Element>(k: &ContinuumPath<E>, n: usize) -> Result<DiscretePath<E>> {
    let grid = Grid::new(n)?;
    let values = (0..n)
        .map(|i| {
            let a = grid.node(i);
            let b = if i + 1 == n { 1.0 } else { grid.node(i + 1) };
            k.integral_over(a, b).scale(n as f64)
        })
        .collect();
    DiscretePath::new(values)
}

/// Node samples `K(i/n)`.
pub fn restrict_nodal<E: Element>(k: &ContinuumPath<E>, n: usize) -> Result<DiscretePath<E>> {
    DiscretePath::from_fn(n, |t| k.eval(t))
}

/// Linear interpolation of node values onto a finer grid; values past the
/// last node `(n-1)/n` are held constant.
pub fn upsample<E: Element>(path: &DiscretePath<E>, n2: usize) -> Result<DiscretePath<E>> {
    let n = path.n();
    if n2 < n {
        return Err(Error::invalid(format!(
            "upsample target {n2} is coarser than source {n}"
        )));
    }
    // Position of k/n2 in source index units is k*n/n2; integer arithmetic
    // keeps n2 == n an exact copy.
    let values = (0..n2)
        .map(|k| {
            let num = k * n;
            let i = num / n2;
            let rem = num % n2;
            if i >= n - 1 {
                path.values[n - 1].clone()
            } else if rem == 0 {
                path.values[i].clone()
            } else {
                path.values[i].lerp(&path.values[i + 1], rem as f64 / n2 as f64)
            }
        })
        .collect();
    DiscretePath::new(values)
}

/// Node values of a continuum path interpolating `path` at `i/n`
/// (constant past the last layer node).
pub fn prolong<E: Element>(path: &DiscretePath<E>, node_count: usize) -> Result<ContinuumPath<E>> {
    let n = path.n();
    ContinuumPath::from_fn(node_count, |t| {
        let s = t * n as f64;
        let i = s.floor() as usize;
        if i >= n - 1 {
            path.values[n - 1].clone()
        } else {
            path.values[i].lerp(&path.values[i + 1], s - i as f64)
        }
    })
}

/// Full parameter tuple `θ = (K, b, W, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<K, B> {
    pub k: K,
    pub b: B,
    pub w: DMatrix<f64>,
    pub c: DVector<f64>,
}

pub type DiscreteParams = ParamSet<MatrixPath, VectorPath>;
pub type ContinuumParams = ParamSet<ContinuumPath<DMatrix<f64>>, ContinuumPath<DVector<f64>>>;

impl<K, B> ParamSet<K, B>
where
    K: Nodal<DMatrix<f64>>,
    B: Nodal<DVector<f64>>,
{
    pub fn new(k: K, b: B, w: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let p = ParamSet { k, b, w, c };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.k.dim();
        if self.b.dim() != d {
            return Err(Error::shape("bias dimension", d, self.b.dim()));
        }
        if self.k.values().len() != self.b.values().len() {
            return Err(Error::shape(
                "bias node count",
                self.k.values().len(),
                self.b.values().len(),
            ));
        }
        if self.w.ncols() != d {
            return Err(Error::shape("classifier columns", d, self.w.ncols()));
        }
        if self.w.nrows() != self.c.len() {
            return Err(Error::shape("classifier offset", self.w.nrows(), self.c.len()));
        }
        Ok(())
    }

    /// `(d, m)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.k.dim(), self.c.len())
    }

    pub fn node_count(&self) -> usize {
        self.k.values().len()
    }

    pub fn len(&self) -> usize {
        let (d, m) = self.dims();
        self.node_count() * (d * d + d) + m * d + m
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattens to `[K nodes (row-major), b nodes, W (row-major), c]`.
    pub fn to_flat(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.len());
        for v in self.k.values() {
            v.push_row_major(&mut out);
        }
        for v in self.b.values() {
            v.push_row_major(&mut out);
        }
        self.w.push_row_major(&mut out);
        out.extend(self.c.iter());
        DVector::from_vec(out)
    }

    /// Inverse of [`to_flat`](Self::to_flat), shaped like `self`.
    pub fn with_flat(&self, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::shape("flat parameter vector", self.len(), flat.len()));
        }
        let (d, m) = self.dims();
        let data = flat.as_slice();
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &data[pos..pos + len];
            pos += len;
            s
        };
        let nodes = self.node_count();
        let k: Vec<DMatrix<f64>> = (0..nodes)
            .map(|_| DMatrix::from_row_major(d, take(d * d)))
            .collect();
        let b: Vec<DVector<f64>> = (0..nodes)
            .map(|_| DVector::from_row_major(d, take(d)))
            .collect();
        let w = DMatrix::from_row_slice(m, d, take(m * d));
        let c = DVector::from_row_slice(take(m));
        ParamSet::new(K::from_values(k)?, B::from_values(b)?, w, c)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.k.values_mut().iter_mut().for_each(|v| v.fill(0.0));
        z.b.values_mut().iter_mut().for_each(|v| v.fill(0.0));
        z.w.fill(0.0);
        z.c.fill(0.0);
        z
    }

    /// `self + r · dir`, blockwise.
    pub fn offset(&self, r: f64, dir: &Self) -> Result<Self> {
        self.with_flat(&(self.to_flat() + dir.to_flat() * r))
    }

    /// Same shape as `self` with entries uniform in `[-amplitude, amplitude]`.
    pub fn random_like<R: rand::Rng>(&self, rng: &mut R, amplitude: f64) -> Self {
        let flat = DVector::from_fn(self.len(), |_, _| rng.random_range(-amplitude..=amplitude));
        self.with_flat(&flat).expect("length matches by construction")
    }

    /// Sum of componentwise inner products over all four blocks.
    pub fn dot(&self, other: &Self) -> f64 {
        self.to_flat().dot(&other.to_flat())
    }
}

impl DiscreteParams {
    pub fn zeros(n: usize, d: usize, m: usize) -> Result<Self> {
        ParamSet::new(
            DiscretePath::zeros(n, d)?,
            DiscretePath::zeros(n, d)?,
            DMatrix::zeros(m, d),
            DVector::zeros(m),
        )
    }

    pub fn n(&self) -> usize {
        self.k.n()
    }
}

impl ContinuumParams {
    pub fn zeros(node_count: usize, d: usize, m: usize) -> Result<Self> {
        ParamSet::new(
            ContinuumPath::zeros(node_count, d)?,
            ContinuumPath::zeros(node_count, d)?,
            DMatrix::zeros(m, d),
            DVector::zeros(m),
        )
    }

    /// Cell-average restriction with `W`, `c` copied.
    pub fn restrict(&self, n: usize) -> Result<DiscreteParams> {
        ParamSet::new(
            restrict_cell_average(&self.k, n)?,
            restrict_cell_average(&self.b, n)?,
            self.w.clone(),
            self.c.clone(),
        )
    }
}

/// Breakdown of `d(θ^{(n)}, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamDistance {
    pub d1: f64,
    pub d2: f64,
    pub w: f64,
    pub c: f64,
}

impl ParamDistance {
    pub fn total(&self) -> f64 {
        self.d1 + self.d2 + self.w + self.c
    }
}

/// `d₁(K^{(n)}, K) + d₂(b^{(n)}, b) + |W^{(n)} - W| + |c^{(n)} - c|`.
pub fn param_distance(discrete: &DiscreteParams, continuum: &ContinuumParams) -> Result<ParamDistance> {
    if discrete.dims() != continuum.dims() {
        return Err(Error::shape(
            "parameter dimensions",
            format!("{:?}", continuum.dims()),
            format!("{:?}", discrete.dims()),
        ));
    }
    Ok(ParamDistance {
        d1: d1_distance(&discrete.k, &continuum.k)?,
        d2: d2_distance(&discrete.b, &continuum.b)?,
        w: (&discrete.w - &continuum.w).norm(),
        c: (&discrete.c - &continuum.c).norm(),
    })
}

#[derive(Serialize, Deserialize)]
struct PathRecord {
    flavor: Flavor,
    d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    node_count: Option<usize>,
    values: Vec<f64>,
}

fn values_to_record<E: Element>(values: &[E]) -> (usize, Vec<f64>) {
    let d = values[0].dim();
    let mut flat = Vec::with_capacity(values.len() * E::entry_count(d));
    for v in values {
        v.push_row_major(&mut flat);
    }
    (d, flat)
}

fn values_from_record<E: Element>(rec: &PathRecord, count: usize) -> std::result::Result<Vec<E>, String> {
    if rec.flavor != E::FLAVOR {
        return Err(format!("expected {:?} flavor, found {:?}", E::FLAVOR, rec.flavor));
    }
    let per = E::entry_count(rec.d);
    if rec.values.len() != per * count {
        return Err(format!(
            "expected {} values, found {}",
            per * count,
            rec.values.len()
        ));
    }
    Ok(rec
        .values
        .chunks(per.max(1))
        .map(|chunk| E::from_row_major(rec.d, chunk))
        .collect())
}

impl<E: Element> Serialize for DiscretePath<E> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (d, values) = values_to_record(&self.values);
        PathRecord {
            flavor: E::FLAVOR,
            d,
            n: Some(self.n()),
            node_count: None,
            values,
        }
        .serialize(s)
    }
}

impl<'de, E: Element> Deserialize<'de> for DiscretePath<E> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let rec = PathRecord::deserialize(de)?;
        let n = rec.n.ok_or_else(|| D::Error::missing_field("n"))?;
        let values = values_from_record::<E>(&rec, n).map_err(D::Error::custom)?;
        DiscretePath::new(values).map_err(D::Error::custom)
    }
}

impl<E: Element> Serialize for ContinuumPath<E> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (d, values) = values_to_record(&self.nodes);
        PathRecord {
            flavor: E::FLAVOR,
            d,
            n: None,
            node_count: Some(self.node_count()),
            values,
        }
        .serialize(s)
    }
}

impl<'de, E: Element> Deserialize<'de> for ContinuumPath<E> {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let rec = PathRecord::deserialize(de)?;
        let count = rec.node_count.ok_or_else(|| D::Error::missing_field("N"))?;
        let values = values_from_record::<E>(&rec, count).map_err(D::Error::custom)?;
        ContinuumPath::new(values).map_err(D::Error::custom)
    }
}
