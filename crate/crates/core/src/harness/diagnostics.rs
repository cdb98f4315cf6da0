use nalgebra::DMatrix;
use serde::Serialize;

use crate::continuum::reg_r1inf;
use crate::error::{Error, Result};
use crate::model::reg_r1n;
use crate::spaces::{d1_distance, restrict_cell_average, ContinuumPath, DiscretePath, Element, Nodal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MorreyReport {
    pub lhs_sup_sq: f64,
    pub rhs_bound: f64,
    pub holds: bool,
}

/// `max_i |f_i|² ≤ 2(|f_0|² + n Σ |f_j − f_{j−1}|²)`, both sides evaluated
/// directly.
pub fn morrey_property<E: Element>(f: &DiscretePath<E>) -> MorreyReport {
    let lhs = f.iter().map(Element::norm_squared).fold(0.0, f64::max);
    let values = f.values();
    let jumps: f64 = values
        .windows(2)
        .map(|w| w[1].sub(&w[0]).norm_squared())
        .sum();
    let rhs = 2.0 * (values[0].norm_squared() + f.n() as f64 * jumps);
    MorreyReport {
        lhs_sup_sq: lhs,
        rhs_bound: rhs,
        holds: lhs <= rhs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub n: usize,
    pub r1n: f64,
    pub r1inf: f64,
    pub d1: f64,
    /// `L_K / √n` with `L_K` the largest segment slope of `K`.
    pub d1_bound: f64,
    pub within_bound: bool,
}

/// Cell-average restrictions of `K` at each `n`, with their regularizer and
/// distance to `K`.
pub fn recovery_check(k: &ContinuumPath<DMatrix<f64>>, tau1: f64, n_values: &[usize]) -> Result<Vec<RecoveryRow>> {
    let r1inf = reg_r1inf(k, tau1);
    let lk = k.lipschitz_bound();
    n_values
        .iter()
        .map(|&n| {
            let restricted = restrict_cell_average(k, n)?;
            let d1 = d1_distance(&restricted, k)?;
            let bound = lk / (n as f64).sqrt();
            Ok(RecoveryRow {
                n,
                r1n: reg_r1n(&restricted, tau1),
                r1inf,
                d1,
                d1_bound: bound,
                within_bound: d1 <= bound,
            })
        })
        .collect()
}

/// Fraction of nodes excluded at each end by default.
pub const SMOOTHNESS_MARGIN: f64 = 0.1;

fn second_difference_energy<E: Element>(values: &[E], h: f64, margin: f64) -> Result<f64> {
    let n = values.len();
    if n < 3 {
        return Err(Error::invalid(format!("smoothness diagnostic needs n >= 3, got {n}")));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::invalid("smoothness margin must lie in [0, 0.5)"));
    }
    let skip = (margin * n as f64).ceil() as usize;
    let lo = skip.max(1);
    let hi = (n - 1).saturating_sub(skip).min(n - 2);
    let mut acc = 0.0;
    for i in lo..=hi {
        acc += values[i + 1].sub(&values[i].scale(2.0)).add(&values[i - 1]).norm_squared();
    }
    Ok(acc / h.powi(3))
}

/// `n³ Σ |K_{i+1} − 2K_i + K_{i−1}|²` over interior nodes, dropping a
/// `margin` fraction of nodes at each end. Approximates `∫ |K̈|²` over the
/// retained window.
pub fn smoothness_diagnostic<E: Element>(path: &DiscretePath<E>, margin: f64) -> Result<f64> {
    second_difference_energy(path.values(), 1.0 / path.n() as f64, margin)
}

/// Same diagnostic on the nodes of a continuum path, spacing `1/(N−1)`.
pub fn smoothness_diagnostic_nodal<E: Element>(path: &ContinuumPath<E>, margin: f64) -> Result<f64> {
    second_difference_energy(path.values(), 1.0 / (path.node_count() - 1) as f64, margin)
}
