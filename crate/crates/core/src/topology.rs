//! Recovering aggregate weights from limiting belief data, and the rank
//! theory that says when this is possible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::learning::{argmax, TrajectoryRecord};
use crate::linalg::{self, numerical_rank, pseudo_inverse};
use crate::models::DivergenceMatrix;
use crate::{Error, Result};

/// How far `y(θ*)` may sit from zero before the data are rejected.
pub const ANCHOR_TOL: f64 = 1e-12;
/// Residual under which an augmented system counts as solved.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// `B = (1 e_θᵀ - I) D`: row `t` is `d_{θ,·} - d_{t,·}`.
pub fn difference_matrix(d: &DMatrix<f64>, theta: usize) -> DMatrix<f64> {
    let anchor = d.row(theta).clone_owned();
    DMatrix::from_fn(d.nrows(), d.ncols(), |t, s| anchor[s] - d[(t, s)])
}

/// `C(θ) = [B; 1ᵀ]`.
pub fn augmented_matrix(d: &DMatrix<f64>, theta: usize) -> DMatrix<f64> {
    let b = difference_matrix(d, theta);
    let (h, s) = b.shape();
    let mut c = DMatrix::from_element(h + 1, s, 1.0);
    c.rows_mut(0, h).copy_from(&b);
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySystem {
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub y_tilde: DVector<f64>,
    pub theta_star: usize,
}

impl TopologySystem {
    pub fn num_components(&self) -> usize {
        self.c.ncols()
    }
}

pub fn build_system(d: &DivergenceMatrix, theta_star: usize, y: &[f64]) -> Result<TopologySystem> {
    let h = d.num_hypotheses();
    if y.len() != h {
        return Err(Error::DimensionMismatch(format!("{} rates for {h} hypotheses", y.len())));
    }
    if theta_star >= h {
        return Err(Error::DimensionMismatch(format!("θ* = {} out of range", theta_star + 1)));
    }
    if y[theta_star].abs() > ANCHOR_TOL {
        return Err(Error::InconsistentData(format!(
            "rate at θ* = {} is {:e}, expected 0",
            theta_star + 1,
            y[theta_star]
        )));
    }
    let b = difference_matrix(d.matrix(), theta_star);
    let c = augmented_matrix(d.matrix(), theta_star);
    let mut y_tilde = DVector::from_element(h + 1, 1.0);
    y_tilde.rows_mut(0, h).copy_from_slice(y);
    Ok(TopologySystem {
        b,
        c,
        y_tilde,
        theta_star,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySolveResult {
    pub x_hat: Vec<f64>,
    pub numerical_rank: usize,
    pub feasible: bool,
    pub residual: f64,
    pub positivity_ok: bool,
    /// `|Σ x̂ - 1|`.
    pub sum_error: f64,
    pub solution_set_dim: usize,
}

/// Least-squares solve through the SVD pseudoinverse.
///
/// With full column rank this is the unique solution; otherwise the
/// minimum-norm point is returned and the system is flagged infeasible.
pub fn solve_topology(system: &TopologySystem, rel_tol: f64) -> TopologySolveResult {
    let s = system.num_components();
    let rank = numerical_rank(&system.c, rel_tol);
    let x = pseudo_inverse(&system.c, rel_tol) * &system.y_tilde;
    let residual = (&system.c * &x - &system.y_tilde).norm();
    TopologySolveResult {
        positivity_ok: x.iter().all(|v| *v > 0.0),
        sum_error: (x.sum() - 1.0).abs(),
        x_hat: x.iter().copied().collect(),
        numerical_rank: rank,
        feasible: rank == s,
        residual,
        solution_set_dim: s - rank,
    }
}

/// Two distinct positive points `base ± t n` of the solution set, with `n`
/// spanning part of the null space of `C`. `base` must be a positive solution.
pub fn alternative_solutions(system: &TopologySystem, base: &[f64], rel_tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let base = DVector::from_column_slice(base);
    if base.len() != system.num_components() {
        return Err(Error::DimensionMismatch("base point has the wrong length".into()));
    }
    if base.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidSpec("base point must be positive".into()));
    }
    let residual = (&system.c * &base - &system.y_tilde).norm();
    if residual > RESIDUAL_TOL {
        return Err(Error::InconsistentData(format!("base point leaves residual {residual:e}")));
    }
    let null = linalg::null_space(&system.c, rel_tol);
    if null.ncols() == 0 {
        return Err(Error::InvalidSpec("system has a unique solution".into()));
    }
    let n = null.column(0).clone_owned();
    let t = 0.5 * base.min() / n.amax();
    Ok((
        (&base + &n * t).iter().copied().collect(),
        (&base - &n * t).iter().copied().collect(),
    ))
}

/// Topology estimate of one receiving agent at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEstimate {
    /// Zero-based agent index.
    pub agent: usize,
    pub iteration: usize,
    pub theta_star_hat: usize,
    pub y_hat: Vec<f64>,
    pub result: TopologySolveResult,
}

/// Solves the system built from `ŷ(θ) = log ψ(θ) / i`, anchored at its maximiser.
pub fn estimate_from_log_psi(log_psi: &[f64], iteration: usize, d: &DivergenceMatrix, rel_tol: f64) -> Result<(usize, Vec<f64>, TopologySolveResult)> {
    if iteration == 0 {
        return Err(Error::InvalidSpec("iteration must be positive".into()));
    }
    let mut y: Vec<f64> = log_psi.iter().map(|v| v / iteration as f64).collect();
    let theta = argmax(&y);
    y[theta] = 0.0;
    let system = build_system(d, theta, &y)?;
    Ok((theta, y, solve_topology(&system, rel_tol)))
}

pub fn estimate_from_trajectory(
    traj: &TrajectoryRecord,
    d: &DivergenceMatrix,
    iteration: usize,
    agents: &[usize],
    rel_tol: f64,
) -> Result<Vec<AgentEstimate>> {
    agents
        .iter()
        .map(|&k| {
            let psi = traj.log_psi(k, iteration)?;
            let (theta, y, result) = estimate_from_log_psi(psi, iteration, d, rel_tol)?;
            Ok(AgentEstimate {
                agent: k,
                iteration,
                theta_star_hat: theta,
                y_hat: y,
                result,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub hypotheses: usize,
    pub components: usize,
    /// `rank C(θ)` for every θ.
    pub ranks: Vec<usize>,
    pub enough_hypotheses: bool,
    pub feasible: bool,
}

pub fn feasibility_report(d: &DivergenceMatrix, rel_tol: f64) -> FeasibilityReport {
    let (h, s) = (d.num_hypotheses(), d.num_components());
    let enough = h >= s;
    let ranks: Vec<usize> = (0..h).map(|t| numerical_rank(&augmented_matrix(d.matrix(), t), rel_tol)).collect();
    FeasibilityReport {
        hypotheses: h,
        components: s,
        feasible: enough && ranks.iter().all(|r| *r == s),
        ranks,
        enough_hypotheses: enough,
    }
}

/// Squared-distance matrix of scalar points.
pub fn edm(points: &[f64]) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| (points[i] - points[j]).powi(2))
}

/// `𝓘(θ) = 1 e_θᵀ - I`.
pub fn indicator_matrix(theta: usize, h: usize) -> DMatrix<f64> {
    DMatrix::from_fn(h, h, |i, j| f64::from(j == theta) - f64::from(i == j))
}

/// `I - 𝓘⁺𝓘`, which equals `(1/H) 1 1ᵀ`.
pub fn indicator_projection(theta: usize, h: usize) -> Result<DMatrix<f64>> {
    if theta >= h {
        return Err(Error::DimensionMismatch(format!("θ = {} out of range 1..{h}", theta + 1)));
    }
    let m = indicator_matrix(theta, h);
    let p = DMatrix::identity(h, h) - pseudo_inverse(&m, linalg::DEFAULT_REL_TOL) * &m;
    let target = DMatrix::from_element(h, h, 1.0 / h as f64);
    let err = linalg::max_abs(&(&p - target));
    if err > 1e-10 {
        return Err(Error::Numerical(format!("projection deviates from 11ᵀ/H by {err:e}")));
    }
    Ok(p)
}

/// Solution of `vᵀE₃ = 1ᵀ` for the 3-point matrix with off-diagonal entries
/// `e12, e13, e23`. The solution also satisfies `vᵀ1 = 0` for collinear points.
pub fn v3_certificate(e12: f64, e13: f64, e23: f64) -> Result<[f64; 3]> {
    if [e12, e13, e23].iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::DegeneratePoints(format!("entries ({e12}, {e13}, {e23}) must be positive")));
    }
    Ok([
        (e13 + e12 - e23) / (2.0 * e13 * e12),
        (e12 + e23 - e13) / (2.0 * e12 * e23),
        (e13 + e23 - e12) / (2.0 * e13 * e23),
    ])
}

/// `‖D D⁺ 1 - 1‖₂`: zero when the ones vector lies in the range of `D`.
pub fn ones_range_residual(d: &DMatrix<f64>, rel_tol: f64) -> f64 {
    let ones = DVector::from_element(d.nrows(), 1.0);
    (d * (pseudo_inverse(d, rel_tol) * &ones) - ones).norm()
}
