//! ℓ0 slab-feasibility solver: minimize the number of active slabs
//! `Σ z_i` subject to `−M z_i − t ≤ ξ_i − γ_iᵀδ ≤ M z_i + t`, `z ∈ {0,1}ᵖ`,
//! by best-first branch-and-bound over an LP relaxation, plus exact
//! low-dimensional enumeration oracles for testing.

mod oracle;
mod simplex;

pub use oracle::exact_small_oracle;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;

const INT_TOL: f64 = 1e-6;
const ROUND_MARGIN: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-7;

/// The slab-cover problem data: marginal coefficients ξ̂, confounding
/// directions γ̂, slab half-width t, and the box bound M on ‖β‖_∞.
#[derive(Debug, Clone)]
pub struct MipProblem {
    pub xi: DVector<f64>,
    pub gamma: DMatrix<f64>,
    pub t: f64,
    pub m_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct MipProblemJson {
    xi: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    t: f64,
    #[serde(rename = "M")]
    m: f64,
}

impl MipProblem {
    pub fn p(&self) -> usize {
        self.xi.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.ncols()
    }

    /// Residuals `ξ − γδ`.
    pub fn residuals(&self, delta: &DVector<f64>) -> DVector<f64> {
        &self.xi - &self.gamma * delta
    }

    /// Feasibility of a candidate (z, δ) with a small numeric tolerance.
    pub fn is_feasible(&self, z: &[bool], delta: &DVector<f64>) -> bool {
        let r = self.residuals(delta);
        (0..self.p()).all(|i| {
            let slack = if z[i] { self.m_bound + self.t } else { self.t };
            r[i].abs() <= slack + FEAS_TOL
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let j = MipProblemJson {
            xi: self.xi.as_slice().to_vec(),
            gamma: (0..self.p())
                .map(|i| (0..self.q()).map(|k| self.gamma[(i, k)]).collect())
                .collect(),
            t: self.t,
            m: self.m_bound,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: MipProblemJson = serde_json::from_str(text)?;
        let p = j.xi.len();
        let q = j.gamma.first().map_or(0, |r| r.len());
        if j.gamma.len() != p || j.gamma.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch(
                "gamma must be p rows of equal length".into(),
            ));
        }
        let flat: Vec<f64> = j.gamma.iter().flatten().cloned().collect();
        build_mip(
            DVector::from_vec(j.xi),
            DMatrix::from_row_slice(p, q, &flat),
            j.t,
            j.m,
        )
    }
}

/// Validates dimensions and bounds into a problem record.
pub fn build_mip(
    xi: DVector<f64>,
    gamma: DMatrix<f64>,
    t: f64,
    m_bound: f64,
) -> Result<MipProblem> {
    if gamma.nrows() != xi.len() {
        return Err(Error::InvalidConfig(format!(
            "gamma has {} rows but xi has {} entries",
            gamma.nrows(),
            xi.len()
        )));
    }
    if xi.is_empty() {
        return Err(Error::InvalidConfig("xi must be non-empty".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("t must be >= 0, got {t}")));
    }
    if !(m_bound > 0.0) {
        return Err(Error::InvalidConfig(format!("M must be > 0, got {m_bound}")));
    }
    if xi.iter().any(|v| !v.is_finite()) || gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("MIP problem data".into()));
    }
    Ok(MipProblem {
        xi,
        gamma,
        t,
        m_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    FeasibleTimeLimit,
}

/// An integer-feasible solution of the slab-cover program.
#[derive(Debug, Clone)]
pub struct MipSolution {
    pub z: Vec<bool>,
    pub delta: DVector<f64>,
    pub objective: usize,
    pub status: SolveStatus,
    pub nodes_explored: usize,
}

/// Search limits for the branch-and-bound solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveLimits {
    pub max_nodes: usize,
    pub time_budget: Duration,
}

impl Default for SolveLimits {
    fn default() -> Self {
        SolveLimits {
            max_nodes: 1_000_000,
            time_budget: Duration::from_secs(60),
        }
    }
}

/// LP relaxation value at a partial assignment.
#[derive(Debug, Clone)]
pub struct LpRelaxation {
    pub bound: f64,
    pub z_frac: Vec<f64>,
    pub delta: DVector<f64>,
}

/// Solves the LP relaxation (z ∈ [0,1] on free coordinates, δ free via
/// variable splitting) with a bounded-variable primal simplex.
pub fn lp_relax(prob: &MipProblem, fixed: &[Option<bool>]) -> Result<LpRelaxation> {
    match lp_relax_inner(prob, fixed)? {
        Some(sol) => Ok(sol),
        None => Err(Error::Infeasible(
            "no δ satisfies the fixed-to-zero slabs".into(),
        )),
    }
}

fn lp_relax_inner(prob: &MipProblem, fixed: &[Option<bool>]) -> Result<Option<LpRelaxation>> {
    let p = prob.p();
    let q = prob.q();
    if fixed.len() != p {
        return Err(Error::InvalidConfig(
            "fixed assignment length must equal p".into(),
        ));
    }
    let nrows = 2 * p;
    let ncols = p + 2 * q + nrows;
    let mut a = vec![0.0f64; nrows * ncols];
    let mut b = vec![0.0f64; nrows];
    // Row 2i:   −M z_i − γ_iᵀδ⁺ + γ_iᵀδ⁻ + s = t − ξ_i
    // Row 2i+1: −M z_i + γ_iᵀδ⁺ − γ_iᵀδ⁻ + s = t + ξ_i
    for i in 0..p {
        for (row, sign) in [(2 * i, -1.0), (2 * i + 1, 1.0)] {
            let base = row * ncols;
            a[base + i] = -prob.m_bound;
            for k in 0..q {
                a[base + p + k] = sign * prob.gamma[(i, k)];
                a[base + p + q + k] = -sign * prob.gamma[(i, k)];
            }
            a[base + p + 2 * q + row] = 1.0;
            b[row] = prob.t + sign * prob.xi[i];
        }
    }
    let mut lower = vec![0.0f64; ncols];
    let mut upper = vec![f64::INFINITY; ncols];
    let mut start_upper = vec![false; ncols];
    let mut cost = vec![0.0f64; ncols];
    for i in 0..p {
        cost[i] = 1.0;
        match fixed[i] {
            None => {
                upper[i] = 1.0;
                start_upper[i] = true;
            }
            Some(v) => {
                let val = if v { 1.0 } else { 0.0 };
                lower[i] = val;
                upper[i] = val;
            }
        }
    }
    let problem = simplex::LpProblem {
        nrows,
        ncols,
        a,
        b,
        cost,
        lower,
        upper,
        start_upper,
        initial_basis: (0..nrows).map(|r| p + 2 * q + r).collect(),
    };
    match simplex::solve(&problem)? {
        simplex::LpOutcome::Infeasible => Ok(None),
        simplex::LpOutcome::Optimal { objective, x } => {
            let z_frac: Vec<f64> = (0..p).map(|i| x[i].clamp(0.0, 1.0)).collect();
            let delta = DVector::from_fn(q, |k, _| x[p + k] - x[p + q + k]);
            Ok(Some(LpRelaxation {
                bound: objective,
                z_frac,
                delta,
            }))
        }
    }
}

/// Rounds an LP point up to an integer-feasible candidate.
fn round_candidate(
    prob: &MipProblem,
    fixed: &[Option<bool>],
    delta: &DVector<f64>,
) -> Option<(Vec<bool>, usize)> {
    let r = prob.residuals(delta);
    let mut z = vec![false; prob.p()];
    for i in 0..prob.p() {
        z[i] = match fixed[i] {
            Some(v) => v,
            None => r[i].abs() > prob.t + ROUND_MARGIN,
        };
    }
    if !prob.is_feasible(&z, delta) {
        return None;
    }
    let obj = z.iter().filter(|&&v| v).count();
    Some((z, obj))
}

/// The least-squares rounding start: fit δ on all rows, refit on the
/// ⌈(p+q)/2⌉ best-fitting rows, then threshold.
fn heuristic_start(prob: &MipProblem) -> Option<(Vec<bool>, DVector<f64>, usize)> {
    let p = prob.p();
    let q = prob.q();
    let delta0 = if q == 0 {
        DVector::zeros(0)
    } else {
        least_squares(&prob.gamma, &prob.xi, Error::SingularDesign).ok()?
    };
    let resid = prob.residuals(&delta0);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        resid[a]
            .abs()
            .partial_cmp(&resid[b].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let keep = (p + q).div_ceil(2).min(p);
    let rows = &order[..keep];
    let delta = if q == 0 {
        DVector::zeros(0)
    } else {
        let sub_gamma = prob.gamma.select_rows(rows);
        let sub_xi = prob.xi.select_rows(rows);
        least_squares(&sub_gamma, &sub_xi, Error::SingularDesign).ok()?
    };
    let r = prob.residuals(&delta);
    let z: Vec<bool> = (0..p).map(|i| r[i].abs() > prob.t).collect();
    if !prob.is_feasible(&z, &delta) {
        return None;
    }
    let obj = z.iter().filter(|&&v| v).count();
    Some((z, delta, obj))
}

/// Re-derives δ deterministically from the selected support: least squares
/// on the zero rows, kept only if it preserves feasibility. This makes the
/// returned δ invariant (up to Rᵀ) under orthogonal re-parameterizations
/// of γ.
fn canonical_delta(prob: &MipProblem, z: &[bool], fallback: &DVector<f64>) -> DVector<f64> {
    let q = prob.q();
    if q == 0 {
        return DVector::zeros(0);
    }
    let zero_rows: Vec<usize> = (0..prob.p()).filter(|&i| !z[i]).collect();
    if zero_rows.len() < q {
        return fallback.clone();
    }
    let sub_gamma = prob.gamma.select_rows(&zero_rows);
    let sub_xi = prob.xi.select_rows(&zero_rows);
    match least_squares(&sub_gamma, &sub_xi, Error::SingularDesign) {
        Ok(delta) if prob.is_feasible(z, &delta) => delta,
        _ => fallback.clone(),
    }
}

struct HeapNode {
    bound: f64,
    seq: usize,
    fixed: Vec<Option<bool>>,
    z_frac: Vec<f64>,
}

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Best-first branch-and-bound over the LP relaxation. Branches the most
/// fractional coordinate, exploring the 1-branch first; prunes a node when
/// `⌈bound − 1e−9⌉` reaches the incumbent.
pub fn solve_bnb(prob: &MipProblem, limits: SolveLimits) -> Result<MipSolution> {
    let p = prob.p();
    let start = Instant::now();
    let root_fixed: Vec<Option<bool>> = vec![None; p];

    let root = match lp_relax_inner(prob, &root_fixed)? {
        Some(r) => r,
        None => {
            return Err(Error::Infeasible(
                "no (z, δ) satisfies the slab constraints even with z = 1".into(),
            ))
        }
    };
    let mut nodes_explored = 1usize;

    let mut incumbent: Option<(Vec<bool>, DVector<f64>, usize)> = heuristic_start(prob);
    if let Some((z, obj)) = round_candidate(prob, &root_fixed, &root.delta) {
        if incumbent.as_ref().map_or(true, |(_, _, best)| obj < *best) {
            incumbent = Some((z, root.delta.clone(), obj));
        }
    }

    let mut heap: BinaryHeap<Reverse<HeapNode>> = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Reverse(HeapNode {
        bound: root.bound,
        seq,
        fixed: root_fixed,
        z_frac: root.z_frac,
    }));

    let mut hit_limit = false;
    'search: while let Some(Reverse(node)) = heap.pop() {
        let best_obj = incumbent.as_ref().map_or(usize::MAX, |(_, _, o)| *o);
        if ceil_bound(node.bound) >= best_obj {
            // Best-first order: every remaining node has an equal-or-worse
            // bound, so the incumbent is proven optimal.
            break;
        }
        let branch = most_fractional(&node.z_frac, &node.fixed);
        let Some(j) = branch else {
            continue; // integral LP solution; its rounding was captured
        };
        for value in [true, false] {
            if nodes_explored >= limits.max_nodes || start.elapsed() > limits.time_budget {
                hit_limit = true;
                break 'search;
            }
            let mut fixed = node.fixed.clone();
            fixed[j] = Some(value);
            nodes_explored += 1;
            let Some(relax) = lp_relax_inner(prob, &fixed)? else {
                continue;
            };
            if let Some((z, obj)) = round_candidate(prob, &fixed, &relax.delta) {
                let best = incumbent.as_ref().map_or(usize::MAX, |(_, _, o)| *o);
                if obj < best {
                    incumbent = Some((z, relax.delta.clone(), obj));
                }
            }
            let best = incumbent.as_ref().map_or(usize::MAX, |(_, _, o)| *o);
            if ceil_bound(relax.bound) < best {
                seq += 1;
                heap.push(Reverse(HeapNode {
                    bound: relax.bound,
                    seq,
                    fixed,
                    z_frac: relax.z_frac,
                }));
            }
        }
    }

    let (z, delta_raw, objective) = incumbent.ok_or_else(|| {
        Error::Infeasible("search ended without an integer-feasible point".into())
    })?;
    let delta = canonical_delta(prob, &z, &delta_raw);
    if !prob.is_feasible(&z, &delta) {
        return Err(Error::ConvergenceFailure(
            "returned solution failed the feasibility check".into(),
        ));
    }
    Ok(MipSolution {
        z,
        delta,
        objective,
        status: if hit_limit {
            SolveStatus::FeasibleTimeLimit
        } else {
            SolveStatus::Optimal
        },
        nodes_explored,
    })
}

fn ceil_bound(bound: f64) -> usize {
    (bound - 1e-9).ceil().max(0.0) as usize
}

fn most_fractional(z_frac: &[f64], fixed: &[Option<bool>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &f) in z_frac.iter().enumerate() {
        if fixed[i].is_some() {
            continue;
        }
        let dist = f.min(1.0 - f);
        if dist > INT_TOL && best.map_or(true, |(_, d)| dist > d) {
            best = Some((i, dist));
        }
    }
    best.map(|(i, _)| i)
}
