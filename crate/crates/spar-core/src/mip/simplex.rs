//! Two-phase primal simplex for dense LPs with bounded variables.
//!
//! Nonbasic variables rest at a bound; iterations either flip a variable
//! to its opposite bound or pivot it into the basis. Dantzig pricing with
//! a switch to Bland's rule after a run of degenerate steps.

use crate::error::{Error, Result};

const RC_TOL: f64 = 1e-9;
const PIV_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const DEGEN_TOL: f64 = 1e-12;
const STALL_LIMIT: usize = 80;

/// Equality-form LP `min cᵀx  s.t.  Ax = b, l ≤ x ≤ u`.
///
/// `initial_basis[r]` must name a column forming an identity entry in row r
/// (slack columns do); rows whose implied basic value is negative get a
/// phase-one artificial automatically.
pub struct LpProblem {
    pub nrows: usize,
    pub ncols: usize,
    /// Row-major nrows × ncols.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Start this column nonbasic at its upper bound (needs a finite upper).
    pub start_upper: Vec<bool>,
    pub initial_basis: Vec<usize>,
}

pub enum LpOutcome {
    Optimal { objective: f64, x: Vec<f64> },
    Infeasible,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    nrows: usize,
    ncols: usize,
    t: Vec<f64>,
    x_b: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    value: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rc: Vec<f64>,
    n_artificial: usize,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.ncols + c]
    }

    fn recompute_reduced_costs(&mut self, cost: &[f64]) {
        for j in 0..self.ncols {
            self.rc[j] = cost.get(j).copied().unwrap_or(0.0);
        }
        for r in 0..self.nrows {
            let cb = cost.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                let row = &self.t[r * self.ncols..(r + 1) * self.ncols];
                for j in 0..self.ncols {
                    self.rc[j] -= cb * row[j];
                }
            }
        }
    }

    /// Applies row operations for a pivot at (r, e). Caller updates basis
    /// bookkeeping.
    fn eliminate(&mut self, r: usize, e: usize) {
        let n = self.ncols;
        let piv = self.t[r * n + e];
        let inv = 1.0 / piv;
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v *= inv;
        }
        self.t[r * n + e] = 1.0;
        for i in 0..self.nrows {
            if i == r {
                continue;
            }
            let f = self.t[i * n + e];
            if f != 0.0 {
                let (head, tail) = self.t.split_at_mut(r.max(i) * n);
                let (row_i, row_r) = if i < r {
                    (&mut head[i * n..(i + 1) * n], &tail[..n])
                } else {
                    (&mut tail[..n], &head[r * n..(r + 1) * n])
                };
                for (vi, vr) in row_i.iter_mut().zip(row_r.iter()) {
                    *vi -= f * *vr;
                }
                self.t[i * n + e] = 0.0;
            }
        }
        let f = self.rc[e];
        if f != 0.0 {
            for j in 0..n {
                self.rc[j] -= f * self.at(r, j);
            }
            self.rc[e] = 0.0;
        }
    }

    /// One simplex phase over the given cost vector. Returns false on
    /// iteration exhaustion.
    fn run(&mut self, cost: &[f64]) -> Result<()> {
        self.recompute_reduced_costs(cost);
        let max_iters = 60 * (self.nrows + self.ncols) + 1000;
        let mut stall = 0usize;
        for _ in 0..max_iters {
            let bland = stall > STALL_LIMIT;
            let entering = self.choose_entering(bland);
            let Some(e) = entering else {
                return Ok(());
            };
            let dir: f64 = if self.state[e] == VarState::AtLower {
                1.0
            } else {
                -1.0
            };
            let own_cap = self.upper[e] - self.lower[e];

            // Ratio test.
            let mut best_cap = own_cap;
            let mut leave: Option<usize> = None;
            for i in 0..self.nrows {
                let d = dir * self.at(i, e);
                let (cap, _hits_lower) = if d > PIV_TOL {
                    ((self.x_b[i] - self.lower[self.basis[i]]).max(0.0) / d, true)
                } else if d < -PIV_TOL {
                    let ub = self.upper[self.basis[i]];
                    if ub.is_infinite() {
                        continue;
                    }
                    ((ub - self.x_b[i]).max(0.0) / -d, false)
                } else {
                    continue;
                };
                let better = match leave {
                    None => cap < best_cap - 1e-12,
                    Some(r_cur) => {
                        if cap < best_cap - 1e-12 {
                            true
                        } else if cap <= best_cap + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[r_cur]
                            } else {
                                self.at(i, e).abs() > self.at(r_cur, e).abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    best_cap = cap.min(best_cap);
                    leave = Some(i);
                }
            }

            if best_cap.is_infinite() {
                return Err(Error::ConvergenceFailure(
                    "LP relaxation unbounded".into(),
                ));
            }
            let delta = best_cap.max(0.0);
            stall = if delta > DEGEN_TOL { 0 } else { stall + 1 };

            match leave {
                None => {
                    // Bound flip.
                    for i in 0..self.nrows {
                        self.x_b[i] -= dir * delta * self.at(i, e);
                    }
                    if self.state[e] == VarState::AtLower {
                        self.state[e] = VarState::AtUpper;
                        self.value[e] = self.upper[e];
                    } else {
                        self.state[e] = VarState::AtLower;
                        self.value[e] = self.lower[e];
                    }
                }
                Some(r) => {
                    let entering_value = self.value[e] + dir * delta;
                    for i in 0..self.nrows {
                        self.x_b[i] -= dir * delta * self.at(i, e);
                    }
                    let leaving = self.basis[r];
                    let d_r = dir * self.at(r, e);
                    self.state[leaving] = if d_r > 0.0 {
                        self.value[leaving] = self.lower[leaving];
                        VarState::AtLower
                    } else {
                        self.value[leaving] = self.upper[leaving];
                        VarState::AtUpper
                    };
                    self.eliminate(r, e);
                    self.basis[r] = e;
                    self.state[e] = VarState::Basic;
                    self.x_b[r] = entering_value;
                }
            }
        }
        Err(Error::ConvergenceFailure(
            "simplex iteration limit reached".into(),
        ))
    }

    fn choose_entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.ncols {
            if self.state[j] == VarState::Basic {
                continue;
            }
            if self.upper[j] - self.lower[j] <= 0.0 {
                continue; // fixed or locked column
            }
            let improving = match self.state[j] {
                VarState::AtLower => self.rc[j] < -RC_TOL,
                VarState::AtUpper => self.rc[j] > RC_TOL,
                VarState::Basic => false,
            };
            if !improving {
                continue;
            }
            if bland {
                return Some(j);
            }
            let score = self.rc[j].abs();
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        best.map(|(j, _)| j)
    }
}

pub fn solve(p: &LpProblem) -> Result<LpOutcome> {
    let nrows = p.nrows;
    debug_assert_eq!(p.a.len(), nrows * p.ncols);

    // Initial nonbasic values.
    let mut value = vec![0.0f64; p.ncols];
    for j in 0..p.ncols {
        value[j] = if p.start_upper[j] && p.upper[j].is_finite() {
            p.upper[j]
        } else {
            p.lower[j]
        };
    }

    // Implied basic values for the designated identity columns.
    let mut resid = p.b.clone();
    for r in 0..nrows {
        let row = &p.a[r * p.ncols..(r + 1) * p.ncols];
        let mut acc = 0.0;
        for j in 0..p.ncols {
            if j != p.initial_basis[r] {
                acc += row[j] * value[j];
            }
        }
        resid[r] -= acc;
    }

    let art_rows: Vec<usize> = (0..nrows).filter(|&r| resid[r] < -FEAS_TOL).collect();
    let n_art = art_rows.len();
    let ncols = p.ncols + n_art;

    let mut t = vec![0.0f64; nrows * ncols];
    for r in 0..nrows {
        let negate = resid[r] < -FEAS_TOL;
        let sign = if negate { -1.0 } else { 1.0 };
        for j in 0..p.ncols {
            t[r * ncols + j] = sign * p.a[r * p.ncols + j];
        }
    }
    let mut basis = vec![0usize; nrows];
    let mut state = vec![VarState::AtLower; ncols];
    let mut x_b = vec![0.0f64; nrows];
    let mut lower = p.lower.clone();
    let mut upper = p.upper.clone();
    lower.resize(ncols, 0.0);
    upper.resize(ncols, f64::INFINITY);
    let mut art_value = vec![0.0f64; ncols];
    art_value[..p.ncols].copy_from_slice(&value);
    for j in 0..p.ncols {
        state[j] = if p.start_upper[j] && p.upper[j].is_finite() {
            VarState::AtUpper
        } else {
            VarState::AtLower
        };
    }

    let mut next_art = p.ncols;
    for r in 0..nrows {
        if resid[r] < -FEAS_TOL {
            t[r * ncols + next_art] = 1.0;
            basis[r] = next_art;
            state[next_art] = VarState::Basic;
            x_b[r] = -resid[r];
            // The designated slack stays nonbasic at its lower bound.
            next_art += 1;
        } else {
            basis[r] = p.initial_basis[r];
            state[p.initial_basis[r]] = VarState::Basic;
            x_b[r] = resid[r].max(0.0);
        }
    }

    let mut tab = Tableau {
        nrows,
        ncols,
        t,
        x_b,
        basis,
        state,
        value: art_value,
        lower,
        upper,
        rc: vec![0.0; ncols],
        n_artificial: n_art,
    };

    if n_art > 0 {
        let mut phase1_cost = vec![0.0f64; ncols];
        for c in p.ncols..ncols {
            phase1_cost[c] = 1.0;
        }
        tab.run(&phase1_cost)?;
        let infeas: f64 = (0..nrows)
            .filter(|&r| tab.basis[r] >= p.ncols)
            .map(|r| tab.x_b[r])
            .sum();
        if infeas > 1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // Lock artificials out and pivot any still-basic one to a real column.
        for c in p.ncols..ncols {
            tab.lower[c] = 0.0;
            tab.upper[c] = 0.0;
        }
        for r in 0..nrows {
            if tab.basis[r] >= p.ncols {
                let mut target = None;
                for j in 0..p.ncols {
                    if tab.state[j] != VarState::Basic && tab.at(r, j).abs() > 1e-8 {
                        target = Some(j);
                        break;
                    }
                }
                if let Some(j) = target {
                    let old = tab.basis[r];
                    let new_value = tab.value[j];
                    tab.eliminate(r, j);
                    tab.basis[r] = j;
                    tab.state[j] = VarState::Basic;
                    tab.state[old] = VarState::AtLower;
                    tab.value[old] = 0.0;
                    tab.x_b[r] = new_value;
                }
                // An all-zero row is a redundant constraint; the locked
                // artificial can stay basic at zero.
            }
        }
    }

    tab.run(&p.cost)?;

    let mut x = vec![0.0f64; p.ncols];
    for j in 0..p.ncols {
        if tab.state[j] != VarState::Basic {
            x[j] = tab.value[j];
        }
    }
    for r in 0..nrows {
        if tab.basis[r] < p.ncols {
            x[tab.basis[r]] = tab.x_b[r];
        }
    }
    let objective: f64 = (0..p.ncols).map(|j| p.cost[j] * x[j]).sum();
    let _ = tab.n_artificial;
    Ok(LpOutcome::Optimal { objective, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    // min -x - y s.t. x + y <= 3, x <= 2, y <= 2  (as equalities with slacks)
    #[test]
    fn small_lp_box() {
        let p = LpProblem {
            nrows: 1,
            ncols: 3,
            a: vec![1.0, 1.0, 1.0],
            b: vec![3.0],
            cost: vec![-1.0, -1.0, 0.0],
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![2.0, 2.0, f64::INFINITY],
            start_upper: vec![false, false, false],
            initial_basis: vec![2],
        };
        match solve(&p).unwrap() {
            LpOutcome::Optimal { objective, x } => {
                assert!((objective + 3.0).abs() < 1e-9);
                assert!((x[0] + x[1] - 3.0).abs() < 1e-9);
            }
            LpOutcome::Infeasible => panic!("feasible LP reported infeasible"),
        }
    }

    // Infeasible: x <= 1 and x >= 2 with x in [0, 5].
    #[test]
    fn detects_infeasible() {
        // Rows: x + s1 = 1; -x + s2 = -2.
        let p = LpProblem {
            nrows: 2,
            ncols: 3,
            a: vec![1.0, 1.0, 0.0, -1.0, 0.0, 1.0],
            b: vec![1.0, -2.0],
            cost: vec![1.0, 0.0, 0.0],
            lower: vec![0.0, 0.0, 0.0],
            upper: vec![5.0, f64::INFINITY, f64::INFINITY],
            start_upper: vec![false, false, false],
            initial_basis: vec![1, 2],
        };
        assert!(matches!(solve(&p).unwrap(), LpOutcome::Infeasible));
    }

    // Phase-one start: x >= 2 alone, minimize x.
    #[test]
    fn phase_one_recovers_feasibility() {
        // -x + s = -2, x in [0, 10].
        let p = LpProblem {
            nrows: 1,
            ncols: 2,
            a: vec![-1.0, 1.0],
            b: vec![-2.0],
            cost: vec![1.0, 0.0],
            lower: vec![0.0, 0.0],
            upper: vec![10.0, f64::INFINITY],
            start_upper: vec![false, false],
            initial_basis: vec![1],
        };
        match solve(&p).unwrap() {
            LpOutcome::Optimal { objective, x } => {
                assert!((objective - 2.0).abs() < 1e-9);
                assert!((x[0] - 2.0).abs() < 1e-9);
            }
            LpOutcome::Infeasible => panic!("feasible LP reported infeasible"),
        }
    }
}
