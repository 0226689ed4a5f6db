//! LP relaxation of a binary ILP: `min c·x  s.t.  Ax <= b, 0 <= x <= 1`.
//!
//! Bounded-variable primal simplex on a dense tableau. Phase 1 drives
//! artificials for negative right-hand sides to zero, phase 2 optimizes the
//! real objective. Pricing is Dantzig's rule with lowest-index tie-breaks;
//! after too many degenerate pivots it falls back to Bland's rule, and a hard
//! iteration cap turns persistent stalls into an error. Deterministic for a
//! fixed input.

use crate::error::{Error, Result};
use crate::ilp::Ilp;

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

use serde::{Deserialize, Serialize};

/// Result of solving the relaxation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpResult {
    pub status: LpStatus,
    /// Structural variable values, length n; meaningful when `Optimal`.
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Reduced cost per structural variable at the final basis.
    pub reduced_costs: Vec<f64>,
    /// Dual value per constraint row (non-positive on binding `<=` rows of a
    /// minimization).
    pub duals: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

struct Simplex {
    n: usize,
    m: usize,
    ncols: usize,
    /// Dense tableau rows: basis-inverse times all columns.
    tab: Vec<Vec<f64>>,
    /// Current basic variable values, one per row.
    xb: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    iterations: usize,
}

/// Solves the LP relaxation with the standard binary box `0 <= x <= 1`.
pub fn solve_lp_relaxation(ilp: &Ilp) -> Result<LpResult> {
    let n = ilp.num_vars();
    solve_lp_with_bounds(ilp, &vec![0.0; n], &vec![1.0; n])
}

/// Solves the relaxation under per-variable bounds `lo <= x <= hi`
/// (`lo = hi` fixes a variable); used by branch and bound.
pub fn solve_lp_with_bounds(ilp: &Ilp, lo: &[f64], hi: &[f64]) -> Result<LpResult> {
    let n = ilp.num_vars();
    let m = ilp.num_constraints();
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);

    // Start every structural variable at its lower bound; rows whose slack
    // would come out negative there get a phase-1 artificial.
    let residual: Vec<f64> = ilp
        .constraints()
        .iter()
        .map(|row| row.rhs - row.terms.iter().map(|&(j, a)| a * lo[j]).sum::<f64>())
        .collect();
    let art_rows: Vec<usize> = (0..m).filter(|&i| residual[i] < 0.0).collect();
    let ncols = n + m + art_rows.len();

    let mut sx = Simplex {
        n,
        m,
        ncols,
        tab: vec![vec![0.0; ncols]; m],
        xb: vec![0.0; m],
        basis: vec![0; m],
        state: vec![VarState::AtLower; ncols],
        lower: vec![0.0; ncols],
        upper: vec![0.0; ncols],
        iterations: 0,
    };
    sx.lower[..n].copy_from_slice(lo);
    sx.upper[..n].copy_from_slice(hi);
    for i in 0..m {
        sx.upper[n + i] = f64::INFINITY; // slack
    }

    let mut art_col_of_row = vec![usize::MAX; m];
    for (a, &row) in art_rows.iter().enumerate() {
        art_col_of_row[row] = n + m + a;
    }

    for i in 0..m {
        let row = &ilp.constraints()[i];
        let flip = if residual[i] < 0.0 { -1.0 } else { 1.0 };
        for &(j, coeff) in &row.terms {
            sx.tab[i][j] = flip * coeff;
        }
        sx.tab[i][n + i] = flip;
        if residual[i] < 0.0 {
            let art = art_col_of_row[i];
            sx.tab[i][art] = 1.0;
            sx.upper[art] = f64::INFINITY;
            sx.basis[i] = art;
            sx.state[art] = VarState::Basic(i);
            sx.xb[i] = -residual[i];
        } else {
            sx.basis[i] = n + i;
            sx.state[n + i] = VarState::Basic(i);
            sx.xb[i] = residual[i];
        }
    }

    if !art_rows.is_empty() {
        let mut phase1 = vec![0.0; ncols];
        for &row in &art_rows {
            phase1[art_col_of_row[row]] = 1.0;
        }
        sx.optimize(&phase1)?;
        if sx.objective(&phase1) > PHASE1_TOL {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                values: vec![0.0; n],
                objective: f64::INFINITY,
                iterations: sx.iterations,
                reduced_costs: vec![0.0; n],
                duals: vec![0.0; m],
            });
        }
        // Pin artificials at zero for phase 2.
        for &row in &art_rows {
            let art = art_col_of_row[row];
            sx.upper[art] = 0.0;
        }
    }

    let mut cost = vec![0.0; ncols];
    cost[..n].copy_from_slice(ilp.objective());
    let bounded = sx.optimize(&cost)?;
    if !bounded {
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            values: vec![0.0; n],
            objective: f64::NEG_INFINITY,
            iterations: sx.iterations,
            reduced_costs: vec![0.0; n],
            duals: vec![0.0; m],
        });
    }

    let values: Vec<f64> = (0..n).map(|j| sx.value_of(j)).collect();
    let duals: Vec<f64> = {
        let reduced = sx.reduced_costs(&cost);
        (0..m).map(|i| -reduced[n + i]).collect()
    };
    let reduced = sx.reduced_costs(&cost);
    Ok(LpResult {
        status: LpStatus::Optimal,
        objective: values
            .iter()
            .zip(ilp.objective())
            .map(|(x, c)| x * c)
            .sum(),
        values,
        iterations: sx.iterations,
        reduced_costs: reduced[..n].to_vec(),
        duals,
    })
}

impl Simplex {
    fn value_of(&self, col: usize) -> f64 {
        match self.state[col] {
            VarState::Basic(row) => self.xb[row],
            VarState::AtLower => self.lower[col],
            VarState::AtUpper => self.upper[col],
        }
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        (0..self.ncols).map(|j| cost[j] * self.value_of(j)).sum()
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let basis_cost: Vec<f64> = self.basis.iter().map(|&b| cost[b]).collect();
        (0..self.ncols)
            .map(|j| {
                let mut d = cost[j];
                for i in 0..self.m {
                    if basis_cost[i] != 0.0 {
                        d -= basis_cost[i] * self.tab[i][j];
                    }
                }
                d
            })
            .collect()
    }

    /// Runs bounded-variable primal simplex to optimality for `cost`.
    /// Returns false when the LP is unbounded below.
    fn optimize(&mut self, cost: &[f64]) -> Result<bool> {
        let degenerate_switch = 10 * (self.n + self.m);
        let iteration_cap = 50 * (self.n + self.m).max(1);
        let mut degenerate = 0usize;
        let mut local_iters = 0usize;

        loop {
            if local_iters > iteration_cap {
                return Err(Error::SolverStall(format!(
                    "no progress after {local_iters} simplex iterations"
                )));
            }
            let bland = degenerate > degenerate_switch;
            let reduced = self.reduced_costs(cost);

            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.ncols {
                if self.upper[j] - self.lower[j] < PIVOT_TOL {
                    continue; // fixed column
                }
                let eligible = match self.state[j] {
                    VarState::AtLower => reduced[j] < -COST_TOL,
                    VarState::AtUpper => reduced[j] > COST_TOL,
                    VarState::Basic(_) => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, reduced[j]));
                    break;
                }
                let score = reduced[j].abs();
                if entering.map_or(true, |(_, best)| score > best) {
                    entering = Some((j, score));
                }
            }
            let (e, _) = match entering {
                Some(pair) => pair,
                None => return Ok(true), // optimal
            };
            let dir = match self.state[e] {
                VarState::AtLower => 1.0,
                VarState::AtUpper => -1.0,
                VarState::Basic(_) => unreachable!(),
            };

            // Ratio test: smallest step that drives a basic variable to one
            // of its bounds, against the entering variable's own range.
            let mut t_row = f64::INFINITY;
            let mut leave: Option<(usize, bool)> = None; // (row, hits_lower)
            for i in 0..self.m {
                let g = dir * self.tab[i][e];
                let b = self.basis[i];
                if g > PIVOT_TOL {
                    let slack = self.xb[i] - self.lower[b];
                    let t = slack.max(0.0) / g;
                    if t < t_row - PIVOT_TOL
                        || (t < t_row + PIVOT_TOL && leave.map_or(true, |(r, _)| b < self.basis[r]))
                    {
                        t_row = t.min(t_row);
                        leave = Some((i, true));
                    }
                } else if g < -PIVOT_TOL && self.upper[b].is_finite() {
                    let slack = self.upper[b] - self.xb[i];
                    let t = slack.max(0.0) / (-g);
                    if t < t_row - PIVOT_TOL
                        || (t < t_row + PIVOT_TOL && leave.map_or(true, |(r, _)| b < self.basis[r]))
                    {
                        t_row = t.min(t_row);
                        leave = Some((i, false));
                    }
                }
            }
            let t_bound = self.upper[e] - self.lower[e];

            self.iterations += 1;
            local_iters += 1;

            if t_bound <= t_row {
                if !t_bound.is_finite() {
                    return Ok(false); // unbounded ray
                }
                // Bound flip, no basis change.
                for i in 0..self.m {
                    self.xb[i] -= t_bound * dir * self.tab[i][e];
                }
                self.state[e] = match self.state[e] {
                    VarState::AtLower => VarState::AtUpper,
                    VarState::AtUpper => VarState::AtLower,
                    VarState::Basic(_) => unreachable!(),
                };
                continue;
            }
            let (r, hits_lower) = match leave {
                Some(pair) => pair,
                None => return Ok(false),
            };
            if t_row <= PIVOT_TOL {
                degenerate += 1;
            }

            let entering_value = match self.state[e] {
                VarState::AtLower => self.lower[e] + t_row,
                VarState::AtUpper => self.upper[e] - t_row,
                VarState::Basic(_) => unreachable!(),
            };
            for i in 0..self.m {
                self.xb[i] -= t_row * dir * self.tab[i][e];
            }

            let leaving = self.basis[r];
            self.state[leaving] = if hits_lower {
                VarState::AtLower
            } else {
                VarState::AtUpper
            };
            self.basis[r] = e;
            self.state[e] = VarState::Basic(r);
            self.xb[r] = entering_value;

            // Gauss-Jordan pivot on (r, e).
            let pivot = self.tab[r][e];
            debug_assert!(pivot.abs() > PIVOT_TOL);
            let inv = 1.0 / pivot;
            for v in self.tab[r].iter_mut() {
                *v *= inv;
            }
            let pivot_row = self.tab[r].clone();
            for i in 0..self.m {
                if i == r {
                    continue;
                }
                let factor = self.tab[i][e];
                if factor != 0.0 {
                    for (v, p) in self.tab[i].iter_mut().zip(&pivot_row) {
                        *v -= factor * p;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilp::Constraint;
    use std::collections::BTreeMap;

    fn ilp(obj: Vec<f64>, rows: Vec<(Vec<(usize, f64)>, f64)>) -> Ilp {
        let constraints = rows
            .into_iter()
            .map(|(terms, rhs)| Constraint::new(terms, rhs))
            .collect();
        Ilp::new("lp_test", obj, constraints, BTreeMap::new()).unwrap()
    }

    #[test]
    fn single_variable_capped() {
        // min -x1 s.t. x1 <= 0.5
        let problem = ilp(vec![-1.0], vec![(vec![(0, 1.0)], 0.5)]);
        let res = solve_lp_relaxation(&problem).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.objective + 0.5).abs() < 1e-9);
        assert!((res.values[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn covering_edge_relaxation() {
        // min x_u + x_v s.t. x_u + x_v >= 1 (stored negated): optimum 1.0.
        let problem = ilp(vec![1.0, 1.0], vec![(vec![(0, -1.0), (1, -1.0)], -1.0)]);
        let res = solve_lp_relaxation(&problem).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.objective - 1.0).abs() < 1e-9);
        assert!((res.values[0] + res.values[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_row_detected() {
        // x1 + x2 >= 3 cannot hold with x in [0,1]^2.
        let problem = ilp(vec![1.0, 1.0], vec![(vec![(0, -1.0), (1, -1.0)], -3.0)]);
        let res = solve_lp_relaxation(&problem).unwrap();
        assert_eq!(res.status, LpStatus::Infeasible);
    }

    #[test]
    fn unconstrained_box_takes_cheapest_corner() {
        let problem = ilp(vec![2.0, -3.0, 0.0], vec![]);
        let res = solve_lp_relaxation(&problem).unwrap();
        assert_eq!(res.status, LpStatus::Optimal);
        assert!((res.objective + 3.0).abs() < 1e-9);
        assert!((res.values[0]).abs() < 1e-9);
        assert!((res.values[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn result_respects_bounds_and_rows() {
        for seed in 0..20u64 {
            let problem = random_relaxable(8, 6, seed);
            let res = solve_lp_relaxation(&problem).unwrap();
            if res.status != LpStatus::Optimal {
                continue;
            }
            for &v in &res.values {
                assert!((-1e-7..=1.0 + 1e-7).contains(&v), "value {v} out of box");
            }
            for row in problem.constraints() {
                let lhs: f64 = row.terms.iter().map(|&(j, a)| a * res.values[j]).sum();
                assert!(lhs <= row.rhs + 1e-7, "row violated: {lhs} > {}", row.rhs);
            }
        }
    }

    /// Twenty random relaxations against an independent dense big-M simplex
    /// (different formulation: bounds as explicit rows, Bland pricing).
    #[test]
    fn matches_independent_dense_simplex() {
        let mut checked = 0;
        for seed in 100..120u64 {
            let problem = random_relaxable(8, 6, seed);
            let res = solve_lp_relaxation(&problem).unwrap();
            let oracle = oracle::solve(&problem);
            match (res.status, oracle) {
                (LpStatus::Optimal, Some(obj)) => {
                    assert!(
                        (res.objective - obj).abs() < 1e-6,
                        "seed {seed}: {} vs oracle {obj}",
                        res.objective
                    );
                    checked += 1;
                }
                (LpStatus::Infeasible, None) => {}
                (status, oracle) => {
                    panic!("seed {seed}: status {status:?} disagrees with oracle {oracle:?}")
                }
            }
        }
        assert!(checked >= 10, "too few optimal cases exercised");
    }

    fn random_relaxable(n: usize, m: usize, seed: u64) -> Ilp {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let obj: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
        let rows = (0..m)
            .map(|_| {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for j in 0..n {
                    if rng.random_bool(0.5) {
                        let a = rng.random_range(-3..=3) as f64;
                        if a != 0.0 {
                            terms.push((j, a));
                        }
                    }
                }
                (terms, rng.random_range(-2..=5) as f64)
            })
            .collect();
        ilp(obj, rows)
    }

    /// Independent LP oracle: standard-form tableau simplex with every bound
    /// written as an explicit row and big-M artificials, priced with Bland's
    /// rule only. Shares no code with the production solver.
    mod oracle {
        use crate::ilp::Ilp;

        pub fn solve(problem: &Ilp) -> Option<f64> {
            let n = problem.num_vars();
            // Rows: Ax <= b plus x_j <= 1 (x_j >= 0 via variable sign).
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            for c in problem.constraints() {
                let mut dense = vec![0.0; n];
                for &(j, a) in &c.terms {
                    dense[j] = a;
                }
                rows.push((dense, c.rhs));
            }
            for j in 0..n {
                let mut dense = vec![0.0; n];
                dense[j] = 1.0;
                rows.push((dense, 1.0));
            }
            let m = rows.len();
            let big_m = 1e7;

            // Columns: n structural, m slacks, m artificials (artificial only
            // where the initial slack basis would be negative).
            let art: Vec<bool> = rows.iter().map(|&(_, b)| b < 0.0).collect();
            let n_art = art.iter().filter(|&&a| a).count();
            let ncols = n + m + n_art;
            let mut tab = vec![vec![0.0; ncols + 1]; m];
            let mut cost = vec![0.0; ncols];
            cost[..n].copy_from_slice(problem.objective());
            let mut basis = vec![0usize; m];
            let mut next_art = n + m;
            for (i, (dense, b)) in rows.iter().enumerate() {
                let flip = if *b < 0.0 { -1.0 } else { 1.0 };
                for j in 0..n {
                    tab[i][j] = flip * dense[j];
                }
                tab[i][n + i] = flip;
                tab[i][ncols] = flip * b;
                if art[i] {
                    tab[i][next_art] = 1.0;
                    cost[next_art] = big_m;
                    basis[i] = next_art;
                    next_art += 1;
                } else {
                    basis[i] = n + i;
                }
            }

            for _ in 0..100_000 {
                // Reduced costs under Bland's rule: first negative wins.
                let mut entering = None;
                for j in 0..ncols {
                    let mut d = cost[j];
                    for i in 0..m {
                        d -= cost[basis[i]] * tab[i][j];
                    }
                    if d < -1e-9 {
                        entering = Some(j);
                        break;
                    }
                }
                let e = match entering {
                    Some(e) => e,
                    None => break,
                };
                let mut leave: Option<(usize, f64)> = None;
                for i in 0..m {
                    if tab[i][e] > 1e-9 {
                        let ratio = tab[i][ncols] / tab[i][e];
                        let better = match leave {
                            None => true,
                            Some((r, best)) => {
                                ratio < best - 1e-12
                                    || (ratio < best + 1e-12 && basis[i] < basis[r])
                            }
                        };
                        if better {
                            leave = Some((i, ratio));
                        }
                    }
                }
                let (r, _) = leave?; // unbounded cannot happen: box is compact
                let pivot = tab[r][e];
                for v in tab[r].iter_mut() {
                    *v /= pivot;
                }
                let pivot_row = tab[r].clone();
                for i in 0..m {
                    if i != r && tab[i][e] != 0.0 {
                        let f = tab[i][e];
                        for (v, p) in tab[i].iter_mut().zip(&pivot_row) {
                            *v -= f * p;
                        }
                    }
                }
                basis[r] = e;
            }

            // Artificial still in the solution => infeasible.
            let mut x = vec![0.0; ncols];
            for i in 0..m {
                x[basis[i]] = tab[i][ncols];
            }
            if (n + m..ncols).any(|j| x[j] > 1e-6) {
                return None;
            }
            Some((0..n).map(|j| problem.objective()[j] * x[j]).sum())
        }
    }
}
