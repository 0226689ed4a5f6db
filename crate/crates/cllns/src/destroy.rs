//! Destroy heuristics: each one picks the set of variables to free and
//! reoptimize in an LNS iteration.

use std::collections::VecDeque;

use crate::bnb::{solve_bnb, SolveLimits};
use crate::error::{Error, Result};
use crate::ilp::Action;
use crate::lns::LnsState;
use crate::lp::{solve_lp_relaxation, LpStatus};
use crate::rng::Prng;

use rand::Rng;

/// Outcome of a destroy step. `NoImprovement` is the local-branching
/// heuristic's signal that nothing within the current radius beats the
/// incumbent; the engine escalates the neighborhood size in response.
#[derive(Debug, Clone)]
pub enum Proposal {
    Destroy(Action),
    NoImprovement,
}

/// Uniformly random k-subset of the variables.
pub fn destroy_random(state: &LnsState, k: usize, rng: &mut Prng) -> Action {
    let n = state.ilp.num_vars();
    debug_assert!((1..=n).contains(&k));
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    Action::from_indices(n, &pool[..k])
}

/// Breadth-first search over the variable-constraint bipartite graph from a
/// random start variable, collecting variables in expansion order; when a
/// component runs out before `k` variables are collected, restarts from a
/// fresh unvisited random variable.
pub fn destroy_graph_bfs(state: &LnsState, k: usize, rng: &mut Prng) -> Action {
    let ilp = state.ilp;
    let n = ilp.num_vars();
    debug_assert!((1..=n).contains(&k));

    let mut rows_of_var: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in ilp.constraints().iter().enumerate() {
        for &(j, _) in &row.terms {
            rows_of_var[j].push(i);
        }
    }

    let mut seen_var = vec![false; n];
    let mut seen_row = vec![false; ilp.num_constraints()];
    let mut order: Vec<usize> = Vec::with_capacity(k);
    let mut queue: VecDeque<usize> = VecDeque::new();

    while order.len() < k {
        if queue.is_empty() {
            let unvisited: Vec<usize> = (0..n).filter(|&j| !seen_var[j]).collect();
            let start = unvisited[rng.random_range(0..unvisited.len())];
            seen_var[start] = true;
            queue.push_back(start);
        }
        while let Some(v) = queue.pop_front() {
            order.push(v);
            if order.len() == k {
                break;
            }
            for &row in &rows_of_var[v] {
                if seen_row[row] {
                    continue;
                }
                seen_row[row] = true;
                for &(u, _) in &ilp.constraints()[row].terms {
                    if !seen_var[u] {
                        seen_var[u] = true;
                        queue.push_back(u);
                    }
                }
            }
        }
    }
    Action::from_indices(n, &order)
}

/// Local branching: solve the instance restricted to the Hamming ball of
/// radius `k` around the incumbent; the destroy set is the set of variables
/// the ball optimum flips. Returns `NoImprovement` when the solve finds no
/// strict improvement within the budget.
pub fn destroy_local_branching(
    state: &LnsState,
    k: usize,
    budget: &SolveLimits,
) -> Result<Proposal> {
    let lb = state
        .ilp
        .add_local_branching_constraint(&state.incumbent, k)?;
    let mut limits = budget.clone();
    limits.warm_start = Some(state.incumbent.clone());
    let res = solve_bnb(&lb, &limits)?;
    if res.improvements().is_empty() {
        return Ok(Proposal::NoImprovement);
    }
    let best = res.best.expect("improvement implies an incumbent");
    let mask = best.assignment.diff_mask(&state.incumbent.assignment);
    Ok(Proposal::Destroy(Action::new(mask)))
}

/// LP-relaxation shortcut to local branching: solve the relaxation of the
/// radius-`k` LB instance and free the `k` variables whose relaxation value
/// moves furthest from the incumbent (ties to the lower index).
pub fn destroy_lb_relax(state: &LnsState, k: usize) -> Result<Action> {
    let lb = state
        .ilp
        .add_local_branching_constraint(&state.incumbent, k)?;
    let lp = solve_lp_relaxation(&lb)?;
    if lp.status != LpStatus::Optimal {
        return Err(Error::State(format!(
            "LB relaxation unexpectedly {:?} with a feasible incumbent",
            lp.status
        )));
    }
    let scores: Vec<f64> = lp
        .values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let inc = if state.incumbent.assignment.get(j) { 1.0 } else { 0.0 };
            (v - inc).abs()
        })
        .collect();
    Ok(destroy_policy_greedy(&scores, k))
}

/// Greedy top-k by score, ties to the lower index.
pub fn destroy_policy_greedy(scores: &[f64], k: usize) -> Action {
    let n = scores.len();
    debug_assert!((1..=n).contains(&k));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Action::from_indices(n, &idx[..k])
}

/// Sequential sampling without replacement with probability proportional to
/// `score^eta`; zero scores draw with weight 1e-12 so the loop always
/// terminates.
pub fn destroy_policy_sampling(scores: &[f64], k: usize, eta: f64, rng: &mut Prng) -> Action {
    let n = scores.len();
    debug_assert!((1..=n).contains(&k));
    debug_assert!(eta > 0.0);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut weights: Vec<f64> = scores
        .iter()
        .map(|&s| if s > 0.0 { s.powf(eta) } else { 1e-12 })
        .collect();
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&j| weights[j]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (slot, &j) in remaining.iter().enumerate() {
            u -= weights[j];
            if u <= 0.0 {
                pick = slot;
                break;
            }
        }
        let j = remaining.swap_remove(pick);
        weights[j] = 0.0;
        chosen.push(j);
    }
    Action::from_indices(n, &chosen)
}
