//! Best-first branch and bound for binary ILPs.
//!
//! Node bound = LP relaxation objective; branching variable = most
//! fractional LP value with lowest-index tie-break; among equal bounds the
//! most recently created child wins, and the child matching the LP rounding
//! is created last, so the search dives on the rounding first. Every strict
//! incumbent improvement is logged, which downstream sample mining relies on.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::ilp::{Ilp, Solution};
use crate::lp::{solve_lp_with_bounds, LpStatus};

const PRUNE_TOL: f64 = 1e-9;
const INT_TOL: f64 = 1e-6;

/// Runtime limits for one solve. Every limit is optional; absent means
/// unlimited. Node limits make runs deterministic, wall-clock limits do not.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveLimits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_limit: Option<u64>,
    /// Stop once `|primal - dual| / max(|primal|, 1e-8) <= gap_limit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_limit: Option<f64>,
    /// Incumbent used to seed pruning; re-validated and reported as
    /// `incumbents[0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Solution>,
    /// Stop as soon as any incumbent exists (used for initial solutions).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stop_after_first_incumbent: bool,
    /// Record (fixings, bound) for every evaluated node; test instrumentation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub trace_nodes: bool,
}

impl SolveLimits {
    pub fn unlimited() -> Self {
        SolveLimits::default()
    }

    pub fn nodes(limit: u64) -> Self {
        SolveLimits {
            node_limit: Some(limit),
            ..SolveLimits::default()
        }
    }

    pub fn with_warm_start(mut self, warm: Solution) -> Self {
        self.warm_start = Some(warm);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.time_limit_s {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("time limit must be > 0".into()));
            }
        }
        if let Some(n) = self.node_limit {
            if n == 0 {
                return Err(Error::InvalidArgument("node limit must be > 0".into()));
            }
        }
        if let Some(g) = self.gap_limit {
            if !(g > 0.0) {
                return Err(Error::InvalidArgument("gap limit must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnbStatus {
    /// Search space exhausted with an incumbent: proven optimal.
    Optimal,
    /// Stopped by the gap limit with an incumbent in hand.
    Feasible,
    /// Search space exhausted without any feasible point.
    Infeasible,
    /// Node or time budget exhausted.
    LimitReached,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeTrace {
    /// Branching decisions: -1 free, 0/1 fixed.
    pub fixings: Vec<i8>,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub best: Option<Solution>,
    /// Chronological list of strict improvements (warm start first, if any).
    pub incumbents: Vec<Solution>,
    /// Number of nodes evaluated (LP solves), root included.
    pub nodes: u64,
    pub dual_bound: f64,
    /// Whether `incumbents[0]` is the warm-start seed rather than a find.
    #[serde(default)]
    pub warm_seeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_trace: Option<Vec<NodeTrace>>,
}

impl BnbResult {
    /// Improvements found by this solve, excluding the warm-start seed.
    pub fn improvements(&self) -> &[Solution] {
        if self.incumbents.is_empty() {
            &[]
        } else {
            let skip = usize::from(self.warm_seeded);
            &self.incumbents[skip..]
        }
    }
}

struct OpenNode {
    bound: f64,
    seq: u64,
    fixings: Vec<i8>,
    branch_var: usize,
    dive_value: bool,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}
impl Eq for OpenNode {}
impl Ord for OpenNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: smallest bound first, then the most recent node (dive).
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.seq.cmp(&other.seq))
    }
}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    ilp: &'a Ilp,
    limits: &'a SolveLimits,
    start: Instant,
    heap: BinaryHeap<OpenNode>,
    best: Option<Solution>,
    incumbents: Vec<Solution>,
    nodes: u64,
    seq: u64,
    trace: Option<Vec<NodeTrace>>,
    track_wall: bool,
}

enum NodeOutcome {
    Pruned,
    Leaf,
    Open,
}

pub fn solve_bnb(ilp: &Ilp, limits: &SolveLimits) -> Result<BnbResult> {
    limits.validate()?;
    let mut warm_seeded = false;
    let mut search = Search {
        ilp,
        limits,
        start: Instant::now(),
        heap: BinaryHeap::new(),
        best: None,
        incumbents: Vec::new(),
        nodes: 0,
        seq: 0,
        trace: limits.trace_nodes.then(Vec::new),
        track_wall: limits.time_limit_s.is_some(),
    };

    if let Some(warm) = &limits.warm_start {
        let mut revalidated = ilp.evaluate(&warm.assignment)?;
        if !revalidated.feasible {
            return Err(Error::InvalidArgument(
                "warm-start incumbent is infeasible".into(),
            ));
        }
        revalidated.found_at_iter = Some(0);
        search.best = Some(revalidated.clone());
        search.incumbents.push(revalidated);
        warm_seeded = true;
    }

    let root_outcome = search.evaluate(vec![-1; ilp.num_vars()])?;
    if matches!(root_outcome, NodeOutcome::Pruned) && search.best.is_none() && search.nodes > 0 {
        // Root LP infeasible (a bound-pruned root needs an incumbent).
        return Ok(search.finish(BnbStatus::Infeasible, warm_seeded));
    }

    let status = loop {
        if search.stop_first_incumbent() {
            break if search.heap.is_empty() {
                search.exhausted_status()
            } else {
                BnbStatus::LimitReached
            };
        }
        if search.gap_closed() {
            break if search.heap.is_empty() {
                search.exhausted_status()
            } else {
                BnbStatus::Feasible
            };
        }
        if let Some(status) = search.budget_exhausted() {
            break status;
        }
        let node = match search.heap.pop() {
            Some(node) => node,
            None => break search.exhausted_status(),
        };
        if let Some(best) = &search.best {
            if node.bound >= best.objective - PRUNE_TOL {
                continue; // stale: an incumbent arrived after this was pushed
            }
        }
        // Opposite child first, dive child last: the dive child gets the
        // higher sequence number and wins bound ties in the heap.
        for value in [!node.dive_value, node.dive_value] {
            let mut fixings = node.fixings.clone();
            fixings[node.branch_var] = i8::from(value);
            search.evaluate(fixings)?;
        }
    };

    Ok(search.finish(status, warm_seeded))
}

impl<'a> Search<'a> {
    fn evaluate(&mut self, fixings: Vec<i8>) -> Result<NodeOutcome> {
        let n = self.ilp.num_vars();
        let mut lo = vec![0.0; n];
        let mut hi = vec![1.0; n];
        for (j, &f) in fixings.iter().enumerate() {
            if f == 0 {
                hi[j] = 0.0;
            } else if f == 1 {
                lo[j] = 1.0;
            }
        }
        let lp = solve_lp_with_bounds(self.ilp, &lo, &hi)?;
        self.nodes += 1;
        match lp.status {
            LpStatus::Infeasible => return Ok(NodeOutcome::Pruned),
            LpStatus::Unbounded => {
                // Cannot happen on a compact box; treat as an unprunable node.
                return Err(Error::SolverStall("unbounded node relaxation".into()));
            }
            LpStatus::Optimal => {}
        }
        if let Some(trace) = &mut self.trace {
            trace.push(NodeTrace {
                fixings: fixings.clone(),
                bound: lp.objective,
            });
        }
        if let Some(best) = &self.best {
            if lp.objective >= best.objective - PRUNE_TOL {
                return Ok(NodeOutcome::Pruned);
            }
        }

        // Most fractional free variable, ties to the lowest index.
        let mut branch: Option<(usize, f64)> = None;
        for (j, &value) in lp.values.iter().enumerate() {
            if fixings[j] != -1 {
                continue;
            }
            let dist = (value - value.round()).abs();
            if dist > INT_TOL && branch.map_or(true, |(_, d)| dist > d) {
                branch = Some((j, dist));
            }
        }

        match branch {
            None => {
                // Integral relaxation: candidate incumbent.
                let bits = Bits::from_slice(
                    &lp.values
                        .iter()
                        .map(|v| v.round() >= 0.5)
                        .collect::<Vec<bool>>(),
                );
                let mut solution = self.ilp.evaluate(&bits)?;
                debug_assert!(solution.feasible, "integral LP point must be feasible");
                if solution.feasible
                    && self
                        .best
                        .as_ref()
                        .map_or(true, |b| solution.objective < b.objective - PRUNE_TOL)
                {
                    solution.found_at_iter = Some(self.nodes);
                    solution.found_at_s = self.track_wall.then(|| self.elapsed());
                    self.best = Some(solution.clone());
                    self.incumbents.push(solution);
                }
                Ok(NodeOutcome::Leaf)
            }
            Some((var, _)) => {
                let dive_value = lp.values[var].round() >= 0.5;
                self.seq += 1;
                self.heap.push(OpenNode {
                    bound: lp.objective,
                    seq: self.seq,
                    fixings,
                    branch_var: var,
                    dive_value,
                });
                Ok(NodeOutcome::Open)
            }
        }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn stop_first_incumbent(&self) -> bool {
        self.limits.stop_after_first_incumbent && !self.incumbents.is_empty()
    }

    fn gap_closed(&self) -> bool {
        let (Some(gap_limit), Some(best)) = (self.limits.gap_limit, &self.best) else {
            return false;
        };
        let dual = self.open_dual_bound(best.objective);
        let gap = (best.objective - dual).abs() / best.objective.abs().max(1e-8);
        gap <= gap_limit
    }

    fn budget_exhausted(&self) -> Option<BnbStatus> {
        if self.heap.is_empty() {
            return None;
        }
        if let Some(limit) = self.limits.node_limit {
            if self.nodes >= limit {
                return Some(BnbStatus::LimitReached);
            }
        }
        if let Some(limit) = self.limits.time_limit_s {
            if self.elapsed() >= limit {
                return Some(BnbStatus::LimitReached);
            }
        }
        None
    }

    fn exhausted_status(&self) -> BnbStatus {
        if self.best.is_some() {
            BnbStatus::Optimal
        } else {
            BnbStatus::Infeasible
        }
    }

    fn open_dual_bound(&self, best_objective: f64) -> f64 {
        match self.heap.iter().map(|n| n.bound).reduce(f64::min) {
            Some(open_min) => open_min.min(best_objective),
            None => best_objective,
        }
    }

    fn finish(self, status: BnbStatus, warm_seeded: bool) -> BnbResult {
        let dual_bound = match (&self.best, status) {
            (Some(best), BnbStatus::Optimal) => best.objective,
            (Some(best), _) => self.open_dual_bound(best.objective),
            (None, _) if self.heap.is_empty() => f64::INFINITY,
            (None, _) => self
                .heap
                .iter()
                .map(|n| n.bound)
                .reduce(f64::min)
                .unwrap_or(f64::INFINITY),
        };
        BnbResult {
            status,
            best: self.best,
            incumbents: self.incumbents,
            nodes: self.nodes,
            dual_bound,
            node_trace: self.trace,
            warm_seeded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilp::Constraint;
    use std::collections::BTreeMap;

    fn random_ilp(n: usize, m: usize, seed: u64) -> Ilp {
        use rand::Rng;
        let mut rng = crate::rng::seeded(seed);
        let objective: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
        let constraints = (0..m)
            .map(|_| {
                let mut terms: Vec<(usize, f64)> = Vec::new();
                for j in 0..n {
                    if rng.random_bool(0.6) {
                        let a = rng.random_range(-3..=3) as f64;
                        if a != 0.0 {
                            terms.push((j, a));
                        }
                    }
                }
                Constraint::new(terms, rng.random_range(-2..=6) as f64)
            })
            .collect();
        Ilp::new(format!("bnb_{seed}"), objective, constraints, BTreeMap::new()).unwrap()
    }

    fn brute_force(ilp: &Ilp) -> Option<(f64, Bits)> {
        let n = ilp.num_vars();
        let mut best: Option<(f64, Bits)> = None;
        for v in 0u64..(1 << n) {
            let bits = Bits::from_u64(v, n);
            let sol = ilp.evaluate(&bits).unwrap();
            if sol.feasible && best.as_ref().map_or(true, |(obj, _)| sol.objective < *obj) {
                best = Some((sol.objective, bits));
            }
        }
        best
    }

    #[test]
    fn integral_relaxation_solves_at_root() {
        // min -x1 - x2 with no rows: LP optimum (1, 1) is integral.
        let ilp = Ilp::new("root", vec![-1.0, -1.0], vec![], BTreeMap::new()).unwrap();
        let res = solve_bnb(&ilp, &SolveLimits::unlimited()).unwrap();
        assert_eq!(res.status, BnbStatus::Optimal);
        assert_eq!(res.nodes, 1);
        assert_eq!(res.best.unwrap().objective, -2.0);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        for seed in 0..60u64 {
            let n = 6 + (seed % 5) as usize; // 6..=10
            let ilp = random_ilp(n, 5, seed);
            let res = solve_bnb(&ilp, &SolveLimits::unlimited()).unwrap();
            match brute_force(&ilp) {
                Some((opt, _)) => {
                    assert_eq!(res.status, BnbStatus::Optimal, "seed {seed}");
                    let best = res.best.as_ref().unwrap();
                    assert!(
                        (best.objective - opt).abs() <= 1e-9,
                        "seed {seed}: got {} expected {opt}",
                        best.objective
                    );
                    assert!((best.objective - res.dual_bound).abs() <= 1e-6);
                }
                None => assert_eq!(res.status, BnbStatus::Infeasible, "seed {seed}"),
            }
        }
    }

    #[test]
    fn warm_start_with_optimum_stays_put() {
        let ilp = random_ilp(8, 5, 7);
        let (opt, bits) = brute_force(&ilp).expect("seed 7 is feasible");
        let warm = ilp.evaluate(&bits).unwrap();
        let res = solve_bnb(
            &ilp,
            &SolveLimits::unlimited().with_warm_start(warm.clone()),
        )
        .unwrap();
        assert_eq!(res.status, BnbStatus::Optimal);
        assert_eq!(res.incumbents.len(), 1);
        assert!(res.warm_seeded);
        assert!(res.improvements().is_empty());
        assert!((res.best.unwrap().objective - opt).abs() <= 1e-9);
    }

    #[test]
    fn incumbents_strictly_improve() {
        for seed in [3u64, 9, 21] {
            let ilp = random_ilp(10, 6, seed);
            let res = solve_bnb(&ilp, &SolveLimits::unlimited()).unwrap();
            for pair in res.incumbents.windows(2) {
                assert!(pair[1].objective < pair[0].objective - 1e-12);
            }
        }
    }

    #[test]
    fn node_limit_reports_limit_reached() {
        let ilp = random_ilp(12, 8, 5);
        let res = solve_bnb(&ilp, &SolveLimits::nodes(2)).unwrap();
        if res.status == BnbStatus::LimitReached {
            assert!(res.nodes >= 2);
            if let Some(best) = &res.best {
                assert!(res.dual_bound <= best.objective + 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_under_node_limits() {
        let ilp = random_ilp(12, 8, 13);
        let limits = SolveLimits::nodes(500);
        let a = solve_bnb(&ilp, &limits).unwrap();
        let b = solve_bnb(&ilp, &limits).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.dual_bound.to_bits(), b.dual_bound.to_bits());
        assert_eq!(a.incumbents.len(), b.incumbents.len());
        for (x, y) in a.incumbents.iter().zip(&b.incumbents) {
            assert_eq!(x.assignment, y.assignment);
            assert_eq!(x.objective.to_bits(), y.objective.to_bits());
            assert_eq!(x.found_at_iter, y.found_at_iter);
            assert_eq!(x.found_at_s, y.found_at_s); // both None without wall clock
        }
    }

    /// Every traced node's relaxation bound under-estimates the true optimum
    /// of its sub-tree, verified by enumerating completions of the fixings.
    #[test]
    fn bounding_is_sound() {
        for seed in [2u64, 11, 31] {
            let n = 9;
            let ilp = random_ilp(n, 5, seed);
            let limits = SolveLimits {
                trace_nodes: true,
                ..SolveLimits::default()
            };
            let res = solve_bnb(&ilp, &limits).unwrap();
            for node in res.node_trace.as_ref().unwrap() {
                let mut subtree_best = f64::INFINITY;
                for v in 0u64..(1 << n) {
                    let bits = Bits::from_u64(v, n);
                    let consistent = node
                        .fixings
                        .iter()
                        .enumerate()
                        .all(|(j, &f)| f == -1 || (f == 1) == bits.get(j));
                    if !consistent {
                        continue;
                    }
                    let sol = ilp.evaluate(&bits).unwrap();
                    if sol.feasible {
                        subtree_best = subtree_best.min(sol.objective);
                    }
                }
                assert!(
                    node.bound <= subtree_best + 1e-6,
                    "seed {seed}: bound {} exceeds sub-tree optimum {subtree_best}",
                    node.bound
                );
            }
        }
    }

    #[test]
    fn first_incumbent_stop() {
        let ilp = random_ilp(10, 6, 17);
        if brute_force(&ilp).is_none() {
            return;
        }
        let limits = SolveLimits {
            stop_after_first_incumbent: true,
            ..SolveLimits::default()
        };
        let res = solve_bnb(&ilp, &limits).unwrap();
        assert_eq!(res.incumbents.len(), 1);
        assert!(res.best.is_some());
    }

    #[test]
    fn infeasible_warm_start_rejected() {
        let ilp = Ilp::new(
            "warm",
            vec![1.0, 1.0],
            vec![Constraint::new(vec![(0, -1.0), (1, -1.0)], -1.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let bad = ilp.evaluate(&Bits::from_bitstring("00").unwrap()).unwrap();
        let res = solve_bnb(&ilp, &SolveLimits::unlimited().with_warm_start(bad));
        assert!(matches!(res, Err(Error::InvalidArgument(_))));
    }
}
