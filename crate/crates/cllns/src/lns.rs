//! The anytime LNS loop: find an initial solution, then repeatedly destroy a
//! variable subset, repair it with the exact solver warm-started at the
//! incumbent, accept strict improvements, and grow the neighborhood size on
//! failures.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::bnb::{solve_bnb, SolveLimits};
use crate::destroy::Proposal;
use crate::error::{Error, Result};
use crate::ilp::{Ilp, Solution};
use crate::rng::{self, Prng};

const ACCEPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LnsParams {
    /// Initial neighborhood size.
    pub k0: usize,
    /// Growth factor applied to `k` after a failed iteration (>= 1).
    pub gamma: f64,
    /// Neighborhood cap as a fraction of the variable count, in (0, 1].
    pub beta: f64,
    pub init_budget: SolveLimits,
    pub repair_budget: SolveLimits,
    /// Iteration cap; at least one of this and `time_limit_s` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<f64>,
    pub seed: u64,
    /// Temperature for score-proportional sampling in the learned heuristic.
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_eta() -> f64 {
    0.5
}

impl LnsParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k0 < 1 || self.k0 > n {
            return Err(Error::InvalidArgument(format!(
                "k0 = {} out of range 1..={n}",
                self.k0
            )));
        }
        if self.gamma < 1.0 {
            return Err(Error::InvalidArgument("gamma must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidArgument("beta must be in (0, 1]".into()));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidArgument("eta must be > 0".into()));
        }
        if self.max_iterations.is_none() && self.time_limit_s.is_none() {
            return Err(Error::InvalidArgument(
                "set an iteration cap and/or a time limit".into(),
            ));
        }
        self.init_budget.validate()?;
        self.repair_budget.validate()?;
        Ok(())
    }
}

/// Everything a destroy heuristic may look at in iteration `t`.
#[derive(Debug, Clone)]
pub struct LnsState<'a> {
    pub ilp: &'a Ilp,
    pub incumbent: Solution,
    /// Last three incumbent assignments, most recent first, padded by
    /// repeating the oldest when fewer exist.
    pub window: [Bits; 3],
    pub iteration: u64,
    pub k: usize,
    /// Hard cap on `k`: `max(1, floor(beta * n))`.
    pub k_cap: usize,
    pub elapsed_s: f64,
    /// Per variable: number of accepted iterations that changed its value.
    pub change_counts: Vec<u32>,
}

impl<'a> LnsState<'a> {
    /// State for scoring a single snapshot outside the engine loop:
    /// iteration 0, window padded with the incumbent, neighborhood size 1
    /// with the cap at n.
    pub fn fresh(ilp: &'a Ilp, incumbent: Solution) -> Result<Self> {
        if !incumbent.feasible || incumbent.assignment.len() != ilp.num_vars() {
            return Err(Error::InvalidArgument(
                "state needs a feasible incumbent of matching length".into(),
            ));
        }
        let n = ilp.num_vars();
        Ok(Self::new(ilp, incumbent, 1, n))
    }

    #[cfg(test)]
    pub(crate) fn for_tests(ilp: &'a Ilp, incumbent: Solution) -> Self {
        let n = ilp.num_vars();
        Self::new(ilp, incumbent, 1, n)
    }

    pub(crate) fn new(ilp: &'a Ilp, incumbent: Solution, k: usize, k_cap: usize) -> Self {
        let window = [
            incumbent.assignment.clone(),
            incumbent.assignment.clone(),
            incumbent.assignment.clone(),
        ];
        let n = ilp.num_vars();
        LnsState {
            ilp,
            incumbent,
            window,
            iteration: 0,
            k,
            k_cap,
            elapsed_s: 0.0,
            change_counts: vec![0; n],
        }
    }

    pub(crate) fn accept(&mut self, solution: Solution) {
        for j in 0..self.ilp.num_vars() {
            if solution.assignment.get(j) != self.incumbent.assignment.get(j) {
                self.change_counts[j] += 1;
            }
        }
        self.window.rotate_right(1);
        self.window[0] = solution.assignment.clone();
        self.incumbent = solution;
    }
}

/// A pluggable destroy heuristic driven by the engine.
pub trait Destroyer {
    fn name(&self) -> &str;

    /// Called once per run before the first iteration (root-LP caches etc.).
    fn begin(&mut self, _ilp: &Ilp) -> Result<()> {
        Ok(())
    }

    fn propose(&mut self, state: &LnsState, rng: &mut Prng) -> Result<Proposal>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    IterationLimit,
    TimeLimit,
    /// Local branching proved no improvement exists within the capped radius.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LnsEvent {
    pub elapsed_s: f64,
    pub iteration: u64,
    pub objective: f64,
}

/// Chronological record of one LNS run: the initial solution event plus one
/// event per strict incumbent improvement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub instance: String,
    pub method: String,
    pub seed: u64,
    pub events: Vec<LnsEvent>,
    pub status: RunStatus,
}

impl RunLog {
    pub fn final_objective(&self) -> f64 {
        self.events
            .last()
            .map(|e| e.objective)
            .unwrap_or(f64::INFINITY)
    }

    pub fn csv_header() -> &'static str {
        "instance,method,seed,elapsed_s,iteration,objective"
    }

    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.instance, self.method, self.seed, e.elapsed_s, e.iteration, e.objective
            ));
        }
        out
    }
}

/// First feasible solution found by branch and bound under `budget` — the
/// first incumbent, not the best.
pub fn initial_solution(ilp: &Ilp, budget: &SolveLimits) -> Result<Solution> {
    let mut limits = budget.clone();
    limits.stop_after_first_incumbent = true;
    limits.warm_start = None;
    let res = solve_bnb(ilp, &limits)?;
    res.incumbents.into_iter().next().ok_or_else(|| {
        Error::InitFailure(format!("instance {} under the given budget", ilp.name))
    })
}

/// Neighborhood-size update: unchanged on improvement, otherwise grown by
/// `gamma` and capped at `floor(beta * n)` (never below 1).
pub fn adapt_k(k: usize, improved: bool, gamma: f64, beta: f64, n: usize) -> usize {
    if improved {
        return k;
    }
    let cap = (((beta * n as f64).floor()) as usize).max(1);
    (((gamma * k as f64).ceil()) as usize).min(cap)
}

/// Runs the LNS loop and returns its event log.
pub fn run_lns(ilp: &Ilp, destroyer: &mut dyn Destroyer, params: &LnsParams) -> Result<RunLog> {
    let n = ilp.num_vars();
    params.validate(n)?;
    let start = Instant::now();
    // Wall-clock stamps are only taken when a time limit is in play; under
    // pure iteration budgets every artifact stays byte-reproducible.
    let track_wall = params.time_limit_s.is_some();
    let elapsed = |start: &Instant| {
        if track_wall {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };

    let mut rng: Prng = rng::seeded(params.seed);
    let incumbent = initial_solution(ilp, &params.init_budget)?;
    let k_cap = (((params.beta * n as f64).floor()) as usize).max(1);
    let k = params.k0.min(k_cap);
    let mut events = vec![LnsEvent {
        elapsed_s: elapsed(&start),
        iteration: 0,
        objective: incumbent.objective,
    }];
    let mut state = LnsState::new(ilp, incumbent, k, k_cap);
    destroyer.begin(ilp)?;

    let status = loop {
        if let Some(cap) = params.max_iterations {
            if state.iteration >= cap {
                break RunStatus::IterationLimit;
            }
        }
        if let Some(limit) = params.time_limit_s {
            if start.elapsed().as_secs_f64() >= limit {
                break RunStatus::TimeLimit;
            }
        }

        let mut improved = false;
        match destroyer.propose(&state, &mut rng) {
            Ok(Proposal::Destroy(action)) => {
                debug_assert!(action.size() >= 1);
                let sub = ilp.build_sub_ilp(&state.incumbent, &action)?;
                let mut budget = params.repair_budget.clone();
                budget.warm_start = Some(state.incumbent.clone());
                match solve_bnb(&sub, &budget) {
                    Ok(res) => {
                        if let Some(best) = res.best {
                            if best.objective < state.incumbent.objective - ACCEPT_TOL {
                                debug_assert_eq!(
                                    best.assignment
                                        .diff_mask(&state.incumbent.assignment)
                                        .iter_ones()
                                        .filter(|&j| !action.mask.get(j))
                                        .count(),
                                    0,
                                    "repair changed a fixed variable"
                                );
                                let mut accepted = best;
                                accepted.found_at_s = track_wall.then(|| elapsed(&start));
                                accepted.found_at_iter = Some(state.iteration + 1);
                                events.push(LnsEvent {
                                    elapsed_s: elapsed(&start),
                                    iteration: state.iteration + 1,
                                    objective: accepted.objective,
                                });
                                state.accept(accepted);
                                improved = true;
                            }
                        }
                    }
                    Err(err) => {
                        // A failed repair is treated exactly like a failed
                        // iteration: log it and escalate k.
                        log::warn!(
                            "repair failed at iteration {} on {}: {err}",
                            state.iteration,
                            ilp.name
                        );
                    }
                }
            }
            Ok(Proposal::NoImprovement) => {
                if state.k >= state.k_cap {
                    // The radius cannot grow further and local branching
                    // proved the ball empty of improvements.
                    state.iteration += 1;
                    break RunStatus::Stalled;
                }
            }
            Err(err) => {
                log::warn!(
                    "destroy failed at iteration {} on {}: {err}",
                    state.iteration,
                    ilp.name
                );
            }
        }

        state.iteration += 1;
        state.k = adapt_k(state.k, improved, params.gamma, params.beta, n);
        state.elapsed_s = elapsed(&start);
    };

    Ok(RunLog {
        instance: ilp.name.clone(),
        method: destroyer.name().to_string(),
        seed: params.seed,
        events,
        status,
    })
}

/// The classical destroy heuristics as engine plugins.
pub struct RandomDestroyer;

impl Destroyer for RandomDestroyer {
    fn name(&self) -> &str {
        "random"
    }

    fn propose(&mut self, state: &LnsState, rng: &mut Prng) -> Result<Proposal> {
        Ok(Proposal::Destroy(crate::destroy::destroy_random(
            state, state.k, rng,
        )))
    }
}

pub struct GraphBfsDestroyer;

impl Destroyer for GraphBfsDestroyer {
    fn name(&self) -> &str {
        "graph"
    }

    fn propose(&mut self, state: &LnsState, rng: &mut Prng) -> Result<Proposal> {
        Ok(Proposal::Destroy(crate::destroy::destroy_graph_bfs(
            state, state.k, rng,
        )))
    }
}

pub struct LocalBranchingDestroyer {
    pub budget: SolveLimits,
}

impl Destroyer for LocalBranchingDestroyer {
    fn name(&self) -> &str {
        "lb"
    }

    fn propose(&mut self, state: &LnsState, _rng: &mut Prng) -> Result<Proposal> {
        crate::destroy::destroy_local_branching(state, state.k, &self.budget)
    }
}

pub struct LbRelaxDestroyer;

impl Destroyer for LbRelaxDestroyer {
    fn name(&self) -> &str {
        "lb_relax"
    }

    fn propose(&mut self, state: &LnsState, _rng: &mut Prng) -> Result<Proposal> {
        Ok(Proposal::Destroy(crate::destroy::destroy_lb_relax(
            state, state.k,
        )?))
    }
}
