//! Expert-trajectory data collection.
//!
//! Local branching drives LNS at a fixed neighborhood size until it proves
//! no improvement; at every state on the way the solver's intermediate
//! incumbents become positive destroy actions, random perturbations of the
//! optimal action that repair to (almost) nothing become negatives, and the
//! featurized state is frozen into a training example.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::bnb::{solve_bnb, BnbResult, BnbStatus, SolveLimits};
use crate::error::{Error, Result};
use crate::features::{featurize, BipartiteFeatures};
use crate::ilp::{Action, Ilp, Solution};
use crate::lns::{initial_solution, LnsState};
use crate::lp::solve_lp_relaxation;
use crate::rng::{self, Prng};

/// Positive and negative destroy actions for one state. Positives are
/// sorted by achieved improvement, best first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSet {
    pub positives: Vec<Action>,
    pub negatives: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub instance: String,
    pub iteration: u64,
    pub incumbent_objective: f64,
    pub best_improvement: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainExample {
    pub features: BipartiteFeatures,
    pub samples: SampleSet,
    pub provenance: Provenance,
}

/// Knobs of the collection stage (loss thresholds per the hyperparameter
/// defaults, plus desk-scale solver budgets).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectConfig {
    /// Keep intermediate solutions achieving at least this fraction of the
    /// best improvement as positives.
    pub alpha_p: f64,
    /// Cap on the number of positives per state.
    pub u_p: usize,
    /// Accept perturbed actions repairing to at most this fraction of the
    /// best improvement as negatives.
    pub alpha_n: f64,
    /// Target negatives per positive.
    pub kappa: usize,
    /// Fixed neighborhood size of the expert run (gamma = 1).
    pub k0: usize,
    pub init_budget: SolveLimits,
    /// Budget for each local-branching expert solve.
    pub expert_budget: SolveLimits,
    /// Budget for repairing each perturbed candidate; candidates whose
    /// sub-problem is not solved to proven optimality are discarded so that
    /// replaying a stored negative reproduces its improvement exactly.
    pub negative_repair_budget: SolveLimits,
    /// Safety cap on states per trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_states: Option<u64>,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            alpha_p: 0.5,
            u_p: 10,
            alpha_n: 0.05,
            kappa: 9,
            k0: 3,
            init_budget: SolveLimits::nodes(50_000),
            expert_budget: SolveLimits::nodes(50_000),
            negative_repair_budget: SolveLimits::nodes(20_000),
            max_states: Some(64),
            seed: 0,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_p > 0.0 && self.alpha_p <= 1.0) {
            return Err(Error::InvalidArgument("alpha_p must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.alpha_n) {
            return Err(Error::InvalidArgument("alpha_n must be in [0, 1)".into()));
        }
        if self.kappa < 1 {
            return Err(Error::InvalidArgument("kappa must be >= 1".into()));
        }
        if self.u_p < 1 {
            return Err(Error::InvalidArgument("u_p must be >= 1".into()));
        }
        if self.k0 < 1 {
            return Err(Error::InvalidArgument("k0 must be >= 1".into()));
        }
        self.init_budget.validate()?;
        self.expert_budget.validate()?;
        self.negative_repair_budget.validate()
    }
}

/// Extracts positive actions from a local-branching solve: the diff mask of
/// every logged incumbent whose improvement reaches `alpha_p` times the best
/// improvement, deduplicated (keeping the larger improvement) and truncated
/// to the `u_p` best (ties favor the earlier find).
pub fn mine_positives(
    bnb: &BnbResult,
    incumbent: &Solution,
    alpha_p: f64,
    u_p: usize,
) -> Vec<Action> {
    let improvements = bnb.improvements();
    if improvements.is_empty() {
        return Vec::new();
    }
    let best_improvement = incumbent.objective
        - improvements
            .iter()
            .map(|s| s.objective)
            .fold(f64::INFINITY, f64::min);
    let threshold = alpha_p * best_improvement;

    let mut kept: Vec<(Action, f64, usize)> = Vec::new();
    let mut by_mask: std::collections::HashMap<Bits, usize> = std::collections::HashMap::new();
    for (order, solution) in improvements.iter().enumerate() {
        let improvement = incumbent.objective - solution.objective;
        if improvement + 1e-12 < threshold {
            continue;
        }
        let mask = solution.assignment.diff_mask(&incumbent.assignment);
        match by_mask.get(&mask) {
            Some(&slot) => {
                if improvement > kept[slot].1 {
                    kept[slot].1 = improvement;
                    kept[slot].2 = order;
                }
            }
            None => {
                by_mask.insert(mask.clone(), kept.len());
                kept.push((Action::new(mask), improvement, order));
            }
        }
    }
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    kept.truncate(u_p);
    kept.into_iter().map(|(action, _, _)| action).collect()
}

/// Collects negative actions by perturbing the expert's optimal destroy set:
/// at rates 5%, 10%, ..., 100%, swap that share of the selected variables
/// with unselected ones, repair the perturbed sub-problem to proven
/// optimality, and keep candidates whose improvement is at most `alpha_n`
/// times the best improvement. Stops once `kappa * num_positives` negatives
/// are found.
pub fn mine_negatives(
    ilp: &Ilp,
    incumbent: &Solution,
    x_star: &Action,
    best_improvement: f64,
    num_positives: usize,
    cfg: &CollectConfig,
    rng: &mut Prng,
) -> Result<Vec<Action>> {
    if x_star.size() == 0 {
        return Err(Error::InvalidArgument(
            "cannot perturb an empty destroy set".into(),
        ));
    }
    if !(best_improvement > 0.0) {
        return Err(Error::InvalidArgument(
            "negative mining needs a strictly positive best improvement".into(),
        ));
    }
    let selected: Vec<usize> = x_star.mask.iter_ones().collect();
    let outside: Vec<usize> = x_star.mask.iter_zeros().collect();
    if outside.is_empty() {
        log::warn!(
            "{}: destroy set covers every variable, no swaps possible",
            ilp.name
        );
        return Ok(Vec::new());
    }
    let target = cfg.kappa * num_positives;
    let threshold = cfg.alpha_n * best_improvement;
    let mut negatives: Vec<Action> = Vec::new();
    let mut seen: HashSet<Bits> = HashSet::new();

    'rates: for step in 1..=20u32 {
        let rate = 0.05 * f64::from(step);
        let swaps = ((rate * selected.len() as f64).round() as usize)
            .max(1)
            .min(selected.len())
            .min(outside.len());
        for _ in 0..target {
            if negatives.len() >= target {
                break 'rates;
            }
            let drop = sample_k(rng, &selected, swaps);
            let add = sample_k(rng, &outside, swaps);
            let mut mask = x_star.mask.clone();
            for &j in &drop {
                mask.set(j, false);
            }
            for &j in &add {
                mask.set(j, true);
            }
            if !seen.insert(mask.clone()) {
                continue;
            }
            let candidate = Action::new(mask);
            let sub = ilp.build_sub_ilp(incumbent, &candidate)?;
            let mut budget = cfg.negative_repair_budget.clone();
            budget.warm_start = Some(incumbent.clone());
            let res = solve_bnb(&sub, &budget)?;
            if res.status != BnbStatus::Optimal {
                log::debug!(
                    "{}: candidate repair not proven optimal under budget, skipped",
                    ilp.name
                );
                continue;
            }
            let improvement = incumbent.objective - res.best.expect("optimal").objective;
            if improvement <= threshold + 1e-12 {
                negatives.push(candidate);
            }
        }
        if negatives.len() >= target {
            break;
        }
    }
    negatives.truncate(target);
    Ok(negatives)
}

fn sample_k(rng: &mut Prng, pool: &[usize], k: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..k {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    indices[..k].iter().map(|&i| pool[i]).collect()
}

/// Runs the fixed-size local-branching expert on one instance until it
/// proves no improvement, emitting one training example per state that
/// yields both positives and negatives.
pub fn collect_trajectory(ilp: &Ilp, cfg: &CollectConfig) -> Result<Vec<TrainExample>> {
    cfg.validate()?;
    let n = ilp.num_vars();
    let k = cfg.k0.min(n);
    let root_lp = solve_lp_relaxation(ilp)?;
    let incumbent = initial_solution(ilp, &cfg.init_budget)?;
    let mut rng = rng::seeded(rng::derive(cfg.seed, &ilp.name));
    let mut state = LnsState::new(ilp, incumbent, k, n);
    let mut examples = Vec::new();

    loop {
        if let Some(cap) = cfg.max_states {
            if state.iteration >= cap {
                break;
            }
        }
        let lb = ilp.add_local_branching_constraint(&state.incumbent, k)?;
        let mut budget = cfg.expert_budget.clone();
        budget.warm_start = Some(state.incumbent.clone());
        let expert = solve_bnb(&lb, &budget)?;
        if expert.improvements().is_empty() {
            break; // no improvement within the radius: trajectory ends
        }
        let best = expert.best.clone().expect("improvement implies incumbent");
        let best_improvement = state.incumbent.objective - best.objective;
        let x_star = Action::new(best.assignment.diff_mask(&state.incumbent.assignment));

        let positives = mine_positives(&expert, &state.incumbent, cfg.alpha_p, cfg.u_p);
        let mut negatives = if positives.is_empty() {
            Vec::new()
        } else {
            mine_negatives(
                ilp,
                &state.incumbent,
                &x_star,
                best_improvement,
                positives.len(),
                cfg,
                &mut rng,
            )?
        };
        // A perturbed action can coincide with a stored positive; those
        // collisions leave the negative set.
        let positive_masks: HashSet<&Bits> = positives.iter().map(|a| &a.mask).collect();
        let before = negatives.len();
        negatives.retain(|a| !positive_masks.contains(&a.mask));
        if negatives.len() < before {
            log::warn!(
                "{}: dropped {} negative(s) colliding with positives",
                ilp.name,
                before - negatives.len()
            );
        }

        if positives.is_empty() || negatives.is_empty() {
            log::info!(
                "{}: state {} dropped ({} positives, {} negatives)",
                ilp.name,
                state.iteration,
                positives.len(),
                negatives.len()
            );
        } else {
            examples.push(TrainExample {
                features: featurize(&state, &root_lp),
                samples: SampleSet {
                    positives,
                    negatives,
                },
                provenance: Provenance {
                    instance: ilp.name.clone(),
                    iteration: state.iteration,
                    incumbent_objective: state.incumbent.objective,
                    best_improvement,
                },
            });
        }

        let mut accepted = best;
        accepted.found_at_s = None;
        accepted.found_at_iter = Some(state.iteration + 1);
        state.accept(accepted);
        state.iteration += 1;
    }
    Ok(examples)
}

/// JSON-lines persistence: one example per line.
pub fn write_examples(path: impl AsRef<Path>, examples: &[TrainExample]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for example in examples {
        let line = serde_json::to_string(example).expect("example serialization");
        file.write_all(line.as_bytes())?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<TrainExample>> {
    let file = fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let example: TrainExample = serde_json::from_str(&line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.as_ref().display(), lineno + 1))
        })?;
        examples.push(example);
    }
    Ok(examples)
}
