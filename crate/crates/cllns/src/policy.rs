//! The learned destroy heuristic: featurize the state, score variables with
//! the attention network, then select greedily — switching to
//! score-proportional sampling once the neighborhood size is capped and the
//! greedy choice starts repeating itself.

use crate::destroy::{destroy_policy_greedy, destroy_policy_sampling, Proposal};
use crate::error::Result;
use crate::features::featurize;
use crate::gat::{forward, GatWeights};
use crate::ilp::Ilp;
use crate::lns::{Destroyer, LnsState};
use crate::lp::{solve_lp_relaxation, LpResult};
use crate::rng::Prng;
use crate::Bits;

pub struct PolicyDestroyer {
    weights: GatWeights,
    eta: f64,
    root_lp: Option<LpResult>,
    last_greedy: Option<Bits>,
    sampling: bool,
}

impl PolicyDestroyer {
    pub fn new(weights: GatWeights, eta: f64) -> Self {
        PolicyDestroyer {
            weights,
            eta,
            root_lp: None,
            last_greedy: None,
            sampling: false,
        }
    }

    pub fn scores(&self, state: &LnsState) -> Result<Vec<f64>> {
        let root = self
            .root_lp
            .as_ref()
            .expect("begin() computes the root relaxation before any proposal");
        let feats = featurize(state, root);
        let (scores, _) = forward(&self.weights, &feats)?;
        Ok(scores)
    }

    #[cfg(test)]
    pub(crate) fn sampling_mode(&self) -> bool {
        self.sampling
    }
}

impl Destroyer for PolicyDestroyer {
    fn name(&self) -> &str {
        "policy"
    }

    fn begin(&mut self, ilp: &Ilp) -> Result<()> {
        self.root_lp = Some(solve_lp_relaxation(ilp)?);
        self.last_greedy = None;
        self.sampling = false;
        Ok(())
    }

    fn propose(&mut self, state: &LnsState, rng: &mut Prng) -> Result<Proposal> {
        let scores = self.scores(state)?;
        if !self.sampling {
            let action = destroy_policy_greedy(&scores, state.k);
            let repeats = state.k >= state.k_cap
                && self.last_greedy.as_ref() == Some(&action.mask);
            if !repeats {
                self.last_greedy = Some(action.mask.clone());
                return Ok(Proposal::Destroy(action));
            }
            // Deterministic selection is stuck at the cap; sample from here on.
            self.sampling = true;
        }
        Ok(Proposal::Destroy(destroy_policy_sampling(
            &scores, state.k, self.eta, rng,
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::GatDims;
    use crate::lns::{run_lns, LnsParams, RunStatus};
    use crate::{bnb::SolveLimits, generators};

    #[test]
    fn greedy_switches_to_sampling_on_repeat_at_cap() {
        let ilp = generators::gen_mvc(10, 3, 3).unwrap();
        // Zero weights give constant scores, so greedy repeats immediately.
        let mut policy = PolicyDestroyer::new(GatWeights::zeros(GatDims::default()), 0.5);
        policy.begin(&ilp).unwrap();
        let incumbent = ilp.evaluate(&crate::Bits::ones(10)).unwrap();
        let mut state = crate::lns::LnsState::for_tests(&ilp, incumbent);
        state.k = 4;
        state.k_cap = 4;
        let mut rng = crate::rng::seeded(1);

        let first = policy.propose(&state, &mut rng).unwrap();
        let Proposal::Destroy(first) = first else {
            panic!("policy always proposes an action")
        };
        assert_eq!(first.mask.iter_ones().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert!(!policy.sampling_mode());

        // Same state again: identical greedy pick at the cap triggers the
        // permanent switch to sampling.
        let _second = policy.propose(&state, &mut rng).unwrap();
        assert!(policy.sampling_mode());
    }

    #[test]
    fn below_cap_greedy_repeats_are_allowed() {
        let ilp = generators::gen_mvc(10, 3, 3).unwrap();
        let mut policy = PolicyDestroyer::new(GatWeights::zeros(GatDims::default()), 0.5);
        policy.begin(&ilp).unwrap();
        let incumbent = ilp.evaluate(&crate::Bits::ones(10)).unwrap();
        let mut state = crate::lns::LnsState::for_tests(&ilp, incumbent);
        state.k = 3;
        state.k_cap = 5;
        let mut rng = crate::rng::seeded(2);
        for _ in 0..3 {
            policy.propose(&state, &mut rng).unwrap();
            assert!(!policy.sampling_mode());
        }
    }

    #[test]
    fn policy_lns_run_improves_and_terminates() {
        let ilp = generators::gen_sc(12, 10, 0.3, 31).unwrap();
        let weights = GatWeights::init(99, GatDims::default());
        let mut policy = PolicyDestroyer::new(weights, 0.5);
        let params = LnsParams {
            k0: 3,
            gamma: 1.02,
            beta: 1.0,
            init_budget: SolveLimits::nodes(10_000),
            repair_budget: SolveLimits::unlimited(),
            max_iterations: Some(15),
            time_limit_s: None,
            seed: 7,
            eta: 0.5,
        };
        let log = run_lns(&ilp, &mut policy, &params).unwrap();
        assert_eq!(log.method, "policy");
        assert_eq!(log.status, RunStatus::IterationLimit);
        for pair in log.events.windows(2) {
            assert!(pair[1].objective < pair[0].objective);
        }
    }
}
