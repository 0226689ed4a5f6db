//! Anytime large neighborhood search for binary integer linear programs,
//! with destroy heuristics learned by contrasting good and bad
//! reoptimization sets mined from a local-branching expert.
//!
//! The crate is a self-contained pipeline: seeded instance generators, a
//! mini exact solver (bounded simplex + branch and bound), the LNS engine
//! with classical and learned destroy heuristics, expert data collection, a
//! two-round graph-attention scoring network trained with a contrastive (or
//! plain classification) loss, and an anytime benchmark harness. The `cllns`
//! binary exposes each stage as a subcommand.

pub mod bits;
pub mod bnb;
pub mod cli;
pub mod collect;
pub mod error;
pub mod experiment;
pub mod features;
pub mod gat;
pub mod ilp;
pub mod io;
pub mod loss;
pub mod lp;
pub mod metrics;
pub mod policy;
pub mod destroy;
pub mod generators;
pub mod lns;
pub mod rng;
pub mod train;

pub use bits::Bits;
pub use bnb::{solve_bnb, BnbResult, BnbStatus, SolveLimits};
pub use error::{Error, Result};
pub use generators::GenSpec;
pub use ilp::{Action, Constraint, Ilp, Solution};
pub use io::{read_ilp, write_ilp};
pub use lp::{solve_lp_relaxation, LpResult, LpStatus};
