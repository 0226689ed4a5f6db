//! Binary integer linear programs in the canonical form
//! `min c·x  s.t.  Ax <= b,  x in {0,1}^n`.
//!
//! Every constraint is stored with sense `<=`; a `>=` row is negated on the
//! way in. Constraint rows are sparse `(var, coeff)` lists sorted by variable
//! index, the objective is dense.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};

/// Absolute feasibility tolerance used throughout the crate.
pub const FEAS_TOL: f64 = 1e-9;

/// One `<=` constraint row: `sum(coeff * x_var) <= rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Sparse `(var_index, coefficient)` pairs, sorted by variable index.
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(terms: Vec<(usize, f64)>, rhs: f64) -> Self {
        Constraint { terms, rhs }
    }

    /// The row negated, turning `>= rhs` input into canonical `<=` form.
    pub fn negated(&self) -> Self {
        Constraint {
            terms: self.terms.iter().map(|&(j, a)| (j, -a)).collect(),
            rhs: -self.rhs,
        }
    }

    pub fn activity(&self, assignment: &Bits) -> f64 {
        self.terms
            .iter()
            .map(|&(j, a)| if assignment.get(j) { a } else { 0.0 })
            .sum()
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.iter().map(|&(_, a)| a.abs()).fold(0.0, f64::max)
    }
}

/// A binary ILP instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ilp {
    pub name: String,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    pub metadata: BTreeMap<String, String>,
}

impl Ilp {
    /// Builds an instance, validating the structural invariants: `n >= 1`,
    /// every index in range, no duplicate index within a row. Terms are
    /// sorted by variable index so equal instances are byte-equal on disk.
    pub fn new(
        name: impl Into<String>,
        objective: Vec<f64>,
        constraints: Vec<Constraint>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let n = objective.len();
        if n == 0 {
            return Err(Error::Validation("instance needs at least one variable".into()));
        }
        if objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("objective has non-finite coefficient".into()));
        }
        let mut constraints = constraints;
        for (i, row) in constraints.iter_mut().enumerate() {
            row.terms.sort_by_key(|&(j, _)| j);
            for window in row.terms.windows(2) {
                if window[0].0 == window[1].0 {
                    return Err(Error::Validation(format!(
                        "constraint {i}: duplicate variable index {}",
                        window[0].0
                    )));
                }
            }
            if let Some(&(j, _)) = row.terms.iter().find(|&&(j, _)| j >= n) {
                return Err(Error::Validation(format!(
                    "constraint {i}: variable index {j} out of range (n = {n})"
                )));
            }
            if row.terms.iter().any(|&(_, a)| !a.is_finite()) || !row.rhs.is_finite() {
                return Err(Error::Validation(format!(
                    "constraint {i}: non-finite coefficient"
                )));
            }
        }
        Ok(Ilp {
            name: name.into(),
            objective,
            constraints,
            metadata,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective_value(&self, assignment: &Bits) -> f64 {
        assignment
            .iter_ones()
            .map(|j| self.objective[j])
            .sum()
    }

    /// Evaluates an assignment: exact objective plus feasibility within
    /// [`FEAS_TOL`].
    pub fn evaluate(&self, assignment: &Bits) -> Result<Solution> {
        if assignment.len() != self.num_vars() {
            return Err(Error::InvalidArgument(format!(
                "assignment length {} does not match n = {}",
                assignment.len(),
                self.num_vars()
            )));
        }
        let objective = self.objective_value(assignment);
        let feasible = self
            .constraints
            .iter()
            .all(|row| row.activity(assignment) <= row.rhs + FEAS_TOL);
        Ok(Solution {
            assignment: assignment.clone(),
            objective,
            feasible,
            found_at_s: None,
            found_at_iter: None,
        })
    }

    /// The sub-ILP of one repair step: every variable outside the action mask
    /// is pinned to its incumbent value by a pair of box rows
    /// (`x_j <= v` and `-x_j <= -v`). Indices, objective and the original
    /// rows are untouched.
    pub fn build_sub_ilp(&self, incumbent: &Solution, action: &Action) -> Result<Ilp> {
        if !incumbent.feasible {
            return Err(Error::InvalidArgument(
                "sub-ILP construction needs a feasible incumbent".into(),
            ));
        }
        if incumbent.assignment.len() != self.num_vars() || action.mask.len() != self.num_vars() {
            return Err(Error::InvalidArgument(
                "incumbent/action length does not match the instance".into(),
            ));
        }
        if action.size() == 0 {
            return Err(Error::InvalidArgument(
                "empty destroy set: at least one variable must be freed".into(),
            ));
        }
        let mut constraints = self.constraints.clone();
        for j in action.mask.iter_zeros() {
            let v = if incumbent.assignment.get(j) { 1.0 } else { 0.0 };
            constraints.push(Constraint::new(vec![(j, 1.0)], v));
            constraints.push(Constraint::new(vec![(j, -1.0)], -v));
        }
        Ok(Ilp {
            name: self.name.clone(),
            objective: self.objective.clone(),
            constraints,
            metadata: self.metadata.clone(),
        })
    }

    /// Appends the Hamming-ball row of radius `k` around the incumbent:
    /// `sum_{x^t_i = 0} x_i - sum_{x^t_i = 1} x_i <= k - |{i : x^t_i = 1}|`,
    /// satisfied by exactly the points within Hamming distance `k`.
    pub fn add_local_branching_constraint(&self, incumbent: &Solution, k: usize) -> Result<Ilp> {
        if k < 1 {
            return Err(Error::InvalidArgument(
                "local branching radius must be at least 1".into(),
            ));
        }
        if !incumbent.feasible {
            return Err(Error::InvalidArgument(
                "local branching needs a feasible incumbent".into(),
            ));
        }
        if incumbent.assignment.len() != self.num_vars() {
            return Err(Error::InvalidArgument(
                "incumbent length does not match the instance".into(),
            ));
        }
        let ones = incumbent.assignment.count_ones();
        let terms = (0..self.num_vars())
            .map(|j| (j, if incumbent.assignment.get(j) { -1.0 } else { 1.0 }))
            .collect();
        let mut constraints = self.constraints.clone();
        constraints.push(Constraint::new(terms, k as f64 - ones as f64));
        Ok(Ilp {
            name: self.name.clone(),
            objective: self.objective.clone(),
            constraints,
            metadata: self.metadata.clone(),
        })
    }
}

/// A 0/1 assignment with its objective value and feasibility status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub assignment: Bits,
    pub objective: f64,
    pub feasible: bool,
    /// Wall-clock seconds at which the solution was found, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found_at_s: Option<f64>,
    /// Node / iteration index at which the solution was found, when tracked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found_at_iter: Option<u64>,
}

/// A destroy action: the mask of variables to free and reoptimize.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub mask: Bits,
}

impl Action {
    pub fn new(mask: Bits) -> Self {
        Action { mask }
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Self {
        Action {
            mask: Bits::from_indices(n, indices),
        }
    }

    pub fn size(&self) -> usize {
        self.mask.count_ones()
    }
}
