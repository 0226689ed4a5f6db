//! Bipartite-graph featurization of an LNS state.
//!
//! One node per variable and per constraint, one edge per stored non-zero
//! coefficient. The exact column schema and normalization formulas are
//! documented in `docs/features.md`; every normalized column lies in
//! [-1, 1], with degenerate normalizers (range below 1e-12) zeroing the
//! column.

use serde::{Deserialize, Serialize};

use crate::lns::LnsState;
use crate::lp::LpResult;

/// Columns per variable node.
pub const VAR_FEATS: usize = 14;
/// Columns per constraint node.
pub const CON_FEATS: usize = 6;
/// Columns per edge.
pub const EDGE_FEATS: usize = 1;

const NORM_GUARD: f64 = 1e-12;
const INT_TOL: f64 = 1e-6;
const SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartiteFeatures {
    pub n: usize,
    pub m: usize,
    /// Row-major `n x VAR_FEATS`.
    pub var_feats: Vec<f64>,
    /// Row-major `m x CON_FEATS`.
    pub con_feats: Vec<f64>,
    /// One `(constraint, variable)` pair per stored coefficient, in row
    /// order; parallel to `edge_feats`.
    pub edges: Vec<(usize, usize)>,
    /// Row-major `|edges| x EDGE_FEATS`.
    pub edge_feats: Vec<f64>,
}

impl BipartiteFeatures {
    pub fn var_row(&self, j: usize) -> &[f64] {
        &self.var_feats[j * VAR_FEATS..(j + 1) * VAR_FEATS]
    }

    pub fn con_row(&self, i: usize) -> &[f64] {
        &self.con_feats[i * CON_FEATS..(i + 1) * CON_FEATS]
    }

    pub fn edge_row(&self, e: usize) -> &[f64] {
        &self.edge_feats[e * EDGE_FEATS..(e + 1) * EDGE_FEATS]
    }
}

fn guard(scale: f64) -> Option<f64> {
    (scale.abs() >= NORM_GUARD).then_some(scale)
}

/// Deterministic featurization of `state` with the instance's root-node
/// relaxation (`root_lp` is computed once per instance and reused across
/// iterations).
pub fn featurize(state: &LnsState, root_lp: &LpResult) -> BipartiteFeatures {
    let ilp = state.ilp;
    let n = ilp.num_vars();
    let m = ilp.num_constraints();
    debug_assert_eq!(root_lp.values.len(), n);
    debug_assert_eq!(root_lp.duals.len(), m);

    let max_abs_obj = guard(ilp.objective().iter().fold(0.0f64, |a, c| a.max(c.abs())));
    let row_scales: Vec<Option<f64>> = ilp
        .constraints()
        .iter()
        .map(|row| guard(row.max_abs_coeff()))
        .collect();
    let max_abs_rhs = guard(
        ilp.constraints()
            .iter()
            .fold(0.0f64, |a, row| a.max(row.rhs.abs())),
    );

    // Per-variable aggregates of the row-scaled column coefficients.
    let mut degree = vec![0usize; n];
    let mut col_sum = vec![0.0f64; n];
    let mut col_min = vec![f64::INFINITY; n];
    let mut col_max = vec![f64::NEG_INFINITY; n];
    for (i, row) in ilp.constraints().iter().enumerate() {
        let scale = row_scales[i].unwrap_or(1.0);
        for &(j, a) in &row.terms {
            let scaled = a / scale;
            degree[j] += 1;
            col_sum[j] += scaled;
            col_min[j] = col_min[j].min(scaled);
            col_max[j] = col_max[j].max(scaled);
        }
    }

    // Root LP slacks, clamped at zero and normalized by their maximum.
    let slacks: Vec<f64> = ilp
        .constraints()
        .iter()
        .map(|row| {
            let activity: f64 = row.terms.iter().map(|&(j, a)| a * root_lp.values[j]).sum();
            (row.rhs - activity).max(0.0)
        })
        .collect();
    let max_slack = guard(slacks.iter().fold(0.0f64, |a, &s| a.max(s)));

    let obj_norm = {
        let total: f64 = ilp.objective().iter().map(|c| c * c).sum();
        guard(total.sqrt())
    };

    let mut var_feats = Vec::with_capacity(n * VAR_FEATS);
    let divisor = state.iteration.max(1) as f64;
    for j in 0..n {
        let lp_value = root_lp.values[j].clamp(0.0, 1.0);
        let frac = lp_value.min(1.0 - lp_value);
        let integral = ((root_lp.values[j] - root_lp.values[j].round()).abs() <= INT_TOL) as u8;
        let inc = f64::from(state.incumbent.assignment.get(j));
        let rounding_match = (state.incumbent.assignment.get(j)
            == (root_lp.values[j].round() >= 0.5)) as u8;
        let rc = root_lp.reduced_costs[j];
        var_feats.extend_from_slice(&[
            max_abs_obj.map_or(0.0, |s| ilp.objective()[j] / s),
            if m > 0 { degree[j] as f64 / m as f64 } else { 0.0 },
            if degree[j] > 0 { col_sum[j] / degree[j] as f64 } else { 0.0 },
            if degree[j] > 0 { col_min[j] } else { 0.0 },
            if degree[j] > 0 { col_max[j] } else { 0.0 },
            lp_value,
            frac,
            f64::from(integral),
            if rc.abs() <= SIGN_TOL { 0.0 } else { rc.signum() },
            inc,
            f64::from(state.window[1].get(j)),
            f64::from(state.window[2].get(j)),
            f64::from(rounding_match),
            f64::from(state.change_counts[j]) / divisor,
        ]);
    }
    debug_assert_eq!(var_feats.len(), n * VAR_FEATS);

    let mut con_feats = Vec::with_capacity(m * CON_FEATS);
    let mut edges = Vec::new();
    let mut edge_feats = Vec::new();
    for (i, row) in ilp.constraints().iter().enumerate() {
        let deg = row.terms.len();
        let row_norm: f64 = row.terms.iter().map(|&(_, a)| a * a).sum::<f64>().sqrt();
        let dot_obj: f64 = row.terms.iter().map(|&(j, a)| a * ilp.objective()[j]).sum();
        let cosine = match (guard(row_norm), obj_norm) {
            (Some(r), Some(o)) => dot_obj / (r * o),
            _ => 0.0,
        };
        let mean_abs = if deg > 0 {
            let scale = row_scales[i].unwrap_or(1.0);
            row.terms.iter().map(|&(_, a)| a.abs()).sum::<f64>() / (deg as f64 * scale)
        } else {
            0.0
        };
        let dual = root_lp.duals[i];
        con_feats.extend_from_slice(&[
            max_abs_rhs.map_or(0.0, |s| row.rhs / s),
            deg as f64 / n as f64,
            cosine.clamp(-1.0, 1.0),
            max_slack.map_or(0.0, |s| slacks[i] / s),
            if dual.abs() <= SIGN_TOL { 0.0 } else { dual.signum() },
            mean_abs,
        ]);
        let scale = row_scales[i].unwrap_or(1.0);
        for &(j, a) in &row.terms {
            edges.push((i, j));
            edge_feats.push(a / scale);
        }
    }
    debug_assert_eq!(con_feats.len(), m * CON_FEATS);

    BipartiteFeatures {
        n,
        m,
        var_feats,
        con_feats,
        edges,
        edge_feats,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::ilp::{Constraint, Ilp};
    use crate::lns::LnsState;
    use crate::lp::{LpResult, LpStatus};
    use std::collections::BTreeMap;

    fn lp_result(values: Vec<f64>, reduced_costs: Vec<f64>, duals: Vec<f64>) -> LpResult {
        LpResult {
            status: LpStatus::Optimal,
            objective: 0.0,
            iterations: 0,
            values,
            reduced_costs,
            duals,
        }
    }

    /// Single-edge covering instance with a hand-built relaxation result;
    /// every expected entry below is computed by hand from the schema.
    #[test]
    fn single_edge_matches_hand_computation() {
        let ilp = Ilp::new(
            "edge",
            vec![1.0, 1.0],
            vec![Constraint::new(vec![(0, -1.0), (1, -1.0)], -1.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let incumbent = ilp.evaluate(&Bits::from_bitstring("10").unwrap()).unwrap();
        let state = LnsState::for_tests(&ilp, incumbent);
        let root = lp_result(vec![0.5, 0.5], vec![0.0, 0.0], vec![-0.5]);
        let feats = featurize(&state, &root);

        // Variable 0: c=1/max|c|=1; degree 1/m=1; column stats: -1/1 = -1;
        // lp 0.5; frac 0.5; integral 0; rc sign 0; window all incumbent
        // (1,1,1); rounding: round(0.5)=1 == incumbent 1 -> 1; changes 0.
        assert_eq!(
            feats.var_row(0),
            &[1.0, 1.0, -1.0, -1.0, -1.0, 0.5, 0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]
        );
        // Variable 1 differs only in incumbent-dependent columns: window 0s,
        // rounding flag round(0.5)=1 != 0 -> 0.
        assert_eq!(
            feats.var_row(1),
            &[1.0, 1.0, -1.0, -1.0, -1.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
        // Constraint: rhs -1/1 = -1; degree 2/2 = 1; cosine of (-1,-1) with
        // (1,1) = -2/(sqrt2*sqrt2) = -1; slack = -1 - (-1) = 0 (guard zeroes
        // the column: max slack 0); dual sign -1; mean|a|/max|a| = 1.
        let expected_con = [-1.0, 1.0, -1.0, 0.0, -1.0, 1.0];
        for (got, want) in feats.con_row(0).iter().zip(&expected_con) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // Edges mirror the sparsity pattern with row-scaled coefficients.
        assert_eq!(feats.edges, vec![(0, 0), (0, 1)]);
        assert_eq!(feats.edge_feats, vec![-1.0, -1.0]);
    }

    #[test]
    fn isolated_variable_has_zero_degree_and_no_edges() {
        let ilp = Ilp::new(
            "isolated",
            vec![1.0, 2.0],
            vec![Constraint::new(vec![(0, 1.0)], 1.0)],
            BTreeMap::new(),
        )
        .unwrap();
        let incumbent = ilp.evaluate(&Bits::from_bitstring("00").unwrap()).unwrap();
        let state = LnsState::for_tests(&ilp, incumbent);
        let root = lp_result(vec![0.0, 0.0], vec![1.0, 2.0], vec![0.0]);
        let feats = featurize(&state, &root);
        assert_eq!(feats.var_row(1)[1], 0.0); // degree column
        assert_eq!(feats.var_row(1)[2..5], [0.0, 0.0, 0.0]); // column stats
        assert!(feats.edges.iter().all(|&(_, j)| j != 1));
    }

    #[test]
    fn window_padding_repeats_oldest() {
        let ilp = Ilp::new(
            "window",
            vec![1.0, 1.0],
            vec![],
            BTreeMap::new(),
        )
        .unwrap();
        let first = ilp.evaluate(&Bits::from_bitstring("11").unwrap()).unwrap();
        let mut state = LnsState::for_tests(&ilp, first);
        // One accepted improvement: window = [new, old, old].
        let second = ilp.evaluate(&Bits::from_bitstring("01").unwrap()).unwrap();
        state.accept(second);
        let root = lp_result(vec![0.0, 0.0], vec![1.0, 1.0], vec![]);
        let feats = featurize(&state, &root);
        // Variable 0: current 0, previous 1, padded oldest 1.
        assert_eq!(&feats.var_row(0)[9..12], &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn all_columns_within_unit_range() {
        let ilp = crate::generators::gen_ca(9, 12, 3, 2.5, 0.3).unwrap();
        let incumbent = ilp.evaluate(&Bits::zeros(12)).unwrap();
        let state = LnsState::for_tests(&ilp, incumbent);
        let root = crate::lp::solve_lp_relaxation(&ilp).unwrap();
        let feats = featurize(&state, &root);
        for v in feats
            .var_feats
            .iter()
            .chain(&feats.con_feats)
            .chain(&feats.edge_feats)
        {
            assert!(v.is_finite());
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(v), "column value {v}");
        }
    }
}
