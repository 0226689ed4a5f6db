//! Anytime solution-quality metrics over run logs: primal gap, primal
//! integral, survival rate, best-performing rate, and gap to the virtual
//! best. Everything is computed on a caller-chosen time axis — wall-clock
//! seconds for benchmarking, iteration indices for deterministic CI runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lns::RunLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeAxis {
    WallClock,
    Iteration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    pub epsilon: f64,
    /// Survival threshold on the primal gap (1% in the standard setup).
    pub gap_threshold: f64,
    pub axis: TimeAxis,
    /// Evaluation grid on the chosen axis.
    pub grid: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            epsilon: 1e-8,
            gap_threshold: 0.01,
            axis: TimeAxis::Iteration,
            grid: (0..=30).map(f64::from).collect(),
        }
    }
}

fn event_time(event: &crate::lns::LnsEvent, axis: TimeAxis) -> f64 {
    match axis {
        TimeAxis::WallClock => event.elapsed_s,
        TimeAxis::Iteration => event.iteration as f64,
    }
}

/// Incumbent objective at time `t` (the step function of the event log), or
/// `None` before the first event.
pub fn bound_at(log: &RunLog, t: f64, axis: TimeAxis) -> Option<f64> {
    let mut bound = None;
    for event in &log.events {
        if event_time(event, axis) <= t {
            bound = Some(event.objective);
        } else {
            break;
        }
    }
    bound
}

/// Normalized distance between a primal bound and the best known value:
/// `|v - v*| / max(|v|, |v*|, eps)` when `v` exists and shares its sign
/// with `v*`, else 1.
pub fn primal_gap(v: Option<f64>, v_star: f64, eps: f64) -> f64 {
    let v = match v {
        Some(v) => v,
        None => return 1.0,
    };
    if v * v_star < 0.0 {
        return 1.0;
    }
    let gap = (v - v_star).abs() / v.abs().max(v_star.abs()).max(eps);
    gap.clamp(0.0, 1.0)
}

/// Integral of the primal gap over `[0, q]` as a right-continuous step
/// function: the gap is 1 before the first event and each event pins the
/// gap until the next one.
pub fn primal_integral(log: &RunLog, v_star: f64, q: f64, eps: f64, axis: TimeAxis) -> f64 {
    debug_assert!(q > 0.0);
    let mut integral = 0.0;
    let mut cursor = 0.0;
    let mut gap = 1.0;
    for event in &log.events {
        let t = event_time(event, axis);
        if t >= q {
            break;
        }
        if t > cursor {
            integral += (t - cursor) * gap;
            cursor = t;
        }
        gap = primal_gap(Some(event.objective), v_star, eps);
    }
    integral + (q - cursor) * gap
}

/// Fraction of instances whose primal gap at time `t` is strictly below the
/// threshold. Instances without a best-known value are excluded (with a
/// warning) from both numerator and denominator.
pub fn survival_rate(
    logs: &[&RunLog],
    v_star: &BTreeMap<String, f64>,
    threshold: f64,
    t: f64,
    eps: f64,
    axis: TimeAxis,
) -> f64 {
    let mut counted = 0usize;
    let mut below = 0usize;
    for log in logs {
        let Some(&star) = v_star.get(&log.instance) else {
            log::warn!("survival: no best-known value for {}", log.instance);
            continue;
        };
        counted += 1;
        if primal_gap(bound_at(log, t, axis), star, eps) < threshold {
            below += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        below as f64 / counted as f64
    }
}

const TIE_TOL: f64 = 1e-12;

/// Per method, the fraction of instances on which it reaches the smallest
/// primal gap at time `t`; ties within 1e-12 credit every tied method, so
/// the rates may sum above 1.
pub fn best_performing_rate(
    logs_by_method: &BTreeMap<String, Vec<&RunLog>>,
    v_star: &BTreeMap<String, f64>,
    t: f64,
    eps: f64,
    axis: TimeAxis,
) -> BTreeMap<String, f64> {
    let mut gaps: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new(); // instance -> method -> gap
    for (method, logs) in logs_by_method {
        for log in logs {
            let Some(&star) = v_star.get(&log.instance) else {
                continue;
            };
            let gap = primal_gap(bound_at(log, t, axis), star, eps);
            gaps.entry(&log.instance).or_default().insert(method, gap);
        }
    }
    let mut credit: BTreeMap<String, usize> =
        logs_by_method.keys().map(|m| (m.clone(), 0)).collect();
    let instances = gaps.len();
    for per_method in gaps.values() {
        let best = per_method.values().fold(f64::INFINITY, |a, &b| a.min(b));
        for (&method, &gap) in per_method {
            if gap <= best + TIE_TOL {
                *credit.get_mut(method).expect("method registered") += 1;
            }
        }
    }
    credit
        .into_iter()
        .map(|(method, count)| {
            let rate = if instances == 0 {
                0.0
            } else {
                count as f64 / instances as f64
            };
            (method, rate)
        })
        .collect()
}

/// Per method, the mean (over instances) primal gap between its bound at
/// time `t` and the best bound over all methods at that time.
pub fn gap_to_virtual_best(
    logs_by_method: &BTreeMap<String, Vec<&RunLog>>,
    t: f64,
    eps: f64,
    axis: TimeAxis,
) -> BTreeMap<String, f64> {
    let mut bounds: BTreeMap<&str, BTreeMap<&str, Option<f64>>> = BTreeMap::new();
    for (method, logs) in logs_by_method {
        for log in logs {
            bounds
                .entry(&log.instance)
                .or_default()
                .insert(method, bound_at(log, t, axis));
        }
    }
    let mut totals: BTreeMap<String, (f64, usize)> = logs_by_method
        .keys()
        .map(|m| (m.clone(), (0.0, 0)))
        .collect();
    for per_method in bounds.values() {
        let virtual_best = per_method
            .values()
            .filter_map(|v| *v)
            .fold(f64::INFINITY, f64::min);
        if !virtual_best.is_finite() {
            continue; // nobody has a bound yet on this instance
        }
        for (&method, &bound) in per_method {
            let entry = totals.get_mut(method).expect("method registered");
            entry.0 += primal_gap(bound, virtual_best, eps);
            entry.1 += 1;
        }
    }
    totals
        .into_iter()
        .map(|(method, (sum, count))| {
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            (method, mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lns::{LnsEvent, RunStatus};

    fn log(instance: &str, method: &str, events: &[(f64, u64, f64)]) -> RunLog {
        RunLog {
            instance: instance.into(),
            method: method.into(),
            seed: 0,
            events: events
                .iter()
                .map(|&(elapsed_s, iteration, objective)| LnsEvent {
                    elapsed_s,
                    iteration,
                    objective,
                })
                .collect(),
            status: RunStatus::IterationLimit,
        }
    }

    #[test]
    fn primal_gap_examples() {
        assert!((primal_gap(Some(101.0), 100.0, 1e-8) - 1.0 / 101.0).abs() < 1e-12);
        assert_eq!(primal_gap(Some(100.0), 100.0, 1e-8), 0.0);
        assert_eq!(primal_gap(Some(5.0), -5.0, 1e-8), 1.0); // sign flip
        assert_eq!(primal_gap(None, 100.0, 1e-8), 1.0);
        assert_eq!(primal_gap(Some(0.0), 0.0, 1e-8), 0.0); // eps guard
    }

    #[test]
    fn integral_zero_when_solved_at_origin() {
        let run = log("a", "m", &[(0.0, 0, 100.0)]);
        assert_eq!(
            primal_integral(&run, 100.0, 10.0, 1e-8, TimeAxis::WallClock),
            0.0
        );
    }

    #[test]
    fn integral_counts_time_before_first_event() {
        // First feasible at t=2 already optimal, cutoff 10: 2*1 + 8*0.
        let run = log("a", "m", &[(2.0, 1, 50.0)]);
        let integral = primal_integral(&run, 50.0, 10.0, 1e-8, TimeAxis::WallClock);
        assert!((integral - 2.0).abs() < 1e-12);
        // Cutoff before the first event: gap 1 throughout.
        let early = primal_integral(&run, 50.0, 1.5, 1e-8, TimeAxis::WallClock);
        assert!((early - 1.5).abs() < 1e-12);
    }

    /// Independent step-sum oracle over random event sequences.
    #[test]
    fn integral_matches_step_sum_oracle() {
        use rand::Rng as _;
        let mut rng = crate::rng::seeded(4);
        for _ in 0..50 {
            let mut t = 0.0;
            let mut obj = 100.0;
            let mut events = Vec::new();
            let mut iter = 0u64;
            for _ in 0..rng.random_range(1..8) {
                t += rng.random_range(0.0..3.0);
                obj -= rng.random_range(0.1..20.0);
                iter += 1;
                events.push((t, iter, obj));
            }
            let run = log("a", "m", &events);
            let v_star = obj - rng.random_range(0.0..5.0);
            let q = rng.random_range(0.5..12.0);

            // Oracle: sample the step function on a fine uniform grid.
            let samples = 200_000;
            let mut acc = 0.0;
            for s in 0..samples {
                let ts = (s as f64 + 0.5) * q / samples as f64;
                let bound = events
                    .iter()
                    .filter(|&&(et, _, _)| et <= ts)
                    .map(|&(_, _, o)| o)
                    .next_back();
                acc += primal_gap(bound, v_star, 1e-8);
            }
            let oracle = acc * q / samples as f64;
            let fast = primal_integral(&run, v_star, q, 1e-8, TimeAxis::WallClock);
            assert!(
                (fast - oracle).abs() < 1e-3,
                "integral {fast} vs oracle {oracle}"
            );
        }
    }

    #[test]
    fn integral_monotone_in_cutoff_and_bounded() {
        let run = log("a", "m", &[(1.0, 1, 80.0), (3.0, 2, 60.0)]);
        let mut last = 0.0;
        for q in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let integral = primal_integral(&run, 60.0, q, 1e-8, TimeAxis::WallClock);
            assert!(integral >= last - 1e-12);
            assert!(integral <= q + 1e-12);
            last = integral;
        }
    }

    #[test]
    fn survival_counts_strictly_below() {
        let runs = vec![
            log("a", "m", &[(0.0, 0, 100.5)]), // gap 0.005
            log("b", "m", &[(0.0, 0, 102.0)]), // gap ~0.0196
            log("c", "m", &[(0.0, 0, 100.9)]), // gap ~0.0089
        ];
        let refs: Vec<&RunLog> = runs.iter().collect();
        let stars: BTreeMap<String, f64> = [("a", 100.0), ("b", 100.0), ("c", 100.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let rate = survival_rate(&refs, &stars, 0.01, 0.0, 1e-8, TimeAxis::WallClock);
        assert!((rate - 2.0 / 3.0).abs() < 1e-12);
        // Threshold 0 can never be strictly beaten.
        assert_eq!(
            survival_rate(&refs, &stars, 0.0, 0.0, 1e-8, TimeAxis::WallClock),
            0.0
        );
    }

    #[test]
    fn survival_is_monotone_in_time() {
        let runs = vec![
            log("a", "m", &[(1.0, 1, 120.0), (5.0, 2, 100.0)]),
            log("b", "m", &[(2.0, 1, 100.0)]),
        ];
        let refs: Vec<&RunLog> = runs.iter().collect();
        let stars: BTreeMap<String, f64> = [("a", 100.0), ("b", 100.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let mut last = 0.0;
        for t in [0.0, 1.0, 2.0, 5.0, 9.0] {
            let rate = survival_rate(&refs, &stars, 0.01, t, 1e-8, TimeAxis::WallClock);
            assert!(rate >= last);
            last = rate;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn tied_methods_both_get_full_credit() {
        let a = vec![
            log("x", "m1", &[(0.0, 0, 100.0)]),
            log("y", "m1", &[(0.0, 0, 50.0)]),
        ];
        let b = vec![
            log("x", "m2", &[(0.0, 0, 100.0)]),
            log("y", "m2", &[(0.0, 0, 50.0)]),
        ];
        let mut by_method = BTreeMap::new();
        by_method.insert("m1".to_string(), a.iter().collect::<Vec<_>>());
        by_method.insert("m2".to_string(), b.iter().collect::<Vec<_>>());
        let stars: BTreeMap<String, f64> = [("x", 100.0), ("y", 50.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let rates = best_performing_rate(&by_method, &stars, 0.0, 1e-8, TimeAxis::WallClock);
        assert_eq!(rates["m1"], 1.0);
        assert_eq!(rates["m2"], 1.0); // sums to 2.0 by the tie rule
    }

    #[test]
    fn dominant_method_takes_all() {
        let winner = vec![log("x", "m1", &[(0.0, 0, 100.0)])];
        let loser = vec![log("x", "m2", &[(0.0, 0, 150.0)])];
        let mut by_method = BTreeMap::new();
        by_method.insert("m1".to_string(), winner.iter().collect::<Vec<_>>());
        by_method.insert("m2".to_string(), loser.iter().collect::<Vec<_>>());
        let stars: BTreeMap<String, f64> = [("x".to_string(), 100.0)].into_iter().collect();
        let rates = best_performing_rate(&by_method, &stars, 0.0, 1e-8, TimeAxis::WallClock);
        assert_eq!(rates["m1"], 1.0);
        assert_eq!(rates["m2"], 0.0);
    }

    #[test]
    fn best_rate_matches_argmin_oracle_on_random_gaps() {
        use rand::Rng as _;
        let mut rng = crate::rng::seeded(9);
        let methods = ["a", "b", "c"];
        let instances = ["i1", "i2", "i3", "i4", "i5"];
        let mut by_method: BTreeMap<String, Vec<RunLog>> = BTreeMap::new();
        let mut stars = BTreeMap::new();
        let mut objectives: BTreeMap<(&str, &str), f64> = BTreeMap::new();
        for instance in instances {
            stars.insert(instance.to_string(), 100.0);
            for method in methods {
                let objective = 100.0 + rng.random_range(0.0..10.0_f64).round();
                objectives.insert((method, instance), objective);
                by_method
                    .entry(method.to_string())
                    .or_default()
                    .push(log(instance, method, &[(0.0, 0, objective)]));
            }
        }
        let by_method_refs: BTreeMap<String, Vec<&RunLog>> = by_method
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().collect()))
            .collect();
        let rates = best_performing_rate(&by_method_refs, &stars, 0.0, 1e-8, TimeAxis::WallClock);

        // Oracle: per-instance argmin set over the raw objectives.
        let mut expected: BTreeMap<&str, usize> = methods.iter().map(|&m| (m, 0)).collect();
        for instance in instances {
            let best = methods
                .iter()
                .map(|&m| objectives[&(m, instance)])
                .fold(f64::INFINITY, f64::min);
            for method in methods {
                if objectives[&(method, instance)] <= best {
                    *expected.get_mut(method).unwrap() += 1;
                }
            }
        }
        for method in methods {
            let want = expected[method] as f64 / instances.len() as f64;
            assert!((rates[method] - want).abs() < 1e-12, "{method}");
        }
    }

    #[test]
    fn virtual_best_contributions() {
        let m1 = vec![log("x", "m1", &[(0.0, 0, 100.0)])];
        let m2 = vec![log("x", "m2", &[(0.0, 0, 110.0)])];
        let mut by_method = BTreeMap::new();
        by_method.insert("m1".to_string(), m1.iter().collect::<Vec<_>>());
        by_method.insert("m2".to_string(), m2.iter().collect::<Vec<_>>());
        let gaps = gap_to_virtual_best(&by_method, 0.0, 1e-8, TimeAxis::WallClock);
        assert_eq!(gaps["m1"], 0.0); // per-instance best contributes zero
        assert!((gaps["m2"] - 10.0 / 110.0).abs() < 1e-12);
    }

    #[test]
    fn single_method_portfolio_is_its_own_virtual_best() {
        let m1 = vec![
            log("x", "m1", &[(0.0, 0, 100.0)]),
            log("y", "m1", &[(0.0, 0, 70.0)]),
        ];
        let mut by_method = BTreeMap::new();
        by_method.insert("m1".to_string(), m1.iter().collect::<Vec<_>>());
        let gaps = gap_to_virtual_best(&by_method, 0.0, 1e-8, TimeAxis::WallClock);
        assert_eq!(gaps["m1"], 0.0);
    }

    #[test]
    fn virtual_best_matches_hand_computation() {
        let m1 = vec![
            log("x", "m1", &[(0.0, 0, 100.0)]),
            log("y", "m1", &[(0.0, 0, 80.0)]),
        ];
        let m2 = vec![
            log("x", "m2", &[(0.0, 0, 104.0)]),
            log("y", "m2", &[(0.0, 0, 76.0)]),
        ];
        let mut by_method = BTreeMap::new();
        by_method.insert("m1".to_string(), m1.iter().collect::<Vec<_>>());
        by_method.insert("m2".to_string(), m2.iter().collect::<Vec<_>>());
        let gaps = gap_to_virtual_best(&by_method, 0.0, 1e-8, TimeAxis::WallClock);
        // On x the best is 100 (m1 gap 0, m2 gap 4/104); on y the best is 76
        // (m1 gap 4/80, m2 gap 0). Mean over the two instances.
        assert!((gaps["m1"] - (0.0 + 4.0 / 80.0) / 2.0).abs() < 1e-12);
        assert!((gaps["m2"] - (4.0 / 104.0 + 0.0) / 2.0).abs() < 1e-12);
    }
}
