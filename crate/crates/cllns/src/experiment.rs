//! Experiment orchestration: run every (instance, method, seed) cell under a
//! shared budget, resolve best-known values, and write the run and metric
//! CSVs that the report stage turns into summary tables and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bnb::{solve_bnb, BnbStatus, SolveLimits};
use crate::error::{Error, Result};
use crate::gat::GatWeights;
use crate::ilp::Ilp;
use crate::lns::{
    run_lns, Destroyer, GraphBfsDestroyer, LbRelaxDestroyer, LnsParams, LocalBranchingDestroyer,
    RandomDestroyer, RunLog,
};
use crate::metrics::{
    best_performing_rate, bound_at, gap_to_virtual_best, primal_gap, primal_integral,
    survival_rate, MetricConfig,
};
use crate::policy::PolicyDestroyer;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    Random,
    Graph,
    Lb {
        budget: SolveLimits,
    },
    LbRelax,
    Policy {
        model: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: MethodKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VstarMode {
    /// Certify the optimum with branch and bound when the budget allows,
    /// falling back to the virtual best across all runs otherwise.
    Oracle { budget: SolveLimits },
    /// Best objective reached by any run of any method.
    VirtualBest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instances: Vec<PathBuf>,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    /// Per-cell LNS parameters; the seed field is overridden per cell.
    pub lns: LnsParams,
    pub metrics: MetricConfig,
    pub vstar: VstarMode,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

fn build_destroyer(
    spec: &MethodSpec,
    models: &BTreeMap<String, GatWeights>,
    eta: f64,
) -> Box<dyn Destroyer> {
    match &spec.kind {
        MethodKind::Random => Box::new(RandomDestroyer),
        MethodKind::Graph => Box::new(GraphBfsDestroyer),
        MethodKind::Lb { budget } => Box::new(LocalBranchingDestroyer {
            budget: budget.clone(),
        }),
        MethodKind::LbRelax => Box::new(LbRelaxDestroyer),
        MethodKind::Policy { .. } => Box::new(PolicyDestroyer::new(
            models.get(&spec.name).expect("model preloaded").clone(),
            eta,
        )),
    }
}

struct Cell {
    instance_idx: usize,
    method_idx: usize,
    seed: u64,
}

/// Runs the whole grid and writes `runs/`, `runs.csv`, `vstar.csv`,
/// `metrics.csv`, `aggregates.csv` and `errors.csv` under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("runs"))?;
    fs::write(
        out_dir.join("config.json"),
        serde_json::to_string_pretty(config).expect("config serialization") + "\n",
    )?;

    let instances: Vec<Ilp> = config
        .instances
        .iter()
        .map(crate::io::read_ilp)
        .collect::<Result<_>>()?;
    let mut models: BTreeMap<String, GatWeights> = BTreeMap::new();
    for method in &config.methods {
        if let MethodKind::Policy { model } = &method.kind {
            models.insert(method.name.clone(), GatWeights::load(model)?);
        }
    }

    let mut cells = Vec::new();
    for (instance_idx, _) in instances.iter().enumerate() {
        for (method_idx, _) in config.methods.iter().enumerate() {
            for &seed in &config.seeds {
                cells.push(Cell {
                    instance_idx,
                    method_idx,
                    seed,
                });
            }
        }
    }

    // Worker pool over the cells; results land at their cell index so the
    // output order never depends on scheduling.
    let results: Vec<Option<std::result::Result<RunLog, String>>> =
        (0..cells.len()).map(|_| None).collect();
    let results = Mutex::new(results);
    let next = AtomicUsize::new(0);
    let workers = config.threads.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                if idx >= cells.len() {
                    break;
                }
                let cell = &cells[idx];
                let ilp = &instances[cell.instance_idx];
                let spec = &config.methods[cell.method_idx];
                let mut params = config.lns.clone();
                params.seed = cell.seed;
                let mut destroyer = build_destroyer(spec, &models, params.eta);
                let outcome = run_lns(ilp, destroyer.as_mut(), &params)
                    .map(|mut log| {
                        log.method = spec.name.clone();
                        log
                    })
                    .map_err(|e| e.to_string());
                results.lock().expect("worker poisoned")[idx] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("workers joined");

    // Per-run CSVs, the merged runs.csv and errors.csv.
    let mut runs_csv = String::from(RunLog::csv_header());
    runs_csv.push('\n');
    let mut errors_csv = String::from("instance,method,seed,error\n");
    let mut logs: Vec<RunLog> = Vec::new();
    for (idx, outcome) in results.into_iter().enumerate() {
        let cell = &cells[idx];
        let instance = &instances[cell.instance_idx].name;
        let method = &config.methods[cell.method_idx].name;
        match outcome.expect("all cells executed") {
            Ok(log) => {
                let per_run = format!("{}\n{}", RunLog::csv_header(), log.to_csv_rows());
                fs::write(
                    out_dir
                        .join("runs")
                        .join(format!("{instance}__{method}__{}.csv", cell.seed)),
                    per_run,
                )?;
                runs_csv.push_str(&log.to_csv_rows());
                logs.push(log);
            }
            Err(message) => {
                log::warn!("cell {instance}/{method}/{} failed: {message}", cell.seed);
                errors_csv.push_str(&format!(
                    "{instance},{method},{},{}\n",
                    cell.seed,
                    message.replace(',', ";")
                ));
            }
        }
    }
    fs::write(out_dir.join("runs.csv"), &runs_csv)?;
    fs::write(out_dir.join("errors.csv"), &errors_csv)?;

    // Best-known values.
    let mut vstar: BTreeMap<String, (f64, &'static str)> = BTreeMap::new();
    for ilp in &instances {
        let oracle = match &config.vstar {
            VstarMode::Oracle { budget } => {
                let res = solve_bnb(ilp, budget)?;
                (res.status == BnbStatus::Optimal)
                    .then(|| res.best.expect("optimal has incumbent").objective)
            }
            VstarMode::VirtualBest => None,
        };
        let entry = match oracle {
            Some(objective) => (objective, "oracle"),
            None => {
                let best = logs
                    .iter()
                    .filter(|log| log.instance == ilp.name)
                    .map(|log| log.final_objective())
                    .fold(f64::INFINITY, f64::min);
                (best, "virtual-best")
            }
        };
        vstar.insert(ilp.name.clone(), entry);
    }
    let mut vstar_csv = String::from("instance,v_star,source\n");
    for (instance, (value, source)) in &vstar {
        vstar_csv.push_str(&format!("{instance},{value},{source}\n"));
    }
    fs::write(out_dir.join("vstar.csv"), &vstar_csv)?;

    // Per-cell metrics on the evaluation grid.
    let axis = config.metrics.axis;
    let eps = config.metrics.epsilon;
    let mut metrics_csv = String::from("instance,method,seed,t,primal_bound,primal_gap,primal_integral\n");
    for log in &logs {
        let (star, _) = vstar[&log.instance];
        for &t in &config.metrics.grid {
            let bound = bound_at(log, t, axis);
            let gap = primal_gap(bound, star, eps);
            let integral = if t > 0.0 {
                primal_integral(log, star, t, eps, axis)
            } else {
                0.0
            };
            let bound_text = bound.map(|b| b.to_string()).unwrap_or_default();
            metrics_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                log.instance, log.method, log.seed, t, bound_text, gap, integral
            ));
        }
    }
    fs::write(out_dir.join("metrics.csv"), &metrics_csv)?;

    // Aggregates per method and grid point, averaged over seeds.
    let star_values: BTreeMap<String, f64> =
        vstar.iter().map(|(k, &(v, _))| (k.clone(), v)).collect();
    let mut aggregates_csv = String::from(
        "method,t,mean_primal_gap,mean_primal_integral,survival_rate,best_performing_rate,gap_to_virtual_best\n",
    );
    let method_names: Vec<&String> = config.methods.iter().map(|m| &m.name).collect();
    for &t in &config.metrics.grid {
        // Per-seed structures for the portfolio metrics.
        let mut survival_by_method: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
        let mut best_rate_by_method: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
        let mut vb_gap_by_method: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
        for &seed in &config.seeds {
            let mut by_method: BTreeMap<String, Vec<&RunLog>> = BTreeMap::new();
            for log in logs.iter().filter(|l| l.seed == seed) {
                by_method.entry(log.method.clone()).or_default().push(log);
            }
            if by_method.is_empty() {
                continue;
            }
            let rates = best_performing_rate(&by_method, &star_values, t, eps, axis);
            let vb = gap_to_virtual_best(&by_method, t, eps, axis);
            for method in &method_names {
                if let Some(logs) = by_method.get(*method) {
                    survival_by_method.entry(method).or_default().push(survival_rate(
                        logs,
                        &star_values,
                        config.metrics.gap_threshold,
                        t,
                        eps,
                        axis,
                    ));
                }
                if let Some(&rate) = rates.get(*method) {
                    best_rate_by_method.entry(method).or_default().push(rate);
                }
                if let Some(&gap) = vb.get(*method) {
                    vb_gap_by_method.entry(method).or_default().push(gap);
                }
            }
        }
        for method in &method_names {
            let cells: Vec<&RunLog> = logs.iter().filter(|l| &&l.method == method).collect();
            if cells.is_empty() {
                continue;
            }
            let mean = |values: &[f64]| values.iter().sum::<f64>() / values.len() as f64;
            let gaps: Vec<f64> = cells
                .iter()
                .map(|log| primal_gap(bound_at(log, t, axis), star_values[&log.instance], eps))
                .collect();
            let integrals: Vec<f64> = cells
                .iter()
                .map(|log| {
                    if t > 0.0 {
                        primal_integral(log, star_values[&log.instance], t, eps, axis)
                    } else {
                        0.0
                    }
                })
                .collect();
            let seed_mean = |per_seed: Option<&Vec<f64>>| per_seed.map_or(0.0, |v| mean(v));
            aggregates_csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                method,
                t,
                mean(&gaps),
                mean(&integrals),
                seed_mean(survival_by_method.get(*method)),
                seed_mean(best_rate_by_method.get(*method)),
                seed_mean(vb_gap_by_method.get(*method)),
            ));
        }
    }
    fs::write(out_dir.join("aggregates.csv"), &aggregates_csv)?;
    Ok(())
}

/// Summary tables and per-curve plot data from an experiment directory.
pub fn report(experiment_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<()> {
    let experiment_dir = experiment_dir.as_ref();
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("curves"))?;

    let metrics_text = fs::read_to_string(experiment_dir.join("metrics.csv"))?;
    let mut rows: Vec<(String, String, u64, f64, f64, f64)> = Vec::new(); // instance, method, seed, t, gap, integral
    for (lineno, line) in metrics_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!(
                "metrics.csv:{}: expected 7 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("metrics.csv:{}: {what}: {e}", lineno + 1)))
        };
        rows.push((
            fields[0].to_string(),
            fields[1].to_string(),
            fields[2]
                .parse()
                .map_err(|e| Error::Parse(format!("metrics.csv:{}: seed: {e}", lineno + 1)))?,
            parse(fields[3], "t")?,
            parse(fields[5], "primal_gap")?,
            parse(fields[6], "primal_integral")?,
        ));
    }

    if rows.is_empty() {
        log::warn!("empty metrics file; writing empty summary");
    }
    let final_t = rows.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);

    // Per-method mean and standard deviation of gap/integral at the final
    // grid point (population standard deviation; single runs report 0).
    let mut summary_csv = String::from(
        "method,mean_primal_gap,std_primal_gap,mean_primal_integral,std_primal_integral,cells\n",
    );
    let mut summary_md = String::from(
        "| method | primal gap | primal integral | cells |\n|---|---|---|---|\n",
    );
    let methods: Vec<String> = {
        let mut seen = Vec::new();
        for row in &rows {
            if !seen.contains(&row.1) {
                seen.push(row.1.clone());
            }
        }
        seen
    };
    for method in &methods {
        let cells: Vec<&(String, String, u64, f64, f64, f64)> = rows
            .iter()
            .filter(|r| &r.1 == method && r.3 == final_t)
            .collect();
        let stats = |pick: fn(&(String, String, u64, f64, f64, f64)) -> f64| -> (f64, f64) {
            let values: Vec<f64> = cells.iter().map(|r| pick(r)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let var =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            (mean, var.sqrt())
        };
        if cells.is_empty() {
            continue;
        }
        let (gap_mean, gap_std) = stats(|r| r.4);
        let (int_mean, int_std) = stats(|r| r.5);
        summary_csv.push_str(&format!(
            "{method},{gap_mean},{gap_std},{int_mean},{int_std},{}\n",
            cells.len()
        ));
        summary_md.push_str(&format!(
            "| {method} | {gap_mean:.4} ± {gap_std:.4} | {int_mean:.4} ± {int_std:.4} | {} |\n",
            cells.len()
        ));
    }
    fs::write(out_dir.join("summary.csv"), &summary_csv)?;
    fs::write(out_dir.join("summary.md"), &summary_md)?;

    // Plot data: x,y per curve from the aggregates file.
    let aggregates_text = fs::read_to_string(experiment_dir.join("aggregates.csv"))?;
    let mut curves: BTreeMap<(String, &str), String> = BTreeMap::new();
    for line in aggregates_text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse("aggregates.csv: expected 7 fields".into()));
        }
        let method = fields[0].to_string();
        let t = fields[1];
        for (column, name) in [(2, "gap"), (4, "survival"), (5, "best_rate")] {
            curves
                .entry((method.clone(), name))
                .or_insert_with(|| String::from("x,y\n"))
                .push_str(&format!("{t},{}\n", fields[column]));
        }
    }
    for ((method, curve), body) in &curves {
        fs::write(out_dir.join("curves").join(format!("{curve}_{method}.csv")), body)?;
    }
    Ok(())
}
