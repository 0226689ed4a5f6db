//! Command-line pipeline: `gen -> solve/lns -> collect -> train -> eval ->
//! report`, one subcommand per stage with file handoffs. Every run echoes
//! its resolved configuration to stdout and a sidecar JSON next to its
//! output so it can be reproduced exactly.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bnb::{solve_bnb, BnbStatus, SolveLimits};
use crate::collect::{collect_trajectory, read_examples, write_examples, CollectConfig};
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, report, ExperimentConfig};
use crate::gat::{GatDims, GatWeights};
use crate::generators::GenSpec;
use crate::lns::{
    run_lns, Destroyer, GraphBfsDestroyer, LbRelaxDestroyer, LnsParams, LocalBranchingDestroyer,
    RandomDestroyer, RunLog,
};
use crate::policy::PolicyDestroyer;
use crate::train::{history_csv, train, LossMode, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "cllns", version, about = "Large neighborhood search for binary ILPs with learned destroy heuristics")]
pub struct Cli {
    /// Base seed; falls back to the CLLNS_SEED environment variable.
    #[arg(long, global = true, env = "CLLNS_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for the experiment runner (1 = bitwise deterministic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate benchmark instances plus a manifest.
    Gen(GenArgs),
    /// Solve one instance exactly with branch and bound.
    Solve(SolveArgs),
    /// Run the LNS loop with one destroy heuristic.
    Lns(LnsArgs),
    /// Collect expert training examples from a directory of instances.
    Collect(CollectArgs),
    /// Train the scoring network on collected examples.
    Train(TrainArgs),
    /// Run an experiment grid and write metric CSVs.
    Eval(EvalArgs),
    /// Summarize an experiment directory into tables and plot data.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Mvc,
    Mis,
    Sc,
    Ca,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    /// Instances to generate.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Graph families: node count.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Graph families: average degree.
    #[arg(long)]
    pub degree: Option<usize>,
    /// Set covering: number of sets (variables).
    #[arg(long)]
    pub vars: Option<usize>,
    /// Set covering: number of elements (constraints).
    #[arg(long)]
    pub cons: Option<usize>,
    /// Set covering: membership density.
    #[arg(long)]
    pub density: Option<f64>,
    /// Auctions: item count.
    #[arg(long)]
    pub items: Option<usize>,
    /// Auctions: bid count.
    #[arg(long)]
    pub bids: Option<usize>,
    /// Auctions: mean bundle size.
    #[arg(long, default_value_t = 3.0)]
    pub bundle_mean: f64,
    /// Auctions: relative price noise.
    #[arg(long, default_value_t = 0.2)]
    pub price_noise: f64,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub node_limit: Option<u64>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub gap_limit: Option<f64>,
    /// Write the best solution here as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Random,
    Graph,
    Lb,
    LbRelax,
    Policy,
}

#[derive(Args, Debug)]
pub struct LnsArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// LNS parameter file (JSON); defaults apply when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Weights file; required for --method policy.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Events CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CollectArgs {
    /// Directory of instance JSON files (manifest.json is skipped).
    #[arg(long)]
    pub instances: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Collection configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
pub enum LossArg {
    /// Contrastive loss.
    Cl,
    /// Imitation (classification) loss.
    Il,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cl")]
    pub loss: LossArg,
    /// Training configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of examples held out for the validation metric.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    /// Per-epoch history CSV output.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Experiment directory produced by `eval`.
    #[arg(long)]
    pub experiment: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Prints the resolved config and writes it next to the stage's output.
fn echo_config(value: &impl Serialize, sidecar: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("config serialization");
    println!("{text}");
    if let Some(parent) = sidecar.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(sidecar, text + "\n")?;
    Ok(())
}

fn sidecar_for(path: &Path) -> PathBuf {
    if path.extension().is_some() {
        let mut name = path.file_name().expect("file path").to_os_string();
        name.push(".config.json");
        path.with_file_name(name)
    } else {
        path.join("config.json")
    }
}

impl Cli {
    pub fn run(self) -> Result<()> {
        let seed = self.seed.unwrap_or(0);
        match self.command {
            Command::Gen(args) => run_gen(args, seed),
            Command::Solve(args) => run_solve(args),
            Command::Lns(args) => run_lns_cmd(args, self.seed),
            Command::Collect(args) => run_collect(args, self.seed),
            Command::Train(args) => run_train(args, self.seed),
            Command::Eval(args) => run_eval(args, self.threads),
            Command::Report(args) => run_report(args),
        }
    }
}

fn require(value: Option<usize>, flag: &str, family: &str) -> Result<usize> {
    value.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for --family {family}")))
}

pub fn run_gen(args: GenArgs, seed: u64) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let mut manifest = Vec::new();
    for index in 0..args.count {
        let instance_seed = seed.wrapping_add(index as u64);
        let spec = match args.family {
            FamilyArg::Mvc => GenSpec::Mvc {
                n_nodes: require(args.nodes, "nodes", "mvc")?,
                avg_degree: require(args.degree, "degree", "mvc")?,
                seed: instance_seed,
            },
            FamilyArg::Mis => GenSpec::Mis {
                n_nodes: require(args.nodes, "nodes", "mis")?,
                avg_degree: require(args.degree, "degree", "mis")?,
                seed: instance_seed,
            },
            FamilyArg::Sc => GenSpec::Sc {
                n_vars: require(args.vars, "vars", "sc")?,
                n_cons: require(args.cons, "cons", "sc")?,
                density: args
                    .density
                    .ok_or_else(|| Error::InvalidArgument("--density is required for --family sc".into()))?,
                seed: instance_seed,
            },
            FamilyArg::Ca => GenSpec::Ca {
                n_items: require(args.items, "items", "ca")?,
                n_bids: require(args.bids, "bids", "ca")?,
                bundle_size_mean: args.bundle_mean,
                price_noise: args.price_noise,
                seed: instance_seed,
            },
        };
        let ilp = spec.generate()?;
        let file = format!("{}.json", ilp.name);
        crate::io::write_ilp(&ilp, args.out.join(&file))?;
        manifest.push(serde_json::json!({ "file": file, "spec": spec }));
    }
    let manifest_value = serde_json::json!({
        "family": args.family,
        "count": args.count,
        "base_seed": seed,
        "instances": manifest,
    });
    fs::write(
        args.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest_value).expect("manifest serialization") + "\n",
    )?;
    echo_config(&manifest_value, &sidecar_for(&args.out))?;
    Ok(())
}

pub fn run_solve(args: SolveArgs) -> Result<()> {
    let ilp = crate::io::read_ilp(&args.instance)?;
    let limits = SolveLimits {
        time_limit_s: args.time_limit,
        node_limit: args.node_limit,
        gap_limit: args.gap_limit,
        ..SolveLimits::default()
    };
    let resolved = serde_json::json!({
        "instance": args.instance,
        "limits": limits,
        "out": args.out,
    });
    let sidecar = args
        .out
        .clone()
        .map(|p| sidecar_for(&p))
        .unwrap_or_else(|| sidecar_for(&args.instance.with_extension("solve")));
    echo_config(&resolved, &sidecar)?;

    let res = solve_bnb(&ilp, &limits)?;
    match &res.best {
        Some(best) => println!(
            "status={:?} objective={} nodes={} dual_bound={}",
            res.status, best.objective, res.nodes, res.dual_bound
        ),
        None => println!(
            "status={:?} nodes={} dual_bound={}",
            res.status, res.nodes, res.dual_bound
        ),
    }
    if res.status == BnbStatus::Infeasible {
        println!("instance is infeasible");
    }
    if let (Some(out), Some(best)) = (&args.out, &res.best) {
        crate::io::write_solution(best, out)?;
    }
    Ok(())
}

/// Desk-scale defaults used when no parameter file is given.
pub fn default_lns_params(seed: u64) -> LnsParams {
    LnsParams {
        k0: 3,
        gamma: 1.02,
        beta: 0.5,
        init_budget: SolveLimits::nodes(50_000),
        repair_budget: SolveLimits::nodes(50_000),
        max_iterations: Some(30),
        time_limit_s: None,
        seed,
        eta: 0.5,
    }
}

pub fn run_lns_cmd(args: LnsArgs, seed: Option<u64>) -> Result<()> {
    let ilp = crate::io::read_ilp(&args.instance)?;
    let mut params: LnsParams = match &args.params {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => default_lns_params(seed.unwrap_or(0)),
    };
    if let Some(seed) = seed {
        params.seed = seed;
    }
    let mut destroyer: Box<dyn Destroyer> = match args.method {
        MethodArg::Random => Box::new(RandomDestroyer),
        MethodArg::Graph => Box::new(GraphBfsDestroyer),
        MethodArg::Lb => Box::new(LocalBranchingDestroyer {
            budget: params.repair_budget.clone(),
        }),
        MethodArg::LbRelax => Box::new(LbRelaxDestroyer),
        MethodArg::Policy => {
            let model = args.model.as_ref().ok_or_else(|| {
                Error::InvalidArgument("--model is required for --method policy".into())
            })?;
            Box::new(PolicyDestroyer::new(GatWeights::load(model)?, params.eta))
        }
    };
    let resolved = serde_json::json!({
        "instance": args.instance,
        "method": args.method,
        "model": args.model,
        "params": params,
        "out": args.out,
    });
    echo_config(&resolved, &sidecar_for(&args.out))?;

    let log = run_lns(&ilp, destroyer.as_mut(), &params)?;
    let mut csv = String::from(RunLog::csv_header());
    csv.push('\n');
    csv.push_str(&log.to_csv_rows());
    fs::write(&args.out, csv)?;
    println!(
        "final objective {} after {} improvement(s), status {:?}",
        log.final_objective(),
        log.events.len().saturating_sub(1),
        log.status
    );
    Ok(())
}

pub fn run_collect(args: CollectArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: CollectConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => CollectConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.instances)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name().is_some_and(|n| n != "manifest.json")
                && p.file_name().is_some_and(|n| n != "config.json")
                && !p
                    .file_name()
                    .is_some_and(|n| n.to_string_lossy().ends_with(".config.json"))
        })
        .collect();
    paths.sort();
    let resolved = serde_json::json!({
        "instances": args.instances,
        "files": paths.len(),
        "config": cfg,
        "out": args.out,
    });
    echo_config(&resolved, &sidecar_for(&args.out))?;

    let mut examples = Vec::new();
    for path in &paths {
        let ilp = crate::io::read_ilp(path)?;
        let collected = collect_trajectory(&ilp, &cfg)?;
        log::info!("{}: {} example(s)", ilp.name, collected.len());
        examples.extend(collected);
    }
    write_examples(&args.out, &examples)?;
    println!("collected {} example(s) from {} instance(s)", examples.len(), paths.len());
    Ok(())
}

pub fn run_train(args: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(Error::InvalidArgument("--val-fraction must be in [0, 1)".into()));
    }
    let mode = match args.loss {
        LossArg::Cl => LossMode::Contrastive,
        LossArg::Il => LossMode::Imitation,
    };
    let resolved = serde_json::json!({
        "data": args.data,
        "loss": mode,
        "config": cfg,
        "val_fraction": args.val_fraction,
        "out": args.out,
        "history": args.history,
    });
    echo_config(&resolved, &sidecar_for(&args.out))?;

    let examples = read_examples(&args.data)?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no examples in {}",
            args.data.display()
        )));
    }
    // Deterministic tail split: the last val_fraction of the file is the
    // validation set.
    let split = examples.len() - (examples.len() as f64 * args.val_fraction) as usize;
    let (train_set, val_set) = examples.split_at(split.max(1).min(examples.len()));
    let (weights, history) = train(train_set, val_set, &cfg, mode, GatDims::default())?;
    weights.save(&args.out)?;
    if let Some(history_path) = &args.history {
        fs::write(history_path, history_csv(&history))?;
    }
    if let Some(last) = history.last() {
        println!(
            "trained {} epoch(s): final mean loss {}, validation logit margin {}",
            history.len(),
            last.mean_loss,
            last.val_pos_minus_neg_logit
        );
    } else {
        println!("trained 0 epochs: returning the seed-initialized weights");
    }
    Ok(())
}

pub fn run_eval(args: EvalArgs, threads: Option<usize>) -> Result<()> {
    let mut config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&args.config)?)?;
    if let Some(threads) = threads {
        config.threads = threads;
    }
    // run_experiment echoes the config into the output directory itself.
    println!(
        "{}",
        serde_json::to_string_pretty(&config).expect("config serialization")
    );
    run_experiment(&config, &args.out)?;
    println!("experiment written to {}", args.out.display());
    Ok(())
}

pub fn run_report(args: ReportArgs) -> Result<()> {
    let resolved = serde_json::json!({
        "experiment": args.experiment,
        "out": args.out,
    });
    echo_config(&resolved, &sidecar_for(&args.out))?;
    report(&args.experiment, &args.out)?;
    println!("report written to {}", args.out.display());
    Ok(())
}
