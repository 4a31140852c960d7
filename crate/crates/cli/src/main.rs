use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dirad::config::RunConfig;
use dirad::data::{load_mnist, make_run_plan, Dataset, Resolution};
use dirad::harness::{
    accuracy_table, compute_retention, read_events, run_continual, run_single_task, run_xor, summarize_events,
    system_networks, write_accuracy_csv, write_retention_csv, write_run_dir,
};
use dirad::preval::PrevalSystem;
use dirad::Network;
use rayon::prelude::*;

#[derive(Parser)]
#[command(
    name = "dirad",
    version,
    about = "Grow minimal networks and run label-free continual learning"
)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set gamma=3`. Repeatable; applied
    /// after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Number of seeds, run in parallel as 0..N.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Directory that receives one folder per run.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the four MNIST IDX files, gzipped or not.
    #[arg(long, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Use 28x28 images instead of 14x14.
    #[arg(long)]
    full_mnist: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Grow a network on signed XOR.
    Xor(RunArgs),
    /// Train one model (L0 then L1) on a two-class MNIST task.
    SingleTask {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Two classes, e.g. `3,7`. Defaults to each seed's first task.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        classes: Option<Vec<u8>>,
    },
    /// Three two-class tasks in sequence with no task labels.
    Continual {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        data: DataArgs,
        /// CP threshold; a comma-separated list gives one table row each.
        #[arg(long, value_delimiter = ',')]
        tcp: Vec<f64>,
    },
    /// Render a network JSON file, or every network in a registry, as DOT.
    ExportDot {
        input: PathBuf,
        /// Output file for a single network, directory for a registry.
        /// Single networks go to stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Summarize and audit an events.jsonl log.
    ReplayEvents {
        events: PathBuf,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(data: &DataArgs) -> Result<(Dataset, Dataset)> {
    if !data.data_dir.is_dir() {
        bail!("data directory {} does not exist", data.data_dir.display());
    }
    let res = if data.full_mnist {
        Resolution::Full
    } else {
        Resolution::Half
    };
    load_mnist(&data.data_dir, res).with_context(|| format!("loading MNIST from {}", data.data_dir.display()))
}

fn write_json_nets(dir: &Path, nets: &[(String, &Network)]) -> Result<()> {
    for (name, net) in nets {
        std::fs::write(dir.join(format!("net_{name}.json")), net.to_json()?)?;
    }
    Ok(())
}

fn xor(cfg: &RunConfig, run: &RunArgs) -> Result<()> {
    let rows: Vec<String> = (0..run.seeds)
        .into_par_iter()
        .map(|seed| {
            let (res, net, log) = run_xor(seed, cfg)?;
            let dir = run.out.join(format!("xor-s{seed}"));
            let nets = [("0_l0".to_string(), &net)];
            write_run_dir(&dir, &res, &log, &nets, cfg)?;
            write_json_nets(&dir, &nets)?;
            Ok(format!(
                "seed {seed}: converged={} steps={} hidden={} edges={} max_error={:.4} -> {}",
                res.converged,
                res.steps,
                res.hidden_nodes,
                res.edges,
                res.max_error,
                dir.display()
            ))
        })
        .collect::<Result<_>>()?;
    rows.iter().for_each(|r| println!("{r}"));
    Ok(())
}

fn single_task(cfg: &RunConfig, run: &RunArgs, data: &DataArgs, classes: Option<&[u8]>) -> Result<()> {
    let (train, test) = load_data(data)?;
    let rows: Vec<String> = (0..run.seeds)
        .into_par_iter()
        .map(|seed| {
            let pair = match classes {
                Some(c) => [c[0], c[1]],
                None => make_run_plan(seed).tasks[0],
            };
            let (res, model, log) = run_single_task(&train, &test, pair, seed, cfg)?;
            let dir = run.out.join(format!("single-task-s{seed}"));
            let nets = [("0_l0".to_string(), &model.l0), ("0_l1".to_string(), &model.l1)];
            write_run_dir(&dir, &res, &log, &nets, cfg)?;
            write_json_nets(&dir, &nets)?;
            Ok(format!(
                "seed {seed} classes {pair:?}: accuracy={:.3} L0 {}/{} L1 error={:.4} steps {}+{} -> {}",
                res.test_accuracy,
                res.l0_hidden,
                res.l0_edges,
                res.l1_final_error,
                res.l0_steps,
                res.l1_steps,
                dir.display()
            ))
        })
        .collect::<Result<_>>()?;
    rows.iter().for_each(|r| println!("{r}"));
    Ok(())
}

fn continual(cfg: &RunConfig, run: &RunArgs, data: &DataArgs, tcp: &[f64]) -> Result<()> {
    let (train, test) = load_data(data)?;
    let values = if tcp.is_empty() {
        vec![cfg.preval.t_cp]
    } else {
        tcp.to_vec()
    };
    let mut table = Vec::new();
    let mut retention = Vec::new();
    for &t_cp in &values {
        let mut cfg = cfg.clone();
        cfg.preval.t_cp = t_cp;
        cfg.validate()?;
        let results = (0..run.seeds)
            .into_par_iter()
            .map(|seed| {
                let (res, system, log) = run_continual(&train, &test, &make_run_plan(seed), &cfg)?;
                let dir = run.out.join(format!("continual-tcp{t_cp}-s{seed}"));
                write_run_dir(&dir, &res, &log, &system_networks(&system), &cfg)?;
                system.save(&dir.join("registry"), &cfg.growth)?;
                Ok(res)
            })
            .collect::<Result<Vec<_>>>()?;
        for r in &results {
            let acc: Vec<String> = r.evals.iter().map(|e| format!("{:.3}", e.net_accuracy)).collect();
            println!(
                "t_cp {t_cp} seed {}: [{}] models={}{}",
                r.seed,
                acc.join(" "),
                r.models,
                if r.nd { " ND" } else { "" }
            );
        }
        let row = accuracy_table(&results);
        let means: Vec<String> = row.mean.iter().map(|v| format!("{v:.3}")).collect();
        println!("t_cp {t_cp}: mean [{}] ND {}/{}", means.join(" "), row.nd, row.runs);
        table.push(row);
        retention.push(compute_retention(&results));
    }
    std::fs::create_dir_all(&run.out)?;
    write_accuracy_csv(&run.out.join("continual-accuracy.csv"), &table)?;
    write_retention_csv(&run.out.join("continual-retention.csv"), &retention)?;
    println!("tables written to {}", run.out.display());
    Ok(())
}

fn export_dot(input: &Path, out: Option<&Path>) -> Result<()> {
    if input.is_dir() {
        let (system, _) = PrevalSystem::load(input)?;
        let dir = out.unwrap_or(input);
        std::fs::create_dir_all(dir)?;
        for (name, net) in system_networks(&system) {
            let path = dir.join(format!("net_{name}.dot"));
            std::fs::write(&path, net.to_dot())?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let dot = Network::from_json(&text)?.to_dot();
    match out {
        Some(p) => std::fs::write(p, dot)?,
        None => print!("{dot}"),
    }
    Ok(())
}

fn replay_events(path: &Path, json: bool) -> Result<bool> {
    let records = read_events(path).with_context(|| format!("reading {}", path.display()))?;
    let summary = summarize_events(records.iter().map(|r| &r.event));
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("{} events", records.len());
        for (kind, n) in &summary.counts {
            println!("  {kind:<16} {n}");
        }
        println!("audited {} (unaudited {})", summary.audited, summary.unaudited);
        println!("max output deviation     {:.3e}", summary.max_output_deviation);
        println!("max state deviation      {:.3e}", summary.max_state_deviation);
        println!(
            "max delta-transfer dev.  {:.3e} over {} ENC events",
            summary.max_delta_transfer_deviation, summary.enc_audited
        );
        println!("violations {}", summary.violations);
    }
    Ok(summary.violations == 0)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.cmd {
        Cmd::ExportDot { input, out } => export_dot(input, out.as_deref()).map(|_| true),
        Cmd::ReplayEvents { events, json } => replay_events(events, *json),
        Cmd::Xor(run) => xor(&load_config(&cli)?, run).map(|_| true),
        Cmd::SingleTask { run, data, classes } => {
            single_task(&load_config(&cli)?, run, data, classes.as_deref()).map(|_| true)
        }
        Cmd::Continual { run, data, tcp } => continual(&load_config(&cli)?, run, data, tcp).map(|_| true),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
