//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::data::Split;
use crate::error::{FedError, Result};
use crate::federation::{evaluate, Simulation, Strategy};

use super::checkpoint;
use super::config::{hex, ExperimentConfig, PROVENANCE};
use super::output::{
    compare, format_comparison, partial_path, read_results_csv, write_atomic, CsvSink, RunSummary,
};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.fcs1";
pub const EVAL_FILE: &str = "eval.json";
pub const OUT_ENV: &str = "FEDCS_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "fedcs",
    version,
    about = "Client-supervised federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train and evaluate, streaming results.csv and summary.json.
    Run(RunArgs),
    /// Continue a run from its checkpoint.
    Resume(RunArgs),
    /// Write the client partition plan as JSON.
    Partition(CommonArgs),
    /// Score a checkpoint on the configured client shards.
    Eval(EvalArgs),
    /// Tabulate mean(std) per strategy from summary files or run directories.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the experiment seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; falls back to $FEDCS_OUT, then the config, then runs/<strategy>_seed<N>.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the strategy: fedavg, fedavg_ft, fedcs, local_only.
    #[arg(long, value_name = "NAME")]
    strategy: Option<Strategy>,
    /// Override the number of rounds.
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to continue from (default for `resume`: <out>/checkpoint.fcs1).
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to score (default: <out>/checkpoint.fcs1).
    #[arg(long, visible_alias = "checkpoint", value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// summary.json files or directories containing one.
    #[arg(required = true, value_name = "PATH")]
    inputs: Vec<PathBuf>,
}

fn provenance_help() -> String {
    let mut s = String::from("Defaults and where they come from:\n");
    for (key, note) in PROVENANCE {
        s.push_str(&format!("  {key}: {note}\n"));
    }
    s.push_str(&format!(
        "\nEnvironment:\n  {OUT_ENV}: output directory when --out is absent\n"
    ));
    s
}

fn command() -> clap::Command {
    Cli::command().after_long_help(provenance_help())
}

/// Parses `args` (program name first) and runs; returns the process exit
/// code. Usage errors give 2, runtime errors 1.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(a) => {
            let resume = a.resume.clone();
            run(&a.common, resume)
        }
        Command::Resume(a) => {
            let (_, out) = resolve(&a.common)?;
            let ck = a
                .resume
                .clone()
                .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            run(&a.common, Some(ck))
        }
        Command::Partition(a) => partition(&a),
        Command::Eval(a) => eval(&a),
        Command::Compare(a) => compare_cmd(&a),
    }
}

/// Loads the config, applies flag overrides and picks the output directory.
fn resolve(args: &CommonArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if let Some(r) = args.rounds {
        cfg.federation.rounds = r;
    }
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| {
            std::env::var_os(OUT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}_seed{}", cfg.strategy, cfg.seed)));
    Ok((cfg, out))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FedError::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| FedError::Format(format!("{}: {e}", path.display())))?;
    write_atomic(path, json.as_bytes())
}

fn run(args: &CommonArgs, resume: Option<PathBuf>) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    ensure_dir(&out)?;
    let built = cfg.build_shards()?;
    write_json(&out.join(CONFIG_FILE), &cfg.echo())?;
    write_json(&out.join(PARTITION_FILE), &built.plan)?;

    let n = built.shards.len();
    let results = out.join(RESULTS_FILE);
    let ck_path = out.join(CHECKPOINT_FILE);
    let (mut sim, kept) = match &resume {
        Some(ck) => {
            let state = checkpoint::load(ck, &cfg, built.dims, n)?;
            let partial = partial_path(&results);
            let previous = if results.exists() {
                Some(results.clone())
            } else if partial.exists() {
                Some(partial)
            } else {
                None
            };
            let kept = if let Some(prev) = previous {
                read_results_csv(&prev)?
                    .into_iter()
                    .filter(|r| r.round < state.round)
                    .collect()
            } else {
                Vec::new()
            };
            eprintln!("resuming {} from round {}", cfg.strategy, state.round);
            (
                Simulation::resume(cfg.fed_config(), cfg.strategy, built.shards, state)?,
                kept,
            )
        }
        None => (
            Simulation::new(
                cfg.fed_config(),
                cfg.strategy,
                &cfg.model,
                built.dims,
                built.shards,
            )?,
            Vec::new(),
        ),
    };

    let mut sink = CsvSink::create(&results, &kept)?;
    let mut last = None;
    while !sim.finished() {
        let report = sim.step()?;
        let done = sim.state.round;
        if let Some(r) = report {
            if let Err(e) = sink.append(&r) {
                checkpoint::save(&ck_path, &sim.state, &cfg)?;
                return Err(e);
            }
            last = Some(r);
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !sim.finished() {
            checkpoint::save(&ck_path, &sim.state, &cfg)?;
        }
    }
    checkpoint::save(&ck_path, &sim.state, &cfg)?;
    sink.finish()?;

    let summary = RunSummary::new(
        cfg.strategy.name(),
        cfg.seed,
        cfg.federation.rounds,
        hex(&cfg.hash()),
        last,
    );
    summary.save(&out.join(SUMMARY_FILE))?;
    report_line(&summary);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn report_line(s: &RunSummary) {
    let Some(r) = &s.final_report else {
        return;
    };
    let overall = r.summary.as_ref().map(|m| &m.overall);
    let test = r.split_summary(Split::Test);
    if let Some(o) = overall {
        let mut line = format!(
            "{} seed {} round {}: wF1 {:.4}({:.4}) wAUC {:.4}({:.4})",
            s.strategy,
            s.seed,
            r.round,
            o.weighted_f1.mean,
            o.weighted_f1.std,
            o.weighted_auc.mean,
            o.weighted_auc.std
        );
        if let Some(t) = test {
            line.push_str(&format!(
                " | test wF1 {:.4}({:.4})",
                t.weighted_f1.mean, t.weighted_f1.std
            ));
        }
        println!("{line}");
    }
}

fn partition(args: &CommonArgs) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    ensure_dir(&out)?;
    let built = cfg.build_shards()?;
    let path = out.join(PARTITION_FILE);
    write_json(&path, &built.plan)?;
    let (train, test) = built.plan.split_counts();
    println!(
        "{} clients ({train} train, {test} test) -> {}",
        built.shards.len(),
        path.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (cfg, out) = resolve(&args.common)?;
    let ck = args
        .resume
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_FILE));
    let built = cfg.build_shards()?;
    let state = checkpoint::load(&ck, &cfg, built.dims, built.shards.len())?;
    let round = state.round.checked_sub(1).ok_or_else(|| {
        FedError::Validation(format!("{} holds an untrained model", ck.display()))
    })?;
    let report = evaluate(
        &state,
        &built.shards,
        &cfg.fed_config(),
        cfg.strategy,
        round,
    )?;
    ensure_dir(&out)?;
    let summary = RunSummary::new(
        cfg.strategy.name(),
        cfg.seed,
        state.round,
        hex(&cfg.hash()),
        Some(report),
    );
    summary.save(&out.join(EVAL_FILE))?;
    report_line(&summary);
    Ok(())
}

fn compare_cmd(args: &CompareArgs) -> Result<()> {
    let summaries = args
        .inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() {
                p.join(SUMMARY_FILE)
            } else {
                p.clone()
            };
            RunSummary::load(&file)
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", format_comparison(&compare(&summaries)?));
    Ok(())
}
