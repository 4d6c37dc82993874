//! `alphanet` command line.
//!
//! Exit codes: 0 ok, 1 verification failure, 2 config or input error,
//! 3 numeric failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use alphanet::experiment::{
    bar_chart_svg, encode_dir, evaluate_saved, read_rows, run_experiment, sweep, ExperimentConfig, SweepKind,
};
use alphanet::gradcheck::{run_suite, CheckOptions, Scope};
use alphanet::train::EvalMode;
use alphanet::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alphanet", version, about = "Train, sweep and verify Alpha-Net style networks on a CPU")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    desk_scale: Option<usize>,
    /// Extra `key=value` setting, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and append its result row.
    Train,
    /// Evaluate a saved checkpoint on the configured split.
    Eval {
        /// Defaults to the checkpoint `train` writes for this config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval_mode: Option<EvalMode>,
    },
    /// Run a version-by-variant grid and write the pivoted table.
    Sweep {
        /// Overrides `sweep` from the config.
        #[arg(long)]
        kind: Option<SweepKind>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: Scope,
        /// Perturb one analytic gradient; the run must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Alpha-encode every image in a directory.
    Encode { input: PathBuf, output: PathBuf },
    /// Bar chart (SVG) of a results CSV.
    Plot {
        /// Defaults to `<out>/results.csv`.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Defaults to the results path with an `.svg` extension.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "Top-1 accuracy")]
        title: String,
    },
}

enum Failure {
    Verification(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn config(g: &Global) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &g.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    if let Some(d) = g.desk_scale {
        cfg.desk_scale = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train => {
            let cfg = config(&cli.global)?;
            let report = run_experiment(&cfg)?;
            let r = &report.row;
            println!(
                "{} {} {} {}: top1 {:.2}% on {} split, {} params, {:.1}s",
                r.version, r.structure, r.normalization, r.loss, r.top1, report.evaluated_on, r.param_count, r.wall_s
            );
            if let Some(p) = r.paper_ref_top1 {
                println!("paper_ref_top1 {p:.1}% (reference, not reproduced)");
            }
            println!("row appended to {}", report.files.results_csv.display());
        }
        Command::Eval { checkpoint, eval_mode } => {
            let mut cfg = config(&cli.global)?;
            if let Some(m) = eval_mode {
                cfg.eval_mode = m;
            }
            let top1 = evaluate_saved(&cfg, checkpoint.as_deref())?;
            println!("top1 {top1:.2}% ({})", cfg.eval_mode);
        }
        Command::Sweep { kind } => {
            let mut cfg = config(&cli.global)?;
            if kind.is_some() {
                cfg.sweep.kind = kind;
                cfg.validate()?;
            }
            let (table, path) = sweep(&cfg)?;
            print!("{}", table.pivot_csv());
            println!("wrote {}", path.display());
            for c in table.failed() {
                eprintln!("failed {} / {}: {}", c.version, c.variant, c.outcome.as_ref().unwrap_err());
            }
        }
        Command::Gradcheck { scope, corrupt } => {
            let opts = CheckOptions {
                seed: cli.global.seed.unwrap_or(0),
                corrupt,
                ..CheckOptions::default()
            };
            let reports = run_suite(scope, &opts)?;
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(Failure::Verification(format!("{failed} of {} gradient checks failed", reports.len())));
            }
            println!("all {} checks passed", reports.len());
        }
        Command::Encode { input, output } => {
            let sum = encode_dir(&input, &output)?;
            println!("{sum}");
            for (p, why) in &sum.skipped {
                eprintln!("skipped {}: {why}", p.display());
            }
        }
        Command::Plot { results, output, title } => {
            let results = match results {
                Some(p) => p,
                None => config(&cli.global)?.out.join("results.csv"),
            };
            let rows = read_rows(&results)?;
            let output = output.unwrap_or_else(|| results.with_extension("svg"));
            fs::write(&output, bar_chart_svg(&rows, &title)).map_err(|e| Error::io(&output, e))?;
            println!("wrote {} ({} rows)", output.display(), rows.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
