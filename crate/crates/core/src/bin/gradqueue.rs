use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grad_queue::experiment::{self, ExperimentConfig, RunKind};

#[derive(Parser)]
#[command(name = "gradqueue", about = "Gradient queue boosting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// File of `key = value` settings, applied before --set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set rho=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write the CSV table here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compare closed forms with simulation.
    LemmaCheck(Common),
    /// Plain vs boosted momentum on the sparse signal.
    MomentumSim(Common),
    /// Train the line detector with and without boosting.
    TrainLines(Common),
    /// Queue length controller trace.
    QlenDemo(Common),
    /// Batch composition and error cases.
    ZetaTable(Common),
    /// Print every setting with its default value.
    Defaults,
}

fn build_config(common: &Common) -> grad_queue::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    for item in &common.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| grad_queue::Error::Parse(format!("expected KEY=VALUE, got {item}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.output {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn execute(kind: RunKind, common: &Common) -> grad_queue::Result<bool> {
    let cfg = build_config(common)?;
    let report = experiment::run(kind, &cfg)?;
    let csv = report.to_csv(&cfg);
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, csv)?;
            print!("{}", report.summary);
        }
        None => {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = std::io::stdout().lock().write_all(csv.as_bytes());
            eprint!("{}", report.summary);
        }
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match &cli.command {
        Command::LemmaCheck(c) => (RunKind::LemmaCheck, c),
        Command::MomentumSim(c) => (RunKind::MomentumSim, c),
        Command::TrainLines(c) => (RunKind::TrainLines, c),
        Command::QlenDemo(c) => (RunKind::QlenDemo, c),
        Command::ZetaTable(c) => (RunKind::ZetaTable, c),
        Command::Defaults => {
            let mut out = std::io::stdout().lock();
            for (k, v) in ExperimentConfig::default().key_values() {
                if writeln!(out, "{k} = {v}").is_err() {
                    break;
                }
            }
            return ExitCode::SUCCESS;
        }
    };
    match execute(kind, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
