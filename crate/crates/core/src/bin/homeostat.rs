use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use homeostatic_agent::artifacts::{emit_artifacts, metrics_json, read_csv, write_plots};
use homeostatic_agent::metrics::compute_metrics;
use homeostatic_agent::scenario::{load_scenario, Ablation};
use homeostatic_agent::sim::run;
use homeostatic_agent::Result;

#[derive(Parser)]
#[command(name = "homeostat", version, about = "Run and inspect homeostatic agent scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (HOMEOSTAT_OUT takes precedence).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<i64>,
        /// Comma-separated: no_memory,no_topdown,no_plasticity,no_ignore_cost
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        /// Also write each subsystem's memory bank.
        #[arg(long)]
        dump_banks: bool,
    },
    /// Recompute metrics from a trace.csv and print them as JSON.
    Metrics { log: PathBuf },
    /// Render the plots of a trace.csv into a plots/ directory beside it.
    Plot { log: PathBuf },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
}

fn out_dir(flag: PathBuf) -> PathBuf {
    match std::env::var_os("HOMEOSTAT_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => flag,
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            ticks,
            ablate,
            dump_banks,
        } => {
            let mut cfg = load_scenario(&scenario)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = ticks {
                cfg.ticks = t;
            }
            let extra = ablate
                .iter()
                .filter(|a| !a.trim().is_empty())
                .map(|a| Ablation::parse(a))
                .collect::<Result<Vec<_>>>()?;
            cfg.add_ablations(&extra);
            cfg.validate()?;
            let (log, agent) = run(&cfg)?;
            let metrics = compute_metrics(&log, Some(cfg.ticks as u64))?;
            let dir = out_dir(out);
            emit_artifacts(&cfg, &log, &metrics, dump_banks.then_some(&agent), &dir)?;
            if let Some(reason) = &log.truncation {
                eprintln!("run truncated: {reason}");
            }
            println!(
                "{}: {} ticks, artifacts in {}",
                cfg.name,
                log.rows.len(),
                dir.display()
            );
        }
        Command::Metrics { log } => {
            let log = read_csv(&log)?;
            print!("{}", metrics_json(&compute_metrics(&log, None)?));
        }
        Command::Plot { log } => {
            let parsed = read_csv(&log)?;
            let dir = log.parent().unwrap_or(Path::new("."));
            let n = write_plots(&parsed, dir)?;
            println!("{n} plots in {}", dir.join("plots").display());
        }
        Command::Validate { scenario } => {
            let cfg = load_scenario(&scenario)?;
            println!("{}: ok", cfg.name);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
