use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sidelink_harness::evaluate::{run_channel_mode_comparison, run_sweep, write_compare, write_sweep};
use sidelink_harness::train::run_training;
use sidelink_harness::validate::{run_queue_validation, within_3_sigma, write_report};
use sidelink_harness::{EventSink, ExperimentSpec, HarnessError, Mode};

#[derive(Parser)]
#[command(name = "sidelink", version, about = "Sidelink band-scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a DDQN scheduler and write its checkpoint, metadata and log.
    Train(Common),
    /// Evaluate policies at the configured budget (or sweep points).
    Evaluate(Common),
    /// Evaluate policies across the licensed-budget sweep.
    Sweep(Common),
    /// Compare agents trained under static and dynamic channels.
    CompareChannel(Common),
    /// Check the queue simulation against the M/M/1/K closed form.
    ValidateQueue(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replace the spec's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; overrides `output_path` in the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write every epoch report as one JSON line to this file.
    #[arg(long)]
    dump_events: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_path(spec: &ExperimentSpec, common: &Common) -> Result<PathBuf, HarnessError> {
    common
        .out
        .clone()
        .or_else(|| spec.output_path.clone())
        .ok_or_else(|| HarnessError::Config("no output path: pass --out or set output_path".into()))
}

fn run(command: Command) -> Result<(), HarnessError> {
    let (mode, common) = match command {
        Command::Train(c) => (Mode::Train, c),
        Command::Evaluate(c) => (Mode::Evaluate, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::CompareChannel(c) => (Mode::CompareChannel, c),
        Command::ValidateQueue(c) => (Mode::ValidateQueue, c),
    };
    let mut spec = ExperimentSpec::load(&common.config)?;
    if let Some(seed) = common.seed {
        spec.seeds = vec![seed];
    }
    spec.validate(mode)?;
    let out = out_path(&spec, &common)?;
    create_parent(&out)?;
    if let Some(dump) = &common.dump_events {
        create_parent(dump)?;
    }
    let mut events = EventSink::open(common.dump_events.as_deref())?;

    match mode {
        Mode::Train => {
            let (outcome, paths) = run_training(&spec, &out, &mut events)?;
            println!(
                "trained {} epochs; checkpoint {}, metadata {}, log {}",
                outcome.agent.steps(),
                paths.checkpoint.display(),
                paths.meta.display(),
                paths.log.display()
            );
        }
        Mode::Evaluate | Mode::Sweep => {
            let report = run_sweep(&spec, mode, &mut events)?;
            let summary = write_sweep(&out, &report)?;
            for s in &report.summary {
                println!(
                    "{:>12} {:<9} blocking {:.4} ± {:.4}  throughput {:.1} Mbps{}",
                    s.licensed_bps,
                    s.policy,
                    s.blocking.mean,
                    s.blocking.ci95,
                    s.throughput.mean / 1e6,
                    if s.meets_floor { "" } else { "  (below throughput floor)" }
                );
            }
            println!("throughput floor {:.1} Mbps ({})", report.floor.bps / 1e6, report.floor.source);
            print_written(&[&out, &summary]);
        }
        Mode::CompareChannel => {
            let report = run_channel_mode_comparison(&spec, &mut events)?;
            let summary = write_compare(&out, &report)?;
            for p in &report.points {
                println!(
                    "{:>12} static {:.4}  dynamic {:.4}  static-dynamic {:+.4} ± {:.4}",
                    p.licensed_bps,
                    p.static_blocking.mean,
                    p.dynamic_blocking.mean,
                    p.difference.mean,
                    p.difference.ci95
                );
            }
            print_written(&[&out, &summary]);
        }
        Mode::ValidateQueue => {
            let rows = run_queue_validation(&spec)?;
            write_report(&out, &rows)?;
            for e in &rows {
                println!(
                    "rho {:<4} K {:<3} simulated {:.5} analytic {:.5} z {:+.2}{}",
                    e.rho,
                    e.k,
                    e.simulated,
                    e.analytic,
                    e.z_score,
                    if within_3_sigma(e) { "" } else { "  OUTSIDE 3 sigma" }
                );
            }
            print_written(&[&out]);
        }
    }
    events.finish()
}

fn create_parent(path: &Path) -> Result<(), HarnessError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))
        }
        _ => Ok(()),
    }
}

fn print_written(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}
