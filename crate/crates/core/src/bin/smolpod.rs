use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smolpod::config::RunConfig;
use smolpod::harness;
use smolpod::Error;

/// Smoluchowski aggregation solver with a POD reduced-order model.
#[derive(Parser)]
#[command(name = "smolpod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides one configuration key; may be repeated.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full system and write its trajectory and diagnostics.
    SolveFull(Common),
    /// Run the greedy windowed basis construction.
    BuildBasis(Common),
    /// Build the reduced source and tensor for a basis.
    Reduce {
        #[command(flatten)]
        common: Common,
        /// A build-basis output directory or a basis.podmat file.
        #[arg(long, value_name = "PATH")]
        basis: PathBuf,
    },
    /// Integrate a reduced system written by `reduce`.
    SolveReduced {
        #[command(flatten)]
        common: Common,
        /// A reduce output directory.
        #[arg(long, value_name = "DIR")]
        reduced: PathBuf,
        /// Skip writing the lifted full-dimensional trajectory.
        #[arg(long)]
        no_reconstruct: bool,
    },
    /// Relative error between a full and a reconstructed trajectory.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        full: PathBuf,
        #[arg(long, value_name = "PATH")]
        reconstructed: PathBuf,
        /// Splits the errors into t <= T_basis and t > T_basis.
        #[arg(long, value_name = "T")]
        t_basis: Option<f64>,
        /// Compare only at the reconstructed trajectory's record times.
        #[arg(long)]
        align: bool,
    },
    /// Basis, reduction, reduced solve and comparison against a full solve.
    Pipeline(Common),
    /// Time the full and reduced right-hand sides.
    Bench(Common),
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Error> {
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    let out = harness::output_dir(&cfg, common.out.clone());
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("warning: could not render summary: {e}"),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SolveFull(c) => {
            let (cfg, out) = load(&c)?;
            print_json(&harness::cmd_solve_full(&cfg, &out)?);
        }
        Command::BuildBasis(c) => {
            let (cfg, out) = load(&c)?;
            let res = harness::run_greedy(&cfg, |w| {
                eprintln!(
                    "window {:>3}  t = {:<8} error = {:.3e}  R = {}{}",
                    w.index,
                    w.t_end,
                    w.projection_error,
                    w.basis_size,
                    if w.merged { "  merged" } else { "" }
                )
            })?;
            print_json(&harness::write_basis_artifacts(&cfg, &res, &out)?);
        }
        Command::Reduce { common, basis } => {
            let (cfg, out) = load(&common)?;
            print_json(&harness::cmd_reduce(&cfg, &basis, &out)?);
        }
        Command::SolveReduced {
            common,
            reduced,
            no_reconstruct,
        } => {
            let (cfg, out) = load(&common)?;
            print_json(&harness::cmd_solve_reduced(&cfg, &reduced, &out, !no_reconstruct)?);
        }
        Command::Compare {
            common,
            full,
            reconstructed,
            t_basis,
            align,
        } => {
            let out = match &common.out {
                Some(o) => o.clone(),
                None => load(&common)?.1,
            };
            print_json(&harness::cmd_compare(&full, &reconstructed, t_basis, align, &out)?);
        }
        Command::Pipeline(c) => {
            let (cfg, out) = load(&c)?;
            let run = harness::run_pipeline(&cfg, Some(&out), |w| {
                eprintln!(
                    "window {:>3}  t = {:<8} error = {:.3e}  R = {}",
                    w.index, w.t_end, w.projection_error, w.basis_size
                )
            })?;
            print_json(&run.summary);
        }
        Command::Bench(c) => {
            let (cfg, out) = load(&c)?;
            print_json(&harness::cmd_bench(&cfg, &out)?);
        }
    }
    Ok(())
}

fn configure_threads() {
    let Ok(value) = std::env::var("THREADS") else {
        return;
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: THREADS={value} ignored: {e}");
            }
        }
        _ => eprintln!("warning: THREADS={value} is not a positive integer; ignored"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Divergence { last_state, .. } = &e {
                eprintln!("last finite state has {} entries", last_state.len());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

