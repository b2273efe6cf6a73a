use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mavg::harness::{compare_grid, parse_config, run, CachedRunner, GridOptions};
use mavg::metrics::{compute_speedup, metrics_to_csv, read_metrics};
use mavg::Result;

#[derive(Parser)]
#[command(
    name = "mavg",
    version,
    about = "Data-parallel MLP training with model averaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model; any config key can be overridden with `--key value`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the resolved configuration to stderr before training.
        #[arg(long)]
        echo_config: bool,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Vary one key over a list of values and summarise final accuracy.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Skip the serial baselines used for speedup.
        #[arg(long)]
        no_speedup: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Speedup and scaling factor of a parallel run over a serial one.
    Speedup {
        #[arg(long)]
        serial: PathBuf,
        #[arg(long)]
        parallel: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            echo_config,
            overrides,
        } => {
            let cfg = parse_config(config.as_deref(), &overrides)?;
            if echo_config {
                eprint!("{}", cfg.to_config_text());
            }
            let report = run(&cfg)?;
            if cfg.metrics_out.is_none() {
                print!("{}", metrics_to_csv(&report.metrics));
            }
            eprintln!(
                "final cv_accuracy {:.4} after {} epochs (pretrain {:.2}s)",
                report.final_cv_accuracy(),
                report.metrics.len(),
                report.pretrain_seconds
            );
        }
        Command::Grid {
            config,
            axis,
            values,
            seeds,
            no_speedup,
            out,
            overrides,
        } => {
            let base = parse_config(config.as_deref(), &overrides)?;
            let opts = GridOptions {
                seeds,
                speedup: !no_speedup,
            };
            let summary = compare_grid(&base, &axis, &values, opts, &mut CachedRunner::new())?;
            let csv = summary.to_csv();
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(|e| mavg::Error::io(&path, e))?,
                None => print!("{csv}"),
            }
        }
        Command::Speedup { serial, parallel } => {
            let s = compute_speedup(&read_metrics(serial)?, &read_metrics(parallel)?)?;
            println!("speedup,scaling");
            println!("{:?},{:?}", s.speedup, s.scaling);
        }
    }
    Ok(())
}
