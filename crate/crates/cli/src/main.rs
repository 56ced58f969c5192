use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use da_transformer::harness::{self, AblationAxis, Overrides};

#[derive(Parser)]
#[command(
    name = "datf",
    version,
    about = "Distance-aware transformer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Mapping,
    Adjustment,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes report.json, metrics.csv and checkpoint.datf.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dev/test splits of a config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep mapping functions or adjustment strategies over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every analytic gradient with central finite differences.
    Gradcheck,
    /// Dump the learned distance parameters of a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write per-head attention heatmaps for one token sequence.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Token ids, comma or space separated.
        #[arg(long)]
        tokens: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Time full forward passes, vanilla against distance-aware.
    Bench {
        /// Sequence lengths.
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128, 256])]
        n: Vec<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    harness::configure_threads()?;
    match cli.command {
        Command::Train { config, seed, out } => {
            let report = harness::cmd_train(&config, &Overrides { seed, out })?;
            println!(
                "run {}: {} epochs, test accuracy {:.4}, macro-F {:.4}",
                report.run_id,
                report.epochs_completed,
                report.final_test.accuracy,
                report.final_test.macro_f
            );
        }
        Command::Eval {
            config,
            checkpoint,
            seed,
        } => {
            let summary = harness::cmd_eval(&config, &checkpoint, &Overrides { seed, out: None })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Ablate {
            config,
            axis,
            seeds,
            seed,
            out,
        } => {
            let axis = match axis {
                Axis::Mapping => AblationAxis::Mapping,
                Axis::Adjustment => AblationAxis::Adjustment,
            };
            let report = harness::cmd_ablate(&config, axis, seeds, &Overrides { seed, out })?;
            print!("{}", harness::ablation_csv(&report.rows));
            let failed: usize = report.rows.iter().map(|r| r.failed).sum();
            if failed > 0 {
                eprintln!("{failed} cell(s) failed");
                return Ok(false);
            }
        }
        Command::Gradcheck => {
            let report = harness::cmd_gradcheck()?;
            for line in &report.lines {
                println!(
                    "{} {:<40} {:.3e}",
                    if line.passed { "ok  " } else { "FAIL" },
                    line.op,
                    line.max_rel_error
                );
            }
            return Ok(report.passed());
        }
        Command::Inspect { checkpoint, out } => {
            let dump = harness::cmd_inspect(&checkpoint, &out)?;
            for layer in &dump {
                println!(
                    "layer {}: {} heads with w > 0, {} with w < 0",
                    layer.layer, layer.positive_w, layer.negative_w
                );
                for h in &layer.heads {
                    println!("  head {:>2}  w {:+.4}  v {:+.4}", h.head, h.w, h.v);
                }
            }
        }
        Command::ExportAttention {
            checkpoint,
            tokens,
            layer,
            out,
        } => {
            let tokens = harness::parse_tokens(&tokens)?;
            let summary = harness::cmd_export_attention(&checkpoint, &tokens, layer, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Bench { n, out } => {
            let rows = harness::cmd_bench(&n, &out)?;
            print!("{}", harness::bench_csv(&rows));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()).context("datf") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
