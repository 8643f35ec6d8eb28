//! `eskin`: dataset generation, encoding, training, evaluation, report
//! generation and the live websocket service.

mod commands;
mod config;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{BenchOpts, EncodeOpts, EvalOpts, FileConfig, GenOpts, ServeOpts, TrainOpts};

/// Error that maps to exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "eskin", version, about = "Event-driven e-skin simulator")]
struct Cli {
    /// TOML file with per-command defaults (`[gen]`, `[train]`, ...)
    #[arg(long, global = true, env = "ESKIN_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads [default: available cores]
    #[arg(long, global = true, env = "ESKIN_THREADS")]
    threads: Option<usize>,
    /// Print a machine-readable JSON document on stdout
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic digit dataset as `.taer` files plus a manifest
    Gen(GenOpts),
    /// Acquire and delta-encode one recording into a `.taer` file
    Encode(EncodeOpts),
    /// Train a network on a generated dataset and write a checkpoint
    Train(TrainOpts),
    /// Evaluate a checkpoint on a generated dataset
    Eval(EvalOpts),
    /// Produce scan, codec, Table I and Δ-sweep reports
    Bench(BenchOpts),
    /// Run the live websocket service
    Serve(ServeOpts),
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce(&T)) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        human(value);
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let json = cli.json;
    match cli.command {
        Command::Gen(o) => {
            let out = commands::gen(o.layered(file.gen))?;
            emit(json, &out, |o| {
                println!("wrote {} samples ({} train, {} test)", o.samples, o.train, o.test);
                println!("manifest {} sha256 {}", o.manifest.display(), o.manifest_sha256);
            })
        }
        Command::Encode(o) => {
            let out = commands::encode(o.layered(file.encode))?;
            emit(json, &out, |o| {
                println!(
                    "{} events over {} frames, sparsity {:.4}, compression {:.2}x",
                    o.stats.event_count, o.frames, o.stats.sparsity, o.stats.compression_ratio
                );
                println!("wrote {} and {}", o.output.display(), o.stats_path.display());
            })
        }
        Command::Train(o) => {
            let out = commands::train(o.layered(file.train))?;
            emit(json, &out, |o| {
                for r in &o.curve {
                    println!(
                        "epoch {:>2}  loss {:.4}  train {:.4}  test {:.4}",
                        r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy
                    );
                }
                println!(
                    "{} checkpoint {} ({} bits), test accuracy {:.4}",
                    o.network,
                    o.checkpoint.display(),
                    o.bits,
                    o.final_test_accuracy
                );
            })
        }
        Command::Eval(o) => {
            let out = commands::eval(o.layered(file.eval))?;
            emit(json, &out, |o| {
                println!(
                    "{} on {} samples: accuracy {:.4}, sparsity {:.4}, effective MACs {}",
                    o.network, o.samples, o.accuracy, o.avg_sparsity, o.effective_macs
                );
            })
        }
        Command::Bench(o) => {
            let out = commands::bench(o.layered(file.bench))?;
            emit(json, &out, |o| {
                for f in &o.files {
                    println!("wrote {}", o.out.join(f).display());
                }
            })
        }
        Command::Serve(o) => {
            let opts = o.layered(file.serve);
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(serve::serve(opts))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
