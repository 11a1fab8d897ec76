//! `hbreid` command-line interface.
//!
//! Log verbosity is read from `HBREID_LOG` (`error`, `warn`, `info`, `debug`,
//! `trace`, or any env_logger filter). The default is `warn`.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hbreid::checkpoint::Checkpoint;
use hbreid::data::load_jsonl;
use hbreid::eval::RerankParams;
use hbreid::trainer::{cmd_eval, cmd_sampler_stats, cmd_train, SamplerStatsOptions, TrainConfig};

const LOG_ENV: &str = "HBREID_LOG";

#[derive(Parser)]
#[command(name = "hbreid", version, about = "Hard-batch metric learning with adversarial scene removal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config and write checkpoint, logs and split dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Also write metrics.csv.
        #[arg(long)]
        csv: bool,
    },
    /// Score a checkpoint on the query/gallery split of a JSONL dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rerank: bool,
        #[arg(long, default_value_t = RerankParams::default().k1)]
        k1: usize,
        #[arg(long, default_value_t = RerankParams::default().k2)]
        k2: usize,
        #[arg(long = "lambda-rr", default_value_t = RerankParams::default().lambda_rr)]
        lambda_rr: f64,
        /// L2-normalize embeddings before ranking.
        #[arg(long)]
        normalize: bool,
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-batch similarity statistics of random and hard-mined plans, as CSV.
    SamplerStats {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        p: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add the batch-hard active fraction under the checkpoint's embeddings.
        #[arg(long)]
        with_embeddings: bool,
        #[arg(long, default_value_t = 0.3)]
        margin: f64,
    },
}

fn run(cli: Cli) -> hbreid::Result<()> {
    match cli.command {
        Command::Train { config, out, csv } => {
            let cfg = TrainConfig::from_json_file(&config)?;
            let outcome = cmd_train(&cfg, &out, csv)?;
            log::info!("{} steps, outputs in {}", outcome.steps, out.display());
            if let Some(last) = outcome.evals.last() {
                let _ = writeln!(std::io::stdout().lock(), "final mAP {:.4} cmc1 {:.4}", last.map, last.cmc1);
            }
        }
        Command::Eval {
            checkpoint,
            data,
            rerank,
            k1,
            k2,
            lambda_rr,
            normalize,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_jsonl(&data)?;
            let params = rerank.then_some(RerankParams { k1, k2, lambda_rr });
            if let Some(p) = &params {
                p.validate()?;
            }
            let report = cmd_eval(&ckpt, &dataset, params, normalize)?;
            let json = serde_json::to_string_pretty(&report)?;
            let _ = writeln!(std::io::stdout().lock(), "{json}");
            if let Some(path) = out {
                std::fs::write(&path, json + "\n").map_err(|e| hbreid::Error::io(&path, e))?;
            }
        }
        Command::SamplerStats {
            checkpoint,
            data,
            epochs,
            out,
            p,
            k,
            seed,
            with_embeddings,
            margin,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = load_jsonl(&data)?;
            let opts = SamplerStatsOptions {
                epochs,
                p,
                k,
                seed,
                with_embeddings,
                margin,
            };
            let csv = cmd_sampler_stats(&ckpt, &dataset, &opts)?;
            std::fs::write(&out, csv).map_err(|e| hbreid::Error::io(&out, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
