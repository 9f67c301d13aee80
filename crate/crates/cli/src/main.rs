//! `hvdecode` command-line driver.
//!
//! Every verb exits 0 on success. Failures print one JSON object
//! `{"error": {"kind": ..., "message": ...}}` on stderr and exit 1
//! (usage errors exit 2 with the same shape).

mod commands;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

/// Environment variable naming the embedding cache root.
pub const CACHE_ENV: &str = "HVDECODE_CACHE";

#[derive(Debug, Parser)]
#[command(name = "hvdecode", version, about = "Hierarchical EEG-to-image decoding pipeline")]
struct Cli {
    /// Worker threads for data-parallel stages. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Log verbosity (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split images into mask, foreground and raw views.
    Decompose(DecomposeArgs),
    /// Embed decomposed triplets with a frozen provider, through the cache.
    Embed(EmbedArgs),
    /// Write a synthetic dataset in the standard layout.
    Synth(SynthArgs),
    /// Train one model and evaluate it on its test subject.
    Train(TrainArgs),
    /// Zero-shot retrieval report for a checkpoint.
    Eval(EvalArgs),
    /// View-subset × cross-attention ablation over repeated seeds.
    Ablate(AblateArgs),
    /// Representational similarity matrix of test features.
    Rsm(RsmArgs),
    /// Grid over integration depth and head count.
    SweepAttn(SweepArgs),
    /// Merge report files into CSV or JSON.
    Report(ReportArgs),
    /// Parameter and FLOP accounting for a model configuration.
    Accounting(AccountingArgs),
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        log::warn!("thread pool already initialised: {e}");
    }

    let res = match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Embed(a) => embed(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Rsm(a) => rsm(a),
        Command::SweepAttn(a) => sweep_attn(a),
        Command::Report(a) => report(a),
        Command::Accounting(a) => accounting(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<hvdecode::Error>().map(|x| x.kind()).unwrap_or("cli");
            eprintln!("{}", error_json(kind, &format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}
