//! Command-line entry point. Log verbosity follows `HILOMIX_LOG`
//! (default `info`).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use hilomix::config::Config;
use hilomix::pipeline::{run_stage, Stage};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Generate,
    Train,
    Stack,
    Eval,
    Report,
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Self {
        match c {
            Command::Generate => Stage::Generate,
            Command::Train => Stage::Train,
            Command::Stack => Stage::Stack,
            Command::Eval => Stage::Eval,
            Command::Report => Stage::Report,
            Command::All => Stage::All,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hilomix", version, about = "Mixer address association with dual-frequency graph learning")]
struct Args {
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("HILOMIX_LOG", "info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut cfg = match Config::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    let out = args.out.unwrap_or_else(|| cfg.out_dir.clone());
    let result = run_stage(args.command.into(), &cfg, &out).with_context(|| format!("{:?} failed", args.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
