use std::path::PathBuf;
use std::process::ExitCode;

use awcol_core::harness::{
    load_pretrained, run_ablation_sweep, run_campaign, run_gen_data, run_pretrain, RunConfig,
};
use awcol_core::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

/// Adaptive weighted co-learning for cross-domain few-shot classification.
#[derive(Parser)]
#[command(name = "awcol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain both prototypical models on the source domain.
    Pretrain(Common),
    /// Fine-tune and evaluate on target episodes.
    Eval(Common),
    /// Run every configured ablation variant on shared episodes.
    Ablate(Common),
    /// Write a synthetic embedding file.
    GenData(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Additional `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Pretrain(c) => {
            let cfg = c.load()?;
            let out = run_pretrain(&cfg)?;
            println!(
                "held-out source accuracy: model 1 {:.4}, model 2 {:.4}",
                out.heldout_accuracy[0], out.heldout_accuracy[1]
            );
            println!("checkpoints written to {}", cfg.checkpoint_dir().display());
            Ok(0)
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let [m1, m2] = load_pretrained(&cfg)?;
            let report = run_campaign(&cfg, &m1, &m2)?;
            print!("{}", report.summary_text());
            Ok(if report.is_partial() { EXIT_PARTIAL } else { 0 })
        }
        Command::Ablate(c) => {
            let cfg = c.load()?;
            let [m1, m2] = load_pretrained(&cfg)?;
            let table = run_ablation_sweep(&cfg, &m1, &m2)?;
            print!("{}", table.summary_text());
            Ok(if table.is_partial() { EXIT_PARTIAL } else { 0 })
        }
        Command::GenData(c) => {
            let cfg = c.load()?;
            let path = run_gen_data(&cfg)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}
