use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rpfnet::{Command, CommandSpec, RunConfig};

/// Infrared and visible image fusion: training, inference and analysis.
#[derive(Parser)]
#[command(name = "rpfnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Shorthand for `--set seed=N`; applied last.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Device::Cpu, global = true)]
    device: Device,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Train a model and write per-epoch checkpoints and the loss log.
    Train,
    /// Fuse input pairs with a checkpoint.
    Fuse,
    /// Per-image and aggregate fusion metrics.
    Eval,
    /// Power spectral density analysis of fused images.
    Psd,
    /// Train and evaluate the ablation cases.
    Ablate,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Device {
    Cpu,
    Gpu,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.device == Device::Gpu {
        eprintln!("error: no GPU backend is available; use --device cpu");
        return ExitCode::from(2);
    }
    let (command, default_out) = match cli.command {
        Cmd::Train => (Command::Train, "train_out"),
        Cmd::Fuse => (Command::Fuse, "fuse_out"),
        Cmd::Eval => (Command::Eval, "eval_out"),
        Cmd::Psd => (Command::Psd, "psd_out"),
        Cmd::Ablate => (Command::Ablate, "ablate_out"),
    };
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let result = RunConfig::resolve(cli.config.as_deref(), &overrides).and_then(|config| {
        let spec = CommandSpec { command, config, out: cli.out.unwrap_or_else(|| default_out.into()) };
        rpfnet::run(&spec)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
