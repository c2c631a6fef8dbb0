use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eqalign_cli::{cmd_eval, cmd_posttrain, cmd_pretrain, cmd_report, cmd_verify_theory, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "eqalign", version, about = "Energy-aligned post-training of an equivariant N-body diffusion sampler")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed of this command.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `paths.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Score-matching pretraining on oracle-relaxed data.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Group-relative post-training of a pretrained checkpoint.
    Posttrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        base_checkpoint: PathBuf,
    },
    /// Samples a checkpoint and scores the samples with the oracle.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `eval.n_samples`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Gibbs, TV-bound and lemma suites, terminal tilt fit and alignment study.
    VerifyTheory {
        #[command(flatten)]
        common: Common,
        /// Pretrained reference.
        #[arg(long)]
        base_checkpoint: PathBuf,
        /// Post-trained checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Merges the CSV outputs of a directory into `report.md`.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> CliResult<(ExperimentConfig, PathBuf)> {
    let text = std::fs::read_to_string(&common.config)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, out))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain { common } => {
            let (cfg, out) = load(&common)?;
            let r = cmd_pretrain(&cfg, common.seed.unwrap_or(cfg.seed), &out)?;
            println!("pretrained: {} (final loss {:.4})", show(&r.checkpoint), r.final_loss);
        }
        Command::Posttrain { common, base_checkpoint } => {
            let (cfg, out) = load(&common)?;
            let r = cmd_posttrain(&cfg, &base_checkpoint, common.seed.unwrap_or(cfg.seed), &out)?;
            println!("posttrained: {} ({} iterations)", show(&r.checkpoint), r.metrics.len());
        }
        Command::Eval {
            common,
            checkpoint,
            samples,
        } => {
            let (cfg, out) = load(&common)?;
            let n = samples.unwrap_or(cfg.eval.n_samples);
            let r = cmd_eval(&cfg, &checkpoint, n, common.seed.unwrap_or(cfg.eval.seed), &out)?;
            println!(
                "evaluated {n} samples: mean energy {:.6}, mean rms force {:.6} ({})",
                r.summary.mean_energy,
                r.summary.mean_rms_force,
                show(&r.summary_csv)
            );
        }
        Command::VerifyTheory {
            common,
            base_checkpoint,
            checkpoint,
        } => {
            let (cfg, out) = load(&common)?;
            let r = cmd_verify_theory(&cfg, &base_checkpoint, &checkpoint, common.seed.unwrap_or(cfg.theory.seed), &out)?;
            println!("theory checks passed ({})", show(&r.summary_csv));
        }
        Command::Report { out } => {
            println!("report: {}", show(&cmd_report(&out)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
