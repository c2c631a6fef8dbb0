use std::fs;
use std::path::{Path, PathBuf};

use eqalign_core::diffusion::{Checkpoint, TrainerState};
use eqalign_core::fedgrpo::{train, IterationMetrics, METRICS_HEADER};

use super::{load_compatible, write_csv};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct PosttrainOutput {
    pub checkpoint: PathBuf,
    /// Byte copy of the base checkpoint, the KL and theory reference.
    pub reference: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics: Vec<IterationMetrics>,
}

/// Post-trains `base` against the configured oracle. Writes `posttrained.ckpt`,
/// `reference.ckpt`, `metrics.csv` and `posttrain_summary.csv`. A numeric
/// failure still writes the last good parameters before returning the error.
pub fn cmd_posttrain(cfg: &ExperimentConfig, base: &Path, seed: u64, out: &Path) -> CliResult<PosttrainOutput> {
    fs::create_dir_all(out)?;
    let oracle = cfg.oracle()?;
    let base_ck = load_compatible(cfg, base, &oracle)?;
    let reference = out.join("reference.ckpt");
    if fs::canonicalize(base).ok() != fs::canonicalize(&reference).ok() {
        fs::copy(base, &reference)?;
    }

    let result = train(
        base_ck.net.clone(),
        &base_ck.net,
        &oracle,
        &base_ck.schedule,
        &cfg.trainer,
        &cfg.reward.reward,
        seed,
        |_| {},
    )?;

    let metrics_csv = out.join("metrics.csv");
    write_csv(&metrics_csv, METRICS_HEADER, result.metrics.iter().map(IterationMetrics::csv_row))?;
    let completed = result.metrics.len();
    let failure = result.failure.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "none".into());
    write_csv(
        &out.join("posttrain_summary.csv"),
        "key,value",
        [
            format!("optimizer,{}", result.optimizer),
            format!("iterations_completed,{completed}"),
            format!("beta_eff,{}", cfg.trainer.beta_eff()),
            format!("seed,{seed}"),
            format!("failure,\"{}\"", failure.replace('"', "'")),
        ],
    )?;
    let effective = ExperimentConfig { seed, ..cfg.clone() };
    fs::write(out.join("posttrain.conf"), effective.to_text())?;

    let mut ck = Checkpoint::new(result.net, base_ck.schedule);
    ck.trainer = Some(TrainerState {
        iteration: completed as u64,
        root_seed: seed,
    });
    let checkpoint = out.join("posttrained.ckpt");
    ck.save(&checkpoint)?;
    if let Some(e) = result.failure {
        return Err(CliError::Core(e));
    }
    Ok(PosttrainOutput {
        checkpoint,
        reference,
        metrics_csv,
        metrics: result.metrics,
    })
}
