use std::fs;
use std::path::{Path, PathBuf};

use eqalign_core::diffusion::{pretrain, Checkpoint, DataGenerator, ScoreNetwork, TrainerState};
use eqalign_core::rng;

use super::write_csv;
use crate::config::ExperimentConfig;
use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    /// Mean loss over the last 50 steps (or fewer).
    pub final_loss: f64,
}

/// Denoising score matching on oracle-relaxed data. Writes `pretrained.ckpt`,
/// `pretrain_loss.csv` and the effective configuration.
pub fn cmd_pretrain(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<PretrainOutput> {
    fs::create_dir_all(out)?;
    let oracle = cfg.oracle()?;
    let schedule = cfg.schedule()?;
    let mut net = ScoreNetwork::new(cfg.net_config(&oracle), seed)?;
    let data = DataGenerator::new(&oracle, &cfg.pretrain.data, &mut rng::stream(seed, "data"))?;
    let curve = pretrain(&mut net, &data, &schedule, &cfg.pretrain.optim, &mut rng::stream(seed, "pretrain"))?;

    let mut ck = Checkpoint::new(net, schedule);
    ck.trainer = Some(TrainerState {
        iteration: 0,
        root_seed: seed,
    });
    let checkpoint = out.join("pretrained.ckpt");
    ck.save(&checkpoint)?;
    let loss_csv = out.join("pretrain_loss.csv");
    write_csv(&loss_csv, "step,loss", curve.iter().enumerate().map(|(i, l)| format!("{i},{l}")))?;
    let effective = ExperimentConfig { seed, ..cfg.clone() };
    fs::write(out.join("pretrain.conf"), effective.to_text())?;

    let tail = &curve[curve.len().saturating_sub(50)..];
    Ok(PretrainOutput {
        checkpoint,
        loss_csv,
        final_loss: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
    })
}
