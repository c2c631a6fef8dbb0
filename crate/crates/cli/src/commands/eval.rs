use std::fs;
use std::path::{Path, PathBuf};

use eqalign_core::diffusion::sample_batch;
use eqalign_core::oracle::EnergyOracle;
use eqalign_core::rng;

use super::{load_compatible, write_csv};
use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// Sampling chunk; results do not depend on it since every sample owns its stream.
const CHUNK: usize = 128;

/// `0.05, 0.10, …, 0.95`.
pub const QUANTILE_LEVELS: [f64; 19] = {
    let mut q = [0.0; 19];
    let mut i = 0;
    while i < 19 {
        q[i] = (i + 1) as f64 * 0.05;
        i += 1;
    }
    q
};

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_energy: f64,
    pub mean_rms_force: f64,
    pub median_energy: f64,
    pub median_rms_force: f64,
    /// At [`QUANTILE_LEVELS`].
    pub energy_quantiles: Vec<f64>,
    pub rms_force_quantiles: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub samples_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub energies: Vec<f64>,
    pub rms_forces: Vec<f64>,
    pub summary: EvalSummary,
}

fn summarize(energy: &[f64], force: &[f64]) -> EvalSummary {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (se, sf) = (sorted(energy), sorted(force));
    EvalSummary {
        mean_energy: mean(energy),
        mean_rms_force: mean(force),
        median_energy: quantile(&se, 0.5),
        median_rms_force: quantile(&sf, 0.5),
        energy_quantiles: QUANTILE_LEVELS.iter().map(|&p| quantile(&se, p)).collect(),
        rms_force_quantiles: QUANTILE_LEVELS.iter().map(|&p| quantile(&sf, p)).collect(),
    }
}

/// Draws `n_samples` terminal configurations and scores them with the oracle.
///
/// Sample `i` uses the stream `eval.i` of `seed`, so two checkpoints evaluated
/// with the same seed start from the same prior draws. Files are named after
/// the checkpoint stem: `eval_<stem>_samples.csv`, `eval_<stem>_summary.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, n_samples: usize, seed: u64, out: &Path) -> CliResult<EvalOutput> {
    fs::create_dir_all(out)?;
    let oracle = cfg.oracle()?;
    let ck = load_compatible(cfg, checkpoint, &oracle)?;
    let mut energies = Vec::with_capacity(n_samples);
    let mut rms_forces = Vec::with_capacity(n_samples);
    for start in (0..n_samples).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_samples);
        let mut streams: Vec<_> = (start..end).map(|i| rng::stream(seed, &format!("eval.{i}"))).collect();
        let (zs, _) = sample_batch(&ck.net, &ck.schedule, cfg.system.n_bodies, &mut streams, false)?;
        for z in &zs {
            let (e, f) = oracle.evaluate(z)?;
            energies.push(e);
            rms_forces.push(f.rms());
        }
    }
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
    let samples_csv = out.join(format!("eval_{stem}_samples.csv"));
    write_csv(
        &samples_csv,
        "index,energy,rms_force",
        energies.iter().zip(&rms_forces).enumerate().map(|(i, (e, f))| format!("{i},{e},{f}")),
    )?;
    let summary = summarize(&energies, &rms_forces);
    let mut rows = vec![
        format!("mean,{},{}", summary.mean_energy, summary.mean_rms_force),
        format!("median,{},{}", summary.median_energy, summary.median_rms_force),
    ];
    for ((p, e), f) in QUANTILE_LEVELS.iter().zip(&summary.energy_quantiles).zip(&summary.rms_force_quantiles) {
        rows.push(format!("q{:02},{e},{f}", (p * 100.0).round() as u32));
    }
    let summary_csv = out.join(format!("eval_{stem}_summary.csv"));
    write_csv(&summary_csv, "statistic,energy,rms_force", rows)?;
    Ok(EvalOutput {
        samples_csv,
        summary_csv,
        energies,
        rms_forces,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_examples() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.0), 1.0);
        assert_eq!(quantile(&s, 1.0), 5.0);
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert!((quantile(&s, 0.05) - 1.2).abs() < 1e-15);
        assert_eq!(quantile(&[7.0], 0.3), 7.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn levels_are_five_percent_steps() {
        assert_eq!(QUANTILE_LEVELS.len(), 19);
        assert!((QUANTILE_LEVELS[0] - 0.05).abs() < 1e-15);
        assert!((QUANTILE_LEVELS[18] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn summary_of_constant_data() {
        let s = summarize(&[2.0; 4], &[0.5; 4]);
        assert_eq!(s.mean_energy, 2.0);
        assert!(s.energy_quantiles.iter().all(|&q| q == 2.0));
        assert_eq!(s.median_rms_force, 0.5);
    }
}
