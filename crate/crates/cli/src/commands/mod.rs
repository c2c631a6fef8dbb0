mod eval;
mod posttrain;
mod pretrain;
mod report;
mod theory;

use std::fs;
use std::io::Write;
use std::path::Path;

use eqalign_core::diffusion::Checkpoint;
use eqalign_core::Error;

use crate::config::ExperimentConfig;
use crate::error::CliResult;

pub use eval::{cmd_eval, quantile, EvalOutput, EvalSummary, QUANTILE_LEVELS};
pub use posttrain::{cmd_posttrain, PosttrainOutput};
pub use pretrain::{cmd_pretrain, PretrainOutput};
pub use report::cmd_report;
pub use theory::{cmd_verify_theory, TheoryOutput};

pub(crate) fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> CliResult<()> {
    let mut buf = String::new();
    buf.push_str(header);
    buf.push('\n');
    for r in rows {
        buf.push_str(&r);
        buf.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(buf.as_bytes())?;
    Ok(())
}

/// Loads a checkpoint and checks it against the configured architecture and schedule.
pub(crate) fn load_compatible(cfg: &ExperimentConfig, path: &Path, oracle: &dyn eqalign_core::oracle::EnergyOracle) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    let want = cfg.net_config(oracle);
    if *ck.net.config() != want {
        return Err(Error::Schema(format!(
            "{}: network {:?} does not match the configured {:?}",
            path.display(),
            ck.net.config(),
            want
        ))
        .into());
    }
    let sched = cfg.schedule()?;
    if ck.schedule != sched {
        return Err(Error::Schema(format!(
            "{}: noise schedule ({} steps, {}) does not match the configuration ({} steps, {})",
            path.display(),
            ck.schedule.steps(),
            ck.schedule.kind().name(),
            sched.steps(),
            sched.kind().name()
        ))
        .into());
    }
    Ok(ck)
}
