//! Variance-preserving diffusion on the zero center-of-mass subspace.
//!
//! States carry positions and continuous per-body features. The network
//! predicts the injected noise `ε`; the score is `−ε/σ̄_t` and the clean
//! estimate `ẑ_{0|t} = (z_t − σ̄_t ε̂)/α_t`. Sampling uses the discrete
//! ancestral kernel built from the schedule tables, with position noise
//! projected so every state stays centered.

mod checkpoint;
mod network;
mod pretrain;
mod sampler;
mod schedule;

pub use checkpoint::{Checkpoint, TrainerState};
pub use network::{EpsPrediction, NetConfig, ScoreNetwork};
pub use pretrain::{
    body_features, denoising_loss, denoising_loss_value, noised_batch, pretrain, DataConfig, DataGenerator,
    NoisedBatch, PretrainConfig,
};
pub use sampler::{
    clean_from_eps, draw_noise, forward_sample, gaussian_log_density, predict_clean, predict_clean_batch,
    prior_sample, reverse_step, reverse_step_batch, run_reverse, sample, sample_batch, score_forward, sq_dist,
    ReverseStep,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind, Transition};
