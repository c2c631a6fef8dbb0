//! Group-relative post-training with disentangled energy and force advantages.
//!
//! One iteration: roll out `N_grp` shared prefixes with the frozen policy,
//! branch each into `K` continuations, score them (dense energy shaping plus a
//! terminal force return), normalize the two channels separately inside each
//! group, then take clipped-ratio steps with a KL penalty toward the
//! pretrained policy.

mod advantages;
mod objective;
mod rollout;
mod trainer;

pub use advantages::{normalize_advantages, AdvantageTable};
pub use objective::{
    clipped_objective, log_ratio, log_ratio_from_means, surrogate_loss, surrogate_loss_value, LossStats, TransitionRef,
};
pub use rollout::{branch, compute_rewards, rollout_groups, Rollout, RolloutGroup, Transition};
pub use trainer::{train, IterationMetrics, TrainOutcome, METRICS_HEADER};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub clip_range: f64,
    pub kl_weight: f64,
    /// Rollouts per group (`K`).
    pub group_size: usize,
    /// Groups per iteration (`N_grp`).
    pub groups: usize,
    pub t_prefix: usize,
    pub energy_weight: f64,
    pub force_weight: f64,
    /// Weight of the optional radius-of-gyration property channel.
    pub property_weight: f64,
    pub eta: f64,
    pub adv_clip_max: f64,
    pub max_grad_norm: f64,
    pub epochs_per_rollout: usize,
    pub iterations: usize,
    /// Trajectories per optimizer step.
    pub micro_batch_size: usize,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_lr_ratio: f64,
    /// Normalize across all groups of an iteration instead of within each group.
    pub pool_groups: bool,
    pub n_bodies: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-6,
            clip_range: 2e-3,
            kl_weight: 0.08,
            group_size: 6,
            groups: 4,
            t_prefix: 300,
            energy_weight: 0.05,
            force_weight: 1.0,
            property_weight: 0.0,
            eta: 1e-8,
            adv_clip_max: 5.0,
            max_grad_norm: 1.0,
            epochs_per_rollout: 1,
            iterations: 200,
            micro_batch_size: 8,
            warmup_steps: 60,
            total_steps: 1500,
            min_lr_ratio: 0.3,
            pool_groups: false,
            n_bodies: 5,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if !(self.clip_range > 0.0) {
            return bad("train.clip_range", "must be positive");
        }
        if !(self.kl_weight >= 0.0) {
            return bad("train.kl_penalty_weight", "must be non-negative");
        }
        if self.group_size < 2 {
            return bad("dataloader.each_prompt_sample", "group statistics need K >= 2");
        }
        if self.groups == 0 {
            return bad("dataloader.sample_group_size", "must be at least 1");
        }
        if self.t_prefix == 0 || self.t_prefix > steps {
            return bad("reward.shaping.scheduler.skip_prefix", "T_prefix = T − skip_prefix must lie in 1..=T");
        }
        if !(self.learning_rate >= 0.0) {
            return bad("train.learning_rate", "must be non-negative");
        }
        if !(self.eta > 0.0) {
            return bad("train.eta", "must be positive");
        }
        if !(self.adv_clip_max > 0.0) {
            return bad("train.adv_clip_max", "must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("train.max_grad_norm", "must be positive");
        }
        if self.micro_batch_size == 0 {
            return bad("train.train_micro_batch_size", "must be at least 1");
        }
        if self.epochs_per_rollout == 0 {
            return bad("train.epoch_per_rollout", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return bad("train.scheduler.min_lr_ratio", "must lie in [0, 1]");
        }
        if self.n_bodies == 0 {
            return Err(Error::EmptySystem);
        }
        Ok(())
    }

    /// Effective inverse temperature `1/w_KL` of the ideal tilted target.
    pub fn beta_eff(&self) -> f64 {
        1.0 / self.kl_weight
    }
}
