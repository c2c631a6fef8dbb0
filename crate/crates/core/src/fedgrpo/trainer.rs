use super::advantages::{normalize_advantages, AdvantageTable};
use super::objective::{surrogate_loss, TransitionRef};
use super::rollout::{compute_rewards, rollout_groups, Rollout};
use super::TrainerConfig;
use crate::diffusion::{NoiseSchedule, ScoreNetwork};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam, CosineSchedule};
use crate::oracle::EnergyOracle;
use crate::rewards::{RewardBundle, RewardConfig};

pub const METRICS_HEADER: &str = "iter,mean_E,mean_Frms,mean_absA,kl_hat,clip_frac,lr";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    pub mean_energy: f64,
    pub mean_rms_force: f64,
    pub mean_abs_advantage: f64,
    pub kl_hat: f64,
    pub clip_frac: f64,
    pub lr: f64,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iter,
            self.mean_energy,
            self.mean_rms_force,
            self.mean_abs_advantage,
            self.kl_hat,
            self.clip_frac,
            self.lr
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Last parameters that completed an iteration without numeric failure.
    pub net: ScoreNetwork,
    pub metrics: Vec<IterationMetrics>,
    pub failure: Option<Error>,
    pub optimizer: String,
}

fn group_rewards(
    groups: &[super::RolloutGroup],
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    reward_cfg: &RewardConfig,
) -> Result<Vec<Vec<RewardBundle>>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .iter()
            .map(|g| s.spawn(move || compute_rewards(g, oracle, schedule, reward_cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("reward worker panicked"))
            .collect()
    })
}

fn tables(bundles: &[Vec<RewardBundle>], cfg: &TrainerConfig) -> Vec<AdvantageTable> {
    if cfg.pool_groups {
        let all: Vec<RewardBundle> = bundles.iter().flatten().cloned().collect();
        vec![normalize_advantages(&all, cfg)]
    } else {
        bundles.iter().map(|b| normalize_advantages(b, cfg)).collect()
    }
}

/// One post-training iteration on `net` in place. Returns its metrics.
#[allow(clippy::too_many_arguments)]
fn iteration(
    net: &mut ScoreNetwork,
    net_pre: &ScoreNetwork,
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    cfg: &TrainerConfig,
    reward_cfg: &RewardConfig,
    seed: u64,
    iter: usize,
    opt: &mut Adam,
    lr_sched: &CosineSchedule,
    step: &mut usize,
) -> Result<IterationMetrics> {
    let net_old = net.clone();
    let groups = rollout_groups(&net_old, net_pre, schedule, cfg, seed, iter as u64)?;
    let bundles = group_rewards(&groups, oracle, schedule, reward_cfg)?;
    let tabs = tables(&bundles, cfg);

    let rollouts: Vec<&Rollout> = groups.iter().flat_map(|g| &g.rollouts).collect();
    let adv_rows: Vec<&Vec<f64>> = tabs.iter().flat_map(|t| &t.combined).collect();
    let flat: Vec<&RewardBundle> = bundles.iter().flatten().collect();
    let n = flat.len() as f64;
    let mean_energy = flat.iter().map(|b| b.terminal_energy).sum::<f64>() / n;
    let mean_rms_force = flat.iter().map(|b| b.terminal_rms_force).sum::<f64>() / n;
    let cells: usize = tabs.iter().map(|t| t.combined.iter().map(Vec::len).sum::<usize>()).sum();
    let mean_abs_advantage = tabs.iter().map(|t| t.mean_abs() * t.combined.iter().map(Vec::len).sum::<usize>() as f64).sum::<f64>()
        / cells.max(1) as f64;

    let mut kl_sum = 0.0;
    let mut clip_sum = 0.0;
    let mut weight = 0usize;
    let mut lr = lr_sched.lr(*step);
    for _ in 0..cfg.epochs_per_rollout {
        for chunk in (0..rollouts.len()).collect::<Vec<_>>().chunks(cfg.micro_batch_size) {
            let items: Vec<TransitionRef> = chunk
                .iter()
                .flat_map(|&k| {
                    let row = adv_rows[k];
                    rollouts[k].steps.iter().map(move |st| TransitionRef {
                        step: st,
                        advantage: row[st.t - 1],
                    })
                })
                .collect();
            let (stats, mut grads) = surrogate_loss(net, schedule, &items, chunk.len(), cfg.clip_range, cfg.kl_weight)?;
            if !stats.loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch: iter });
            }
            kl_sum += stats.kl_hat * stats.active as f64;
            clip_sum += stats.clip_frac * stats.active as f64;
            weight += stats.active;
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            lr = lr_sched.lr(*step);
            opt.update(net.params_mut(), &grads, lr);
            *step += 1;
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch: iter });
            }
        }
    }
    let w = weight.max(1) as f64;
    Ok(IterationMetrics {
        iter,
        mean_energy,
        mean_rms_force,
        mean_abs_advantage,
        kl_hat: kl_sum / w,
        clip_frac: clip_sum / w,
        lr,
    })
}

/// Post-trains `net` against `oracle`.
///
/// `net_pre` is the frozen pretrained reference of the KL term. Rollout noise
/// is keyed by `(seed, iteration, group, branch)`, so a run is reproducible
/// regardless of thread scheduling. On a numeric failure training stops and
/// the parameters from the end of the previous iteration are returned.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut net: ScoreNetwork,
    net_pre: &ScoreNetwork,
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    cfg: &TrainerConfig,
    reward_cfg: &RewardConfig,
    seed: u64,
    mut on_iteration: impl FnMut(&IterationMetrics),
) -> Result<TrainOutcome> {
    cfg.validate(schedule.steps())?;
    reward_cfg.validate()?;
    if !net.same_architecture(net_pre) {
        return Err(Error::contract("policy and reference networks differ in architecture"));
    }
    let mut opt = Adam::momentum_free();
    let lr_sched = CosineSchedule {
        base_lr: cfg.learning_rate,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.total_steps,
        min_lr_ratio: cfg.min_lr_ratio,
    };
    let mut step = 0;
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut failure = None;
    for iter in 0..cfg.iterations {
        let good = net.clone();
        match iteration(
            &mut net, net_pre, oracle, schedule, cfg, reward_cfg, seed, iter, &mut opt, &lr_sched, &mut step,
        ) {
            Ok(m) => {
                on_iteration(&m);
                metrics.push(m);
            }
            Err(e) if e.is_numeric() => {
                net = good;
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(TrainOutcome {
        net,
        metrics,
        failure,
        optimizer: opt.describe(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, NetConfig, ScheduleKind};
    use crate::oracle::HarmonicChain;
    use crate::rng;

    fn net() -> ScoreNetwork {
        let mut n = ScoreNetwork::new(
            NetConfig {
                layers: 2,
                hidden: 8,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let mut r = rng::stream(2, "bump");
        for p in n.params_mut() {
            for v in p.data_mut() {
                *v += 0.05 * rng::normal(&mut r);
            }
        }
        n
    }

    fn small_cfg() -> TrainerConfig {
        TrainerConfig {
            t_prefix: 4,
            group_size: 3,
            groups: 2,
            n_bodies: 4,
            iterations: 3,
            micro_batch_size: 2,
            warmup_steps: 2,
            total_steps: 20,
            learning_rate: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let n = net();
        let cfg = TrainerConfig {
            learning_rate: 0.0,
            ..small_cfg()
        };
        let out = train(n.clone(), &n, &o, &s, &cfg, &RewardConfig::default(), 1, |_| {}).unwrap();
        assert_eq!(out.net.params(), n.params());
        assert_eq!(out.metrics.len(), 3);
        for m in &out.metrics {
            assert_eq!(m.kl_hat, 0.0);
            assert_eq!(m.clip_frac, 0.0);
        }
        assert!(out.optimizer.contains("beta1=0"));
    }

    #[test]
    fn zero_weights_at_reference_leave_parameters() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let n = net();
        let cfg = TrainerConfig {
            energy_weight: 0.0,
            force_weight: 0.0,
            ..small_cfg()
        };
        let out = train(n.clone(), &n, &o, &s, &cfg, &RewardConfig::default(), 1, |_| {}).unwrap();
        assert_eq!(out.net.params(), n.params());
        assert!(out.metrics.iter().all(|m| m.mean_abs_advantage == 0.0));
    }

    #[test]
    fn training_moves_parameters_reproducibly() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let n = net();
        let mut seen = 0;
        let a = train(n.clone(), &n, &o, &s, &small_cfg(), &RewardConfig::default(), 4, |_| seen += 1).unwrap();
        let b = train(n.clone(), &n, &o, &s, &small_cfg(), &RewardConfig::default(), 4, |_| {}).unwrap();
        assert_eq!(seen, 3);
        assert_ne!(a.net.params(), n.params());
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics[2].kl_hat > 0.0);
        assert!(a.failure.is_none());
    }

    #[test]
    fn divergence_keeps_last_good_parameters() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let n = net();
        let cfg = TrainerConfig {
            learning_rate: 1e200,
            warmup_steps: 0,
            ..small_cfg()
        };
        let out = train(n.clone(), &n, &o, &s, &cfg, &RewardConfig::default(), 1, |_| {}).unwrap();
        assert!(out.failure.as_ref().is_some_and(|e| e.is_numeric()));
        assert!(out.net.params().iter().all(|p| p.is_finite()));
        assert!(out.metrics.len() < 3);
    }

    #[test]
    fn pooled_and_grouped_normalization_differ() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let n = net();
        let cfg = small_cfg();
        let groups = rollout_groups(&n, &n, &s, &cfg, 1, 0).unwrap();
        let rc = RewardConfig {
            energy_transform_clip: 1e9,
            ..Default::default()
        };
        let bundles = group_rewards(&groups, &o, &s, &rc).unwrap();
        let within = tables(&bundles, &cfg);
        let pooled = tables(&bundles, &TrainerConfig { pool_groups: true, ..cfg });
        assert_eq!(within.len(), 2);
        assert_eq!(pooled.len(), 1);
        assert_eq!(pooled[0].rollouts(), 6);
        let a: Vec<Vec<f64>> = within.iter().flat_map(|t| t.energy.clone()).collect();
        assert_ne!(a, pooled[0].energy);
    }
}
