use super::TrainerConfig;
use crate::diffusion::{draw_noise, prior_sample, reverse_step_batch, run_reverse, NoiseSchedule, ReverseStep, ScoreNetwork};
use crate::error::Result;
use crate::nbody::Configuration;
use crate::oracle::EnergyOracle;
use crate::rewards::{bundle, shaping_potential_cached, RewardBundle, RewardConfig};
use crate::rng::{self, StreamRng};

/// One stored branched transition `z_t → z_{t−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub state: Configuration,
    pub sample: Configuration,
    pub mean_old: Configuration,
    pub eps_old: Configuration,
    /// Mean of the pretrained policy on the same state.
    pub mean_pre: Configuration,
    pub sigma: f64,
    pub log_density_old: Option<f64>,
}

/// A branched continuation from the shared prefix to `z_0`; steps ordered `t = T_prefix..=1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<Transition>,
    pub terminal: Configuration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prefix_state: Configuration,
    pub rollouts: Vec<Rollout>,
}

fn group_stream(seed: u64, iter: u64, g: usize) -> StreamRng {
    rng::stream(seed, &format!("rollout.{iter}.{g}"))
}

fn branch_stream(seed: u64, iter: u64, g: usize, k: usize) -> StreamRng {
    rng::stream(seed, &format!("rollout.{iter}.{g}.{k}"))
}

/// Continues each prefix state from `t_prefix` to 0, recording the frozen and
/// pretrained means of every step. One stream per branch.
pub fn branch(
    net_old: &ScoreNetwork,
    net_pre: &ScoreNetwork,
    schedule: &NoiseSchedule,
    starts: Vec<Configuration>,
    t_prefix: usize,
    streams: &mut [StreamRng],
) -> Result<Vec<Rollout>> {
    let (terminals, trajs) = run_reverse(net_old, schedule, starts, t_prefix, 0, streams, true)?;
    let mut out: Vec<Rollout> = Vec::with_capacity(terminals.len());
    let per_traj: Vec<Vec<ReverseStep>> = trajs;
    // pretrained means, batched per step across branches
    let mut pre: Vec<Vec<Configuration>> = vec![Vec::with_capacity(t_prefix); per_traj.len()];
    for s in 0..t_prefix {
        let states: Vec<&Configuration> = per_traj.iter().map(|tr| &tr[s].state).collect();
        let t = per_traj.first().map(|tr| tr[s].t).unwrap_or(1);
        let n = states.first().map(|z| z.n_bodies()).unwrap_or(0);
        let zeros = vec![
            Configuration::new(vec![[0.0; 3]; n], vec![0.0; n * net_pre.config().d_h], net_pre.config().d_h)?;
            states.len()
        ];
        let steps = reverse_step_batch(net_pre, schedule, &states, t, &zeros)?;
        for (p, st) in pre.iter_mut().zip(steps) {
            p.push(st.mean);
        }
    }
    for ((traj, z0), means_pre) in per_traj.into_iter().zip(terminals).zip(pre) {
        let steps = traj
            .into_iter()
            .zip(means_pre)
            .map(|(st, mean_pre)| Transition {
                t: st.t,
                state: st.state,
                sample: st.sample,
                mean_old: st.mean,
                eps_old: st.eps,
                mean_pre,
                sigma: st.noise_scale,
                log_density_old: st.log_density,
            })
            .collect();
        out.push(Rollout { steps, terminal: z0 });
    }
    Ok(out)
}

/// Shared-prefix rollouts for one iteration under the frozen policy.
pub fn rollout_groups(
    net_old: &ScoreNetwork,
    net_pre: &ScoreNetwork,
    schedule: &NoiseSchedule,
    cfg: &TrainerConfig,
    seed: u64,
    iteration: u64,
) -> Result<Vec<RolloutGroup>> {
    let d_h = net_old.config().d_h;
    let steps = schedule.steps();
    let mut prefix_streams: Vec<StreamRng> = (0..cfg.groups).map(|g| group_stream(seed, iteration, g)).collect();
    let priors = prefix_streams
        .iter_mut()
        .map(|r| prior_sample(r, cfg.n_bodies, d_h))
        .collect::<Result<Vec<_>>>()?;
    let (prefixes, _) = run_reverse(net_old, schedule, priors, steps, cfg.t_prefix, &mut prefix_streams, false)?;

    let mut starts = Vec::with_capacity(cfg.groups * cfg.group_size);
    let mut streams = Vec::with_capacity(cfg.groups * cfg.group_size);
    for (g, p) in prefixes.iter().enumerate() {
        for k in 0..cfg.group_size {
            starts.push(p.clone());
            streams.push(branch_stream(seed, iteration, g, k));
        }
    }
    let mut all = branch(net_old, net_pre, schedule, starts, cfg.t_prefix, &mut streams)?.into_iter();
    Ok(prefixes
        .into_iter()
        .map(|prefix_state| RolloutGroup {
            prefix_state,
            rollouts: all.by_ref().take(cfg.group_size).collect(),
        })
        .collect())
}

/// Reward bundle of every rollout in the group, with `Ψ` from the cached frozen-policy predictions.
pub fn compute_rewards(
    group: &RolloutGroup,
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    cfg: &RewardConfig,
) -> Result<Vec<RewardBundle>> {
    group
        .rollouts
        .iter()
        .map(|r| {
            let t_prefix = r.steps.len();
            let mut psi = vec![0.0; t_prefix + 1];
            psi[0] = shaping_potential_cached(oracle, schedule, &r.terminal, 0, &r.terminal, cfg)?;
            for st in &r.steps {
                psi[st.t] = shaping_potential_cached(oracle, schedule, &st.state, st.t, &st.eps_old, cfg)?;
            }
            bundle(oracle, psi, &r.terminal, cfg)
        })
        .collect()
}

/// Fresh noise for a state, used by tests that replay branches.
#[allow(dead_code)]
pub(crate) fn replay_noise(r: &mut StreamRng, z: &Configuration) -> Result<Configuration> {
    draw_noise(r, z.n_bodies(), z.d_h())
}
