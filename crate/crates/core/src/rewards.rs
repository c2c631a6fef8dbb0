//! Terminal rewards, energy shaping potentials and telescoped returns.

use crate::diffusion::{clean_from_eps, predict_clean, NoiseSchedule, ScoreNetwork};
use crate::error::{Error, Result};
use crate::nbody::Configuration;
use crate::oracle::EnergyOracle;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub force_clip_threshold: f64,
    pub energy_transform_clip: f64,
    pub gamma: f64,
    /// Adds `−rms(F(ẑ))²` to the shaping potential.
    pub force_shaping: bool,
    /// Target radius of gyration for the optional property channel.
    pub property_target: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            force_clip_threshold: 2.0,
            energy_transform_clip: 5.0,
            gamma: 1.0,
            force_shaping: false,
            property_target: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.force_clip_threshold > 0.0) {
            return Err(Error::config("reward.force_clip_threshold", "must be positive"));
        }
        if !(self.energy_transform_clip > 0.0) {
            return Err(Error::config("reward.energy_transform_clip", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("reward.shaping.gamma", "must lie in (0, 1]"));
        }
        if !self.property_target.is_finite() {
            return Err(Error::config("reward.property_target", "must be finite"));
        }
        Ok(())
    }
}

/// Rewards of one trajectory over its shaping window.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBundle {
    /// `Ψ(S_t)` for `t = 0..=T_prefix`.
    pub psi: Vec<f64>,
    /// `G_t^(E) = γ^t Ψ_0 − Ψ_t` for `t = 0..=T_prefix` (`G_0 = 0`).
    pub energy_rtg: Vec<f64>,
    /// `G^(F) = −rms(clip(F(z_0)))²`.
    pub force_return: f64,
    /// Raw oracle energy of `z_0`.
    pub terminal_energy: f64,
    /// Unclipped rms force of `z_0`.
    pub terminal_rms_force: f64,
    pub property: f64,
}

fn clamp_energy(e: f64, clip: f64) -> f64 {
    e.clamp(-clip, clip)
}

/// `(r_E, r_F) = (−clamp(E(z_0)), −rms(clip(F(z_0)))²)`.
pub fn terminal_rewards(
    oracle: &dyn EnergyOracle,
    z0: &Configuration,
    force_clip: f64,
    energy_clip: f64,
) -> Result<(f64, f64)> {
    let (e, f) = oracle.evaluate(z0)?;
    let fc = f.clipped(force_clip)?;
    Ok((-clamp_energy(e, energy_clip), -fc.rms().powi(2)))
}

/// `Ψ` of a clean geometry estimate under the configured potential.
pub fn psi_of_clean(oracle: &dyn EnergyOracle, clean: &Configuration, cfg: &RewardConfig) -> Result<f64> {
    let (e, f) = oracle.evaluate(clean)?;
    let mut psi = -clamp_energy(e, cfg.energy_transform_clip);
    if cfg.force_shaping {
        psi -= f.clipped(cfg.force_clip_threshold)?.rms().powi(2);
    }
    Ok(psi)
}

/// `Ψ(S_t) = −clamp(E(ẑ_{0|t}))` with `ẑ` from the frozen network; `ẑ_{0|0} = z_0`.
pub fn shaping_potential(
    oracle: &dyn EnergyOracle,
    net_old: &ScoreNetwork,
    schedule: &NoiseSchedule,
    z_t: &Configuration,
    t: usize,
    energy_clip: f64,
) -> Result<f64> {
    let cfg = RewardConfig {
        energy_transform_clip: energy_clip,
        ..Default::default()
    };
    if t == 0 {
        return psi_of_clean(oracle, z_t, &cfg);
    }
    psi_of_clean(oracle, &predict_clean(net_old, schedule, z_t, t)?, &cfg)
}

/// Same as [`shaping_potential`] with a cached noise prediction `ε̂(z_t, t)`.
pub fn shaping_potential_cached(
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    z_t: &Configuration,
    t: usize,
    eps: &Configuration,
    cfg: &RewardConfig,
) -> Result<f64> {
    if t == 0 {
        return psi_of_clean(oracle, z_t, cfg);
    }
    psi_of_clean(oracle, &clean_from_eps(schedule, z_t, t, eps)?, cfg)
}

/// `G_t = γ^t Ψ_0 − Ψ_t` for every `t` in the table.
pub fn shaped_returns(psi: &[f64], gamma: f64) -> Vec<f64> {
    let Some(&psi0) = psi.first() else {
        return Vec::new();
    };
    psi.iter()
        .enumerate()
        .map(|(t, &p)| gamma.powi(t as i32) * psi0 - p)
        .collect()
}

/// Radius of gyration `sqrt(mean_i |x_i − x̄|²)`.
pub fn radius_of_gyration(z: &Configuration) -> f64 {
    let c = z.com();
    let n = z.n_bodies().max(1) as f64;
    let s: f64 = z
        .positions()
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - c[k]).powi(2)).sum::<f64>())
        .sum();
    (s / n).sqrt()
}

/// `−|R_g(z_0) − target|`.
pub fn property_reward(z0: &Configuration, target: f64) -> f64 {
    -(radius_of_gyration(z0) - target).abs()
}

/// Reward bundle from `Ψ` values and the terminal state.
pub fn bundle(oracle: &dyn EnergyOracle, psi: Vec<f64>, z0: &Configuration, cfg: &RewardConfig) -> Result<RewardBundle> {
    let (e, f) = oracle.evaluate(z0)?;
    let force_return = -f.clipped(cfg.force_clip_threshold)?.rms().powi(2);
    Ok(RewardBundle {
        energy_rtg: shaped_returns(&psi, cfg.gamma),
        psi,
        force_return,
        terminal_energy: e,
        terminal_rms_force: f.rms(),
        property: property_reward(z0, cfg.property_target),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbody::RigidMotion;
    use crate::oracle::{HarmonicChain, LennardJones};
    use crate::rng;
    use proptest::prelude::*;

    fn dimer(sep: f64) -> Configuration {
        Configuration::from_positions(vec![[0.0; 3], [sep, 0.0, 0.0]])
    }

    #[test]
    fn terminal_reward_examples() {
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        assert_eq!(terminal_rewards(&o, &dimer(1.0), 2.0, 5.0).unwrap(), (0.0, 0.0));
        let (re, rf) = terminal_rewards(&o, &dimer(2.0), 2.0, 5.0).unwrap();
        assert!((re + 0.5).abs() < 1e-15);
        assert!((rf + 1.0).abs() < 1e-15);
    }

    #[test]
    fn terminal_rewards_match_recomputation() {
        let o = LennardJones::new(1.0, 1.0, 0.3).unwrap();
        let mut r = rng::stream(1, "rw");
        for _ in 0..20 {
            let pos = (0..4).map(|_| [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)]).collect();
            let z = Configuration::from_positions(pos);
            let (e, f) = o.evaluate(&z).unwrap();
            let mut ss = 0.0;
            for row in f.rows() {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s = if n > 2.0 { 2.0 / n } else { 1.0 };
                ss += row.iter().map(|v| (v * s).powi(2)).sum::<f64>();
            }
            let (re, rf) = terminal_rewards(&o, &z, 2.0, 5.0).unwrap();
            assert_eq!(re, -e.clamp(-5.0, 5.0));
            assert!((rf + ss / 4.0).abs() <= 1e-12 * ss.max(1.0));
        }
    }

    #[test]
    fn shaped_return_examples() {
        assert!(shaped_returns(&[0.7; 6], 1.0).iter().all(|&g| g == 0.0));
        let psi = [-0.3, -1.0, 0.5, 2.0];
        let g = shaped_returns(&psi, 1.0);
        for t in 0..4 {
            assert_eq!(g[t], psi[0] - psi[t]);
        }
    }

    #[test]
    fn shaping_at_time_zero_is_terminal_energy() {
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let net = ScoreNetwork::new(Default::default(), 0).unwrap();
        let s = crate::diffusion::make_schedule(10, crate::diffusion::ScheduleKind::Polynomial2, 1e-5).unwrap();
        let z = dimer(1.7).projected().unwrap();
        let z = Configuration::new(z.positions().to_vec(), vec![0.0; 4], 2).unwrap();
        let psi = shaping_potential(&o, &net, &s, &z, 0, 5.0).unwrap();
        assert_eq!(psi, -o.energy(&z).unwrap());
    }

    #[test]
    fn property_examples() {
        let one = Configuration::from_positions(vec![[0.0; 3]]);
        assert_eq!(property_reward(&one, 0.0), 0.0);
        let z = Configuration::from_positions(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        assert_eq!(property_reward(&z, 1.0), 0.0);
        assert!((property_reward(&z, 3.0) + 2.0).abs() < 1e-15);
    }

    /// `Σ_{u=1..t} γ^{t−u} (γ Ψ_{u−1} − Ψ_u)` by explicit loops.
    fn per_step_sum(psi: &[f64], gamma: f64) -> Vec<f64> {
        (0..psi.len())
            .map(|t| {
                let mut acc = 0.0;
                for u in 1..=t {
                    acc += gamma.powi((t - u) as i32) * (gamma * psi[u - 1] - psi[u]);
                }
                acc
            })
            .collect()
    }

    proptest! {
        #[test]
        fn telescoping(psi in prop::collection::vec(-5.0f64..5.0, 1..40), gi in 0usize..3) {
            let gamma = [0.9, 0.99, 1.0][gi];
            let g = shaped_returns(&psi, gamma);
            let direct = per_step_sum(&psi, gamma);
            for (a, b) in g.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn rewards_are_rigid_motion_invariant(seed in 0u64..1000) {
            let o = LennardJones::new(1.0, 1.0, 0.3).unwrap();
            let mut r = rng::stream(seed, "inv");
            let pos = (0..4).map(|_| [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)]).collect();
            let z = Configuration::from_positions(pos);
            let g = RigidMotion::random(&mut r, true, 3.0);
            let a = terminal_rewards(&o, &z, 2.0, 5.0).unwrap();
            let b = terminal_rewards(&o, &z.apply(&g), 2.0, 5.0).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-9 && (a.1 - b.1).abs() <= 1e-9);
            prop_assert!((property_reward(&z, 1.0) - property_reward(&z.apply(&g), 1.0)).abs() <= 1e-9);
        }

        #[test]
        fn clamp_is_monotone(sep in 0.2f64..4.0, c1 in 0.1f64..10.0, dc in 0.0f64..10.0) {
            let o = HarmonicChain::new(3.0, 1.0).unwrap();
            let z = dimer(sep);
            let (a, _) = terminal_rewards(&o, &z, 2.0, c1).unwrap();
            let (b, _) = terminal_rewards(&o, &z, 2.0, c1 + dc).unwrap();
            prop_assert!(a.signum() == b.signum() || a == 0.0);
            prop_assert!(b.abs() >= a.abs());
        }
    }
}
