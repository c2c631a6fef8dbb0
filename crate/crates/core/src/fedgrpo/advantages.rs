use super::TrainerConfig;
use crate::rewards::RewardBundle;

/// Two-channel advantages of a set of rollouts that share normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageTable {
    /// `Â_{k,t}` at `[k][t − 1]` for `t = 1..=T_prefix`, after weighting and clipping.
    pub combined: Vec<Vec<f64>>,
    /// Energy channel before weighting, same layout.
    pub energy: Vec<Vec<f64>>,
    /// Force channel per rollout (broadcast over `t`).
    pub force: Vec<f64>,
    pub property: Vec<f64>,
    /// `μ_{E,t}`, `σ_{E,t}` at `[t − 1]`.
    pub energy_mean: Vec<f64>,
    pub energy_std: Vec<f64>,
    pub force_mean: f64,
    pub force_std: f64,
    pub energy_weight: f64,
    pub force_weight: f64,
    pub eta: f64,
}

impl AdvantageTable {
    pub fn rollouts(&self) -> usize {
        self.combined.len()
    }

    pub fn mean_abs(&self) -> f64 {
        let n: usize = self.combined.iter().map(Vec::len).sum();
        if n == 0 {
            return 0.0;
        }
        self.combined.iter().flatten().map(|a| a.abs()).sum::<f64>() / n as f64
    }
}

/// Mean and population standard deviation, accumulated relative to the first
/// value so identical inputs give an exact mean and zero spread.
fn moments(xs: &[f64]) -> (f64, f64) {
    let Some(&x0) = xs.first() else {
        return (0.0, 0.0);
    };
    let n = xs.len() as f64;
    let m = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn zscore(xs: &[f64], eta: f64) -> (Vec<f64>, f64, f64) {
    let (m, s) = moments(xs);
    (xs.iter().map(|x| (x - m) / (s + eta)).collect(), m, s)
}

/// Energy channel z-scored per step across rollouts, force channel z-scored
/// once and broadcast over steps, combined as `w_E Â^E + w_F Â^F (+ w_P Â^P)`
/// and clipped to `±adv_clip_max`.
///
/// All bundles must cover the same shaping window.
pub fn normalize_advantages(bundles: &[RewardBundle], cfg: &TrainerConfig) -> AdvantageTable {
    let k = bundles.len();
    let steps = bundles.first().map(|b| b.energy_rtg.len().saturating_sub(1)).unwrap_or(0);
    let eta = cfg.eta;

    let mut energy = vec![vec![0.0; steps]; k];
    let mut energy_mean = Vec::with_capacity(steps);
    let mut energy_std = Vec::with_capacity(steps);
    for t in 1..=steps {
        let g: Vec<f64> = bundles.iter().map(|b| b.energy_rtg[t]).collect();
        let (z, m, s) = zscore(&g, eta);
        for (row, v) in energy.iter_mut().zip(z) {
            row[t - 1] = v;
        }
        energy_mean.push(m);
        energy_std.push(s);
    }

    let gf: Vec<f64> = bundles.iter().map(|b| b.force_return).collect();
    let (force, force_mean, force_std) = zscore(&gf, eta);
    let gp: Vec<f64> = bundles.iter().map(|b| b.property).collect();
    let (property, _, _) = zscore(&gp, eta);

    let clip = cfg.adv_clip_max;
    let combined = (0..k)
        .map(|i| {
            energy[i]
                .iter()
                .map(|&e| {
                    let a = cfg.energy_weight * e + cfg.force_weight * force[i] + cfg.property_weight * property[i];
                    a.clamp(-clip, clip)
                })
                .collect()
        })
        .collect();

    AdvantageTable {
        combined,
        energy,
        force,
        property,
        energy_mean,
        energy_std,
        force_mean,
        force_std,
        energy_weight: cfg.energy_weight,
        force_weight: cfg.force_weight,
        eta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn bundle(rtg: Vec<f64>, force: f64) -> RewardBundle {
        RewardBundle {
            psi: vec![0.0; rtg.len()],
            energy_rtg: rtg,
            force_return: force,
            terminal_energy: 0.0,
            terminal_rms_force: 0.0,
            property: 0.0,
        }
    }

    fn random_bundles(seed: u64, k: usize, steps: usize) -> Vec<RewardBundle> {
        let mut r = rng::stream(seed, "adv");
        (0..k)
            .map(|_| {
                let mut rtg: Vec<f64> = (0..=steps).map(|_| rng::normal(&mut r)).collect();
                rtg[0] = 0.0;
                bundle(rtg, -rng::uniform(&mut r) * 3.0)
            })
            .collect()
    }

    #[test]
    fn identical_bundles_give_zero() {
        let b = vec![bundle(vec![0.0, 1.3, -0.4], -2.0); 5];
        for eta in [1e-8, 1e-3, 1.0] {
            let cfg = TrainerConfig { eta, ..Default::default() };
            let t = normalize_advantages(&b, &cfg);
            assert!(t.combined.iter().flatten().all(|&a| a == 0.0));
        }
    }

    #[test]
    fn two_point_force_zscore() {
        let b = vec![bundle(vec![0.0, 0.5], -1.0), bundle(vec![0.0, 0.5], -3.0)];
        let cfg = TrainerConfig {
            energy_weight: 0.0,
            force_weight: 1.0,
            eta: 1e-300,
            ..Default::default()
        };
        let t = normalize_advantages(&b, &cfg);
        assert_eq!(t.combined, vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let cfg = TrainerConfig::default();
        let (k, steps) = (6, 9);
        let b = random_bundles(3, k, steps);
        let t = normalize_advantages(&b, &cfg);
        // force statistics, two passes
        let mut mf = 0.0;
        for x in &b {
            mf += x.force_return;
        }
        mf /= k as f64;
        let mut vf = 0.0;
        for x in &b {
            vf += (x.force_return - mf) * (x.force_return - mf);
        }
        let sf = (vf / k as f64).sqrt();
        for step in 1..=steps {
            let mut me = 0.0;
            for x in &b {
                me += x.energy_rtg[step];
            }
            me /= k as f64;
            let mut ve = 0.0;
            for x in &b {
                ve += (x.energy_rtg[step] - me) * (x.energy_rtg[step] - me);
            }
            let se = (ve / k as f64).sqrt();
            for i in 0..k {
                let ae = (b[i].energy_rtg[step] - me) / (se + cfg.eta);
                let af = (b[i].force_return - mf) / (sf + cfg.eta);
                let want = (0.05 * ae + af).clamp(-5.0, 5.0);
                assert!((t.combined[i][step - 1] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn clipping_applies_after_combination() {
        let mut b = vec![bundle(vec![0.0, 0.0], 0.0); 30];
        b[0].force_return = 100.0;
        let t = normalize_advantages(&b, &TrainerConfig::default());
        assert!(t.force[0] > 5.0);
        assert_eq!(t.combined[0][0], 5.0);
    }

    proptest! {
        #[test]
        fn channels_are_standardized(seed in 0u64..500, k in 2usize..12, steps in 1usize..8) {
            let cfg = TrainerConfig::default();
            let b = random_bundles(seed, k, steps);
            let t = normalize_advantages(&b, &cfg);
            // the z-scored spread is exactly σ/(σ+η); it is within 1e-6 of 1 once σ ≥ 1e6·η
            let check = |col: &[f64], sigma: f64| -> Result<(), TestCaseError> {
                let (m, s) = moments(col);
                prop_assert!(m.abs() <= 1e-9);
                prop_assert!((s - sigma / (sigma + cfg.eta)).abs() <= 1e-12);
                if sigma >= 1e6 * cfg.eta {
                    prop_assert!((s - 1.0).abs() <= 1e-6);
                }
                Ok(())
            };
            for step in 0..steps {
                let col: Vec<f64> = t.energy.iter().map(|r| r[step]).collect();
                check(&col, t.energy_std[step])?;
            }
            check(&t.force, t.force_std)?;
            prop_assert!(t.combined.iter().flatten().all(|a| a.abs() <= cfg.adv_clip_max));
        }

        #[test]
        fn identical_rollouts_give_exact_zero(seed in 0u64..500, k in 2usize..16) {
            let one = random_bundles(seed, 1, 5).remove(0);
            let t = normalize_advantages(&vec![one; k], &TrainerConfig::default());
            prop_assert!(t.combined.iter().flatten().all(|&a| a == 0.0));
        }

        #[test]
        fn permutation_equivariant(seed in 0u64..500, shift in 1usize..5) {
            let cfg = TrainerConfig::default();
            let b = random_bundles(seed, 6, 4);
            let mut p = b.clone();
            p.rotate_left(shift);
            let t = normalize_advantages(&b, &cfg);
            let tp = normalize_advantages(&p, &cfg);
            for i in 0..6 {
                let j = (i + shift) % 6;
                for s in 0..4 {
                    prop_assert!((tp.combined[i][s] - t.combined[j][s]).abs() <= 1e-12);
                }
            }
        }
    }
}
