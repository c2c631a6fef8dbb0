use crate::diffusion::{clean_from_eps, sample_batch, NoiseSchedule, ScoreNetwork};
use crate::error::{Error, Result};
use crate::nbody::{project_com, Configuration, ForceField};
use crate::oracle::EnergyOracle;
use crate::rng;

/// `F_alc = s_post^(x)(z_t, t) − s_pre^(x)(z_t, t)`, CoM-projected.
pub fn alchemical_force(
    net_post: &ScoreNetwork,
    net_pre: &ScoreNetwork,
    schedule: &NoiseSchedule,
    z_t: &Configuration,
    t: usize,
) -> Result<ForceField> {
    Ok(alchemical_batch(net_post, net_pre, schedule, &[z_t], &[t])?.remove(0).0)
}

/// Alchemical forces plus the reference noise predictions, batched.
fn alchemical_batch(
    net_post: &ScoreNetwork,
    net_pre: &ScoreNetwork,
    schedule: &NoiseSchedule,
    zs: &[&Configuration],
    ts: &[usize],
) -> Result<Vec<(ForceField, Configuration)>> {
    if !net_post.same_architecture(net_pre) {
        return Err(Error::contract("alchemical force needs networks of the same architecture"));
    }
    if ts.iter().any(|&t| t == 0 || t > schedule.steps()) {
        return Err(Error::contract(format!("score needs 1 <= t <= {}", schedule.steps())));
    }
    let frac: Vec<f64> = ts.iter().map(|&t| t as f64 / schedule.steps() as f64).collect();
    let post = net_post.predict_eps(zs, &frac)?;
    let pre = net_pre.predict_eps(zs, &frac)?;
    post.into_iter()
        .zip(pre)
        .zip(ts.iter().zip(zs))
        .map(|((a, b), (&t, z))| {
            let s = -1.0 / schedule.sigma(t);
            let diff: Vec<_> = a
                .x
                .iter()
                .zip(&b.x)
                .map(|(p, q)| [s * (p[0] - q[0]), s * (p[1] - q[1]), s * (p[2] - q[2])])
                .collect();
            let eps_pre = Configuration::new(b.x, b.h, z.d_h())?;
            Ok((ForceField(project_com(&diff)?), eps_pre))
        })
        .collect()
}

/// Flattened cosine `⟨a, b⟩ / (‖a‖ ‖b‖)`; `None` when either field vanishes.
pub fn cosine_alignment(a: &ForceField, b: &ForceField) -> Result<Option<f64>> {
    if a.n_bodies() != b.n_bodies() {
        return Err(Error::contract("force fields differ in body count"));
    }
    let na = a.frobenius_sq().sqrt();
    let nb = b.frobenius_sq().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some((a.dot(b) / (na * nb)).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    /// `(t, cos)` per sampled state with a defined cosine.
    pub cosines: Vec<(usize, f64)>,
    pub undefined: usize,
    pub median_cos: f64,
    pub median_abs_cos: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Compares `F_alc` with the oracle force at the reference clean estimate
/// `ẑ_{0|t}` over states `t = 1..=t_window` of trajectories from `net_post`.
pub fn alignment_study(
    net_post: &ScoreNetwork,
    net_pre: &ScoreNetwork,
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    n_bodies: usize,
    n_states: usize,
    t_window: usize,
    seed: u64,
) -> Result<AlignmentReport> {
    if t_window == 0 || t_window > schedule.steps() {
        return Err(Error::contract("t_window must lie in 1..=T"));
    }
    let n_traj = n_states.div_ceil(t_window);
    let mut streams: Vec<_> = (0..n_traj).map(|i| rng::stream(seed, &format!("alignment.{i}"))).collect();
    let (_, trajs) = sample_batch(net_post, schedule, n_bodies, &mut streams, true)?;
    let states: Vec<(&Configuration, usize)> = trajs
        .iter()
        .flat_map(|tr| tr.iter().filter(|s| s.t <= t_window).map(|s| (&s.state, s.t)))
        .take(n_states)
        .collect();
    let zs: Vec<&Configuration> = states.iter().map(|s| s.0).collect();
    let ts: Vec<usize> = states.iter().map(|s| s.1).collect();
    let fields = alchemical_batch(net_post, net_pre, schedule, &zs, &ts)?;
    let mut cosines = Vec::with_capacity(states.len());
    let mut undefined = 0;
    for ((z, t), (f_alc, eps_pre)) in states.iter().zip(fields) {
        let clean = clean_from_eps(schedule, z, *t, &eps_pre)?;
        let (_, f_phi) = oracle.evaluate(&clean)?;
        match cosine_alignment(&f_alc, &f_phi)? {
            Some(c) => cosines.push((*t, c)),
            None => undefined += 1,
        }
    }
    Ok(AlignmentReport {
        median_cos: median(cosines.iter().map(|c| c.1).collect()),
        median_abs_cos: median(cosines.iter().map(|c| c.1.abs()).collect()),
        cosines,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{draw_noise, make_schedule, NetConfig, ScheduleKind};
    use crate::nbody::RigidMotion;
    use crate::oracle::HarmonicChain;

    fn net(seed: u64) -> ScoreNetwork {
        let mut n = ScoreNetwork::new(
            NetConfig {
                layers: 2,
                hidden: 8,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let mut r = rng::stream(seed, "bump");
        for p in n.params_mut() {
            for v in p.data_mut() {
                *v += 0.05 * rng::normal(&mut r);
            }
        }
        n
    }

    #[test]
    fn identical_networks_give_zero_field() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let n = net(1);
        let z = draw_noise(&mut rng::stream(1, "z"), 4, 2).unwrap();
        let f = alchemical_force(&n, &n, &s, &z, 3).unwrap();
        assert!(f.rows().iter().all(|r| *r == [0.0; 3]));
        let other = ScoreNetwork::new(NetConfig::default(), 1).unwrap();
        assert!(matches!(alchemical_force(&n, &other, &s, &z, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn field_is_equivariant() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let (a, b) = (net(1), net(2));
        let mut r = rng::stream(2, "eq");
        for _ in 0..5 {
            let z = draw_noise(&mut r, 5, 2).unwrap();
            let g = RigidMotion::random(&mut r, true, 0.0);
            let f = alchemical_force(&a, &b, &s, &z, 4).unwrap().rotated(&g);
            let fr = alchemical_force(&a, &b, &s, &z.apply(&g), 4).unwrap();
            for (p, q) in f.rows().iter().zip(fr.rows()) {
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() <= 1e-9);
                }
            }
            assert!(f.rows().iter().any(|r| r.iter().any(|v| v.abs() > 1e-6)));
        }
    }

    #[test]
    fn cosine_examples() {
        let f = ForceField(vec![[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]]);
        let scaled = ForceField(f.rows().iter().map(|r| [2.5 * r[0], 2.5 * r[1], 2.5 * r[2]]).collect());
        let neg = ForceField(f.rows().iter().map(|r| [-r[0], -r[1], -r[2]]).collect());
        assert!((cosine_alignment(&scaled, &f).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_alignment(&neg, &f).unwrap().unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine_alignment(&ForceField::zeros(2), &ForceField::zeros(2)).unwrap(), None);
        assert!(cosine_alignment(&f, &ForceField::zeros(3)).is_err());
    }

    #[test]
    fn study_reports_each_state() {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let rep = alignment_study(&net(1), &net(2), &o, &s, 4, 25, 4, 3).unwrap();
        assert_eq!(rep.cosines.len() + rep.undefined, 25);
        assert!(rep.cosines.iter().all(|&(t, c)| (1..=4).contains(&t) && c.abs() <= 1.0));
        assert!(rep.median_abs_cos >= rep.median_cos.abs());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(Vec::new()).is_nan());
    }
}
