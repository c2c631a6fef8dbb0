use super::network::{EpsPrediction, ScoreNetwork};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nbody::{project_com, subspace_dim, Configuration, Vec3};
use crate::rng::{self, StreamRng};

const COM_TOL: f64 = 1e-8;
const ALPHA_FLOOR: f64 = 1e-6;

/// One recorded reverse transition `z_t → z_{t−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseStep {
    pub t: usize,
    pub state: Configuration,
    /// Noise prediction `ε̂(z_t, t)` of the network that produced the step.
    pub eps: Configuration,
    pub mean: Configuration,
    pub noise_scale: f64,
    pub sample: Configuration,
    /// `None` when `noise_scale == 0` (deterministic step, no density).
    pub log_density: Option<f64>,
}

/// Standard normal draw shaped like an `n`-body configuration; positions projected.
pub fn draw_noise(r: &mut StreamRng, n: usize, d_h: usize) -> Result<Configuration> {
    let raw = rng::normals(r, 3 * n);
    let pos: Vec<Vec3> = raw.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
    let feats = rng::normals(r, n * d_h);
    Configuration::new(project_com(&pos)?, feats, d_h)
}

fn check_centered(z: &Configuration, what: &str) -> Result<()> {
    let com = z.com();
    if com.iter().any(|c| c.abs() > COM_TOL) {
        return Err(Error::contract(format!("{what} is not CoM-free (mean {com:?})")));
    }
    Ok(())
}

/// `a·u + b·v` on both blocks.
fn axpby(a: f64, u: &Configuration, b: f64, v: &Configuration) -> Configuration {
    let pos = u
        .positions()
        .iter()
        .zip(v.positions())
        .map(|(p, q)| [a * p[0] + b * q[0], a * p[1] + b * q[1], a * p[2] + b * q[2]])
        .collect();
    let feats = u.features().iter().zip(v.features()).map(|(p, q)| a * p + b * q).collect();
    Configuration::new(pos, feats, u.d_h()).expect("same layout")
}

fn eps_config(e: &EpsPrediction, d_h: usize) -> Configuration {
    Configuration::new(e.x.clone(), e.h.clone(), d_h).expect("network output layout")
}

/// Squared distance between two configurations over both blocks.
pub fn sq_dist(u: &Configuration, v: &Configuration) -> f64 {
    let px: f64 = u
        .positions()
        .iter()
        .zip(v.positions())
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    let ph: f64 = u.features().iter().zip(v.features()).map(|(p, q)| (p - q).powi(2)).sum();
    px + ph
}

/// Log-density of `x` under `N(mean, σ² I)` on the CoM-free subspace times feature space.
pub fn gaussian_log_density(x: &Configuration, mean: &Configuration, sigma: f64) -> Option<f64> {
    if sigma <= 0.0 {
        return None;
    }
    let d = subspace_dim(x.n_bodies(), x.d_h()) as f64;
    let var = sigma * sigma;
    Some(-0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - sq_dist(x, mean) / (2.0 * var))
}

/// `z_t = α_t z_0 + σ̄_t ε`.
pub fn forward_sample(schedule: &NoiseSchedule, z0: &Configuration, t: usize, noise: &Configuration) -> Result<Configuration> {
    if t > schedule.steps() {
        return Err(Error::contract(format!("t = {t} beyond T = {}", schedule.steps())));
    }
    check_centered(z0, "z0")?;
    check_centered(noise, "noise")?;
    if z0.n_bodies() != noise.n_bodies() || z0.d_h() != noise.d_h() {
        return Err(Error::contract("noise layout differs from z0"));
    }
    Ok(axpby(schedule.alpha(t), z0, schedule.sigma(t), noise))
}

/// Score components `(s_x, s_h) = −ε̂/σ̄_t`.
pub fn score_forward(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    z_t: &Configuration,
    t: usize,
) -> Result<(Vec<Vec3>, Vec<f64>)> {
    check_centered(z_t, "z_t")?;
    if t == 0 || t > schedule.steps() {
        return Err(Error::contract(format!("score needs 1 <= t <= {}", schedule.steps())));
    }
    let e = net.predict_eps(&[z_t], &[t as f64 / schedule.steps() as f64])?.remove(0);
    let s = -1.0 / schedule.sigma(t);
    Ok((
        e.x.iter().map(|v| [s * v[0], s * v[1], s * v[2]]).collect(),
        e.h.iter().map(|v| s * v).collect(),
    ))
}

/// `ẑ_{0|t} = (z_t − σ̄_t ε̂)/α_t` from a given noise prediction.
pub fn clean_from_eps(schedule: &NoiseSchedule, z_t: &Configuration, t: usize, eps: &Configuration) -> Result<Configuration> {
    let a = schedule.alpha(t);
    if a <= ALPHA_FLOOR {
        return Err(Error::NearPrior { t, alpha: a });
    }
    Ok(axpby(1.0 / a, z_t, -schedule.sigma(t) / a, eps))
}

/// Posterior clean-geometry estimate for a batch of states at times `ts`.
pub fn predict_clean_batch(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    zs: &[&Configuration],
    ts: &[usize],
) -> Result<Vec<Configuration>> {
    for (&z, &t) in zs.iter().zip(ts) {
        check_centered(z, "z_t")?;
        if schedule.alpha(t) <= ALPHA_FLOOR {
            return Err(Error::NearPrior {
                t,
                alpha: schedule.alpha(t),
            });
        }
    }
    let frac: Vec<f64> = ts.iter().map(|&t| t as f64 / schedule.steps() as f64).collect();
    let eps = net.predict_eps(zs, &frac)?;
    zs.iter()
        .zip(ts)
        .zip(&eps)
        .map(|((z, &t), e)| clean_from_eps(schedule, z, t, &eps_config(e, z.d_h())))
        .collect()
}

pub fn predict_clean(net: &ScoreNetwork, schedule: &NoiseSchedule, z_t: &Configuration, t: usize) -> Result<Configuration> {
    Ok(predict_clean_batch(net, schedule, &[z_t], &[t])?.remove(0))
}

/// Reverse transitions for a batch of states at a common `t`, with caller-supplied noises.
pub fn reverse_step_batch(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    zs: &[&Configuration],
    t: usize,
    noises: &[Configuration],
) -> Result<Vec<ReverseStep>> {
    let tr = schedule.transition(t)?;
    for z in zs {
        check_centered(z, "z_t")?;
    }
    let frac = vec![t as f64 / schedule.steps() as f64; zs.len()];
    let eps = net.predict_eps(zs, &frac)?;
    zs.iter()
        .zip(&eps)
        .zip(noises)
        .map(|((z, e), noise)| {
            let eps = eps_config(e, z.d_h());
            let mean = axpby(tr.c_z, z, -tr.c_eps, &eps);
            let mut sample = axpby(1.0, &mean, tr.sigma, noise);
            // re-center against rounding drift
            let pos = project_com(sample.positions())?;
            sample.positions_mut().copy_from_slice(&pos);
            let log_density = gaussian_log_density(&sample, &mean, tr.sigma);
            Ok(ReverseStep {
                t,
                state: (*z).clone(),
                eps,
                mean,
                noise_scale: tr.sigma,
                sample,
                log_density,
            })
        })
        .collect()
}

pub fn reverse_step(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    z_t: &Configuration,
    t: usize,
    r: &mut StreamRng,
) -> Result<ReverseStep> {
    if t == 0 {
        return Err(Error::contract("reverse_step needs t >= 1"));
    }
    let noise = draw_noise(r, z_t.n_bodies(), z_t.d_h())?;
    Ok(reverse_step_batch(net, schedule, &[z_t], t, &[noise])?.remove(0))
}

/// Prior draw `z_T`.
pub fn prior_sample(r: &mut StreamRng, n: usize, d_h: usize) -> Result<Configuration> {
    draw_noise(r, n, d_h)
}

/// Runs `from` states (one per stream) from step `t_start` down to `t_end`.
///
/// Each trajectory draws its noise from its own stream, so results do not
/// depend on how trajectories are batched.
pub fn run_reverse(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    from: Vec<Configuration>,
    t_start: usize,
    t_end: usize,
    streams: &mut [StreamRng],
    keep_trajectory: bool,
) -> Result<(Vec<Configuration>, Vec<Vec<ReverseStep>>)> {
    let mut states = from;
    let mut trajs: Vec<Vec<ReverseStep>> = vec![Vec::new(); states.len()];
    for t in (t_end + 1..=t_start).rev() {
        let noises = states
            .iter()
            .zip(streams.iter_mut())
            .map(|(z, r)| draw_noise(r, z.n_bodies(), z.d_h()))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Configuration> = states.iter().collect();
        let steps = reverse_step_batch(net, schedule, &refs, t, &noises)?;
        states = steps.iter().map(|s| s.sample.clone()).collect();
        if keep_trajectory {
            for (traj, s) in trajs.iter_mut().zip(steps) {
                traj.push(s);
            }
        }
    }
    Ok((states, trajs))
}

/// Full ancestral sampling run, prior to `z_0`, one configuration per stream.
pub fn sample_batch(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    n_bodies: usize,
    streams: &mut [StreamRng],
    keep_trajectory: bool,
) -> Result<(Vec<Configuration>, Vec<Vec<ReverseStep>>)> {
    let d_h = net.config().d_h;
    let prior = streams
        .iter_mut()
        .map(|r| prior_sample(r, n_bodies, d_h))
        .collect::<Result<Vec<_>>>()?;
    run_reverse(net, schedule, prior, schedule.steps(), 0, streams, keep_trajectory)
}

pub fn sample(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    n_bodies: usize,
    seed: u64,
) -> Result<(Configuration, Vec<ReverseStep>)> {
    let mut streams = [rng::stream(seed, "sample")];
    let (mut z, mut tr) = sample_batch(net, schedule, n_bodies, &mut streams, true)?;
    Ok((z.remove(0), tr.remove(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::network::NetConfig;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::nbody::RigidMotion;

    fn net(seed: u64) -> ScoreNetwork {
        let mut n = ScoreNetwork::new(
            NetConfig {
                hidden: 16,
                ..Default::default()
            },
            seed,
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

    fn sched() -> NoiseSchedule {
        make_schedule(20, ScheduleKind::Polynomial2, 1e-5).unwrap()
    }

    #[test]
    fn forward_sample_limits() {
        let s = sched();
        let mut r = rng::stream(1, "fwd");
        let z0 = draw_noise(&mut r, 4, 2).unwrap();
        let eps = draw_noise(&mut r, 4, 2).unwrap();
        let zt = forward_sample(&s, &z0, 0, &eps).unwrap();
        assert!(sq_dist(&zt, &z0) < 1e-3);
        let zero = Configuration::new(vec![[0.0; 3]; 4], vec![0.0; 8], 2).unwrap();
        let zt = forward_sample(&s, &zero, 7, &eps).unwrap();
        assert!(sq_dist(&zt, &axpby(s.sigma(7), &eps, 0.0, &eps)) < 1e-30);
        let off = Configuration::new(vec![[1.0; 3]; 4], vec![0.0; 8], 2).unwrap();
        assert!(matches!(forward_sample(&s, &off, 3, &eps), Err(Error::Contract(_))));
    }

    #[test]
    fn forward_sample_moments() {
        let s = sched();
        let mut r = rng::stream(2, "fwd.mc");
        let z0 = draw_noise(&mut r, 2, 1).unwrap();
        let t = 9;
        let draws = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..draws {
            let e = draw_noise(&mut r, 2, 1).unwrap();
            let v = forward_sample(&s, &z0, t, &e).unwrap().features()[0];
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / draws as f64;
        let var = sum2 / draws as f64 - mean * mean;
        let se_mean = s.sigma(t) / (draws as f64).sqrt();
        assert!((mean - s.alpha(t) * z0.features()[0]).abs() < 3.0 * se_mean);
        let se_var = s.sigma(t).powi(2) * (2.0 / draws as f64).sqrt();
        assert!((var - s.sigma(t).powi(2)).abs() < 3.0 * se_var);
    }

    #[test]
    fn reverse_step_density_examples() {
        let s = sched();
        let n = net(3);
        let mut r = rng::stream(3, "rev");
        let z = draw_noise(&mut r, 3, 2).unwrap();
        let st = reverse_step(&n, &s, &z, 5, &mut r).unwrap();
        let d = subspace_dim(3, 2) as f64;
        let at_mean = gaussian_log_density(&st.mean, &st.mean, st.noise_scale).unwrap();
        let expect = -0.5 * d * (2.0 * std::f64::consts::PI * st.noise_scale.powi(2)).ln();
        assert!((at_mean - expect).abs() < 1e-12);
        assert!(matches!(reverse_step(&n, &s, &z, 0, &mut r), Err(Error::Contract(_))));

        // mean self-sample log density is the negative entropy
        let draws = 10_000;
        let mut vals = Vec::with_capacity(draws);
        for _ in 0..draws {
            let e = draw_noise(&mut r, 3, 2).unwrap();
            let x = axpby(1.0, &st.mean, st.noise_scale, &e);
            vals.push(gaussian_log_density(&x, &st.mean, st.noise_scale).unwrap());
        }
        let m = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / draws as f64).sqrt();
        let target = -0.5 * d * (1.0 + (2.0 * std::f64::consts::PI * st.noise_scale.powi(2)).ln());
        assert!((m - target).abs() < 3.0 * sd / (draws as f64).sqrt());
    }

    #[test]
    fn deterministic_final_step_is_flagged() {
        let s = make_schedule(10, ScheduleKind::Ou { t_max: 3.0 }, 1e-5).unwrap();
        let n = net(4);
        let mut r = rng::stream(4, "ou");
        let z = draw_noise(&mut r, 3, 2).unwrap();
        let st = reverse_step(&n, &s, &z, 1, &mut r).unwrap();
        assert_eq!(st.noise_scale, 0.0);
        assert_eq!(st.log_density, None);
        assert!(sq_dist(&st.sample, &st.mean) < 1e-28);
    }

    #[test]
    fn sampling_is_reproducible_and_centered() {
        let s = sched();
        let n = net(5);
        let (a, tr) = sample(&n, &s, 4, 11).unwrap();
        let (b, _) = sample(&n, &s, 4, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(tr.len(), 20);
        for st in &tr {
            for z in [&st.state, &st.sample, &st.mean] {
                assert!(z.com().iter().all(|c| c.abs() <= 1e-8));
            }
        }
    }

    #[test]
    fn batched_sampling_matches_individual_runs() {
        let s = sched();
        let n = net(6);
        let mut streams: Vec<_> = (0..3).map(|i| rng::stream(6, &format!("s.{i}"))).collect();
        let (batch, _) = sample_batch(&n, &s, 3, &mut streams, false).unwrap();
        for (i, z) in batch.iter().enumerate() {
            let mut one = [rng::stream(6, &format!("s.{i}"))];
            let (single, _) = sample_batch(&n, &s, 3, &mut one, false).unwrap();
            assert!(sq_dist(z, &single[0]) < 1e-20);
        }
    }

    #[test]
    fn sampler_commutes_with_rotations() {
        let s = sched();
        let n = net(7);
        let mut r = rng::stream(7, "rot");
        let g = RigidMotion::random(&mut r, true, 0.0);
        let mut z = draw_noise(&mut r, 4, 2).unwrap();
        let mut zr = z.apply(&g);
        for t in (1..=20).rev() {
            let e = draw_noise(&mut r, 4, 2).unwrap();
            let er = e.apply(&g);
            z = reverse_step_batch(&n, &s, &[&z], t, &[e]).unwrap().remove(0).sample;
            zr = reverse_step_batch(&n, &s, &[&zr], t, &[er]).unwrap().remove(0).sample;
            let back = z.apply(&g);
            assert!(sq_dist(&back, &zr).sqrt() <= 1e-6, "t={t}");
        }
    }

    #[test]
    fn predict_clean_recovers_gaussian_mean() {
        // for data N(m, 0) the exact noise is ε = (z_t − α_t m)/σ̄_t
        let s = sched();
        let mut r = rng::stream(8, "clean");
        let m = draw_noise(&mut r, 3, 2).unwrap();
        for t in [1, 5, 12, 20] {
            let e = draw_noise(&mut r, 3, 2).unwrap();
            let zt = forward_sample(&s, &m, t, &e).unwrap();
            let eps = axpby(1.0 / s.sigma(t), &zt, -s.alpha(t) / s.sigma(t), &m);
            let rec = clean_from_eps(&s, &zt, t, &eps).unwrap();
            assert!(sq_dist(&rec, &m).sqrt() <= 1e-8);
        }
        let ou = make_schedule(10, ScheduleKind::Ou { t_max: 20.0 }, 1e-5).unwrap();
        let n = net(8);
        let z = draw_noise(&mut r, 3, 2).unwrap();
        assert!(matches!(predict_clean(&n, &ou, &z, 10), Err(Error::NearPrior { t: 10, .. })));
    }

    #[test]
    fn score_of_single_body_vanishes() {
        let s = sched();
        let n = net(9);
        let z = Configuration::new(vec![[0.0; 3]], vec![0.1, 0.2], 2).unwrap();
        let (sx, sh) = score_forward(&n, &s, &z, 3).unwrap();
        assert_eq!(sx, vec![[0.0; 3]]);
        assert_eq!(sh.len(), 2);
    }
}
