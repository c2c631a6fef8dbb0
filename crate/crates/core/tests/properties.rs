use eqalign_core::autodiff::Tensor;
use eqalign_core::diffusion::{make_schedule, reverse_step, NetConfig, ScheduleKind, ScoreNetwork};
use eqalign_core::fedgrpo::{rollout_groups, TrainerConfig};
use eqalign_core::oracle::{EnergyOracle, HarmonicChain, LennardJones, SurrogateConfig, SurrogatePotential};
use eqalign_core::rng::{self, StreamRng};
use eqalign_core::theory::{gibbs_tilt, verify_tv_bound, GridDensity};
use eqalign_core::{Configuration, RigidMotion, Topology};
use proptest::prelude::*;

fn cloud(r: &mut StreamRng, n: usize, d_h: usize, spread: f64) -> Configuration {
    let pos = (0..n)
        .map(|i| {
            [
                1.2 * i as f64 + spread * rng::normal(r),
                spread * rng::normal(r),
                spread * rng::normal(r),
            ]
        })
        .collect();
    Configuration::new(pos, rng::normals(r, n * d_h), d_h).unwrap()
}

fn max_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn tensor_shape_matches_data(rows in 0usize..6, cols in 0usize..6, extra in 0usize..3) {
        let ok = Tensor::new(vec![rows, cols], vec![0.0; rows * cols]);
        prop_assert!(ok.is_ok());
        let bad = Tensor::new(vec![rows, cols], vec![0.0; rows * cols + extra]);
        prop_assert_eq!(bad.is_ok(), extra == 0);
    }

    #[test]
    fn rigid_motions_are_orthogonal(seed in 0u64..10_000, reflect in any::<bool>()) {
        let mut r = rng::stream(seed, "motion");
        let g = RigidMotion::random(&mut r, reflect, 5.0);
        let m = g.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-12);
            }
        }
        prop_assert!((g.determinant().abs() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn harmonic_energy_is_nonnegative(seed in 0u64..10_000, n in 2usize..8, k in 0.1f64..5.0, r0 in 0.5f64..2.0) {
        let o = HarmonicChain::new(k, r0).unwrap();
        let mut r = rng::stream(seed, "harmonic");
        prop_assert!(o.energy(&cloud(&mut r, n, 0, 0.5)).unwrap() >= 0.0);
        let rest = Configuration::from_positions((0..n).map(|i| [r0 * i as f64, 0.0, 0.0]).collect());
        prop_assert!(o.energy(&rest).unwrap() <= 1e-24);
    }

    #[test]
    fn lennard_jones_is_finite_above_r_min(sep in 0.3f64..6.0, factor in 0.2f64..0.9) {
        let o = LennardJones::new(1.0, 1.0, factor).unwrap();
        prop_assume!(sep >= factor);
        let z = Configuration::from_positions(vec![[0.0; 3], [sep, 0.0, 0.0]]);
        let (e, f) = o.evaluate(&z).unwrap();
        prop_assert!(e.is_finite());
        prop_assert!(f.0.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn surrogate_is_rigid_motion_invariant(seed in 0u64..1000, n in 2usize..6) {
        let s = SurrogatePotential::new(Topology::Chain, &SurrogateConfig { hidden: 8, n_rbf: 6, seed, ..Default::default() }).unwrap();
        let mut r = rng::stream(seed, "surrogate");
        let z = cloud(&mut r, n, 0, 0.3);
        let g = RigidMotion::random(&mut r, true, 4.0);
        let (e0, f0) = s.evaluate(&z).unwrap();
        let (e1, f1) = s.evaluate(&z.apply(&g)).unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-9);
        prop_assert!(max_diff(&f0.rotated(&g).0, &f1.0) <= 1e-9);
    }

    #[test]
    fn schedules_are_monotone_and_variance_preserving(steps in 2usize..400, ou in any::<bool>()) {
        let kind = if ou { ScheduleKind::Ou { t_max: 4.0 } } else { ScheduleKind::Polynomial2 };
        let s = make_schedule(steps, kind, 1e-5).unwrap();
        prop_assert!((s.alpha(0) - 1.0).abs() <= 1e-6 + s.precision());
        for t in 1..=steps {
            prop_assert!(s.alpha(t) < s.alpha(t - 1));
            prop_assert!(s.sigma(t) > s.sigma(t - 1));
            prop_assert!(s.snr(t) < s.snr(t - 1));
        }
        for t in 0..=steps {
            prop_assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn tv_report_flags_violations_exactly(seed in 0u64..5000, beta in 0.01f64..30.0) {
        let mut r = rng::stream(seed, "tv");
        let n = 12;
        let w: Vec<f64> = (0..n).map(|_| 0.1 + rng::uniform(&mut r)).collect();
        let pts: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let p = GridDensity::from_weights(&pts, &w).unwrap();
        let e: Vec<f64> = rng::normals(&mut r, n);
        let e2: Vec<f64> = e.iter().map(|x| x + 0.3 * rng::normal(&mut r)).collect();
        let rep = verify_tv_bound(&p, &e, &e2, beta).unwrap();
        prop_assert_eq!(rep.holds, rep.tv <= rep.bound + 1e-12);
        prop_assert!(rep.holds);
        let t = gibbs_tilt(&p, &e, beta).unwrap();
        prop_assert!(t.masses().iter().all(|&m| m >= 0.0));
        prop_assert!((t.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn network_is_equivariant(seed in 0u64..1000, n in 2usize..7, tf in 0.0f64..1.0, reflect in any::<bool>()) {
        let net = ScoreNetwork::new(NetConfig { layers: 2, hidden: 16, ..Default::default() }, seed).unwrap();
        let mut r = rng::stream(seed, "net");
        let z = cloud(&mut r, n, 2, 0.4).projected().unwrap();
        let g = RigidMotion::random(&mut r, reflect, 0.0);
        let e = net.predict_eps(&[&z, &z.apply(&g)], &[tf, tf]).unwrap();
        let rotated: Vec<[f64; 3]> = e[0].x.iter().map(|v| g.rotate(v)).collect();
        prop_assert!(max_diff(&rotated, &e[1].x) <= 1e-6);
        let hd = e[0].h.iter().zip(&e[1].h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(hd <= 1e-6);
    }

    #[test]
    fn reverse_steps_stay_centered_with_subspace_density(seed in 0u64..1000, n in 2usize..6, t in 2usize..20) {
        let s = make_schedule(20, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let net = ScoreNetwork::new(NetConfig { layers: 2, hidden: 8, ..Default::default() }, seed).unwrap();
        let mut r = rng::stream(seed, "step");
        let z = cloud(&mut r, n, 2, 0.4).projected().unwrap();
        let step = reverse_step(&net, &s, &z, t, &mut r).unwrap();
        let c = step.sample.com();
        prop_assert!(c.iter().all(|v| v.abs() <= 1e-10));
        let sigma = step.noise_scale;
        let d = (3 * n - 3 + 2 * n) as f64;
        let mut q = 0.0;
        for (a, b) in step.sample.positions().iter().zip(step.mean.positions()) {
            for k in 0..3 {
                q += (a[k] - b[k]).powi(2);
            }
        }
        for (a, b) in step.sample.features().iter().zip(step.mean.features()) {
            q += (a - b).powi(2);
        }
        let want = -0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - q / (2.0 * sigma * sigma);
        let got = step.log_density.unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn rollouts_share_their_prefix(seed in 0u64..1000, k in 2usize..5, t_prefix in 1usize..10) {
        let s = make_schedule(10, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let net = ScoreNetwork::new(NetConfig { layers: 2, hidden: 8, ..Default::default() }, 1).unwrap();
        let cfg = TrainerConfig { t_prefix, group_size: k, groups: 2, n_bodies: 3, ..Default::default() };
        for g in rollout_groups(&net, &net, &s, &cfg, seed, 0).unwrap() {
            prop_assert_eq!(g.rollouts.len(), k);
            for ro in &g.rollouts {
                prop_assert_eq!(ro.steps.len(), t_prefix);
                prop_assert_eq!(&ro.steps[0].state, &g.prefix_state);
                let ts: Vec<usize> = ro.steps.iter().map(|st| st.t).collect();
                prop_assert_eq!(ts, (1..=t_prefix).rev().collect::<Vec<_>>());
            }
        }
    }
}
