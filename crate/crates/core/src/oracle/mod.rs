//! Energy/force oracles.
//!
//! Every oracle maps a configuration to `(E, F)` with `F = -∇ₓE`. The closed
//! forms ([`HarmonicChain`], [`LennardJones`]) stand in for a reference
//! quantum-chemistry potential; [`SurrogatePotential`] is a learned pair
//! potential fit to one of them with an energy-and-force matching loss.

mod harmonic;
mod lj;
mod surrogate;

pub use harmonic::HarmonicChain;
pub use lj::LennardJones;
pub use surrogate::{fit_surrogate, SurrogateConfig, SurrogatePotential};

use crate::error::Result;
use crate::nbody::{Configuration, ForceField, Topology};

pub trait EnergyOracle: Send + Sync {
    fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)>;

    fn energy(&self, cfg: &Configuration) -> Result<f64> {
        self.evaluate(cfg).map(|(e, _)| e)
    }

    /// Bond topology the oracle assumes; drives the network's edge attribute.
    fn topology(&self) -> Topology;
}

/// Oracle selected from configuration (`oracle.kind`).
#[derive(Debug, Clone)]
pub enum Oracle {
    Harmonic(HarmonicChain),
    LennardJones(LennardJones),
    Surrogate(Box<SurrogatePotential>),
}

impl EnergyOracle for Oracle {
    fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)> {
        match self {
            Oracle::Harmonic(o) => o.evaluate(cfg),
            Oracle::LennardJones(o) => o.evaluate(cfg),
            Oracle::Surrogate(o) => o.evaluate(cfg),
        }
    }

    fn energy(&self, cfg: &Configuration) -> Result<f64> {
        match self {
            Oracle::Harmonic(o) => o.energy(cfg),
            Oracle::LennardJones(o) => o.energy(cfg),
            Oracle::Surrogate(o) => o.energy(cfg),
        }
    }

    fn topology(&self) -> Topology {
        match self {
            Oracle::Harmonic(o) => o.topology(),
            Oracle::LennardJones(o) => o.topology(),
            Oracle::Surrogate(o) => o.topology(),
        }
    }
}

/// `δ = max |E_surrogate − E_target|` over the probes.
pub fn uniform_error(
    surrogate: &dyn EnergyOracle,
    target: &dyn EnergyOracle,
    probes: &[Configuration],
) -> Result<f64> {
    let mut delta: f64 = 0.0;
    for p in probes {
        delta = delta.max((surrogate.energy(p)? - target.energy(p)?).abs());
    }
    Ok(delta)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::nbody::{RigidMotion, Vec3};
    use crate::rng::{self, StreamRng};

    pub fn random_cluster(r: &mut StreamRng, n: usize, spread: f64, min_sep: f64) -> Configuration {
        loop {
            let pos: Vec<Vec3> = (0..n)
                .map(|_| [spread * rng::normal(r), spread * rng::normal(r), spread * rng::normal(r)])
                .collect();
            let cfg = Configuration::from_positions(pos);
            let ok = (0..n).all(|i| (i + 1..n).all(|j| cfg.distance(i, j) >= min_sep));
            if ok {
                return cfg;
            }
        }
    }

    /// Checks rigid-motion symmetry, Newton's third law and conservativeness.
    pub fn check_oracle_symmetries(o: &dyn EnergyOracle, cfg: &Configuration, r: &mut StreamRng, fd_tol: f64) {
        let (e, f) = o.evaluate(cfg).unwrap();
        let g = RigidMotion::random(r, true, 2.0);
        let (e2, f2) = o.evaluate(&cfg.apply(&g)).unwrap();
        assert!((e - e2).abs() <= 1e-9 * e.abs().max(1.0), "energy invariance {e} vs {e2}");
        let fr = f.rotated(&g);
        for (a, b) in fr.rows().iter().zip(f2.rows()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-9 * (1.0 + a[k].abs()), "force equivariance");
            }
        }
        let mut net = [0.0; 3];
        for row in f.rows() {
            for k in 0..3 {
                net[k] += row[k];
            }
        }
        assert!(net.iter().all(|v| v.abs() <= 1e-9), "net force {net:?}");

        let n = cfg.n_bodies();
        let u: Vec<Vec3> = (0..n).map(|_| [rng::normal(r), rng::normal(r), rng::normal(r)]).collect();
        let un = u.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        let h = 1e-6;
        let shifted = |s: f64| {
            let pos = cfg
                .positions()
                .iter()
                .zip(&u)
                .map(|(x, d)| [x[0] + s * d[0] / un, x[1] + s * d[1] / un, x[2] + s * d[2] / un])
                .collect();
            Configuration::new(pos, cfg.features().to_vec(), cfg.d_h()).unwrap()
        };
        let fd = (o.energy(&shifted(h)).unwrap() - o.energy(&shifted(-h)).unwrap()) / (2.0 * h);
        let analytic: f64 = -f.rows().iter().zip(&u).map(|(fi, ui)| crate::nbody::dot(fi, ui)).sum::<f64>() / un;
        let err = (fd - analytic).abs();
        assert!(
            err <= fd_tol * analytic.abs().max(1e-3),
            "directional derivative fd {fd} vs -<F,u> {analytic}"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shifted<'a>(&'a dyn EnergyOracle, f64);

    impl EnergyOracle for Shifted<'_> {
        fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)> {
            let (e, f) = self.0.evaluate(cfg)?;
            Ok((e + self.1, f))
        }
        fn topology(&self) -> Topology {
            self.0.topology()
        }
    }

    #[test]
    fn uniform_error_examples() {
        let target = HarmonicChain::new(1.0, 1.0).unwrap();
        let mut r = crate::rng::stream(1, "oracle.uniform");
        let probes: Vec<_> = (0..20).map(|_| testutil::random_cluster(&mut r, 4, 1.0, 0.1)).collect();
        assert_eq!(uniform_error(&target, &target, &probes).unwrap(), 0.0);
        let shifted = Shifted(&target, 0.3);
        let d = uniform_error(&shifted, &target, &probes).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
    }
}
