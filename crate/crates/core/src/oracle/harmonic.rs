use super::EnergyOracle;
use crate::error::{Error, Result};
use crate::nbody::{sub, Configuration, ForceField, Topology};

/// `E = ½ k Σᵢ (|xᵢ₊₁ − xᵢ| − r₀)²` over consecutive bodies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicChain {
    pub spring_constant: f64,
    pub rest_length: f64,
}

impl HarmonicChain {
    pub fn new(spring_constant: f64, rest_length: f64) -> Result<Self> {
        if !(spring_constant > 0.0) {
            return Err(Error::config("oracle.spring_constant", "must be positive"));
        }
        if !(rest_length > 0.0) {
            return Err(Error::config("oracle.rest_length", "must be positive"));
        }
        Ok(Self {
            spring_constant,
            rest_length,
        })
    }
}

impl EnergyOracle for HarmonicChain {
    fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)> {
        let x = cfg.positions();
        let mut energy = 0.0;
        let mut forces = ForceField::zeros(x.len());
        for i in 0..x.len().saturating_sub(1) {
            let d = sub(&x[i], &x[i + 1]);
            let r = crate::nbody::norm(&d);
            let stretch = r - self.rest_length;
            energy += 0.5 * self.spring_constant * stretch * stretch;
            if stretch == 0.0 {
                continue;
            }
            if r < 1e-12 {
                return Err(Error::Singularity {
                    i,
                    j: i + 1,
                    distance: r,
                });
            }
            // dE/dxᵢ = k (r − r₀) (xᵢ − xᵢ₊₁)/r
            let c = self.spring_constant * stretch / r;
            for k in 0..3 {
                forces.0[i][k] -= c * d[k];
                forces.0[i + 1][k] += c * d[k];
            }
        }
        Ok((energy, forces))
    }

    fn topology(&self) -> Topology {
        Topology::Chain
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::testutil::{check_oracle_symmetries, random_cluster};
    use crate::rng;

    #[test]
    fn rest_configuration_is_minimum() {
        let o = HarmonicChain::new(2.0, 1.5).unwrap();
        let cfg = Configuration::from_positions(vec![[0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [1.5, 1.5, 0.0]]);
        let (e, f) = o.evaluate(&cfg).unwrap();
        assert_eq!(e, 0.0);
        assert_eq!(f, ForceField::zeros(3));
    }

    #[test]
    fn stretched_dimer() {
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let cfg = Configuration::from_positions(vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let (e, f) = o.evaluate(&cfg).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        // inward: body 0 pushed toward +x, body 1 toward -x
        assert!((f.0[0][0] - 1.0).abs() < 1e-15);
        assert!((f.0[1][0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn coincident_bonded_pair_is_singular() {
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let cfg = Configuration::from_positions(vec![[0.0; 3], [0.0; 3]]);
        assert!(matches!(o.evaluate(&cfg), Err(Error::Singularity { i: 0, j: 1, .. })));
    }

    #[test]
    fn symmetries_and_conservativeness() {
        let o = HarmonicChain::new(1.3, 0.9).unwrap();
        let mut r = rng::stream(9, "harmonic.sym");
        for _ in 0..20 {
            let cfg = random_cluster(&mut r, 5, 1.0, 0.05);
            check_oracle_symmetries(&o, &cfg, &mut r, 1e-6);
        }
    }
}
