use super::EnergyOracle;
use crate::error::{Error, Result};
use crate::nbody::{norm, sub, Configuration, ForceField, Topology};

/// All-pairs Lennard-Jones potential.
///
/// Below `r_min` the pair term continues as the second-order Taylor
/// expansion about `r_min` (value, slope and curvature match), which keeps
/// energies finite on overlapping early-diffusion geometries. With `strict`
/// set, such geometries are rejected instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LennardJones {
    pub epsilon: f64,
    pub sigma: f64,
    pub r_min: f64,
    pub strict: bool,
}

impl LennardJones {
    pub fn new(epsilon: f64, sigma: f64, r_min_factor: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::config("oracle.epsilon", "must be positive"));
        }
        if !(sigma > 0.0) {
            return Err(Error::config("oracle.sigma", "must be positive"));
        }
        if !(r_min_factor > 0.0 && r_min_factor < 1.0) {
            return Err(Error::config("oracle.r_min_factor", "must lie in (0, 1)"));
        }
        Ok(Self {
            epsilon,
            sigma,
            r_min: r_min_factor * sigma,
            strict: false,
        })
    }

    pub fn strict(mut self) -> Self {
        self.strict = true;
        self
    }

    /// Pair energy and its first and second radial derivatives.
    fn raw(&self, r: f64) -> (f64, f64, f64) {
        let sr6 = (self.sigma / r).powi(6);
        let sr12 = sr6 * sr6;
        let e = 4.0 * self.epsilon * (sr12 - sr6);
        let de = 4.0 * self.epsilon * (-12.0 * sr12 + 6.0 * sr6) / r;
        let d2e = 4.0 * self.epsilon * (156.0 * sr12 - 42.0 * sr6) / (r * r);
        (e, de, d2e)
    }

    /// Pair energy and `dV/dr`, with the quadratic continuation below `r_min`.
    pub fn pair(&self, r: f64) -> (f64, f64) {
        if r >= self.r_min {
            let (e, de, _) = self.raw(r);
            (e, de)
        } else {
            let (e0, de0, d2e0) = self.raw(self.r_min);
            let dr = r - self.r_min;
            (e0 + de0 * dr + 0.5 * d2e0 * dr * dr, de0 + d2e0 * dr)
        }
    }
}

impl EnergyOracle for LennardJones {
    fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)> {
        let x = cfg.positions();
        let n = x.len();
        let mut energy = 0.0;
        let mut forces = ForceField::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                let d = sub(&x[i], &x[j]);
                let r = norm(&d);
                if r < 1e-12 || (self.strict && r < self.r_min) {
                    return Err(Error::Singularity { i, j, distance: r });
                }
                let (e, de) = self.pair(r);
                energy += e;
                let c = de / r;
                for k in 0..3 {
                    forces.0[i][k] -= c * d[k];
                    forces.0[j][k] += c * d[k];
                }
            }
        }
        Ok((energy, forces))
    }

    fn topology(&self) -> Topology {
        Topology::Unbonded
    }
}
