use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `α_t² ∝ (1 − (t/T)²)²` with per-step clipping and a precision floor.
    Polynomial2,
    /// Ornstein–Uhlenbeck: `α_t = e^{−t·t_max/T}`.
    Ou { t_max: f64 },
}

impl ScheduleKind {
    pub fn parse(name: &str, t_max: f64) -> Result<Self> {
        match name {
            "polynomial_2" => Ok(Self::Polynomial2),
            "ou" => {
                if !(t_max > 0.0) || !t_max.is_finite() {
                    return Err(Error::config("diffusion.ou_t_max", "must be positive"));
                }
                Ok(Self::Ou { t_max })
            }
            other => Err(Error::config(
                "diffusion.schedule",
                format!("unknown schedule kind {other:?} (expected polynomial_2 or ou)"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Polynomial2 => "polynomial_2",
            Self::Ou { .. } => "ou",
        }
    }
}

/// Discrete variance-preserving schedule: tables of `α_t` and `σ̄_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    precision: f64,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

/// Coefficients of one ancestral transition `t → t−1`:
/// `μ = c_z·z_t − c_eps·ε̂`, sample noise scale `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub c_z: f64,
    pub c_eps: f64,
    pub sigma: f64,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind, precision: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::config("diffusion.T", "need at least 2 steps"));
    }
    if !(precision > 0.0 && precision < 1e-2) {
        return Err(Error::config("diffusion.precision", "must lie in (0, 1e-2)"));
    }
    let tt = steps as f64;
    let alpha2: Vec<f64> = match kind {
        ScheduleKind::Polynomial2 => {
            let raw: Vec<f64> = (0..=steps).map(|t| (1.0 - (t as f64 / tt).powi(2)).powi(2)).collect();
            let mut clipped = Vec::with_capacity(raw.len());
            let mut acc = 1.0;
            let mut prev = 1.0;
            for &a in &raw {
                acc *= (a / prev).clamp(0.001, 1.0);
                prev = a;
                clipped.push(acc);
            }
            clipped.iter().map(|a| (1.0 - 2.0 * precision) * a + precision).collect()
        }
        ScheduleKind::Ou { t_max } => (0..=steps).map(|t| (-2.0 * t as f64 * t_max / tt).exp()).collect(),
    };
    let alpha: Vec<f64> = alpha2.iter().map(|a| a.sqrt()).collect();
    let sigma: Vec<f64> = alpha2.iter().map(|a| (1.0 - a).max(0.0).sqrt()).collect();
    Ok(NoiseSchedule {
        kind,
        precision,
        alpha,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn snr(&self, t: usize) -> f64 {
        (self.alpha[t] / self.sigma[t]).powi(2)
    }

    /// Rebuilds a schedule from stored tables (checkpoint loading).
    pub fn from_tables(kind: ScheduleKind, precision: f64, alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if alpha.len() != sigma.len() || alpha.len() < 3 {
            return Err(Error::Schema("schedule tables have inconsistent lengths".into()));
        }
        Ok(Self {
            kind,
            precision,
            alpha,
            sigma,
        })
    }

    /// Ancestral transition from `t` to `t − 1`.
    pub fn transition(&self, t: usize) -> Result<Transition> {
        if t == 0 || t > self.steps() {
            return Err(Error::contract(format!("reverse transition needs 1 <= t <= {}, got {t}", self.steps())));
        }
        let s = t - 1;
        let a_ts = self.alpha[t] / self.alpha[s];
        let var_ts = self.sigma[t].powi(2) - a_ts * a_ts * self.sigma[s].powi(2);
        Ok(Transition {
            c_z: 1.0 / a_ts,
            c_eps: var_ts / (a_ts * self.sigma[t]),
            sigma: var_ts.max(0.0).sqrt() * self.sigma[s] / self.sigma[t],
        })
    }
}
