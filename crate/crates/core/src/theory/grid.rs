use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-12;

/// Probability masses on a finite set of support points.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    support: Vec<Vec<f64>>,
    cell_weights: Vec<f64>,
    masses: Vec<f64>,
}

impl GridDensity {
    pub fn new(support: Vec<Vec<f64>>, cell_weights: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.len() != masses.len() || cell_weights.len() != masses.len() {
            return Err(Error::contract("support, cell weights and masses differ in length"));
        }
        if masses.is_empty() {
            return Err(Error::contract("empty grid"));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::contract("masses must be finite and non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::contract(format!("masses sum to {total}, not 1")));
        }
        Ok(Self {
            support,
            cell_weights,
            masses,
        })
    }

    /// Normalizes non-negative weights on a 1-D support with unit cells.
    pub fn from_weights(points: &[f64], weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::contract("weights must have a positive finite sum"));
        }
        Self::new(
            points.iter().map(|&p| vec![p]).collect(),
            vec![1.0; points.len()],
            weights.iter().map(|w| w / total).collect(),
        )
    }

    /// Uniform masses on `n` cells spanning `[lo, hi]`, one support point per cell center.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let h = (hi - lo) / n as f64;
        let pts: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
        Self::new(pts.iter().map(|&p| vec![p]).collect(), vec![h; n], vec![1.0 / n as f64; n])
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    fn with_masses(&self, masses: Vec<f64>) -> Self {
        Self {
            support: self.support.clone(),
            cell_weights: self.cell_weights.clone(),
            masses,
        }
    }
}

/// `ρ*_i ∝ prior_i · exp(−β E_i)`, normalized with a log-sum-exp shift.
pub fn gibbs_tilt(prior: &GridDensity, energy: &[f64], beta: f64) -> Result<GridDensity> {
    if energy.len() != prior.len() {
        return Err(Error::contract("energy table does not match the grid"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::contract(format!("beta must be finite and non-negative, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(prior.clone());
    }
    if energy.iter().any(|e| e.is_nan()) {
        return Err(Error::contract("energy table contains NaN"));
    }
    let logw: Vec<f64> = prior
        .masses
        .iter()
        .zip(energy)
        .map(|(&p, &e)| if p > 0.0 { p.ln() - beta * e } else { f64::NEG_INFINITY })
        .collect();
    let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::DegenerateTilt);
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - shift).exp()).collect();
    let z: f64 = w.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::DegenerateTilt);
    }
    Ok(prior.with_masses(w.iter().map(|x| x / z).collect()))
}

/// `J(ρ) = −Σ ρ_i E_i − w_KL Σ ρ_i ln(ρ_i / p_i)`, maximized by the tilt at `β = 1/w_KL`.
pub fn regularized_objective(rho: &GridDensity, prior: &GridDensity, energy: &[f64], w_kl: f64) -> Result<f64> {
    if rho.support != prior.support || energy.len() != prior.len() {
        return Err(Error::contract("objective needs a shared support and a matching energy table"));
    }
    let mut j = 0.0;
    for ((&r, &p), &e) in rho.masses.iter().zip(&prior.masses).zip(energy) {
        if r == 0.0 {
            continue;
        }
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        j -= r * e + w_kl * r * (r / p).ln();
    }
    Ok(j)
}

/// `½ Σ |p_i − q_i|`.
pub fn tv_distance(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.support != q.support {
        return Err(Error::contract("TV distance needs a shared support"));
    }
    Ok(0.5 * p.masses.iter().zip(&q.masses).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltReport {
    pub beta_eff: f64,
    pub delta: f64,
    pub tv: f64,
    pub bound: f64,
    pub holds: bool,
    /// `tv / bound`; zero when the bound is zero.
    pub tightness: f64,
}

impl TiltReport {
    pub const CSV_HEADER: &'static str = "beta_eff,delta,tv,bound,holds,tightness";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.beta_eff, self.delta, self.tv, self.bound, self.holds, self.tightness
        )
    }
}

/// Tilts `prior` by both energies and compares the TV distance against `tanh(β δ)`.
pub fn verify_tv_bound(prior: &GridDensity, e_star: &[f64], e_phi: &[f64], beta: f64) -> Result<TiltReport> {
    if e_star.len() != e_phi.len() {
        return Err(Error::contract("energy tables differ in length"));
    }
    let delta = e_star
        .iter()
        .zip(e_phi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tv = tv_distance(&gibbs_tilt(prior, e_star, beta)?, &gibbs_tilt(prior, e_phi, beta)?)?;
    let bound = (beta * delta).tanh();
    Ok(TiltReport {
        beta_eff: beta,
        delta,
        tv,
        bound,
        holds: tv <= bound + 1e-12,
        tightness: if bound > 0.0 { tv / bound } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck {
    pub epsilon: f64,
    pub tv: f64,
    pub bound: f64,
    pub gap: f64,
}

/// The extremal two-point pair of the likelihood-ratio lemma: `Q = (q, 1−q)` with
/// `q = 1/(e^ε + 1)` and `dP/dQ = (e^ε, e^−ε)`.
pub fn lr_lemma_check(epsilon: f64) -> Result<LemmaCheck> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::contract(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    let q = 1.0 / (epsilon.exp() + 1.0);
    // 1 − q without cancellation at large ε
    let q_c = 1.0 / (1.0 + (-epsilon).exp());
    let pts = [0.0, 1.0];
    let qd = GridDensity::new(pts.iter().map(|&p| vec![p]).collect(), vec![1.0; 2], vec![q, q_c])?;
    let pd = GridDensity::new(
        pts.iter().map(|&p| vec![p]).collect(),
        vec![1.0; 2],
        vec![q * epsilon.exp(), q_c * (-epsilon).exp()],
    )?;
    let tv = tv_distance(&pd, &qd)?;
    let bound = (epsilon / 2.0).tanh();
    Ok(LemmaCheck {
        epsilon,
        tv,
        bound,
        gap: (tv - bound).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, StreamRng};
    use proptest::prelude::*;

    fn random_grid(r: &mut StreamRng, n: usize) -> GridDensity {
        let w: Vec<f64> = (0..n).map(|_| 0.5 + rng::uniform(r)).collect();
        let pts: Vec<f64> = (0..n).map(|i| i as f64).collect();
        GridDensity::from_weights(&pts, &w).unwrap()
    }

    #[test]
    fn validation() {
        assert!(GridDensity::from_weights(&[0.0, 1.0], &[0.0, 0.0]).is_err());
        assert!(GridDensity::new(vec![vec![0.0]], vec![1.0], vec![0.9]).is_err());
        assert!(GridDensity::new(vec![vec![0.0], vec![1.0]], vec![1.0; 2], vec![1.5, -0.5]).is_err());
        let g = GridDensity::uniform(0.0, 1.0, 4).unwrap();
        assert!(gibbs_tilt(&g, &[0.0; 3], 1.0).is_err());
        assert!(gibbs_tilt(&g, &[0.0; 4], -1.0).is_err());
    }

    #[test]
    fn tilt_examples() {
        let g = GridDensity::uniform(0.0, 1.0, 2).unwrap();
        let t = gibbs_tilt(&g, &[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((t.masses()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.masses()[1] - 1.0 / 3.0).abs() < 1e-15);
        let mut r = rng::stream(1, "g");
        let p = random_grid(&mut r, 50);
        let e: Vec<f64> = (0..50).map(|_| rng::normal(&mut r)).collect();
        assert_eq!(gibbs_tilt(&p, &e, 0.0).unwrap(), p);
    }

    #[test]
    fn huge_energies_stay_stable() {
        let g = GridDensity::uniform(0.0, 1.0, 3).unwrap();
        let t = gibbs_tilt(&g, &[1e6, 1e6 + 1.0, 1e6 + 2.0], 1.0).unwrap();
        let z = 1.0 + (-1f64).exp() + (-2f64).exp();
        assert!((t.masses()[0] - 1.0 / z).abs() < 1e-15);
        let inf = gibbs_tilt(&g, &[f64::INFINITY; 3], 1.0);
        assert!(matches!(inf, Err(Error::DegenerateTilt)));
    }

    /// Euclidean projection onto the probability simplex (sort-based).
    fn project_simplex(v: &[f64]) -> Vec<f64> {
        let mut u = v.to_vec();
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut css = 0.0;
        let mut theta = 0.0;
        for (i, &ui) in u.iter().enumerate() {
            css += ui;
            let t = (css - 1.0) / (i + 1) as f64;
            if ui - t > 0.0 {
                theta = t;
            }
        }
        v.iter().map(|x| (x - theta).max(0.0)).collect()
    }

    #[test]
    fn tilt_maximizes_regularized_objective() {
        // maximize J(ρ) = Σ ρ(−E) − w Σ ρ ln(ρ/p) by projected gradient ascent
        let mut r = rng::stream(2, "pga");
        let n = 200;
        let p = random_grid(&mut r, n);
        let e: Vec<f64> = (0..n).map(|_| rng::uniform(&mut r)).collect();
        let w_kl = 0.5;
        let mut rho = vec![1.0 / n as f64; n];
        let step = 2e-4;
        for _ in 0..60_000 {
            let g: Vec<f64> = (0..n)
                .map(|i| -e[i] - w_kl * ((rho[i].max(1e-300) / p.masses()[i]).ln() + 1.0))
                .collect();
            let moved: Vec<f64> = rho.iter().zip(&g).map(|(x, gi)| x + step * gi).collect();
            rho = project_simplex(&moved);
        }
        let tilt = gibbs_tilt(&p, &e, 1.0 / w_kl).unwrap();
        let tv = 0.5 * rho.iter().zip(tilt.masses()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv <= 1e-6, "tv {tv}");
        // the optimum value is w ln Σ p e^{−E/w}
        let z: f64 = p.masses().iter().zip(&e).map(|(pi, ei)| pi * (-ei / w_kl).exp()).sum();
        let j = regularized_objective(&tilt, &p, &e, w_kl).unwrap();
        assert!((j - w_kl * z.ln()).abs() < 1e-12);
        let pga = p.with_masses(rho);
        assert!(regularized_objective(&pga, &p, &e, w_kl).unwrap() <= j + 1e-15);
    }

    #[test]
    fn tv_examples() {
        let mut r = rng::stream(3, "tv");
        let p = random_grid(&mut r, 10);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let pts = [0.0, 1.0, 2.0, 3.0];
        let a = GridDensity::from_weights(&pts, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let b = GridDensity::from_weights(&pts, &[0.0, 0.0, 2.0, 1.0]).unwrap();
        assert!((tv_distance(&a, &b).unwrap() - 1.0).abs() <= 1e-15);
        let other = GridDensity::from_weights(&[0.0, 1.0, 2.0, 4.0], &[1.0; 4]).unwrap();
        assert!(matches!(tv_distance(&a, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn tv_equals_subset_supremum() {
        let mut r = rng::stream(4, "subset");
        for _ in 0..20 {
            let p = random_grid(&mut r, 10);
            let q = random_grid(&mut r, 10);
            let mut best: f64 = 0.0;
            for mask in 0u32..1 << 10 {
                let mut d = 0.0;
                for i in 0..10 {
                    if mask >> i & 1 == 1 {
                        d += p.masses()[i] - q.masses()[i];
                    }
                }
                best = best.max(d);
            }
            assert!((tv_distance(&p, &q).unwrap() - best).abs() <= 1e-15);
        }
    }

    #[test]
    fn bound_examples() {
        let mut r = rng::stream(5, "bound");
        let p = random_grid(&mut r, 30);
        let e: Vec<f64> = (0..30).map(|_| rng::normal(&mut r)).collect();
        let same = verify_tv_bound(&p, &e, &e, 12.5).unwrap();
        assert_eq!((same.delta, same.tv, same.bound), (0.0, 0.0, 0.0));
        assert!(same.holds);
        let shifted: Vec<f64> = e.iter().map(|x| x + 0.3).collect();
        let rep = verify_tv_bound(&p, &e, &shifted, 2.0).unwrap();
        assert!(rep.tv <= 1e-12);
        assert!((rep.bound - 0.6f64.tanh()).abs() < 1e-12);
        assert!(rep.holds);
    }

    #[test]
    fn bound_holds_on_random_instances() {
        let mut r = rng::stream(6, "stress");
        for _ in 0..500 {
            let n = 2 + (rng::uniform(&mut r) * 60.0) as usize;
            let p = random_grid(&mut r, n);
            let beta = 0.05 + 20.0 * rng::uniform(&mut r);
            let delta = 0.5 * rng::uniform(&mut r);
            let e: Vec<f64> = (0..n).map(|_| 3.0 * rng::normal(&mut r)).collect();
            let ephi: Vec<f64> = e.iter().map(|x| x + delta * (2.0 * rng::uniform(&mut r) - 1.0)).collect();
            assert!(verify_tv_bound(&p, &e, &ephi, beta).unwrap().holds);
        }
    }

    #[test]
    fn two_cell_sign_split_closed_form() {
        // masses ∝ (e^{βδ}, e^{−βδ}) against (½, ½): TV = tanh(βδ)/2
        let p = GridDensity::uniform(0.0, 1.0, 2).unwrap();
        let (beta, delta) = (1.5, 0.4);
        let rep = verify_tv_bound(&p, &[0.0, 0.0], &[-delta, delta], beta).unwrap();
        assert!((rep.tv - 0.5 * (beta * delta).tanh()).abs() < 1e-12);
        assert!((rep.tightness - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lemma_examples() {
        let z = lr_lemma_check(0.0).unwrap();
        assert_eq!((z.tv, z.bound), (0.0, 0.0));
        let big = lr_lemma_check(20.0).unwrap();
        assert!(big.tv < 1.0 && big.gap <= 1e-12);
        let one = lr_lemma_check(1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((one.tv - (e - 1.0) / (e + 1.0)).abs() <= 1e-12);
        for eps in [0.01, 0.1, 0.5, 1.0, 2.0, 5.0] {
            assert!(lr_lemma_check(eps).unwrap().gap <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn tilts_compose(seed in 0u64..1000, b1 in 0.0f64..5.0, b2 in 0.0f64..5.0) {
            let mut r = rng::stream(seed, "compose");
            let p = random_grid(&mut r, 40);
            let e: Vec<f64> = (0..40).map(|_| rng::normal(&mut r)).collect();
            let two = gibbs_tilt(&gibbs_tilt(&p, &e, b1).unwrap(), &e, b2).unwrap();
            let one = gibbs_tilt(&p, &e, b1 + b2).unwrap();
            for (a, b) in two.masses().iter().zip(one.masses()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn constant_shift_is_absorbed(seed in 0u64..1000, beta in 0.0f64..10.0, c in -50.0f64..50.0) {
            let mut r = rng::stream(seed, "shift");
            let p = random_grid(&mut r, 40);
            let e: Vec<f64> = (0..40).map(|_| rng::normal(&mut r)).collect();
            let es: Vec<f64> = e.iter().map(|x| x + c).collect();
            let a = gibbs_tilt(&p, &e, beta).unwrap();
            let b = gibbs_tilt(&p, &es, beta).unwrap();
            for (x, y) in a.masses().iter().zip(b.masses()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn tilted_masses_are_normalized(seed in 0u64..1000, beta in 0.0f64..50.0) {
            let mut r = rng::stream(seed, "norm");
            let p = random_grid(&mut r, 25);
            let e: Vec<f64> = (0..25).map(|_| 4.0 * rng::normal(&mut r)).collect();
            let t = gibbs_tilt(&p, &e, beta).unwrap();
            prop_assert!((t.masses().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(t.masses().iter().all(|&m| m >= 0.0));
        }
    }
}
