use std::rc::Rc;

use super::EnergyOracle;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nbody::{norm, sub, Configuration, ForceField, Topology};
use crate::optim::{Adam, CosineSchedule};
use crate::rng;

/// Hyperparameters for [`fit_surrogate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub n_rbf: usize,
    pub cutoff: f64,
    pub lambda_e: f64,
    pub lambda_f: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            n_rbf: 16,
            cutoff: 4.0,
            lambda_e: 1.0,
            lambda_f: 10.0,
            epochs: 400,
            lr: 5e-3,
            seed: 0,
        }
    }
}

/// Learned pair potential `E = Σ_{i<j} φ(rbf(r_ij), bonded_ij)`.
///
/// `φ` is a two-layer tanh MLP over Gaussian radial basis features plus the
/// bonded flag of the pair, so the energy sees only distances and is exactly
/// E(3)-invariant.
#[derive(Debug, Clone)]
pub struct SurrogatePotential {
    topology: Topology,
    centers: Vec<f64>,
    width: f64,
    params: Vec<Tensor>,
    loss_curve: Vec<f64>,
}

struct Pairs {
    i: Rc<Vec<usize>>,
    j: Rc<Vec<usize>>,
    graph: Rc<Vec<usize>>,
    bonded: Vec<f64>,
}

fn pairs(topology: Topology, n: usize, batch: usize) -> Pairs {
    let mut p = Pairs {
        i: Rc::new(Vec::new()),
        j: Rc::new(Vec::new()),
        graph: Rc::new(Vec::new()),
        bonded: Vec::new(),
    };
    let (mut vi, mut vj, mut vg) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..batch {
        for i in 0..n {
            for j in i + 1..n {
                vi.push(b * n + i);
                vj.push(b * n + j);
                vg.push(b);
                p.bonded.push(if topology.bonded(i, j) { 1.0 } else { 0.0 });
            }
        }
    }
    p.i = Rc::new(vi);
    p.j = Rc::new(vj);
    p.graph = Rc::new(vg);
    p
}

impl SurrogatePotential {
    pub fn new(topology: Topology, cfg: &SurrogateConfig) -> Result<Self> {
        if cfg.hidden == 0 || cfg.n_rbf < 2 || !(cfg.cutoff > 0.0) {
            return Err(Error::config("oracle.surrogate", "hidden, n_rbf >= 2 and cutoff > 0 required"));
        }
        let mut r = rng::stream(cfg.seed, "surrogate.init");
        let d_in = cfg.n_rbf + 1;
        let h = cfg.hidden;
        let mut layer = |fan_in: usize, fan_out: usize, gain: f64| {
            let s = gain / (fan_in as f64).sqrt();
            Tensor::matrix(fan_in, fan_out, rng::normals(&mut r, fan_in * fan_out).iter().map(|v| v * s).collect())
        };
        let params = vec![
            layer(d_in, h, 1.0)?,
            Tensor::vector(vec![0.0; h]),
            layer(h, h, 1.0)?,
            Tensor::vector(vec![0.0; h]),
            layer(h, 1, 0.1)?,
            Tensor::vector(vec![0.0]),
        ];
        let step = cfg.cutoff / (cfg.n_rbf - 1) as f64;
        Ok(Self {
            topology,
            centers: (0..cfg.n_rbf).map(|k| k as f64 * step).collect(),
            width: step,
            params,
            loss_curve: Vec::new(),
        })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params.iter().zip(&self.params).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::contract("surrogate parameter shapes differ"));
        }
        self.params = params;
        Ok(())
    }

    pub fn loss_curve(&self) -> &[f64] {
        &self.loss_curve
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }

    /// Radial basis features of constant distances `r` and their `d/dr`.
    fn rbf_const(&self, r: &[f64], bonded: &[f64]) -> (Tensor, Tensor) {
        let k = self.centers.len();
        let mut f = Vec::with_capacity(r.len() * (k + 1));
        let mut df = Vec::with_capacity(r.len() * (k + 1));
        let w2 = self.width * self.width;
        for (&ri, &b) in r.iter().zip(bonded) {
            for &c in &self.centers {
                let g = (-(ri - c) * (ri - c) / w2).exp();
                f.push(g);
                df.push(-2.0 * (ri - c) / w2 * g);
            }
            f.push(b);
            df.push(0.0);
        }
        let n = r.len();
        (
            Tensor::matrix(n, k + 1, f).expect("rbf shape"),
            Tensor::matrix(n, k + 1, df).expect("rbf shape"),
        )
    }

    /// Radial basis features of distances living on the tape.
    fn rbf_var(&self, t: &Tape, r: Var, bonded: &[f64]) -> Result<Var> {
        let p = bonded.len();
        let k = self.centers.len();
        let ones = t.constant(Tensor::matrix(1, k, vec![1.0; k])?)?;
        let rr = t.matmul(r, ones)?;
        let neg_c = t.constant(Tensor::vector(self.centers.iter().map(|c| -c).collect()))?;
        let d = t.add_row(rr, neg_c)?;
        let g = t.exp(t.scale(t.square(d)?, -1.0 / (self.width * self.width))?)?;
        let b = t.constant(Tensor::column(bonded.to_vec()))?;
        debug_assert_eq!(t.shape(g), vec![p, k]);
        t.concat_cols(&[g, b])
    }

    /// Pair energies `[P,1]` from features `u`.
    fn phi(&self, t: &Tape, w: &[Var], u: Var) -> Result<(Var, Var, Var)> {
        let a1 = t.tanh(t.add_row(t.matmul(u, w[0])?, w[1])?)?;
        let a2 = t.tanh(t.add_row(t.matmul(a1, w[2])?, w[3])?)?;
        let e = t.add_row(t.matmul(a2, w[4])?, w[5])?;
        Ok((e, a1, a2))
    }

    /// Per-config energies `[B,1]` and forces `[B·N,3]` for constant positions.
    ///
    /// Forces are built by pushing `dφ/dr` through the MLP in tangent form, so
    /// they stay first-order functions of the parameters and can enter a loss.
    fn energies_and_forces(&self, t: &Tape, w: &[Var], batch: &[Configuration]) -> Result<(Var, Var)> {
        let n = batch[0].n_bodies();
        let pr = pairs(self.topology, n, batch.len());
        let flat: Vec<[f64; 3]> = batch.iter().flat_map(|c| c.positions().iter().copied()).collect();
        let mut r = Vec::with_capacity(pr.i.len());
        let mut unit = Vec::with_capacity(3 * pr.i.len());
        for (&i, &j) in pr.i.iter().zip(pr.j.iter()) {
            let d = sub(&flat[i], &flat[j]);
            let ri = norm(&d);
            if ri < 1e-12 {
                return Err(Error::Singularity {
                    i: i % n,
                    j: j % n,
                    distance: ri,
                });
            }
            r.push(ri);
            unit.extend(d.iter().map(|x| x / ri));
        }
        let (u, du) = self.rbf_const(&r, &pr.bonded);
        let u = t.constant(u)?;
        let du = t.constant(du)?;
        let (e_pair, a1, a2) = self.phi(t, w, u)?;
        // tangent of each layer w.r.t. r
        let one_minus = |a: Var| -> Result<Var> { t.shift(t.neg(t.square(a)?)?, 1.0) };
        let da1 = t.mul(one_minus(a1)?, t.matmul(du, w[0])?)?;
        let da2 = t.mul(one_minus(a2)?, t.matmul(da1, w[2])?)?;
        let de = t.matmul(da2, w[4])?;
        let energy = t.scatter_add_rows(e_pair, pr.graph.clone(), batch.len())?;
        // F_i = -dφ/dr · (x_i - x_j)/r ; F_j = -F_i
        let dirs = t.constant(Tensor::matrix(r.len(), 3, unit)?)?;
        let fij = t.neg(t.mul_col(dirs, de)?)?;
        let on_i = t.scatter_add_rows(fij, pr.i.clone(), batch.len() * n)?;
        let on_j = t.scatter_add_rows(fij, pr.j.clone(), batch.len() * n)?;
        let forces = t.sub(on_i, on_j)?;
        Ok((energy, forces))
    }

    /// Matching loss `mean_b[λ_E (E−E_ref)² + λ_F Σ_i |F_i − F_ref_i|²]`.
    pub fn matching_loss(
        &self,
        t: &Tape,
        w: &[Var],
        batch: &[Configuration],
        e_ref: &[f64],
        f_ref: &[ForceField],
        lambda_e: f64,
        lambda_f: f64,
    ) -> Result<Var> {
        let (e, f) = self.energies_and_forces(t, w, batch)?;
        let b = batch.len() as f64;
        let er = t.constant(Tensor::column(e_ref.to_vec()))?;
        let fr: Vec<f64> = f_ref.iter().flat_map(|ff| ff.rows().iter().flatten().copied()).collect();
        let fr = t.constant(Tensor::matrix(fr.len() / 3, 3, fr)?)?;
        let le = t.scale(t.sum(t.square(t.sub(e, er)?)?)?, lambda_e / b)?;
        let lf = t.scale(t.sum(t.square(t.sub(f, fr)?)?)?, lambda_f / b)?;
        t.add(le, lf)
    }
}

impl EnergyOracle for SurrogatePotential {
    /// Energy by a forward pass with positions on the tape; forces by a reverse sweep.
    fn evaluate(&self, cfg: &Configuration) -> Result<(f64, ForceField)> {
        let n = cfg.n_bodies();
        if n < 2 {
            return Ok((0.0, ForceField::zeros(n)));
        }
        let t = Tape::new();
        let w = self
            .params
            .iter()
            .map(|p| t.constant(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = cfg.positions().iter().flatten().copied().collect();
        let x = t.param(Tensor::matrix(n, 3, flat)?)?;
        let pr = pairs(self.topology, n, 1);
        for (&i, &j) in pr.i.iter().zip(pr.j.iter()) {
            let d = cfg.distance(i, j);
            if d < 1e-12 {
                return Err(Error::Singularity { i, j, distance: d });
            }
        }
        let d = t.sub(t.gather_rows(x, pr.i.clone())?, t.gather_rows(x, pr.j.clone())?)?;
        let r = t.sqrt(t.row_sums(t.square(d)?)?)?;
        let u = self.rbf_var(&t, r, &pr.bonded)?;
        let (e_pair, _, _) = self.phi(&t, &w, u)?;
        let e = t.sum(e_pair)?;
        let g = t.backward(e)?.wrt(x);
        let forces = g.data().chunks(3).map(|c| [-c[0], -c[1], -c[2]]).collect();
        Ok((t.item(e), ForceField(forces)))
    }

    fn topology(&self) -> Topology {
        self.topology
    }
}

/// Fits a surrogate to `target` on `configs` with the energy-and-force matching loss.
pub fn fit_surrogate(
    target: &dyn EnergyOracle,
    configs: &[Configuration],
    cfg: &SurrogateConfig,
) -> Result<SurrogatePotential> {
    if cfg.lambda_e < 0.0 || cfg.lambda_f < 0.0 || cfg.lambda_e + cfg.lambda_f == 0.0 {
        return Err(Error::config("oracle.surrogate.lambda", "weights must be >= 0 and not both zero"));
    }
    if configs.len() < 32 {
        return Err(Error::InsufficientSamples {
            got: configs.len(),
            need: 32,
        });
    }
    let n = configs[0].n_bodies();
    if configs.iter().any(|c| c.n_bodies() != n) {
        return Err(Error::contract("training configurations differ in body count"));
    }
    let mut e_ref = Vec::with_capacity(configs.len());
    let mut f_ref = Vec::with_capacity(configs.len());
    for c in configs {
        let (e, f) = target.evaluate(c)?;
        e_ref.push(e);
        f_ref.push(f);
    }
    let mut model = SurrogatePotential::new(target.topology(), cfg)?;
    let mut opt = Adam::new(0.9, 0.999, 1e-8);
    let mut params = model.params.clone();
    let schedule = CosineSchedule {
        base_lr: cfg.lr,
        warmup_steps: 0,
        total_steps: cfg.epochs,
        min_lr_ratio: 0.05,
    };
    for epoch in 0..cfg.epochs {
        let (loss, grads) = crate::autodiff::value_and_grad(
            |t, w| model.matching_loss(t, w, configs, &e_ref, &f_ref, cfg.lambda_e, cfg.lambda_f),
            &params,
        )
        .map_err(|e| if e.is_numeric() { Error::Diverged { epoch } } else { e })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        model.loss_curve.push(loss);
        opt.update(&mut params, &grads, schedule.lr(epoch));
        model.params.clone_from(&params);
    }
    Ok(model)
}
