use super::network::ScoreNetwork;
use super::sampler::{draw_noise, forward_sample};
use super::schedule::NoiseSchedule;
use crate::autodiff::{value_and_grad, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nbody::{norm, project_com, Configuration, RigidMotion, Vec3};
use crate::optim::{clip_grad_norm, Adam, CosineSchedule};
use crate::oracle::EnergyOracle;
use crate::rng::{self, StreamRng};

/// Training data: relaxed oracle minima under random rigid motions plus Gaussian jitter.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    pool: Vec<Configuration>,
    jitter: f64,
}

/// Invariant per-body features: chain ends get channel 0, interior bodies channel 1.
pub fn body_features(n: usize, d_h: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * d_h];
    if d_h == 0 {
        return h;
    }
    for i in 0..n {
        let end = i == 0 || i + 1 == n;
        let c = if end || d_h == 1 { 0 } else { 1 };
        h[i * d_h + c] = 1.0;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub n_bodies: usize,
    pub d_h: usize,
    pub pool_size: usize,
    /// Bond length of the random-walk seeds before relaxation.
    pub spacing: f64,
    pub jitter: f64,
    pub relax_steps: usize,
}

impl DataGenerator {
    pub fn new(oracle: &dyn EnergyOracle, cfg: &DataConfig, r: &mut StreamRng) -> Result<Self> {
        if cfg.n_bodies == 0 {
            return Err(Error::EmptySystem);
        }
        if !(cfg.jitter >= 0.0) || !(cfg.spacing > 0.0) || cfg.pool_size == 0 {
            return Err(Error::config("data", "need jitter >= 0, spacing > 0 and a non-empty pool"));
        }
        let feats = body_features(cfg.n_bodies, cfg.d_h);
        let mut pool = Vec::with_capacity(cfg.pool_size);
        for _ in 0..cfg.pool_size {
            let mut pos: Vec<Vec3> = vec![[0.0; 3]];
            while pos.len() < cfg.n_bodies {
                let v = [rng::normal(r), rng::normal(r), rng::normal(r)];
                let s = cfg.spacing / norm(&v).max(1e-12);
                let prev = pos[pos.len() - 1];
                let cand = [prev[0] + s * v[0], prev[1] + s * v[1], prev[2] + s * v[2]];
                // self-avoiding walk keeps non-neighbors apart
                let ok = pos[..pos.len() - 1]
                    .iter()
                    .all(|p| norm(&crate::nbody::sub(p, &cand)) > 0.9 * cfg.spacing);
                if ok {
                    pos.push(cand);
                }
            }
            let relaxed = relax(oracle, Configuration::new(pos, feats.clone(), cfg.d_h)?, cfg.relax_steps)?;
            pool.push(relaxed.projected()?);
        }
        Ok(Self {
            pool,
            jitter: cfg.jitter,
        })
    }

    pub fn pool(&self) -> &[Configuration] {
        &self.pool
    }

    pub fn draw(&self, r: &mut StreamRng) -> Result<Configuration> {
        let idx = (rng::uniform(r) * self.pool.len() as f64) as usize % self.pool.len();
        let g = RigidMotion::random(r, true, 0.0);
        let mut z = self.pool[idx].apply(&g);
        for p in z.positions_mut() {
            for v in p.iter_mut() {
                *v += self.jitter * rng::normal(r);
            }
        }
        let pos = project_com(z.positions())?;
        z.positions_mut().copy_from_slice(&pos);
        Ok(z)
    }
}

/// Steepest descent with a capped displacement per step.
fn relax(oracle: &dyn EnergyOracle, mut z: Configuration, steps: usize) -> Result<Configuration> {
    let mut lr: f64 = 0.05;
    let (mut e, mut f) = oracle.evaluate(&z)?;
    for _ in 0..steps {
        let fmax = f.rows().iter().map(norm).fold(0.0, f64::max);
        if fmax < 1e-8 {
            break;
        }
        let scale = lr.min(0.1 / fmax);
        let mut trial = z.clone();
        for (p, fi) in trial.positions_mut().iter_mut().zip(f.rows()) {
            for k in 0..3 {
                p[k] += scale * fi[k];
            }
        }
        let (e2, f2) = oracle.evaluate(&trial)?;
        if e2 <= e {
            z = trial;
            e = e2;
            f = f2;
            lr *= 1.1;
        } else {
            lr *= 0.5;
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub min_lr_ratio: f64,
    pub max_grad_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr: 2e-3,
            warmup_steps: 50,
            min_lr_ratio: 0.05,
            max_grad_norm: 10.0,
        }
    }
}

/// A noised training batch.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub z_t: Vec<Configuration>,
    pub noise: Vec<Configuration>,
    pub t: Vec<usize>,
}

pub fn noised_batch(
    data: &DataGenerator,
    schedule: &NoiseSchedule,
    size: usize,
    r: &mut StreamRng,
) -> Result<NoisedBatch> {
    let mut b = NoisedBatch {
        z_t: Vec::with_capacity(size),
        noise: Vec::with_capacity(size),
        t: Vec::with_capacity(size),
    };
    for _ in 0..size {
        let z0 = data.draw(r)?;
        let t = 1 + (rng::uniform(r) * schedule.steps() as f64) as usize % schedule.steps();
        let e = draw_noise(r, z0.n_bodies(), z0.d_h())?;
        b.z_t.push(forward_sample(schedule, &z0, t, &e)?);
        b.noise.push(e);
        b.t.push(t);
    }
    Ok(b)
}

/// `mean_b ‖ε_b − ε̂(z_t, t)_b‖²` summed over both blocks of each sample.
pub fn denoising_loss(
    net: &ScoreNetwork,
    t: &Tape,
    w: &[Var],
    schedule: &NoiseSchedule,
    batch: &NoisedBatch,
) -> Result<Var> {
    let refs: Vec<&Configuration> = batch.z_t.iter().collect();
    let (graph, x, h) = net.inputs(t, &refs)?;
    let frac: Vec<f64> = batch.t.iter().map(|&s| s as f64 / schedule.steps() as f64).collect();
    let (ex, eh) = net.forward(t, w, &graph, x, h, &frac)?;
    let nx: Vec<f64> = batch.noise.iter().flat_map(|e| e.positions().iter().flatten().copied()).collect();
    let nh: Vec<f64> = batch.noise.iter().flat_map(|e| e.features().iter().copied()).collect();
    let rows = nx.len() / 3;
    let tx = t.constant(Tensor::matrix(rows, 3, nx)?)?;
    let th = t.constant(Tensor::matrix(rows, net.config().d_h, nh)?)?;
    let lx = t.sum(t.square(t.sub(ex, tx)?)?)?;
    let lh = t.sum(t.square(t.sub(eh, th)?)?)?;
    t.scale(t.add(lx, lh)?, 1.0 / batch.z_t.len() as f64)
}

/// Loss value only.
pub fn denoising_loss_value(net: &ScoreNetwork, schedule: &NoiseSchedule, batch: &NoisedBatch) -> Result<f64> {
    let t = Tape::new();
    let w = net.bind(&t, false)?;
    let l = denoising_loss(net, &t, &w, schedule, batch)?;
    Ok(t.item(l))
}

/// Trains `net` in place with Adam on fresh noised batches; returns the per-step loss curve.
pub fn pretrain(
    net: &mut ScoreNetwork,
    data: &DataGenerator,
    schedule: &NoiseSchedule,
    cfg: &PretrainConfig,
    r: &mut StreamRng,
) -> Result<Vec<f64>> {
    let sched = CosineSchedule {
        base_lr: cfg.lr,
        warmup_steps: cfg.warmup_steps,
        total_steps: cfg.steps,
        min_lr_ratio: cfg.min_lr_ratio,
    };
    let mut opt = Adam::new(0.9, 0.999, 1e-8);
    let mut params = net.params().to_vec();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = noised_batch(data, schedule, cfg.batch_size, r)?;
        let (loss, mut grads) = value_and_grad(|t, w| denoising_loss(net, t, w, schedule, &batch), &params)
            .map_err(|e| if e.is_numeric() { Error::Diverged { epoch: step } } else { e })?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: step });
        }
        curve.push(loss);
        clip_grad_norm(&mut grads, cfg.max_grad_norm);
        opt.update(&mut params, &grads, sched.lr(step));
        net.set_params(params.clone())?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{max_rel_error, numerical_grad};
    use crate::diffusion::network::NetConfig;
    use crate::diffusion::schedule::{make_schedule, ScheduleKind};
    use crate::oracle::{HarmonicChain, LennardJones};

    fn data(n: usize) -> DataGenerator {
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let cfg = DataConfig {
            n_bodies: n,
            d_h: 2,
            pool_size: 16,
            spacing: 1.0,
            jitter: 0.05,
            relax_steps: 0,
        };
        DataGenerator::new(&o, &cfg, &mut rng::stream(1, "data")).unwrap()
    }

    #[test]
    fn generator_yields_centered_near_minimum_configs() {
        let d = data(5);
        let o = HarmonicChain::new(1.0, 1.0).unwrap();
        let mut r = rng::stream(2, "draw");
        for _ in 0..50 {
            let z = d.draw(&mut r).unwrap();
            assert!(z.com().iter().all(|c| c.abs() < 1e-12));
            assert!(o.energy(&z).unwrap() < 0.2);
        }
        for z in d.pool() {
            assert!(o.energy(z).unwrap() < 1e-20);
        }
    }

    #[test]
    fn relaxation_finds_lj_minimum() {
        let o = LennardJones::new(1.0, 1.0, 0.3).unwrap();
        let cfg = DataConfig {
            n_bodies: 2,
            d_h: 2,
            pool_size: 2,
            spacing: 1.3,
            jitter: 0.0,
            relax_steps: 500,
        };
        let d = DataGenerator::new(&o, &cfg, &mut rng::stream(3, "lj")).unwrap();
        for z in d.pool() {
            assert!((z.distance(0, 1) - 2f64.powf(1.0 / 6.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn untrained_loss_is_about_dimension() {
        let d = data(5);
        let s = make_schedule(100, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let net = ScoreNetwork::new(NetConfig::default(), 3).unwrap();
        let b = noised_batch(&d, &s, 256, &mut rng::stream(3, "nb")).unwrap();
        let l = denoising_loss_value(&net, &s, &b).unwrap();
        let dim = crate::nbody::subspace_dim(5, 2) as f64;
        // standard error of a mean of 256 chi-square(dim) draws is sqrt(2 dim / 256)
        assert!((l - dim).abs() < 4.0 * (2.0 * dim / 256.0).sqrt() + 0.05 * dim, "loss {l} dim {dim}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let d = data(2);
        let s = make_schedule(20, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let mut net = ScoreNetwork::new(
            NetConfig {
                hidden: 4,
                layers: 2,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        let mut r = rng::stream(4, "bump");
        for p in net.params_mut() {
            for v in p.data_mut() {
                *v += 0.2 * rng::normal(&mut r);
            }
        }
        let b = noised_batch(&d, &s, 3, &mut r).unwrap();
        let (_, g) = value_and_grad(|t, w| denoising_loss(&net, t, w, &s, &b), net.params()).unwrap();
        let fd = numerical_grad(
            |p| {
                let t = Tape::new();
                let w: Vec<_> = p.iter().map(|x| t.constant(x.clone()).unwrap()).collect();
                Ok(t.item(denoising_loss(&net, &t, &w, &s, &b)?))
            },
            net.params(),
            1e-5,
        )
        .unwrap();
        let err = max_rel_error(&g, &fd, 1e-6);
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn short_pretraining_reduces_loss() {
        let d = data(3);
        let s = make_schedule(50, ScheduleKind::Polynomial2, 1e-5).unwrap();
        let mut net = ScoreNetwork::new(
            NetConfig {
                hidden: 32,
                ..Default::default()
            },
            5,
        )
        .unwrap();
        let cfg = PretrainConfig {
            steps: 300,
            batch_size: 16,
            lr: 3e-3,
            warmup_steps: 20,
            ..Default::default()
        };
        let curve = pretrain(&mut net, &d, &s, &cfg, &mut rng::stream(5, "pretrain")).unwrap();
        let head = curve[..30].iter().sum::<f64>() / 30.0;
        let tail = curve[curve.len() - 30..].iter().sum::<f64>() / 30.0;
        assert!(tail < 0.7 * head, "head {head} tail {tail}");
    }
}
