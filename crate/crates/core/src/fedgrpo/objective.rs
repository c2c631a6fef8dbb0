use super::rollout::Transition;
use crate::autodiff::{Tape, Tensor, Var};
use crate::diffusion::{sq_dist, NoiseSchedule, ScoreNetwork};
use crate::error::Result;
use crate::nbody::Configuration;

/// A stored transition paired with its advantage.
#[derive(Debug, Clone, Copy)]
pub struct TransitionRef<'a> {
    pub step: &'a Transition,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub loss: f64,
    /// Mean per-step KL to the pretrained policy.
    pub kl_hat: f64,
    /// Fraction of transitions with `|ξ − 1| > ε`.
    pub clip_frac: f64,
    pub max_abs_log_ratio: f64,
    /// Transitions that entered the objective (`σ > 0`).
    pub active: usize,
}

/// `(‖s − μ_old‖² − ‖s − μ_θ‖²) / (2σ²)`, written through `d = μ_θ − μ_old`.
fn log_ratio_parts(v: &Configuration, d: &Configuration, sigma: f64) -> f64 {
    let mut q = 0.0;
    for (a, b) in v.positions().iter().zip(d.positions()) {
        for k in 0..3 {
            q += 2.0 * a[k] * b[k] - b[k] * b[k];
        }
    }
    for (a, b) in v.features().iter().zip(d.features()) {
        q += 2.0 * a * b - b * b;
    }
    q / (2.0 * sigma * sigma)
}

fn diff(u: &Configuration, v: &Configuration) -> Configuration {
    let pos = u
        .positions()
        .iter()
        .zip(v.positions())
        .map(|(p, q)| [p[0] - q[0], p[1] - q[1], p[2] - q[2]])
        .collect();
    let feats = u.features().iter().zip(v.features()).map(|(p, q)| p - q).collect();
    Configuration::new(pos, feats, u.d_h()).expect("same layout")
}

fn scaled(u: &Configuration, s: f64) -> Configuration {
    let pos = u.positions().iter().map(|p| [s * p[0], s * p[1], s * p[2]]).collect();
    let feats = u.features().iter().map(|p| s * p).collect();
    Configuration::new(pos, feats, u.d_h()).expect("same layout")
}

/// `log ξ` for a sample under two equal-covariance Gaussian means.
pub fn log_ratio_from_means(sample: &Configuration, mean_theta: &Configuration, mean_old: &Configuration, sigma: f64) -> Option<f64> {
    if sigma <= 0.0 {
        return None;
    }
    Some(log_ratio_parts(&diff(sample, mean_old), &diff(mean_theta, mean_old), sigma))
}

/// `μ_θ − μ_old = c_eps (ε_old − ε_θ)` for each transition, one network pass.
fn mean_shifts(net: &ScoreNetwork, schedule: &NoiseSchedule, steps: &[&Transition]) -> Result<Vec<Configuration>> {
    let zs: Vec<&Configuration> = steps.iter().map(|s| &s.state).collect();
    let frac: Vec<f64> = steps.iter().map(|s| s.t as f64 / schedule.steps() as f64).collect();
    let eps = net.predict_eps(&zs, &frac)?;
    steps
        .iter()
        .zip(eps)
        .map(|(s, e)| {
            let c = schedule.transition(s.t)?.c_eps;
            let e = Configuration::new(e.x, e.h, s.state.d_h())?;
            Ok(scaled(&diff(&s.eps_old, &e), c))
        })
        .collect()
}

/// `log ξ = log N(s; μ_θ, σ²) − log N(s; μ_old, σ²)` with `μ_θ` from a fresh
/// evaluation of `net`. `None` for a deterministic transition.
pub fn log_ratio(net: &ScoreNetwork, schedule: &NoiseSchedule, step: &Transition) -> Result<Option<f64>> {
    if step.sigma <= 0.0 {
        return Ok(None);
    }
    let d = mean_shifts(net, schedule, &[step])?.remove(0);
    Ok(Some(log_ratio_parts(&diff(&step.sample, &step.mean_old), &d, step.sigma)))
}

/// `−(1/n_traj) Σ min(ξ Â, clip(ξ, 1−ε, 1+ε) Â) + w_KL · KL̂` from precomputed ratios.
pub fn clipped_objective(ratios: &[f64], advantages: &[f64], n_traj: usize, clip: f64, kl_weight: f64, kl_hat: f64) -> f64 {
    let s: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&x, &a)| (x * a).min(x.clamp(1.0 - clip, 1.0 + clip) * a))
        .sum();
    -s / n_traj as f64 + kl_weight * kl_hat
}

/// Loss value without a tape.
pub fn surrogate_loss_value(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    items: &[TransitionRef],
    n_traj: usize,
    clip: f64,
    kl_weight: f64,
) -> Result<LossStats> {
    let active: Vec<&TransitionRef> = items.iter().filter(|i| i.step.sigma > 0.0).collect();
    if active.is_empty() {
        return Ok(LossStats::default());
    }
    let steps: Vec<&Transition> = active.iter().map(|i| i.step).collect();
    let shifts = mean_shifts(net, schedule, &steps)?;
    let mut ratios = Vec::with_capacity(active.len());
    let mut kl = 0.0;
    let mut max_lr: f64 = 0.0;
    for (s, d) in steps.iter().zip(&shifts) {
        let lr = log_ratio_parts(&diff(&s.sample, &s.mean_old), d, s.sigma);
        max_lr = max_lr.max(lr.abs());
        ratios.push(lr.exp());
        let m = diff(&diff(&s.mean_old, &s.mean_pre), &scaled(d, -1.0));
        kl += sq_dist(&m, &scaled(&m, 0.0)) / (2.0 * s.sigma * s.sigma);
    }
    let kl_hat = kl / active.len() as f64;
    let adv: Vec<f64> = active.iter().map(|i| i.advantage).collect();
    Ok(LossStats {
        loss: clipped_objective(&ratios, &adv, n_traj, clip, kl_weight, kl_hat),
        kl_hat,
        clip_frac: ratios.iter().filter(|x| (*x - 1.0).abs() > clip).count() as f64 / ratios.len() as f64,
        max_abs_log_ratio: max_lr,
        active: active.len(),
    })
}

fn flat_x<'a>(cs: impl Iterator<Item = &'a Configuration>) -> Vec<f64> {
    cs.flat_map(|c| c.positions().iter().flatten().copied()).collect()
}

fn flat_h<'a>(cs: impl Iterator<Item = &'a Configuration>) -> Vec<f64> {
    cs.flat_map(|c| c.features().iter().copied()).collect()
}

/// Clipped surrogate loss and its parameter gradient over a micro-batch of transitions.
pub fn surrogate_loss(
    net: &ScoreNetwork,
    schedule: &NoiseSchedule,
    items: &[TransitionRef],
    n_traj: usize,
    clip: f64,
    kl_weight: f64,
) -> Result<(LossStats, Vec<Tensor>)> {
    let active: Vec<&TransitionRef> = items.iter().filter(|i| i.step.sigma > 0.0).collect();
    if active.is_empty() {
        let zeros = net.params().iter().map(|p| p.with_data(vec![0.0; p.len()])).collect();
        return Ok((LossStats::default(), zeros));
    }
    let b = active.len();
    let d_h = net.config().d_h;
    let tape = Tape::new();
    let w = net.bind(&tape, true)?;
    let states: Vec<&Configuration> = active.iter().map(|i| &i.step.state).collect();
    let (graph, x, h) = net.inputs(&tape, &states)?;
    let n = graph.n;
    let times: Vec<f64> = active.iter().map(|i| i.step.t as f64 / schedule.steps() as f64).collect();
    let (ex, eh) = net.forward(&tape, &w, &graph, x, h, &times)?;

    let mut c_eps = Vec::with_capacity(b * n);
    let mut inv = Vec::with_capacity(b);
    for i in &active {
        let c = schedule.transition(i.step.t)?.c_eps;
        c_eps.extend(std::iter::repeat_n(c, n));
        inv.push(1.0 / (2.0 * i.step.sigma * i.step.sigma));
    }
    let c_eps = tape.constant(Tensor::column(c_eps))?;
    let inv = tape.constant(Tensor::column(inv))?;
    let adv = tape.constant(Tensor::column(active.iter().map(|i| i.advantage).collect()))?;
    let node_graph = graph.node_graph.clone();
    let steps = || active.iter().map(|i| i.step);

    let eps_old_x = tape.constant(Tensor::matrix(b * n, 3, flat_x(steps().map(|s| &s.eps_old)))?)?;
    let eps_old_h = tape.constant(Tensor::matrix(b * n, d_h, flat_h(steps().map(|s| &s.eps_old)))?)?;
    let dx = tape.mul_col(tape.sub(eps_old_x, ex)?, c_eps)?;
    let dh = tape.mul_col(tape.sub(eps_old_h, eh)?, c_eps)?;

    let v: Vec<Configuration> = steps().map(|s| scaled(&diff(&s.sample, &s.mean_old), 2.0)).collect();
    let two_vx = tape.constant(Tensor::matrix(b * n, 3, flat_x(v.iter()))?)?;
    let two_vh = tape.constant(Tensor::matrix(b * n, d_h, flat_h(v.iter()))?)?;
    let per_graph = |a: Var, bb: Var| -> Result<Var> {
        let node = tape.add(tape.row_sums(a)?, tape.row_sums(bb)?)?;
        tape.mul(tape.scatter_add_rows(node, node_graph.clone(), b)?, inv)
    };
    let qx = tape.sub(tape.mul(two_vx, dx)?, tape.square(dx)?)?;
    let qh = tape.sub(tape.mul(two_vh, dh)?, tape.square(dh)?)?;
    let log_ratio = per_graph(qx, qh)?;
    let ratio = tape.exp(log_ratio)?;
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.mul(tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?, adv)?;
    let surrogate = tape.sum(tape.minimum(unclipped, clipped)?)?;

    let u: Vec<Configuration> = steps().map(|s| diff(&s.mean_old, &s.mean_pre)).collect();
    let ux = tape.constant(Tensor::matrix(b * n, 3, flat_x(u.iter()))?)?;
    let uh = tape.constant(Tensor::matrix(b * n, d_h, flat_h(u.iter()))?)?;
    let mx = tape.add(ux, dx)?;
    let mh = tape.add(uh, dh)?;
    let kl = per_graph(tape.square(mx)?, tape.square(mh)?)?;
    let kl_mean = tape.mean(kl)?;

    let loss = tape.sub(tape.scale(kl_mean, kl_weight)?, tape.scale(surrogate, 1.0 / n_traj as f64)?)?;
    let grads = tape.backward(loss)?;
    let ratios = tape.value(ratio);
    let lrs = tape.value(log_ratio);
    let stats = LossStats {
        loss: tape.item(loss),
        kl_hat: tape.item(kl_mean),
        clip_frac: ratios.data().iter().filter(|x| (*x - 1.0).abs() > clip).count() as f64 / b as f64,
        max_abs_log_ratio: lrs.data().iter().fold(0.0, |m: f64, x| m.max(x.abs())),
        active: b,
    };
    Ok((stats, w.iter().map(|&v| grads.wrt(v)).collect()))
}
