use super::grid::{gibbs_tilt, tv_distance, GridDensity};
use crate::diffusion::{sample_batch, NoiseSchedule, ScoreNetwork};
use crate::error::{Error, Result};
use crate::nbody::Configuration;
use crate::oracle::EnergyOracle;
use crate::rng;

const MIN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltCheckConfig {
    pub n_samples: usize,
    pub bins: usize,
    /// Fitted temperatures are searched in `[−beta_max, beta_max]`.
    pub beta_max: f64,
    pub seed: u64,
}

impl Default for TiltCheckConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            bins: 30,
            beta_max: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count_pre: f64,
    pub count_post: f64,
    /// Mass of the fitted tilt of the pretrained histogram.
    pub tilt_mass: f64,
}

impl HistogramRow {
    pub const CSV_HEADER: &'static str = "bin_lo,bin_hi,count_pre,count_post,tilt_mass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.bin_lo, self.bin_hi, self.count_pre, self.count_post, self.tilt_mass
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltCheckReport {
    /// `1/w_KL` of the trainer, for reference.
    pub beta_eff: f64,
    pub beta_fit: f64,
    /// TV between the post-trained histogram and the fitted tilt.
    pub residual_tv: f64,
    /// TV between the pretrained and post-trained histograms.
    pub tv_pre_post: f64,
    pub rows: Vec<HistogramRow>,
}

/// Distance between the first two bodies.
pub fn pair_distance(z: &Configuration) -> f64 {
    z.distance(0, 1)
}

/// Weighted histogram on `bins` equal cells of `[lo, hi]`; values outside are dropped.
pub fn histogram(values: &[f64], weights: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let width = (hi - lo) / bins as f64;
    for (&v, &w) in values.iter().zip(weights) {
        if v < lo || v > hi {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        h[i] += w;
    }
    h
}

/// Tilt that also accepts negative `β` (tilting by `−E`).
fn signed_tilt(prior: &GridDensity, energy: &[f64], beta: f64) -> Result<GridDensity> {
    if beta >= 0.0 {
        gibbs_tilt(prior, energy, beta)
    } else {
        let neg: Vec<f64> = energy.iter().map(|e| -e).collect();
        gibbs_tilt(prior, &neg, -beta)
    }
}

/// Minimizes `f` over `[lo, hi]`: grid scan, then golden-section refinement around the best cell.
fn minimize_1d(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let n = 400;
    let h = (hi - lo) / n as f64;
    let mut best = (lo, f(lo)?);
    for i in 1..=n {
        let x = lo + i as f64 * h;
        let v = f(x)?;
        if v < best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x)?;
    Ok(if v < best.1 { (x, v) } else { best })
}

fn draw_distances(net: &ScoreNetwork, schedule: &NoiseSchedule, n: usize, seed: u64, tag: &str) -> Result<Vec<f64>> {
    let mut streams: Vec<_> = (0..n).map(|i| rng::stream(seed, &format!("tilt.{tag}.{i}"))).collect();
    let (zs, _) = sample_batch(net, schedule, 2, &mut streams, false)?;
    Ok(zs.iter().map(pair_distance).collect())
}

/// Compares the post-trained pair-distance law of a two-body system with the
/// best Gibbs tilt of the pretrained law under the oracle energy.
pub fn terminal_tilt_check(
    net_pre: &ScoreNetwork,
    net_post: &ScoreNetwork,
    oracle: &dyn EnergyOracle,
    schedule: &NoiseSchedule,
    beta_eff: f64,
    cfg: &TiltCheckConfig,
) -> Result<TiltCheckReport> {
    if cfg.n_samples < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: cfg.n_samples,
            need: MIN_SAMPLES,
        });
    }
    if cfg.bins < 2 {
        return Err(Error::config("theory.bins", "need at least two bins"));
    }
    let pre = draw_distances(net_pre, schedule, cfg.n_samples, cfg.seed, "pre")?;
    let post = draw_distances(net_post, schedule, cfg.n_samples, cfg.seed, "post")?;
    let lo = pre.iter().chain(&post).copied().fold(f64::INFINITY, f64::min);
    let hi = pre.iter().chain(&post).copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::contract("pair distances have no spread"));
    }
    let ones = vec![1.0; cfg.n_samples];
    let count_pre = histogram(&pre, &ones, lo, hi, cfg.bins);
    let count_post = histogram(&post, &ones, lo, hi, cfg.bins);
    let width = (hi - lo) / cfg.bins as f64;
    let centers: Vec<f64> = (0..cfg.bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let p = GridDensity::from_weights(&centers, &count_pre)?;
    let q = GridDensity::from_weights(&centers, &count_post)?;
    let energy = centers
        .iter()
        .map(|&r| oracle.energy(&Configuration::from_positions(vec![[0.0; 3], [r, 0.0, 0.0]])))
        .collect::<Result<Vec<_>>>()?;

    let (beta_fit, residual_tv) = minimize_1d(
        |b| tv_distance(&signed_tilt(&p, &energy, b)?, &q),
        -cfg.beta_max,
        cfg.beta_max,
    )?;
    let tilt = signed_tilt(&p, &energy, beta_fit)?;
    let rows = (0..cfg.bins)
        .map(|i| HistogramRow {
            bin_lo: lo + i as f64 * width,
            bin_hi: lo + (i + 1) as f64 * width,
            count_pre: count_pre[i],
            count_post: count_post[i],
            tilt_mass: tilt.masses()[i],
        })
        .collect();
    Ok(TiltCheckReport {
        beta_eff,
        beta_fit,
        residual_tv,
        tv_pre_post: tv_distance(&p, &q)?,
        rows,
    })
}
