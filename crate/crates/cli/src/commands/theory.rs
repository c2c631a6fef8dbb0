use std::fs;
use std::path::{Path, PathBuf};

use eqalign_core::rng::{self, StreamRng};
use eqalign_core::theory::{
    alignment_study, gibbs_tilt, lr_lemma_check, regularized_objective, terminal_tilt_check, verify_tv_bound,
    AlignmentReport, GridDensity, HistogramRow, TiltCheckReport, TiltReport,
};

use super::{load_compatible, write_csv};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const LEMMA_EPSILONS: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 5.0];
const LEMMA_TOL: f64 = 1e-12;
const GIBBS_TOL: f64 = 1e-9;
const PERTURBATIONS: usize = 50;

#[derive(Debug, Clone)]
pub struct TheoryOutput {
    pub summary_csv: PathBuf,
    pub gibbs_violations: usize,
    pub tv_violations: usize,
    pub shift_max_tv: f64,
    pub lemma_max_gap: f64,
    /// Present for two-body systems only.
    pub tilt: Option<TiltCheckReport>,
    pub alignment: AlignmentReport,
}

fn random_prior(r: &mut StreamRng, n: usize) -> eqalign_core::Result<GridDensity> {
    let w: Vec<f64> = (0..n).map(|_| (0.7 * rng::normal(r)).exp()).collect();
    let pts: Vec<f64> = (0..n).map(|i| i as f64).collect();
    GridDensity::from_weights(&pts, &w)
}

/// Returns `(w_kl, j_tilt, closed_form, best_perturbed)`.
fn gibbs_instance(r: &mut StreamRng, cells: usize) -> eqalign_core::Result<(f64, f64, f64, f64)> {
    let prior = random_prior(r, cells)?;
    let energy: Vec<f64> = (0..cells).map(|_| 2.0 * rng::normal(r)).collect();
    let w_kl = 0.05 + 2.0 * rng::uniform(r);
    let tilt = gibbs_tilt(&prior, &energy, 1.0 / w_kl)?;
    let j = regularized_objective(&tilt, &prior, &energy, w_kl)?;
    // w ln Σ p e^{−E/w}, shifted
    let logs: Vec<f64> = prior.masses().iter().zip(&energy).map(|(p, e)| p.ln() - e / w_kl).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let closed = w_kl * (m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln());
    let mut best = f64::NEG_INFINITY;
    for _ in 0..PERTURBATIONS {
        let scale = 0.3 * rng::uniform(r);
        let w: Vec<f64> = tilt.masses().iter().map(|m| m * (scale * rng::normal(r)).exp()).collect();
        let pts: Vec<f64> = (0..cells).map(|i| i as f64).collect();
        let rho = GridDensity::from_weights(&pts, &w)?;
        best = best.max(regularized_objective(&rho, &prior, &energy, w_kl)?);
    }
    Ok((w_kl, j, closed, best))
}

fn tv_instance(r: &mut StreamRng, cells: usize, shift: bool) -> eqalign_core::Result<TiltReport> {
    let prior = random_prior(r, cells)?;
    let e_star: Vec<f64> = (0..cells).map(|_| rng::normal(r)).collect();
    let beta = 0.1 + 10.0 * rng::uniform(r);
    let delta = 2.0 * rng::uniform(r);
    let e_phi: Vec<f64> = if shift {
        e_star.iter().map(|e| e + delta).collect()
    } else {
        e_star.iter().map(|e| e + delta * (2.0 * rng::uniform(r) - 1.0)).collect()
    };
    verify_tv_bound(&prior, &e_star, &e_phi, beta)
}

/// Runs the Gibbs, TV-bound and lemma suites plus the terminal tilt fit and
/// the alchemical-force alignment study. The two diagnostics are reported;
/// only the three bound suites decide the outcome.
pub fn cmd_verify_theory(cfg: &ExperimentConfig, pre: &Path, post: &Path, seed: u64, out: &Path) -> CliResult<TheoryOutput> {
    fs::create_dir_all(out)?;
    let th = &cfg.theory;

    let mut gibbs_rows = Vec::with_capacity(th.gibbs_instances);
    let mut gibbs_violations = 0;
    let mut gibbs_max_gap: f64 = 0.0;
    for i in 0..th.gibbs_instances {
        let mut r = rng::stream(seed, &format!("theory.gibbs.{i}"));
        let (w_kl, j, closed, best) = gibbs_instance(&mut r, th.gibbs_cells)?;
        let gap = (j - closed).abs();
        let holds = gap <= GIBBS_TOL * closed.abs().max(1.0) && best <= j + GIBBS_TOL;
        gibbs_violations += usize::from(!holds);
        gibbs_max_gap = gibbs_max_gap.max(gap);
        gibbs_rows.push(format!("{i},{},{w_kl},{j},{closed},{best},{holds}", th.gibbs_cells));
    }
    write_csv(
        &out.join("theory_gibbs.csv"),
        "instance,cells,w_kl,j_tilt,j_closed_form,j_best_perturbed,holds",
        gibbs_rows,
    )?;

    let mut tv_rows = Vec::with_capacity(2 * th.tv_instances);
    let mut tv_violations = 0;
    let mut shift_max_tv: f64 = 0.0;
    for i in 0..th.tv_instances {
        let mut r = rng::stream(seed, &format!("theory.tv.{i}"));
        let rep = tv_instance(&mut r, th.tv_cells, false)?;
        tv_violations += usize::from(!rep.holds);
        tv_rows.push(format!("{i},perturbed,{}", rep.csv_row()));
    }
    for i in 0..th.tv_instances.div_ceil(10) {
        let mut r = rng::stream(seed, &format!("theory.shift.{i}"));
        let rep = tv_instance(&mut r, th.tv_cells, true)?;
        tv_violations += usize::from(!rep.holds);
        shift_max_tv = shift_max_tv.max(rep.tv);
        tv_rows.push(format!("{i},shift,{}", rep.csv_row()));
    }
    write_csv(&out.join("theory_tv.csv"), &format!("instance,kind,{}", TiltReport::CSV_HEADER), tv_rows)?;

    let lemma = LEMMA_EPSILONS.iter().map(|&e| lr_lemma_check(e)).collect::<eqalign_core::Result<Vec<_>>>()?;
    let lemma_max_gap = lemma.iter().map(|l| l.gap).fold(0.0, f64::max);
    write_csv(
        &out.join("theory_lemma.csv"),
        "epsilon,tv,bound,gap",
        lemma.iter().map(|l| format!("{},{},{},{}", l.epsilon, l.tv, l.bound, l.gap)),
    )?;

    let oracle = cfg.oracle()?;
    let pre_ck = load_compatible(cfg, pre, &oracle)?;
    let post_ck = load_compatible(cfg, post, &oracle)?;
    let tilt = if cfg.system.n_bodies == 2 {
        let rep = terminal_tilt_check(
            &pre_ck.net,
            &post_ck.net,
            &oracle,
            &pre_ck.schedule,
            cfg.trainer.beta_eff(),
            &cfg.tilt_config(seed),
        )?;
        write_csv(&out.join("theory_tilt.csv"), HistogramRow::CSV_HEADER, rep.rows.iter().map(HistogramRow::csv_row))?;
        Some(rep)
    } else {
        None
    };
    let alignment = alignment_study(
        &post_ck.net,
        &pre_ck.net,
        &oracle,
        &pre_ck.schedule,
        cfg.system.n_bodies,
        th.alignment_states,
        th.alignment_window,
        seed,
    )?;
    write_csv(
        &out.join("theory_alignment.csv"),
        "t,cos",
        alignment.cosines.iter().map(|(t, c)| format!("{t},{c}")),
    )?;

    let status = |ok: bool| if ok { "pass" } else { "fail" };
    let mut rows = vec![
        format!("gibbs_violations,{gibbs_violations},{}", status(gibbs_violations == 0)),
        format!("gibbs_max_gap,{gibbs_max_gap},info"),
        format!("tv_violations,{tv_violations},{}", status(tv_violations == 0)),
        format!("tv_shift_max,{shift_max_tv},info"),
        format!("lemma_max_gap,{lemma_max_gap},{}", status(lemma_max_gap <= LEMMA_TOL)),
    ];
    match &tilt {
        Some(t) => rows.extend([
            format!("tilt_beta_eff,{},info", t.beta_eff),
            format!("tilt_beta_fit,{},info", t.beta_fit),
            format!("tilt_residual_tv,{},info", t.residual_tv),
            format!("tilt_tv_pre_post,{},info", t.tv_pre_post),
        ]),
        None => rows.push("tilt_check,two-body systems only,skipped".into()),
    }
    rows.extend([
        format!("alignment_median_cos,{},info", alignment.median_cos),
        format!("alignment_median_abs_cos,{},info", alignment.median_abs_cos),
        format!("alignment_undefined,{},info", alignment.undefined),
    ]);
    let summary_csv = out.join("theory_summary.csv");
    write_csv(&summary_csv, "check,value,status", rows)?;

    let mut failed = Vec::new();
    if gibbs_violations > 0 {
        failed.push(format!("{gibbs_violations} Gibbs optimality violations"));
    }
    if tv_violations > 0 {
        failed.push(format!("{tv_violations} TV bound violations"));
    }
    if lemma_max_gap > LEMMA_TOL {
        failed.push(format!("lemma gap {lemma_max_gap:e}"));
    }
    if !failed.is_empty() {
        return Err(CliError::TheoryViolation(failed.join(", ")));
    }
    Ok(TheoryOutput {
        summary_csv,
        gibbs_violations,
        tv_violations,
        shift_max_tv,
        lemma_max_gap,
        tilt,
        alignment,
    })
}
