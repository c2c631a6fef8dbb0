use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// Rows of a simple comma-separated file, header first.
fn read_rows(path: &Path) -> CliResult<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn table(rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let Some(header) = rows.first() else {
        return s;
    };
    s.push_str(&format!("| {} |\n", header.join(" | ")));
    s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for r in &rows[1..] {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

fn stat(rows: &[Vec<String>], name: &str, col: usize) -> Option<f64> {
    rows.iter().find(|r| r.first().map(String::as_str) == Some(name))?.get(col)?.parse().ok()
}

/// Merges the CSV outputs found in `dir` into `report.md`.
pub fn cmd_report(dir: &Path) -> CliResult<PathBuf> {
    let mut md = String::from("# Run report\n\n");
    let metrics = dir.join("metrics.csv");
    if metrics.exists() {
        let rows = read_rows(&metrics)?;
        md.push_str(&format!("## Post-training\n\n{} iterations.\n\n", rows.len().saturating_sub(1)));
        if rows.len() > 1 {
            let mut shown = vec![rows[0].clone(), rows[1].clone()];
            if rows.len() > 2 {
                shown.push(rows[rows.len() - 1].clone());
            }
            md.push_str(&table(&shown));
            md.push('\n');
        }
    }

    let mut summaries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_") && n.ends_with("_summary.csv"))
        })
        .collect();
    summaries.sort();
    if !summaries.is_empty() {
        md.push_str("## Evaluation\n\n| checkpoint | mean energy | median energy | mean rms force | median rms force |\n|---|---|---|---|---|\n");
        let mut means = Vec::new();
        for p in &summaries {
            let rows = read_rows(p)?;
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let name = name.trim_start_matches("eval_").trim_end_matches("_summary.csv").to_string();
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
            md.push_str(&format!(
                "| {name} | {} | {} | {} | {} |\n",
                cell(stat(&rows, "mean", 1)),
                cell(stat(&rows, "median", 1)),
                cell(stat(&rows, "mean", 2)),
                cell(stat(&rows, "median", 2))
            ));
            means.push((name, stat(&rows, "mean", 1), stat(&rows, "mean", 2)));
        }
        md.push('\n');
        let find = |n: &str| means.iter().find(|m| m.0 == n);
        if let (Some(pre), Some(post)) = (find("pretrained"), find("posttrained")) {
            if let (Some(e0), Some(e1), Some(f0), Some(f1)) = (pre.1, post.1, pre.2, post.2) {
                md.push_str(&format!(
                    "Relative change after post-training: energy {:+.1}%, rms force {:+.1}%.\n\n",
                    100.0 * (e1 - e0) / e0.abs(),
                    100.0 * (f1 - f0) / f0.abs()
                ));
            }
        }
    }

    let theory = dir.join("theory_summary.csv");
    if theory.exists() {
        md.push_str("## Theory checks\n\n");
        md.push_str(&table(&read_rows(&theory)?));
        md.push('\n');
    }
    let path = dir.join("report.md");
    fs::write(&path, md)?;
    Ok(path)
}
