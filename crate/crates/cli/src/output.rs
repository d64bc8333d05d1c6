//! CSV tables. Rows are filter-major (every step of the first filter, then
//! the next); floats carry 17 significant digits and NaN is written `NaN`.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use slds_mse::analysis::{AnalyticSeries, StepComparison};
use slds_mse::fast::MergeReport;
use slds_mse::montecarlo::EmpiricalMse;

pub const ANALYZE_HEADER: [&str; 5] = ["step", "filter", "method", "analytic_mse", "kept_mass"];
pub const SIMULATE_HEADER: [&str; 4] = ["step", "filter", "mc_mse", "mc_stderr"];
pub const COMPARE_HEADER: [&str; 10] = [
    "step",
    "filter",
    "method",
    "analytic_mse",
    "mc_mse",
    "mc_stderr",
    "rel_gap",
    "z_score",
    "gated",
    "pass",
];
pub const PAIRS_HEADER: [&str; 6] = [
    "mode_i",
    "mode_j",
    "best_single",
    "improvement",
    "merge",
    "threshold",
];

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn write_analysis(out: impl Write, series: &[AnalyticSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANALYZE_HEADER)?;
    for s in series {
        let method = s.method.to_string();
        for (n, (mse, mass)) in s.mse.values.iter().zip(&s.kept_mass).enumerate() {
            w.write_record([
                n.to_string(),
                s.label.clone(),
                method.clone(),
                fmt_f64(*mse),
                fmt_f64(*mass),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_simulation(out: impl Write, labels: &[String], mc: &[EmpiricalMse]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIMULATE_HEADER)?;
    for (label, e) in labels.iter().zip(mc) {
        for (n, (mse, se)) in e.mse.iter().zip(&e.stderr).enumerate() {
            w.write_record([n.to_string(), label.clone(), fmt_f64(*mse), fmt_f64(*se)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_comparison(
    out: impl Write,
    series: &[AnalyticSeries],
    rows: &[Vec<StepComparison>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARE_HEADER)?;
    for (s, steps) in series.iter().zip(rows) {
        let method = s.method.to_string();
        for c in steps {
            w.write_record([
                c.step.to_string(),
                s.label.clone(),
                method.clone(),
                fmt_f64(c.analytic),
                fmt_f64(c.mc),
                fmt_f64(c.stderr),
                fmt_f64(c.rel_gap),
                fmt_f64(c.z),
                c.gated.to_string(),
                c.pass.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pairs(out: impl Write, report: &MergeReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PAIRS_HEADER)?;
    for p in &report.pairs {
        w.write_record([
            (p.mode_i + 1).to_string(),
            (p.mode_j + 1).to_string(),
            p.best_single_label.clone(),
            fmt_f64(p.improvement),
            p.merge.to_string(),
            fmt_f64(p.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// The merge report as JSON: pairwise table, groups of 1-based modes and the
/// adjacency of the reduced mode graph (group indices).
pub fn merge_json(report: &MergeReport) -> serde_json::Value {
    let pairs: Vec<_> = report
        .pairs
        .iter()
        .map(|p| {
            serde_json::json!({
                "mode_i": p.mode_i + 1,
                "mode_j": p.mode_j + 1,
                "best_single": p.best_single_label,
                "improvement": p.improvement,
                "merge": p.merge,
            })
        })
        .collect();
    let groups: Vec<Vec<usize>> = report
        .groups
        .iter()
        .map(|g| g.iter().map(|m| m + 1).collect())
        .collect();
    let adjacency: Vec<Vec<usize>> = (0..report.groups.len())
        .map(|g| {
            report
                .edges
                .iter()
                .filter_map(|&(a, b)| match (a == g, b == g) {
                    (true, _) => Some(b),
                    (_, true) => Some(a),
                    _ => None,
                })
                .collect()
        })
        .collect();
    serde_json::json!({
        "threshold": report.options.threshold,
        "metric": format!("{:?}", report.options.metric).to_lowercase(),
        "pairs": pairs,
        "groups": groups,
        "adjacency": adjacency,
        "recommendation": report.recommendation(),
    })
}
