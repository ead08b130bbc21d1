//! CSV tables and the Markdown summary of an experiment report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::data::Paradigm;
use crate::error::Result;

use super::experiment::{Comparison, ExperimentReport, Variant};
use super::metrics::significance_marker;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

#[derive(Serialize)]
struct ResultCsv<'a> {
    scheme: String,
    fold: usize,
    variant: &'a str,
    paradigm: String,
    balanced_accuracy: f64,
    n_test: usize,
    best_pass: String,
    best_val_bce: String,
}

#[derive(Serialize)]
struct CurveCsv<'a> {
    fold: usize,
    variant: &'a str,
    paradigm: String,
    pass: usize,
    train_bce: f64,
    val_bce: f64,
}

#[derive(Serialize)]
struct ComparisonCsv<'a> {
    comparison: &'a str,
    a: &'a str,
    paradigm_a: String,
    b: &'a str,
    paradigm_b: String,
    n: usize,
    mean_a: f64,
    mean_b: f64,
    wins: usize,
    p_value: f64,
    exact: bool,
    marker: &'static str,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Per-fold, per-paradigm accuracies.
pub fn write_results_csv<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    write_rows(
        w,
        report.rows.iter().map(|r| ResultCsv {
            scheme: report.scheme.to_string(),
            fold: r.fold,
            variant: r.variant.name(),
            paradigm: r.paradigm.to_string(),
            balanced_accuracy: r.balanced_accuracy,
            n_test: r.n_test,
            best_pass: opt(r.best_pass),
            best_val_bce: opt(r.best_val_bce),
        }),
    )
}

/// Training and validation loss per pass.
pub fn write_curves_csv<W: Write>(report: &ExperimentReport, w: W) -> Result<()> {
    write_rows(
        w,
        report.curves.iter().map(|c| CurveCsv {
            fold: c.fold,
            variant: c.variant.name(),
            paradigm: c.paradigm.map_or("all".into(), |p| p.to_string()),
            pass: c.pass,
            train_bce: c.train_bce,
            val_bce: c.val_bce,
        }),
    )
}

pub fn write_comparisons_csv<W: Write>(comparisons: &[Comparison], w: W) -> Result<()> {
    write_rows(
        w,
        comparisons.iter().map(|c| ComparisonCsv {
            comparison: &c.name,
            a: c.a.name(),
            paradigm_a: c.paradigm_a.map_or("all".into(), |p| p.to_string()),
            b: c.b.name(),
            paradigm_b: c.paradigm_b.map_or("all".into(), |p| p.to_string()),
            n: c.test.n,
            mean_a: c.mean_a,
            mean_b: c.mean_b,
            wins: c.wins,
            p_value: c.test.p_value,
            exact: c.test.exact,
            marker: significance_marker(c.test.p_value),
        }),
    )
}

fn mean_std(v: &[f64]) -> Option<(f64, f64)> {
    if v.is_empty() {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
    Some((m, var.sqrt()))
}

/// Variant × paradigm table of mean ± std accuracy over folds, followed by
/// the comparisons with their significance markers.
pub fn summary_markdown(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} results (seed {}, {} folds)\n", report.scheme, report.master_seed, report.folds.len());
    let _ = writeln!(s, "| variant | {} |", Paradigm::ALL.map(|p| p.to_string()).join(" | "));
    let _ = writeln!(s, "|---|---|---|---|");
    for v in Variant::ALL {
        if !report.rows.iter().any(|r| r.variant == v) {
            continue;
        }
        let cells: Vec<String> = Paradigm::ALL
            .iter()
            .map(|&p| match mean_std(&report.fold_scores(v, Some(p))) {
                Some((m, sd)) => format!("{m:.3} ± {sd:.3}"),
                None => "–".into(),
            })
            .collect();
        let _ = writeln!(s, "| {v} | {} |", cells.join(" | "));
    }
    if !report.comparisons.is_empty() {
        let _ = writeln!(s, "\n| comparison | mean a | mean b | wins | p | |\n|---|---|---|---|---|---|");
        for c in &report.comparisons {
            let _ = writeln!(
                s,
                "| {} | {:.3} | {:.3} | {}/{} | {:.4} | {} |",
                c.name,
                c.mean_a,
                c.mean_b,
                c.wins,
                c.test.n,
                c.test.p_value,
                significance_marker(c.test.p_value)
            );
        }
        let _ = writeln!(s, "\nOne-sided paired permutation tests over folds. ** p < 0.001, * p ≤ 0.05, ns otherwise.");
    }
    let leaks = report.audits.iter().filter(|a| !a.is_clean()).count();
    let _ = writeln!(s, "\nProvenance audit: {} folds checked, {leaks} with overlaps.", report.audits.len());
    for n in &report.notes {
        let _ = writeln!(s, "\n- {n}");
    }
    s
}

/// Writes `results.csv`, `curves.csv`, `comparisons.csv` and `summary.md`
/// into `dir`.
pub fn write_report_files(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = ["results.csv", "curves.csv", "comparisons.csv", "summary.md"].map(|n| dir.join(n));
    write_results_csv(report, std::fs::File::create(&paths[0])?)?;
    write_curves_csv(report, std::fs::File::create(&paths[1])?)?;
    write_comparisons_csv(&report.comparisons, std::fs::File::create(&paths[2])?)?;
    std::fs::write(&paths[3], summary_markdown(report))?;
    Ok(paths.to_vec())
}
