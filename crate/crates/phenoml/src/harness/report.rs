use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::experiment::MetricsReport;

pub const CSV_HEADER: &str = "disease,model,metric,mean,std,summary";
const METRIC_NAMES: [&str; 4] = ["auc", "precision", "recall", "f1"];

/// "mean±std" to 3 decimals, rounding halves away from zero. The float
/// formatter rounds halves to even, so the value goes through a 6-decimal
/// string and integer micro-units instead.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{}\u{b1}{}", round3(mean), round3(std))
}

fn round3(v: f64) -> String {
    let micro: i64 = format!("{:.6}", v.abs())
        .replace('.', "")
        .parse()
        .expect("fixed-width decimal digits");
    let milli = (micro + 500) / 1000;
    let sign = if v < 0.0 && milli > 0 { "-" } else { "" };
    format!("{sign}{}.{:03}", milli / 1000, milli % 1000)
}

fn metric_values(report: &MetricsReport) -> [(&'static str, f64, f64); 4] {
    [
        ("auc", report.auc.mean, report.auc.std),
        ("precision", report.precision.mean, report.precision.std),
        ("recall", report.recall.mean, report.recall.std),
        ("f1", report.f1.mean, report.f1.std),
    ]
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

/// One row per (disease, model, metric), reports in the order given.
pub fn render_csv(reports: &[MetricsReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to render".into()));
    }
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for (name, mean, std) in metric_values(r) {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{}",
                csv_field(&r.disease),
                csv_field(&r.model),
                name,
                mean,
                std,
                format_mean_std(mean, std),
            )
            .expect("string write");
        }
    }
    Ok(out)
}

/// Human-readable table, one metric column per model, same numbers as the
/// CSV rendering.
pub fn render_table(reports: &[MetricsReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig("no reports to render".into()));
    }
    let first = &reports[0];
    let mut out = format!(
        "disease: {}\nseed: {}\nfolds: {}\nconfig: {}\n\n",
        first.disease,
        first.seed,
        first.folds.len(),
        first.config_sha256,
    );
    let name_width = reports
        .iter()
        .map(|r| r.model.len())
        .chain(["model".len()])
        .max()
        .unwrap();
    write!(out, "{:name_width$}", "model").expect("string write");
    for m in METRIC_NAMES {
        write!(out, "  {m:>13}").expect("string write");
    }
    out.push('\n');
    for r in reports {
        write!(out, "{:name_width$}", r.model).expect("string write");
        for (_, mean, std) in metric_values(r) {
            write!(out, "  {:>13}", format_mean_std(mean, std)).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn reports_to_json(reports: &[MetricsReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(reports).map_err(|e| Error::BadFileFormat {
        path: PathBuf::from("reports.json"),
        message: e.to_string(),
    })?;
    s.push('\n');
    Ok(s)
}

pub fn reports_from_json(text: &str) -> Result<Vec<MetricsReport>> {
    serde_json::from_str(text).map_err(|e| Error::BadFileFormat {
        path: PathBuf::from("reports.json"),
        message: e.to_string(),
    })
}

/// Writes reports.json, reports.csv, and reports.txt into `dir`.
pub fn write_report_files(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    write("reports.json", reports_to_json(reports)?)?;
    write("reports.csv", render_csv(reports)?)?;
    write("reports.txt", render_table(reports)?)
}

pub fn read_report_file(dir: &Path) -> Result<Vec<MetricsReport>> {
    let path = dir.join("reports.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    reports_from_json(&text)
}
