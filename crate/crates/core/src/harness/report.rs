use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, ExperimentResult, Method, MetricsReport, RepetitionOutcome, ReportFormat};
use crate::error::{Error, Result};
use crate::metrics::{imputation_estimator, MethodMetrics};

/// Six significant digits, scientific notation outside `[1e-4, 1e6)`.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return "NA".into();
    }
    if v == 0.0 {
        return "0".into();
    }
    // Round first so a carry (9.999995 -> 1.00000e1) moves the exponent.
    let sci = format!("{v:.5e}");
    let mag: i32 = sci.split('e').nth(1).and_then(|e| e.parse().ok()).unwrap_or(0);
    if !(-4..6).contains(&mag) {
        return sci;
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

type Row = (&'static str, &'static str, fn(&MethodMetrics) -> f64);

const ROWS: [Row; 6] = [
    ("Estimation", "Mean IE", |m| m.mean_ie),
    ("Estimation", "SE_IE", |m| m.se_ie),
    ("Estimation", "MSE_IE×10", |m| m.mse_ie * 10.0),
    ("Prediction", "RMAE", |m| m.rmae),
    ("Prediction", "RRMSE", |m| m.rrmse),
    ("Prediction", "R²", |m| m.r2),
];

fn cells(report: &MetricsReport, f: fn(&MethodMetrics) -> f64) -> Vec<String> {
    report
        .methods
        .iter()
        .map(|m| m.metrics.as_ref().map_or_else(|| "NA".to_string(), |mm| fmt_sig(f(mm))))
        .collect()
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    let labels: Vec<&str> = report.methods.iter().map(|m| m.method.label()).collect();
    let failures: Vec<String> = report.methods.iter().map(|m| m.failures.to_string()).collect();
    let mut s = String::new();
    match format {
        ReportFormat::Markdown => {
            let _ = writeln!(s, "Scenario: {}, K = {}", report.scenario, report.reps);
            if let Some(n) = report.n_k {
                let _ = writeln!(s, "n_k: min {}, max {}, mean {}", n.min, n.max, fmt_sig(n.mean));
            }
            s.push('\n');
            let _ = writeln!(s, "| | {} |", labels.join(" | "));
            let _ = writeln!(s, "|---|{}", "---:|".repeat(labels.len()));
            let blank = " |".repeat(labels.len());
            let mut section = "";
            for (sec, name, f) in ROWS {
                if sec != section {
                    let _ = writeln!(s, "| **{sec}** |{blank}");
                    section = sec;
                }
                let _ = writeln!(s, "| {name} | {} |", cells(report, f).join(" | "));
            }
            let _ = writeln!(s, "| Failures | {} |", failures.join(" | "));
        }
        ReportFormat::Csv => {
            let _ = writeln!(s, "section,measure,{}", labels.join(","));
            for (sec, name, f) in ROWS {
                let _ = writeln!(s, "{sec},{name},{}", cells(report, f).join(","));
            }
            let _ = writeln!(s, "Runs,Failures,{}", failures.join(","));
        }
    }
    s
}

/// CSV with one line per repetition: `k`, `n_k`, then each method's IE_k
/// (empty when the method failed or its IE is undefined).
pub fn repetition_log(outcomes: &[RepetitionOutcome], methods: &[Method]) -> String {
    let mut s = String::from("k,n_k");
    for m in methods {
        let _ = write!(s, ",ie_{}", m.name());
    }
    s.push('\n');
    for o in outcomes {
        let _ = write!(s, "{},{}", o.k, o.n_k());
        for m in methods {
            s.push(',');
            if let Some(Ok(p)) = o.predictions.get(m) {
                if let Ok(ie) = imputation_estimator(&o.observed, p) {
                    let _ = write!(s, "{ie}");
                }
            }
        }
        s.push('\n');
    }
    s
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes the report table, the per-repetition log and a JSON manifest into
/// `dir`, returning the written paths.
pub fn write_outputs(dir: &Path, result: &ExperimentResult, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let ext = match config.format {
        ReportFormat::Markdown => "md",
        ReportFormat::Csv => "csv",
    };
    let manifest = serde_json::json!({
        "package": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "config": config,
        "report": result.report,
    });
    Ok(vec![
        write_file(dir.join(format!("report.{ext}")), &emit_report(&result.report, config.format))?,
        write_file(
            dir.join("repetitions.csv"),
            &repetition_log(&result.outcomes, &config.methods),
        )?,
        write_file(
            dir.join("manifest.json"),
            &serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.9930001), "0.993");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(123.456789), "123.457");
        assert_eq!(fmt_sig(-0.0123456789), "-0.0123457");
        assert_eq!(fmt_sig(9.9999995), "10");
        assert_eq!(fmt_sig(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(f64::NAN), "NA");
    }
}
