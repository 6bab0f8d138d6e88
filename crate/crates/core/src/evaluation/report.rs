use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::{ExperimentResult, Protocol, SweepRow};
use crate::error::{Error, Result};

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn pm(mean: f64, std: f64) -> String {
    format!("{} ± {}", pct(mean), pct(std))
}

fn metric_names(r: &ExperimentResult) -> Vec<String> {
    r.summary.iter().map(|s| s.name.clone()).collect()
}

fn header_label(name: &str) -> String {
    match name {
        "precision" => "Precision".into(),
        "f1" => "F1".into(),
        other => other.replacen("recall", "Recall", 1),
    }
}

/// Table-shaped text report: one row per model kind with mean ± std over
/// folds, a random-guess row, then the per-fold values.
pub fn format_experiment_table(title: &str, dataset: &str, results: &[ExperimentResult]) -> Result<String> {
    let first = results
        .first()
        .ok_or_else(|| Error::Evaluation("no results to report".into()))?;
    let names = metric_names(first);
    let mut s = String::new();
    let unit = match first.protocol {
        Protocol::MonteCarlo => "folds",
        Protocol::Temporal => "repeats",
    };
    writeln!(s, "{title}").unwrap();
    writeln!(s, "{} {unit}, {} classes", first.folds.len(), first.n_classes).unwrap();
    writeln!(s, "experiment fingerprint: {}", first.config_fingerprint).unwrap();
    writeln!(s, "base seed: {}", first.base_seed).unwrap();
    writeln!(s).unwrap();
    let dw = dataset.chars().count().max(7) + 2;
    let mut row = format!("{:<dw$}{:<8}", "Dataset", "Method");
    for n in &names {
        row.push_str(&format!("{:<22}", header_label(n)));
    }
    writeln!(s, "{}", row.trim_end()).unwrap();
    for r in results {
        let mut row = format!("{:<dw$}{:<8}", dataset, r.kind.name());
        for st in &r.summary {
            row.push_str(&format!("{:<22}", pm(st.mean, st.std)));
        }
        writeln!(s, "{}", row.trim_end()).unwrap();
    }
    let mut row = format!("{:<dw$}{:<8}", "", "Random");
    for n in &names {
        let cell = n
            .strip_prefix("recall@")
            .and_then(|k| k.parse::<f64>().ok())
            .map(|k| pct((k / first.n_classes as f64).min(1.0)))
            .unwrap_or_default();
        row.push_str(&format!("{cell:<22}"));
    }
    writeln!(s, "{}", row.trim_end()).unwrap();
    writeln!(s).unwrap();
    writeln!(s, "Random: k / number of classes.").unwrap();
    writeln!(s).unwrap();
    writeln!(s, "Per {}:", &unit[..unit.len() - 1]).unwrap();
    for r in results {
        for f in &r.folds {
            let mut row = format!("{:<8}{:<4}split {}  best epoch {:<4}", r.kind.name(), f.fold, f.split_fingerprint, f.best_epoch);
            for (i, k) in f.metrics.ks.iter().enumerate() {
                row.push_str(&format!("  recall@{k} {}", pct(f.metrics.macro_recall[i])));
            }
            row.push_str(&format!(
                "  precision {}  f1 {}  test slides {}",
                pct(f.metrics.macro_precision),
                pct(f.metrics.macro_f1),
                f.metrics.n_test_slides
            ));
            writeln!(s, "{row}").unwrap();
        }
    }
    Ok(s)
}

/// Delimited per-fold metrics with trailing mean and std rows per kind.
pub fn format_experiment_csv(results: &[ExperimentResult]) -> Result<String> {
    let first = results
        .first()
        .ok_or_else(|| Error::Evaluation("no results to report".into()))?;
    let names = metric_names(first);
    let mut s = format!("method,fold,split,{}\n", names.join(","));
    for r in results {
        for f in &r.folds {
            let mut vals: Vec<String> = f.metrics.macro_recall.iter().map(|v| format!("{v:.6}")).collect();
            vals.push(format!("{:.6}", f.metrics.macro_precision));
            vals.push(format!("{:.6}", f.metrics.macro_f1));
            writeln!(s, "{},{},{},{}", r.kind.name(), f.fold, f.split_fingerprint, vals.join(",")).unwrap();
        }
        let means: Vec<String> = r.summary.iter().map(|st| format!("{:.6}", st.mean)).collect();
        let stds: Vec<String> = r.summary.iter().map(|st| format!("{:.6}", st.std)).collect();
        writeln!(s, "{},mean,,{}", r.kind.name(), means.join(",")).unwrap();
        writeln!(s, "{},std,,{}", r.kind.name(), stds.join(",")).unwrap();
    }
    Ok(s)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.txt` and `<stem>.csv` into `dir`.
pub fn write_experiment_report(
    dir: &Path,
    stem: &str,
    title: &str,
    dataset: &str,
    results: &[ExperimentResult],
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    let csv = dir.join(format!("{stem}.csv"));
    write(&txt, &format_experiment_table(title, dataset, results)?)?;
    write(&csv, &format_experiment_csv(results)?)?;
    Ok((txt, csv))
}

pub fn format_sweep_table(rows: &[SweepRow]) -> Result<String> {
    let first = rows.first().ok_or_else(|| Error::Evaluation("empty sweep".into()))?;
    let names = metric_names(&first.result);
    let mut s = String::new();
    writeln!(s, "Resolution sweep ({} model, {} folds)", first.result.kind.name(), first.result.folds.len()).unwrap();
    writeln!(s, "experiment fingerprint: {}", first.result.config_fingerprint).unwrap();
    writeln!(s).unwrap();
    let mut head = format!("{:<10}", "mpp");
    for n in &names {
        head.push_str(&format!("{:<22}", header_label(n)));
    }
    writeln!(s, "{}", head.trim_end()).unwrap();
    for r in rows {
        let mut row = format!("{:<10}", format!("{:.2}", r.mpp));
        for st in &r.result.summary {
            row.push_str(&format!("{:<22}", pm(st.mean, st.std)));
        }
        writeln!(s, "{}", row.trim_end()).unwrap();
    }
    Ok(s)
}

pub fn format_sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let first = rows.first().ok_or_else(|| Error::Evaluation("empty sweep".into()))?;
    let names = metric_names(&first.result);
    let mut s = String::from("mpp");
    for n in &names {
        s.push_str(&format!(",{n}_mean,{n}_std"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{}", r.mpp));
        for st in &r.result.summary {
            s.push_str(&format!(",{:.6},{:.6}", st.mean, st.std));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_sweep_report(dir: &Path, stem: &str, rows: &[SweepRow]) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let txt = dir.join(format!("{stem}.txt"));
    let csv = dir.join(format!("{stem}.csv"));
    write(&txt, &format_sweep_table(rows)?)?;
    write(&csv, &format_sweep_csv(rows)?)?;
    Ok((txt, csv))
}
