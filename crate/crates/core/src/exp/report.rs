//! Report emission: CSV and markdown tables in the result-table column
//! layout, plus full-fidelity JSON.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{CaseStatus, ResultRow};
use crate::data::Task;
use crate::downstream::Regime;
use crate::error::{Error, Result};
use crate::metrics::TaskMetrics;
use crate::ssl::Method;
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

pub(crate) const HEADER: &str = "Case,Windows,Depth,Dims,AUROC_MI,AUROC_STTC,AUROC_CD,AUROC_HYP,AUPRC_MI,AUPRC_STTC,AUPRC_CD,AUPRC_HYP,Criteria";

fn metric_cells(row: &ResultRow) -> Vec<String> {
    match (&row.status, &row.metrics) {
        (CaseStatus::Ok, Some(m)) => {
            let mut cells = Vec::with_capacity(9);
            for task in Task::ALL {
                cells.push(m.get(&task).map(|t| fmt_f64(t.auroc)).unwrap_or_default());
            }
            for task in Task::ALL {
                cells.push(m.get(&task).map(|t| fmt_f64(t.auprc)).unwrap_or_default());
            }
            cells.push(row.criteria.map(fmt_f64).unwrap_or_default());
            cells
        }
        (status, _) => vec![status.label().to_string(); 9],
    }
}

fn csv_line(row: &ResultRow) -> String {
    let mut cells = vec![
        row.case.to_string(),
        row.windows.to_string(),
        row.depth.to_string(),
        row.dims.to_string(),
    ];
    cells.extend(metric_cells(row));
    cells.join(",")
}

/// Group rows by (method, regime, seed), preserving first-appearance order.
fn group_rows(rows: &[ResultRow]) -> Vec<((Method, Regime, u64), Vec<&ResultRow>)> {
    let mut order: Vec<(Method, Regime, u64)> = Vec::new();
    let mut groups: std::collections::BTreeMap<(String, String, u64), Vec<&ResultRow>> =
        Default::default();
    for r in rows {
        let key = (r.method.name().to_string(), r.regime.name().to_string(), r.seed);
        if !groups.contains_key(&key) {
            order.push((r.method, r.regime, r.seed));
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|(m, g, s)| {
            let key = (m.name().to_string(), g.name().to_string(), s);
            let mut rows = groups.remove(&key).unwrap_or_default();
            rows.sort_by_key(|r| r.case);
            ((m, g, s), rows)
        })
        .collect()
}

fn table_stem(method: Method, regime: Regime, seed: u64) -> String {
    format!("grid_{}_{}_s{}", method.name().to_lowercase(), regime.name(), seed)
}

/// Write reports for `rows` into `out_dir`. CSV and markdown group rows into
/// one table per (method, regime, seed) with the fixed column order
/// Case, Windows, Depth, Dims, AUROC×4, AUPRC×4, Criteria; JSON is a single
/// full-fidelity file. Returns the created paths.
pub fn emit_report(rows: &[ResultRow], format: ReportFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Json => {
            let path = out_dir.join("rows.json");
            fs::write(&path, serde_json::to_string_pretty(rows)?)?;
            written.push(path);
        }
        ReportFormat::Csv => {
            for ((method, regime, seed), group) in group_rows(rows) {
                let path = out_dir.join(format!("{}.csv", table_stem(method, regime, seed)));
                let mut f = fs::File::create(&path)?;
                writeln!(f, "{HEADER}")?;
                for row in group {
                    writeln!(f, "{}", csv_line(row))?;
                }
                written.push(path);
            }
            if rows.is_empty() {
                let path = out_dir.join("grid_empty.csv");
                fs::write(&path, format!("{HEADER}\n"))?;
                written.push(path);
            }
        }
        ReportFormat::Markdown => {
            let path = out_dir.join("report.md");
            let mut f = fs::File::create(&path)?;
            writeln!(f, "# Grid results")?;
            for ((method, regime, seed), group) in group_rows(rows) {
                writeln!(f, "\n## {} / {} (seed {seed})\n", method.name(), regime.name())?;
                writeln!(f, "| {} |", HEADER.replace(',', " | "))?;
                writeln!(f, "|{}", "---|".repeat(13))?;
                for row in group {
                    writeln!(f, "| {} |", csv_line(row).replace(',', " | "))?;
                }
            }
            written.push(path);
        }
    }
    Ok(written)
}

/// Parse a CSV table produced by [`emit_report`]. Method, regime, and seed
/// are not part of the fixed column layout, so the caller provides them
/// (they are encoded in the filename).
pub fn parse_report_csv(
    path: &Path,
    method: Method,
    regime: Regime,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("empty report file"))?;
    if header != HEADER {
        return Err(Error::parse(format!("unexpected report header `{header}`")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 13 {
            return Err(Error::parse(format!(
                "line {}: expected 13 cells, got {}",
                lineno + 2,
                cells.len()
            )));
        }
        let parse_usize = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 2)))
        };
        let case = parse_usize(cells[0])?;
        let windows = parse_usize(cells[1])?;
        let depth = parse_usize(cells[2])?;
        let dims = parse_usize(cells[3])?;
        let status = match cells[4] {
            "OOM" => CaseStatus::Oom,
            "FAILED" => CaseStatus::Failed,
            _ => CaseStatus::Ok,
        };
        let (metrics, criteria) = if status == CaseStatus::Ok {
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|e| Error::parse(format!("line {}: {e}", lineno + 2)))
            };
            let mut m = std::collections::BTreeMap::new();
            for (i, task) in Task::ALL.iter().enumerate() {
                m.insert(
                    *task,
                    TaskMetrics {
                        auroc: parse_f(cells[4 + i])?,
                        auprc: parse_f(cells[8 + i])?,
                        f1: f64::NAN,
                    },
                );
            }
            (Some(m), Some(parse_f(cells[12])?))
        } else {
            (None, None)
        };
        rows.push(ResultRow {
            case,
            method,
            regime,
            windows,
            depth,
            dims,
            status,
            metrics,
            criteria,
            seed,
            checkpoint: None,
            config_hash: String::new(),
            error: None,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample_rows() -> Vec<ResultRow> {
        let mut metrics = BTreeMap::new();
        for (i, task) in Task::ALL.iter().enumerate() {
            metrics.insert(
                *task,
                TaskMetrics {
                    auroc: 0.7 + i as f64 * 0.01,
                    auprc: 0.4 + i as f64 * 0.01,
                    f1: 0.5,
                },
            );
        }
        let mut ok = ResultRow {
            case: 0,
            method: Method::Hl,
            regime: Regime::Probe,
            windows: 125,
            depth: 2,
            dims: 64,
            status: CaseStatus::Ok,
            metrics: Some(metrics),
            criteria: None,
            seed: 0,
            checkpoint: None,
            config_hash: "abc".into(),
            error: None,
        };
        ok.criteria = ok.recompute_criteria();
        let oom = ResultRow {
            case: 1,
            status: CaseStatus::Oom,
            metrics: None,
            criteria: None,
            dims: 1024,
            ..ok.clone()
        };
        vec![ok, oom]
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rows, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let original = fs::read(&files[0]).unwrap();

        let parsed =
            parse_report_csv(&files[0], Method::Hl, Regime::Probe, 0).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let files2 = emit_report(&parsed, ReportFormat::Csv, dir2.path()).unwrap();
        let re_emitted = fs::read(&files2[0]).unwrap();
        assert_eq!(original, re_emitted);
    }

    #[test]
    fn empty_rows_give_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&[], ReportFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(text, format!("{HEADER}\n"));
    }

    #[test]
    fn oom_rows_null_the_metric_cells() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rows, ReportFormat::Csv, dir.path()).unwrap();
        let text = fs::read_to_string(&files[0]).unwrap();
        let oom_line = text.lines().nth(2).unwrap();
        assert!(oom_line.starts_with("1,125,2,1024"));
        assert_eq!(oom_line.matches("OOM").count(), 9);
    }

    #[test]
    fn json_and_markdown_emit() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let json = emit_report(&rows, ReportFormat::Json, dir.path()).unwrap();
        let parsed: Vec<ResultRow> =
            serde_json::from_str(&fs::read_to_string(&json[0]).unwrap()).unwrap();
        assert_eq!(parsed, rows);
        let md = emit_report(&rows, ReportFormat::Markdown, dir.path()).unwrap();
        let text = fs::read_to_string(&md[0]).unwrap();
        assert!(text.contains("## HL / probe (seed 0)"));
        assert!(text.contains("| Case |"));
    }

    #[test]
    fn criteria_column_matches_recomputation() {
        let rows = sample_rows();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rows, ReportFormat::Csv, dir.path()).unwrap();
        let parsed =
            parse_report_csv(&files[0], Method::Hl, Regime::Probe, 0).unwrap();
        for row in parsed.iter().filter(|r| r.status == CaseStatus::Ok) {
            let stored = row.criteria.unwrap();
            let recomputed = row.recompute_criteria().unwrap();
            assert!((stored - recomputed).abs() < 1e-6);
        }
    }
}
