use std::fmt::Write as _;
use std::path::Path;

use super::{CellResult, CurvePoint, Evaluation, EvaluationReport, Row, RowCount, TimingRow, TrendSeries};
use crate::config::{AttackKind, Variant};
use crate::error::{Error, Result};

const TABLE_HEADER: &str = "cell,kind,variant,lr,tau,lambda,n,successes,max_linf,in_box,row,fpr,detected,rate";

/// One line per (cell, row, FPR).
pub fn cells_to_csv(cells: &[CellResult]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for c in cells {
        for k in &c.counts {
            let rate = k.rate.map(|r| r.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.id,
                c.kind.name(),
                c.variant.name(),
                c.lr,
                c.tau,
                c.lambda,
                c.n,
                c.successes,
                c.max_linf,
                c.in_box,
                k.row.name(),
                k.fpr,
                k.detected,
                rate
            );
        }
    }
    out
}

fn parse<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("tables.csv line {line}: cannot parse `{field}`")))
}

/// Inverse of [`cells_to_csv`].
pub fn cells_from_csv(text: &str) -> Result<Vec<CellResult>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TABLE_HEADER => {}
        _ => return Err(Error::Format("tables.csv: unexpected header".into())),
    }
    let mut cells: Vec<CellResult> = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 14 {
            return Err(Error::Format(format!("tables.csv line {line_no}: expected 14 fields")));
        }
        let kind = match f[1] {
            "pgd" => AttackKind::Pgd,
            "cw" => AttackKind::Cw,
            other => return Err(Error::Format(format!("tables.csv line {line_no}: unknown attack `{other}`"))),
        };
        let variant = Variant::parse(f[2]).ok_or_else(|| Error::Format(format!("tables.csv line {line_no}: unknown variant `{}`", f[2])))?;
        let row = Row::parse(f[10]).ok_or_else(|| Error::Format(format!("tables.csv line {line_no}: unknown row `{}`", f[10])))?;
        let count = RowCount {
            row,
            fpr: parse(f[11], line_no)?,
            detected: parse(f[12], line_no)?,
            rate: if f[13].is_empty() { None } else { Some(parse(f[13], line_no)?) },
        };
        match cells.last_mut() {
            Some(c) if c.id == f[0] => c.counts.push(count),
            _ => cells.push(CellResult {
                id: f[0].to_string(),
                kind,
                variant,
                lr: parse(f[3], line_no)?,
                tau: parse(f[4], line_no)?,
                lambda: parse(f[5], line_no)?,
                n: parse(f[6], line_no)?,
                successes: parse(f[7], line_no)?,
                max_linf: parse(f[8], line_no)?,
                in_box: parse(f[9], line_no)?,
                counts: vec![count],
            }),
        }
    }
    Ok(cells)
}

pub fn curves_to_csv(curves: &[CurvePoint]) -> String {
    let mut out = String::from("cell,term,step,q25,median,q75\n");
    for c in curves {
        let _ = writeln!(out, "{},{},{},{},{},{}", c.cell, c.term, c.step, c.q25, c.median, c.q75);
    }
    out
}

pub fn trend_to_csv(trend: &TrendSeries) -> String {
    let mut out = String::from("series,checkpoint,delta_q30,delta_q50,delta_q70,kt_q30,kt_q50,kt_q70\n");
    for p in &trend.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.series, p.checkpoint, p.delta[0], p.delta[1], p.delta[2], p.k_t[0], p.k_t[1], p.k_t[2]
        );
    }
    out
}

pub fn timing_to_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("input_kind,criterion,samples,mean_seconds,variance\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.input_kind, r.criterion.name(), r.samples, r.mean_seconds, r.variance);
    }
    out
}

fn fmt_rate(rate: Option<f64>) -> String {
    rate.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into())
}

/// Plain-text tables: one block per FPR target with a line per cell and a
/// column per row. `*` marks the minimum of each column.
pub fn render_tables(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model {} | eval accuracy {:.4} | noise {} | detector radius {} | caps {}/{} | pass set {}",
        &report.model_checksum[..12.min(report.model_checksum.len())],
        report.eval_accuracy,
        report.detector.sigma,
        report.detector.c2t_attack.tau,
        report.detector.c2t_attack.steps,
        report.detector.c2u_attack.steps,
        report.pass_set_size
    );
    for th in &report.thresholds {
        let fpr = th.fpr;
        let _ = writeln!(out, "\nDetection rate at target FPR {fpr}");
        let _ = write!(out, "{:<34} {:>6} {:>7}", "attack", "lambda", "success");
        for row in Row::ALL {
            let _ = write!(out, " {:>10}", row.name());
        }
        out.push('\n');
        for c in &report.cells {
            let _ = write!(out, "{:<34} {:>6} {:>7.3}", c.id, c.lambda, c.success_rate());
            for row in Row::ALL {
                let rate = c.rate(row, fpr);
                let worst = report.worst(row, fpr).and_then(|w| w.cell.as_deref()) == Some(c.id.as_str());
                let _ = write!(out, " {:>9}{}", fmt_rate(rate), if worst { "*" } else { " " });
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<34} {:>6} {:>7}", "audit FPR (held-out clean)", "", "");
        for row in Row::ALL {
            let a = report.audit.iter().find(|a| a.row == row && a.fpr == fpr).map(|a| a.audit_fpr);
            let _ = write!(out, " {:>9} ", fmt_rate(a));
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Writes report.json, tables.csv, curves.csv, trend.csv, timing.csv and
/// tables.txt into `dir`.
pub fn emit_report(evaluation: &Evaluation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = &evaluation.report;
    write(dir, "report.json", &(serde_json::to_string_pretty(report)? + "\n"))?;
    write(dir, "tables.csv", &cells_to_csv(&report.cells))?;
    write(dir, "curves.csv", &curves_to_csv(&report.curves))?;
    if let Some(t) = &report.trend {
        write(dir, "trend.csv", &trend_to_csv(t))?;
    }
    write(dir, "timing.csv", &timing_to_csv(&evaluation.timing))?;
    write(dir, "tables.txt", &render_tables(report))?;
    Ok(())
}
