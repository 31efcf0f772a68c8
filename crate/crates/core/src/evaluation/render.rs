use std::fmt::Write as _;
use std::path::Path;

use super::reference::{self, REFERENCE_TAG};
use super::{LatencyReport, MetricsReport, SweepReport};
use crate::concepts::ConceptId;
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// One system's per-concept (precision, recall) column pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemColumn {
    pub name: String,
    /// "classify-all", "top-k (k=25)" or the reference tag.
    pub regime: String,
    pub per_concept: Vec<(Option<f64>, Option<f64>, Option<f64>)>,
    pub overall: (Option<f64>, Option<f64>, Option<f64>),
}

impl SystemColumn {
    fn from_report(r: &MetricsReport) -> Self {
        Self {
            name: r.scorer.clone(),
            regime: match r.k {
                Some(k) => format!("{} (k={k})", r.regime),
                None => r.regime.to_string(),
            },
            per_concept: r.per_concept.iter().map(|m| (m.precision, m.recall, m.f1)).collect(),
            overall: (r.overall.precision, r.overall.recall, r.overall.f1),
        }
    }

    fn from_reference(sys: &reference::ReferenceSystem) -> Self {
        Self {
            name: sys.name.to_owned(),
            regime: REFERENCE_TAG.to_owned(),
            per_concept: sys.per_concept.iter().map(|&(p, r)| (Some(p), Some(r), None)).collect(),
            overall: (Some(sys.overall.0), Some(sys.overall.1), None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Rendered {
    pub text: String,
    pub csv: String,
    /// Latency summary CSV; empty when no latency rows were rendered.
    pub latency_csv: String,
}

fn cell(v: Option<f64>, places: usize) -> String {
    match v {
        Some(v) => format!("{v:.places$}"),
        None => "n/a".to_owned(),
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = widths[c])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Table-2-style comparison: one (p, r) column pair per system, 13 concept
/// rows plus an overall row, then a latency table when latency reports or
/// baselines are given.
pub fn render_comparison(reports: &[MetricsReport], latency: &[LatencyReport], baselines: bool) -> Result<Rendered> {
    if reports.is_empty() {
        return Err(Error::validation("comparison needs at least one report"));
    }
    let mut systems: Vec<SystemColumn> = reports.iter().map(SystemColumn::from_report).collect();
    if baselines {
        systems.extend(reference::COMPARISON.iter().map(SystemColumn::from_reference));
    }

    let mut rows = vec![vec!["concept".to_owned()], vec![String::new()], vec![String::new()]];
    for s in &systems {
        rows[0].extend([s.name.clone(), String::new()]);
        rows[1].extend([s.regime.clone(), String::new()]);
        rows[2].extend(["p".to_owned(), "r".to_owned()]);
    }
    let mut csv = String::from("system,regime,concept,precision,recall,f1\n");
    for (i, id) in ConceptId::ALL.into_iter().enumerate() {
        let mut row = vec![id.to_string()];
        for s in &systems {
            let (p, r, f) = s.per_concept[i];
            row.extend([cell(p, 2), cell(r, 2)]);
            let _ = writeln!(csv, "{},{},{id},{},{},{}", csv_field(&s.name), csv_field(&s.regime), cell(p, 4), cell(r, 4), cell(f, 4));
        }
        rows.push(row);
    }
    let mut overall = vec!["overall".to_owned()];
    for s in &systems {
        let (p, r, f) = s.overall;
        overall.extend([cell(p, 2), cell(r, 2)]);
        let _ = writeln!(csv, "{},{},overall,{},{},{}", csv_field(&s.name), csv_field(&s.regime), cell(p, 4), cell(r, 4), cell(f, 4));
    }
    rows.push(overall);
    let mut text = aligned(&rows);

    let mut latency_csv = String::new();
    if !latency.is_empty() || baselines {
        let (ltext, lcsv) = render_latency(latency, baselines);
        text.push('\n');
        text.push_str(&ltext);
        latency_csv = lcsv;
    }
    Ok(Rendered { text, csv, latency_csv })
}

/// Latency summary (text, CSV): measured rows, then the published rows
/// when `baselines` is set.
pub fn render_latency(latency: &[LatencyReport], baselines: bool) -> (String, String) {
    let header = ["system", "seconds_per_patient", "p50", "p95", "patients", "f1", "source"];
    let mut rows = vec![header.map(String::from).to_vec()];
    for l in latency {
        rows.push(vec![
            l.scorer.clone(),
            format!("{:.4}", l.mean),
            format!("{:.4}", l.p50),
            format!("{:.4}", l.p95),
            l.patients().to_string(),
            cell(l.f1, 2),
            "measured".to_owned(),
        ]);
    }
    if baselines {
        for r in reference::LATENCY {
            rows.push(vec![
                r.name.to_owned(),
                format!("{:.2}", r.seconds_per_patient),
                "-".to_owned(),
                "-".to_owned(),
                "-".to_owned(),
                format!("{:.2}", r.f1),
                REFERENCE_TAG.to_owned(),
            ]);
        }
    }
    let mut csv = String::new();
    for row in &rows {
        let _ = writeln!(csv, "{}", row.iter().map(|s| csv_field(s)).collect::<Vec<_>>().join(","));
    }
    (aligned(&rows), csv)
}

/// Per-k overall metrics and per-concept rows, followed by the published
/// trend points.
pub fn render_sweep(report: &SweepReport) -> Rendered {
    let mut csv = String::from("system,k,concept,precision,recall,f1\n");
    let mut rows = vec![["system", "k", "concept", "precision", "recall", "f1"].map(String::from).to_vec()];
    let name = csv_field(&report.scorer);
    for point in &report.points {
        let mut push = |concept: &str, p: Option<f64>, r: Option<f64>, f: Option<f64>| {
            let _ = writeln!(csv, "{name},{},{concept},{},{},{}", point.k, cell(p, 4), cell(r, 4), cell(f, 4));
            rows.push(vec![report.scorer.clone(), point.k.to_string(), concept.to_owned(), cell(p, 2), cell(r, 2), cell(f, 2)]);
        };
        for m in &point.per_concept {
            push(m.concept_id.as_str(), m.precision, m.recall, m.f1);
        }
        push("overall", point.overall.precision, point.overall.recall, point.overall.f1);
    }
    for t in reference::SWEEP {
        let system = format!("{} {REFERENCE_TAG}", t.name);
        for (k, p, r) in [(t.k_low, t.precision.0, t.recall.0), (t.k_high, t.precision.1, t.recall.1)] {
            let _ = writeln!(csv, "{},{k},overall,{p:.4},{r:.4},n/a", csv_field(&system));
            rows.push(vec![system.clone(), k.to_string(), "overall".into(), format!("{p:.2}"), format!("{r:.2}"), "n/a".into()]);
        }
    }
    Rendered {
        text: aligned(&rows),
        csv,
        latency_csv: String::new(),
    }
}

/// Per-patient samples as `scorer,patient_id,seconds`.
pub fn render_latency_samples(reports: &[LatencyReport]) -> String {
    let mut out = String::from("scorer,patient_id,seconds\n");
    for r in reports {
        for s in &r.samples {
            let _ = writeln!(out, "{},{},{:.6}", csv_field(&r.scorer), csv_field(&s.patient_id), s.seconds);
        }
    }
    out
}

/// Writes the text rendering to `text_path`, the metrics CSV to `csv_path`
/// and, when present, the latency CSV beside it with a `.latency.csv` suffix.
pub fn write_comparison(rendered: &Rendered, text_path: &Path, csv_path: &Path) -> Result<()> {
    write_atomic(text_path, rendered.text.as_bytes())?;
    write_atomic(csv_path, rendered.csv.as_bytes())?;
    if !rendered.latency_csv.is_empty() {
        write_atomic(&csv_path.with_extension("latency.csv"), rendered.latency_csv.as_bytes())?;
    }
    Ok(())
}
