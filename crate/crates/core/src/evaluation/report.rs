//! Per-gene report table shared by the stain-learning model and the
//! least-squares baseline.
//!
//! ```text
//! gene,median_r,combined_p,n_folds,n_skipped
//! GNAS,0.540000,1.234000e-12,8,0
//! # genes_r_gt_0.5,1
//! # genes_p_lt_1e-5,1
//! ```

use std::fmt::Write;

use thiserror::Error;

use super::cv::{EvalReport, GeneSummary, P_THRESHOLD, R_THRESHOLD};

pub const REPORT_HEADER: &str = "gene,median_r,combined_p,n_folds,n_skipped";
const R_FOOTER: &str = "# genes_r_gt_0.5";
const P_FOOTER: &str = "# genes_p_lt_1e-5";

pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for g in &report.genes {
        let r = g.median_r.map_or("NA".to_string(), |r| format!("{r:.6}"));
        let p = g
            .combined_p
            .map_or("NA".to_string(), |p| format!("{p:.6e}"));
        writeln!(out, "{},{r},{p},{},{}", g.gene, g.n_folds, g.n_skipped).unwrap();
    }
    writeln!(out, "{R_FOOTER},{}", report.count_r_gt_half).unwrap();
    writeln!(out, "{P_FOOTER},{}", report.count_p_significant).unwrap();
    out
}

/// Skip reasons of every fold, one line per skipped (fold, gene).
pub fn render_skips(report: &EvalReport) -> String {
    let mut out = String::from("held_out_patient,gene,n,reason\n");
    for fold in &report.folds {
        for g in &fold.per_gene {
            if let Some(reason) = &g.skipped_reason {
                writeln!(
                    out,
                    "{},{},{},{}",
                    fold.held_out_patient, g.gene, g.n, reason
                )
                .unwrap();
            }
        }
    }
    out
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("report header must be {REPORT_HEADER:?}")]
    Header,
    #[error("line {0}: {1}")]
    Line(usize, String),
}

/// A report read back from its text form.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub genes: Vec<GeneSummary>,
    pub count_r_gt_half: usize,
    pub count_p_significant: usize,
}

impl ReportTable {
    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == REPORT_HEADER => {}
            _ => return Err(ReportError::Header),
        }
        let mut genes = Vec::new();
        let mut counts = (None, None);
        for (i, line) in lines {
            let lineno = i + 1;
            let bad = |m: &str| ReportError::Line(lineno, m.to_string());
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if line.starts_with('#') {
                let value: usize = fields
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad summary line"))?;
                match fields[0] {
                    R_FOOTER => counts.0 = Some(value),
                    P_FOOTER => counts.1 = Some(value),
                    _ => return Err(bad("unknown summary line")),
                }
                continue;
            }
            if fields.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let opt = |v: &str| -> Result<Option<f64>, ReportError> {
                if v == "NA" {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| bad("bad number"))
                }
            };
            genes.push(GeneSummary {
                gene: fields[0].to_string(),
                median_r: opt(fields[1])?,
                combined_p: opt(fields[2])?,
                n_folds: fields[3].parse().map_err(|_| bad("bad fold count"))?,
                n_skipped: fields[4].parse().map_err(|_| bad("bad skip count"))?,
            });
        }
        let derived_r = genes
            .iter()
            .filter(|g| g.median_r.is_some_and(|r| r > R_THRESHOLD))
            .count();
        let derived_p = genes
            .iter()
            .filter(|g| g.combined_p.is_some_and(|p| p < P_THRESHOLD))
            .count();
        Ok(Self {
            count_r_gt_half: counts.0.unwrap_or(derived_r),
            count_p_significant: counts.1.unwrap_or(derived_p),
            genes,
        })
    }

    pub fn gene(&self, name: &str) -> Option<&GeneSummary> {
        self.genes.iter().find(|g| g.gene == name)
    }
}

/// Side-by-side comparison of several reports: one row per method with the
/// median correlation of each requested gene and the two summary counts.
pub fn render_comparison(methods: &[(String, ReportTable)], genes: &[String]) -> String {
    let mut out = String::from("method");
    for g in genes {
        write!(out, ",{g}").unwrap();
    }
    out.push_str(",genes_r_gt_0.5,genes_p_lt_1e-5\n");
    for (name, table) in methods {
        out.push_str(name);
        for g in genes {
            match table.gene(g).and_then(|s| s.median_r) {
                Some(r) => write!(out, ",{r:.2}").unwrap(),
                None => out.push_str(",NA"),
            }
        }
        writeln!(
            out,
            ",{},{}",
            table.count_r_gt_half, table.count_p_significant
        )
        .unwrap();
    }
    out
}
