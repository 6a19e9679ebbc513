use std::fmt::Write as _;
use std::path::Path;

use crate::criteria::CriterionKind;
use crate::error::{Error, Result};
use crate::select::CandidateResult;
use crate::sim::{BiasMatchReport, SelectionTable};

pub(crate) fn column_list(cols: &[usize], names: &[String]) -> String {
    cols.iter().map(|&c| names[c].as_str()).collect::<Vec<_>>().join(" ")
}

/// Outcome of a `select` run.
#[derive(Debug)]
pub struct SelectReport {
    pub seed: u64,
    pub names: Vec<String>,
    pub criteria: Vec<CriterionKind>,
    /// Sorted by candidate id, then criterion.
    pub results: Vec<CandidateResult>,
    /// Index of the minimizing candidate per criterion.
    pub best: Vec<Option<usize>>,
}

const HEADER: [&str; 17] = [
    "candidate",
    "columns",
    "criterion",
    "fit_term",
    "penalty",
    "value",
    "p",
    "converged",
    "iterations",
    "residual",
    "min_propensity",
    "condition_a",
    "floored_records",
    "rank",
    "selected",
    "seed",
    "error",
];

impl SelectReport {
    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| r.outcome.is_err())
    }

    /// Rank (1 = best) of a cell among successful cells of its criterion.
    fn rank(&self, r: &CandidateResult) -> Option<usize> {
        let v = r.outcome.as_ref().ok()?.report.value;
        let better = self
            .results
            .iter()
            .filter(|o| o.kind == r.kind)
            .filter_map(|o| o.outcome.as_ref().ok().map(|e| (o.candidate, e.report.value)))
            .filter(|&(c, w)| w < v || (w == v && c < r.candidate))
            .count();
        Some(better + 1)
    }

    fn selected(&self, r: &CandidateResult) -> bool {
        let k = self.criteria.iter().position(|&c| c == r.kind).expect("known criterion");
        self.best[k] == Some(r.candidate - 1)
    }

    /// Machine-readable report; floats are written in round-trip precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        for r in &self.results {
            let mut row = vec![
                r.candidate.to_string(),
                column_list(&r.columns, &self.names),
                r.kind.to_string(),
            ];
            match &r.outcome {
                Ok(e) => {
                    let rep = &e.report;
                    row.extend([
                        rep.fit_term.to_string(),
                        rep.penalty.to_string(),
                        rep.value.to_string(),
                        rep.p.to_string(),
                        e.theta.converged.to_string(),
                        e.theta.iterations.to_string(),
                        e.theta.gradient_norm.to_string(),
                        rep.diagnostics.min_propensity.to_string(),
                        rep.diagnostics.condition_a.to_string(),
                        rep.diagnostics.floored_records.to_string(),
                        self.rank(r).map(|k| k.to_string()).unwrap_or_default(),
                        self.selected(r).to_string(),
                        self.seed.to_string(),
                        String::new(),
                    ]);
                }
                Err(err) => {
                    row.extend(std::iter::repeat_n(String::new(), 3));
                    row.push(r.columns.len().to_string());
                    row.extend(["false".to_string(), String::new(), String::new(), String::new(), String::new()]);
                    row.extend([String::new(), String::new(), "false".to_string(), self.seed.to_string()]);
                    row.push(err.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable table with a summary line per criterion.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:<14} {:>14} {:>12} {:>14} {:>4}",
            "id", "columns", "criterion", "fit term", "penalty", "value", "rank"
        );
        for r in &self.results {
            let cols = column_list(&r.columns, &self.names);
            match &r.outcome {
                Ok(e) => {
                    let _ = writeln!(
                        out,
                        "{:>4}  {:<24} {:<14} {:>14.4} {:>12.4} {:>14.4} {:>4}  {}",
                        r.candidate,
                        cols,
                        r.kind.name(),
                        e.report.fit_term,
                        e.report.penalty,
                        e.report.value,
                        self.rank(r).unwrap_or(0),
                        if self.selected(r) { "*" } else { "" }
                    );
                }
                Err(err) => {
                    let _ = writeln!(out, "{:>4}  {:<24} {:<14} failed: {err}", r.candidate, cols, r.kind.name());
                }
            }
        }
        for (k, best) in self.criteria.iter().zip(&self.best) {
            match best {
                Some(c) => {
                    let cols = self
                        .results
                        .iter()
                        .find(|r| r.candidate == c + 1)
                        .map(|r| column_list(&r.columns, &self.names))
                        .unwrap_or_default();
                    let _ = writeln!(out, "{}: candidate {} {{{cols}}}", k.name(), c + 1);
                }
                None => {
                    let _ = writeln!(out, "{}: no candidate evaluated", k.name());
                }
            }
        }
        out
    }
}

/// `(candidate, criterion, value)` rows of a written report.
pub fn read_report_values(path: &Path) -> Result<Vec<(usize, CriterionKind, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let bad = |what: &str| Error::ingest(None, format!("malformed report: {what}"));
        let cand = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("candidate"))?;
        let kind = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("criterion"))?;
        let value = rec.get(5).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
        out.push((cand, kind, value));
    }
    Ok(out)
}

pub(crate) fn selection_table(t: &SelectionTable, names: &[String]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "candidate");
    for k in &t.criteria {
        let _ = write!(out, " {:>14}", k.name());
    }
    out.push('\n');
    for (c, cols) in t.candidates.iter().enumerate() {
        let _ = write!(out, "{:<24}", format!("{} {{{}}}", c + 1, column_list(cols, names)));
        for k in 0..t.criteria.len() {
            let _ = write!(out, " {:>14.3}", t.counts[k][c] as f64 / t.replications as f64);
        }
        out.push('\n');
    }
    let _ = write!(out, "replications: {} (failed {})", t.replications, t.failures);
    out
}

pub(crate) fn write_selection_csv(t: &SelectionTable, names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["candidate", "columns", "criterion", "count", "frequency", "replications", "failures", "seed"])?;
    for (k, kind) in t.criteria.iter().enumerate() {
        for (c, cols) in t.candidates.iter().enumerate() {
            w.write_record([
                (c + 1).to_string(),
                column_list(cols, names),
                kind.to_string(),
                t.counts[k][c].to_string(),
                (t.counts[k][c] as f64 / t.replications as f64).to_string(),
                t.replications.to_string(),
                t.failures.to_string(),
                t.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn bias_summary(r: &BiasMatchReport) -> String {
    let mut s = format!(
        "{} penalty {:.4} (se {:.4}); MC bias {:.4} (se {:.4}); z {:+.2}; relative error {:+.3}; N {} M {} failed {}",
        r.criterion, r.penalty_mean, r.penalty_se, r.mc_bias, r.mc_se, r.z_score, r.relative_error, r.n, r.replications, r.failures
    );
    for a in &r.aux {
        let _ = write!(s, "; {} {:.4} (se {:.4})", a.name, a.mean, a.se);
    }
    s
}

/// One row per replication, then `mean` and `se` summary rows, per candidate.
pub(crate) fn write_bias_csv(reports: &[BiasMatchReport], candidates: &[Vec<usize>], names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_path(path)?;
    let aux_names = reports.first().map(|r| r.aux.iter().map(|a| a.name).collect::<Vec<_>>()).unwrap_or_default();
    let mut header: Vec<String> = ["candidate", "columns", "row", "penalty", "optimism", "risk", "value"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(aux_names.iter().map(|s| s.to_string()));
    header.push("seed".into());
    w.write_record(&header)?;
    for (r, cols) in reports.iter().zip(candidates) {
        let id = (candidates.iter().position(|c| c == cols).unwrap_or(0) + 1).to_string();
        let cl = column_list(cols, names);
        for row in &r.rows {
            let mut rec = vec![
                id.clone(),
                cl.clone(),
                row.replication.to_string(),
                row.penalty.to_string(),
                row.optimism.to_string(),
                row.risk.to_string(),
                row.value.to_string(),
            ];
            rec.extend(row.aux.iter().map(f64::to_string));
            rec.push(r.seed.to_string());
            w.write_record(&rec)?;
        }
        let mut mean = vec![id.clone(), cl.clone(), "mean".into(), r.penalty_mean.to_string(), r.mc_bias.to_string()];
        mean.extend([String::new(), String::new()]);
        mean.extend(r.aux.iter().map(|a| a.mean.to_string()));
        mean.push(r.seed.to_string());
        w.write_record(&mean)?;
        let mut se = vec![id, cl, "se".into(), r.penalty_se.to_string(), r.mc_se.to_string()];
        se.extend([String::new(), String::new()]);
        se.extend(r.aux.iter().map(|a| a.se.to_string()));
        se.push(r.seed.to_string());
        w.write_record(&se)?;
    }
    w.flush()?;
    Ok(())
}
