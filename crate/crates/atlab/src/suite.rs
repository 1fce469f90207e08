//! Attack suites and best/final/diff robustness reports.

use std::collections::BTreeSet;

use atlab_core::attacks::{PerturbationSpec, Norm};
use atlab_core::data::Dataset;
use atlab_core::eval::evaluate;
use atlab_core::model::ModelParameters;
use atlab_core::objectives::LossKind;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const DEFAULT_SUITE: [&str; 3] = ["pgd10", "pgd_long", "cw_pgd"];
pub const NATURAL: &str = "natural";
const EPSILON: f64 = 8.0 / 255.0;
const STEP: f64 = 2.0 / 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSuite {
    pub entries: Vec<(String, PerturbationSpec)>,
}

impl AttackSuite {
    pub fn new(entries: Vec<(String, PerturbationSpec)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (name, spec) in &entries {
            if name == NATURAL {
                return Err(AppError::Usage(format!("suite entry may not be named {NATURAL}")));
            }
            if !seen.insert(name.as_str()) {
                return Err(AppError::Usage(format!("duplicate suite entry {name}")));
            }
            spec.validate()?;
        }
        Ok(Self { entries })
    }

    /// Named ℓ∞ attacks at ε = 8/255: `pgd10` (10 steps of 2/255),
    /// `pgd_long` (100 steps) and `cw_pgd` (40 steps on the CW margin loss).
    pub fn preset(name: &str, seed: u64) -> Result<PerturbationSpec> {
        let spec = match name {
            "pgd10" => PerturbationSpec::linf(EPSILON, STEP, 10, seed),
            "pgd_long" => PerturbationSpec::linf(EPSILON, STEP, 100, seed),
            "cw_pgd" => PerturbationSpec::linf(EPSILON, STEP, 40, seed).with_loss(LossKind::Cw),
            "fgsm" => PerturbationSpec {
                norm: Norm::Linf,
                epsilon: EPSILON,
                step_size: EPSILON,
                steps: 1,
                random_start: false,
                loss_kind: LossKind::Ce,
                seed,
            },
            other => return Err(AppError::Usage(format!("unknown attack {other:?} (known: pgd10, pgd_long, cw_pgd, fgsm)"))),
        };
        Ok(spec)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], seed: u64) -> Result<Self> {
        let entries = names
            .iter()
            .map(|n| Ok((n.as_ref().to_string(), Self::preset(n.as_ref(), seed)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn default_suite(seed: u64) -> Self {
        Self::from_names(&DEFAULT_SUITE, seed).expect("presets are valid")
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }
}

/// Accuracies in percent. `diff` is not stored; see [`ReportRow::diff`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub metric: String,
    pub best: f64,
    pub r#final: f64,
}

/// Hundredths of a percent, the precision at which reports are rendered.
fn hundredths(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

fn render_hundredths(h: i64) -> String {
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

impl ReportRow {
    /// `best - final` as rendered, so the printed diff always equals the
    /// difference of the printed columns.
    pub fn diff(&self) -> f64 {
        (hundredths(self.best) - hundredths(self.r#final)) as f64 / 100.0
    }

    pub fn rendered(&self) -> [String; 5] {
        let (b, f) = (hundredths(self.best), hundredths(self.r#final));
        [
            self.method.clone(),
            self.metric.clone(),
            render_hundredths(b),
            render_hundredths(f),
            render_hundredths(b - f),
        ]
    }
}

/// One row for natural accuracy and one per suite entry.
pub fn run_suite(
    method: &str,
    best: &ModelParameters,
    last: &ModelParameters,
    dataset: &Dataset,
    suite: &AttackSuite,
) -> Result<Vec<ReportRow>> {
    let mut rows = vec![ReportRow {
        method: method.to_string(),
        metric: NATURAL.into(),
        best: 100.0 * evaluate(best, dataset, None)?,
        r#final: 100.0 * evaluate(last, dataset, None)?,
    }];
    for (name, spec) in &suite.entries {
        rows.push(ReportRow {
            method: method.to_string(),
            metric: name.clone(),
            best: 100.0 * evaluate(best, dataset, Some(spec))?,
            r#final: 100.0 * evaluate(last, dataset, Some(spec))?,
        });
    }
    Ok(rows)
}

pub const REPORT_COLUMNS: [&str; 5] = ["method", "metric", "best", "final", "diff"];

pub fn report_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record(r.rendered())?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii"))
}

/// Markdown table, methods as rows grouped with their metrics.
pub fn report_markdown(rows: &[ReportRow]) -> String {
    let cells: Vec<[String; 5]> = rows.iter().map(|r| r.rendered()).collect();
    let mut widths = REPORT_COLUMNS.map(str::len);
    for c in &cells {
        for (w, s) in widths.iter_mut().zip(c) {
            *w = (*w).max(s.len());
        }
    }
    let line = |c: [&str; 5]| -> String {
        let mut s = String::from("|");
        for (i, v) in c.iter().enumerate() {
            if i < 2 {
                s.push_str(&format!(" {v:<w$} |", w = widths[i]));
            } else {
                s.push_str(&format!(" {v:>w$} |", w = widths[i]));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(REPORT_COLUMNS);
    out.push('|');
    for (i, w) in widths.iter().enumerate() {
        // right-aligned numeric columns
        let rule = if i < 2 { "-".repeat(*w) } else { format!("{}:", "-".repeat(w - 1)) };
        out.push_str(&format!(" {rule} |"));
    }
    out.push('\n');
    for c in &cells {
        out.push_str(&line([&c[0], &c[1], &c[2], &c[3], &c[4]]));
    }
    out
}
