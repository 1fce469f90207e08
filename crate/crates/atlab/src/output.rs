//! CSV writers for histories, learning curves, diagnostics and complexity
//! measures. Floats use the shortest representation that round-trips, so
//! identical inputs give byte-identical files.

use atlab_core::complexity::ComplexityReport;
use atlab_core::diagnostics::{GradNorms, SweepRecord, Theorem1Report};
use atlab_core::trainer::HistoryRow;

use crate::error::{AppError, Result};

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is UTF-8")
}

pub fn history_csv(history: &[HistoryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HistoryRow::COLUMNS)?;
    for row in history {
        let mut fields: Vec<String> = row.values().iter().map(|v| opt(*v)).collect();
        fields[0] = row.epoch.to_string();
        w.write_record(&fields)?;
    }
    Ok(finish(w))
}

fn parse_field(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| AppError::Usage(format!("history value {s:?} is not a number")))
}

pub fn parse_history_csv(text: &str) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != HistoryRow::COLUMNS {
        return Err(AppError::Usage(format!("unexpected history columns {header:?}")));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let v: Vec<Option<f64>> = record.iter().map(parse_field).collect::<Result<_>>()?;
        let req = |i: usize| v[i].ok_or_else(|| AppError::Usage(format!("missing {}", HistoryRow::COLUMNS[i])));
        rows.push(HistoryRow {
            epoch: req(0)? as usize,
            lr: req(1)?,
            train_nat_acc: req(2)?,
            train_rob_acc: req(3)?,
            test_nat_acc: v[4],
            test_rob_acc: v[5],
            loss_total: req(6)?,
            loss_clean_ce: req(7)?,
            loss_adv_ce: req(8)?,
            loss_kl: req(9)?,
            loss_te: req(10)?,
            gamma: req(11)?,
            te_weight: req(12)?,
        });
    }
    Ok(rows)
}

/// Long-format learning curves: one `(epoch, series, value)` row per epoch
/// and series, series named after history columns. All non-epoch columns
/// are emitted when `series` is `None`; missing values (epochs without
/// evaluation) are skipped.
pub fn emit_curves(history: &[HistoryRow], series: Option<&[&str]>) -> Result<String> {
    if history.is_empty() {
        return Err(AppError::Usage("cannot emit curves for an empty history".into()));
    }
    let all = &HistoryRow::COLUMNS[1..];
    let chosen: Vec<&str> = series.map(<[&str]>::to_vec).unwrap_or_else(|| all.to_vec());
    let mut index = Vec::with_capacity(chosen.len());
    for name in &chosen {
        match all.iter().position(|c| c == name) {
            Some(i) => index.push(i + 1),
            None => return Err(AppError::Usage(format!("unknown series {name:?}"))),
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "series", "value"])?;
    for row in history {
        let values = row.values();
        for (&i, name) in index.iter().zip(&chosen) {
            if let Some(v) = values[i] {
                w.write_record([row.epoch.to_string(), name.to_string(), num(v)])?;
            }
        }
    }
    Ok(finish(w))
}

pub fn grad_norms_csv(rows: &[(usize, GradNorms)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "method", "norm_clean_ce", "norm_adv", "norm_kl", "norm_residual", "ratio"])?;
    for (epoch, g) in rows {
        w.write_record([
            epoch.to_string(),
            g.method.as_str().to_string(),
            num(g.clean_ce),
            num(g.adv),
            num(g.kl),
            num(g.residual),
            opt(g.ratio()),
        ])?;
    }
    Ok(finish(w))
}

pub fn sweep_csv(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["loss_kind", "lambda", "l2_dist", "cosine", "loss"])?;
    for r in records {
        w.write_record([
            r.loss_kind.as_str().to_string(),
            num(r.lambda),
            num(r.l2_dist),
            opt(r.cosine),
            num(r.loss),
        ])?;
    }
    Ok(finish(w))
}

/// `pair_id` is the sample id of the per-sample comparison between the two
/// snapshots.
pub fn theorem1_csv(report: &Theorem1Report) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair_id", "lhs", "rhs", "violated"])?;
    for r in &report.rows {
        w.write_record([r.sample_id.to_string(), num(r.lhs), num(r.rhs), r.violated.to_string()])?;
    }
    Ok(finish(w))
}

pub fn sample_losses_csv(losses: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample_id", "adv_loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), num(*l)])?;
    }
    Ok(finish(w))
}

pub const COMPLEXITY_COLUMNS: [&str; 9] = [
    "run_id",
    "gamma_margin",
    "spectral_complexity",
    "l1_complexity",
    "input_curvature",
    "input_curvature_stderr",
    "weight_flatness",
    "weight_flatness_stderr",
    "flags",
];

/// Flags: `non_positive_margin` (complexities left empty) and
/// `curvature_unconverged`, separated by `;`.
pub fn complexity_csv(rows: &[(String, ComplexityReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPLEXITY_COLUMNS)?;
    for (run_id, r) in rows {
        let mut flags = Vec::new();
        if r.margin.non_positive {
            flags.push("non_positive_margin");
        }
        if !r.input_curvature.all_converged {
            flags.push("curvature_unconverged");
        }
        w.write_record([
            run_id.clone(),
            num(r.margin.value),
            opt(r.spectral_complexity),
            opt(r.l1_complexity),
            num(r.input_curvature.estimate.mean),
            num(r.input_curvature.estimate.stderr),
            num(r.weight_flatness.mean),
            num(r.weight_flatness.stderr),
            flags.join(";"),
        ])?;
    }
    Ok(finish(w))
}
