//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip decimal form.

use std::io::Write;

use crate::admm::TraceRecord;
use crate::experiments::SweepResult;

pub const SWEEP_COLUMNS: [&str; 7] = [
    "sweep_param",
    "value",
    "estimator",
    "rmse",
    "conv_rate",
    "mean_iters",
    "mean_seconds",
];

fn num(x: f64) -> String {
    format!("{x}")
}

/// Trace table: `k, objective, aug_lagrangian, primal_residual, dx, dd,
/// dbeta, dlambda, x1..xH`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRecord], out: W) -> csv::Result<()> {
    let dim = rows.first().map_or(0, |r| r.x.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "k",
        "objective",
        "aug_lagrangian",
        "primal_residual",
        "dx",
        "dd",
        "dbeta",
        "dlambda",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=dim).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.k.to_string(),
            num(r.objective),
            num(r.aug_lagrangian),
            num(r.primal_residual),
            num(r.steps.dx),
            num(r.steps.dd),
            num(r.steps.dbeta),
            num(r.steps.dlambda),
        ];
        rec.extend(r.x.iter().map(|c| num(*c)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sweep point and estimator.
pub fn write_sweep_csv<W: Write>(result: &SweepResult, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for point in &result.points {
        for row in &point.rows {
            w.write_record([
                result.sweep_param.clone(),
                num(point.value),
                row.estimator.clone(),
                num(row.rmse),
                num(row.conv_rate),
                num(row.mean_iters),
                num(row.mean_seconds),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON of the sweep, per-run records included.
pub fn write_sweep_json<W: Write>(result: &SweepResult, out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, result)
}
