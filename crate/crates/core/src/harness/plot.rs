//! Plot-ready CSV files from a trace.

use std::fs;
use std::path::Path;

use super::HarnessError;
use crate::sim::{Trace, TraceRow};

/// Rows nearest to `t = k·plot_dt` for `k < final_time / plot_dt`.
pub fn downsample(trace: &Trace, plot_dt: f64) -> Vec<&TraceRow> {
    let Some(last) = trace.rows.last() else {
        return Vec::new();
    };
    let n = (last.t / plot_dt + 1e-9).round() as usize;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for k in 0..n {
        let t = k as f64 * plot_dt;
        while i + 1 < trace.rows.len() && (trace.rows[i + 1].t - t).abs() <= (trace.rows[i].t - t).abs() {
            i += 1;
        }
        out.push(&trace.rows[i]);
    }
    out
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:.6}")).collect()
}

/// Writes `path_xy.csv`, `path_xz.csv`, `error.csv`, `yaw.csv` and
/// `events.csv` into `dir`. In `yaw.csv` the `event` column is 1 on the
/// sample whose interval `[t, t + plot_dt)` holds a logged event.
pub fn emit_plot_data(trace: &Trace, plot_dt: f64, dir: &Path) -> Result<usize, HarnessError> {
    if !(plot_dt > 0.0) {
        return Err(HarnessError::Config(format!("plot_dt must be positive, got {plot_dt}")));
    }
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let rows = downsample(trace, plot_dt);
    let xy: Vec<_> = rows
        .iter()
        .map(|r| fmt(&[r.t, r.p[0], r.p[1], r.p_ref[0], r.p_ref[1]]))
        .collect();
    write_csv(&dir.join("path_xy.csv"), &["t", "x", "y", "x_ref", "y_ref"], &xy)?;
    let xz: Vec<_> = rows
        .iter()
        .map(|r| fmt(&[r.t, r.p[0], r.p[2], r.p_ref[0], r.p_ref[2]]))
        .collect();
    write_csv(&dir.join("path_xz.csv"), &["t", "x", "z", "x_ref", "z_ref"], &xz)?;
    let err: Vec<_> = rows.iter().map(|r| fmt(&[r.t, r.error])).collect();
    write_csv(&dir.join("error.csv"), &["t", "error"], &err)?;

    let yaw: Vec<_> = rows
        .iter()
        .map(|r| {
            let accel = (r.accel[0].powi(2) + r.accel[1].powi(2) + r.accel[2].powi(2)).sqrt();
            let marked = trace
                .events
                .iter()
                .any(|e| e.time >= r.t - 1e-9 && e.time < r.t + plot_dt - 1e-9);
            let mut v = fmt(&[r.t, r.euler[2].to_degrees(), accel]);
            v.push(u8::from(marked).to_string());
            v
        })
        .collect();
    write_csv(&dir.join("yaw.csv"), &["t", "yaw_deg", "accel", "event"], &yaw)?;

    let events: Vec<_> = trace
        .events
        .iter()
        .map(|e| vec![format!("{:.6}", e.time), e.kind.clone(), e.detail.clone()])
        .collect();
    write_csv(&dir.join("events.csv"), &["time", "kind", "detail"], &events)?;
    Ok(rows.len())
}
