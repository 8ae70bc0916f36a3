//! CSV files exchanged between the pipeline stages.
//!
//! The error export uses 9 significant digits in C `%.9g` style. Files that
//! are read back (events, logs, ground truth) use the shortest decimal that
//! round-trips exactly, so a write/read cycle is lossless.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};

use super::errors::{interpolate_truth, nees};
use super::log::{LogRecord, TrajectoryLog};
use crate::ekf::{PseudoMeasurement, Sensor, StepSource};
use crate::error::{Error, Result};
use crate::sim::GroundTruthSample;
use crate::state::{wrap, StateVector, Timestamp};

pub const ERRORS_HEADER: &str =
    "t,x_true,y_true,psi_true,x_est,y_est,psi_est,v_est,psi_dot_est,err_pos,err_psi,nees,P_xx,P_yy,source";
pub const EVENTS_HEADER: &str = "t,source,v_meas,psi_dot_meas,q00,q01,q11";
pub const TRUTH_HEADER: &str = "t,x,y,v,v_dot,psi,psi_dot,psi_ddot";
pub const LOG_HEADER: &str = "t,x,y,v,v_dot,psi,psi_dot,psi_ddot,\
P_x,P_y,P_v,P_v_dot,P_psi,P_psi_dot,P_psi_ddot,P_xy,source,innov_v,innov_psi_dot";

/// `%.9g`: 9 significant digits, trailing zeros removed, exponent form
/// outside `1e-4 <= |v| < 1e9`.
pub fn format_g9(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mant), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (8 - exp) as usize, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_lines(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for row in rows {
        writeln!(w, "{row}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Per-record comparison against the interpolated ground truth.
pub fn export_csv(log: &TrajectoryLog, truth: &[GroundTruthSample], path: &Path) -> Result<()> {
    let rows = log
        .records
        .iter()
        .map(|r| {
            let t = r.timestamp.secs();
            let (x, y, psi) = interpolate_truth(truth, t)?;
            let e = Vector2::new(r.state.x - x, r.state.y - y);
            let p = Matrix2::new(r.cov_diag[0], r.cov_xy, r.cov_xy, r.cov_diag[1]);
            let s = &r.state;
            let nums = [
                t,
                x,
                y,
                psi,
                s.x,
                s.y,
                s.psi,
                s.v,
                s.psi_dot,
                e.norm(),
                wrap(s.psi - psi),
                nees(&e, &p),
                r.cov_diag[0],
                r.cov_diag[1],
            ];
            let mut line: Vec<String> = nums.iter().map(|v| format_g9(*v)).collect();
            line.push(r.source.as_str().to_string());
            Ok(line.join(","))
        })
        .collect::<Result<Vec<String>>>()?;
    write_lines(path, ERRORS_HEADER, rows.into_iter())
}

pub fn write_events(path: &Path, events: &[PseudoMeasurement]) -> Result<()> {
    write_lines(
        path,
        EVENTS_HEADER,
        events.iter().map(|e| {
            format!(
                "{},{},{},{},{},{},{}",
                e.timestamp.secs(),
                e.source.as_str(),
                e.v_meas,
                e.psi_dot_meas,
                e.noise[(0, 0)],
                e.noise[(0, 1)],
                e.noise[(1, 1)]
            )
        }),
    )
}

pub fn write_truth(path: &Path, truth: &[GroundTruthSample]) -> Result<()> {
    write_lines(
        path,
        TRUTH_HEADER,
        truth.iter().map(|g| {
            let s = &g.state;
            format!(
                "{},{},{},{},{},{},{},{}",
                g.timestamp.secs(),
                s.x,
                s.y,
                s.v,
                s.v_dot,
                s.psi,
                s.psi_dot,
                s.psi_ddot
            )
        }),
    )
}

pub fn write_log(path: &Path, log: &TrajectoryLog) -> Result<()> {
    write_lines(
        path,
        LOG_HEADER,
        log.records.iter().map(|r| {
            let s = &r.state;
            let mut f: Vec<String> = [s.x, s.y, s.v, s.v_dot, s.psi, s.psi_dot, s.psi_ddot]
                .iter()
                .chain(r.cov_diag.iter())
                .chain(std::iter::once(&r.cov_xy))
                .map(|v| v.to_string())
                .collect();
            f.insert(0, r.timestamp.secs().to_string());
            f.push(r.source.as_str().to_string());
            match r.innovation {
                Some(i) => {
                    f.push(i[0].to_string());
                    f.push(i[1].to_string());
                }
                None => f.extend([String::new(), String::new()]),
            }
            f.join(",")
        }),
    )
}

/// Reads rows of a headed CSV, checking the header exactly.
fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, csv::StringRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let got = rdr
        .headers()
        .map_err(|e| Error::data(path, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if got != header {
        return Err(Error::data(path, format!("expected header '{header}', got '{got}'")));
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(path, format!("line {line}: {e}")))?;
        if rec.len() != width {
            return Err(Error::data(path, format!("line {line}: expected {width} fields, got {}", rec.len())));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn field<T: FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| Error::data(path, format!("line {line}: bad {name} '{}'", &rec[i])))
}

fn finite(path: &Path, line: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, line, rec, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::data(path, format!("line {line}: {name} is not finite")))
    }
}

fn timestamp(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<Timestamp> {
    let t = finite(path, line, rec, 0, "t")?;
    Timestamp::new(t).map_err(|e| Error::data(path, format!("line {line}: {e}")))
}

/// Reads events in file order; ordering is checked by the filter.
pub fn read_events(path: &Path) -> Result<Vec<PseudoMeasurement>> {
    read_rows(path, EVENTS_HEADER)?
        .into_iter()
        .map(|(line, rec)| {
            let source: Sensor = field(path, line, &rec, 1, "source")?;
            let q01 = finite(path, line, &rec, 5, "q01")?;
            let noise = Matrix2::new(
                finite(path, line, &rec, 4, "q00")?,
                q01,
                q01,
                finite(path, line, &rec, 6, "q11")?,
            );
            PseudoMeasurement::new(
                finite(path, line, &rec, 2, "v_meas")?,
                finite(path, line, &rec, 3, "psi_dot_meas")?,
                noise,
                source,
                timestamp(path, line, &rec)?,
            )
            .map_err(|e| Error::data(path, format!("line {line}: {e}")))
        })
        .collect()
}

fn state_at(path: &Path, line: usize, rec: &csv::StringRecord, first: usize) -> Result<StateVector> {
    let mut v = [0.0; 7];
    let names = ["x", "y", "v", "v_dot", "psi", "psi_dot", "psi_ddot"];
    for (k, name) in names.iter().enumerate() {
        v[k] = finite(path, line, rec, first + k, name)?;
    }
    Ok(StateVector {
        x: v[0],
        y: v[1],
        v: v[2],
        v_dot: v[3],
        psi: v[4],
        psi_dot: v[5],
        psi_ddot: v[6],
    })
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthSample>> {
    let rows = read_rows(path, TRUTH_HEADER)?;
    let mut out: Vec<GroundTruthSample> = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let g = GroundTruthSample {
            timestamp: timestamp(path, line, &rec)?,
            state: state_at(path, line, &rec, 1)?,
        };
        if out.last().is_some_and(|p| p.timestamp >= g.timestamp) {
            return Err(Error::data(path, format!("line {line}: timestamps must increase")));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<TrajectoryLog> {
    let rows = read_rows(path, LOG_HEADER)?;
    let mut records: Vec<LogRecord> = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let mut cov_diag = [0.0; 7];
        for (k, d) in cov_diag.iter_mut().enumerate() {
            *d = finite(path, line, &rec, 8 + k, "covariance")?;
        }
        let innovation = match (&rec[17], &rec[18]) {
            ("", "") => None,
            _ => Some(Vector2::new(
                finite(path, line, &rec, 17, "innov_v")?,
                finite(path, line, &rec, 18, "innov_psi_dot")?,
            )),
        };
        let r = LogRecord {
            timestamp: timestamp(path, line, &rec)?,
            state: state_at(path, line, &rec, 1)?,
            cov_diag,
            cov_xy: finite(path, line, &rec, 15, "P_xy")?,
            source: field::<StepSource>(path, line, &rec, 16, "source")?,
            innovation,
        };
        if records.last().is_some_and(|p| p.timestamp > r.timestamp) {
            return Err(Error::data(path, format!("line {line}: timestamps must not decrease")));
        }
        records.push(r);
    }
    Ok(TrajectoryLog {
        records,
        skipped_updates: 0,
    })
}
