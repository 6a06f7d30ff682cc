//! Control, detector, prediction and dataset CSV files.
//!
//! Floats are written with 17 significant digits so that reading a log back
//! reproduces every value bit for bit.

use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Writer};

use crate::control::ControlMode;
use crate::error::{Error, Result};
use crate::model::Window;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRow {
    pub tick: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub pose: [f64; 3],
    pub twist: [f64; 3],
    pub f_e: [f64; 3],
    pub f_d: f64,
    pub alpha_hat: f64,
    pub mu_hat: f64,
    pub v_vmp: [f64; 3],
    pub v_f: [f64; 3],
    pub v_r: [f64; 3],
    pub v_t: [f64; 3],
    pub v_d: [f64; 3],
    pub f_m: [f64; 3],
    pub tau: Vec<f64>,
    pub gain_scale: f64,
    pub mode: ControlMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRow {
    pub tick: usize,
    pub t: f64,
    pub score: f64,
    pub model_scores: Vec<f64>,
    pub abnormal_score: f64,
    pub threshold: f64,
    pub mode: ControlMode,
}

/// Ensemble prediction for the newest step of each scored window, with the
/// 3-σ band per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub tick: usize,
    pub t: f64,
    pub f_t: f64,
    pub f_n: f64,
    pub f_t_mean: f64,
    pub f_t_lower: f64,
    pub f_t_upper: f64,
    pub f_n_mean: f64,
    pub f_n_lower: f64,
    pub f_n_upper: f64,
}

const AXES: [&str; 3] = ["x", "y", "w"];

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

fn axes(prefix: &str) -> impl Iterator<Item = String> + '_ {
    AXES.iter().map(move |a| format!("{prefix}_{a}"))
}

pub fn control_header(dof: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["tick".into(), "t".into()];
    h.extend(indexed("q", dof));
    h.extend(indexed("qdot", dof));
    h.extend(["x", "y", "theta", "vx", "vy", "omega", "fx", "fy", "tz", "f_d", "alpha_hat", "mu_hat"].map(String::from));
    for p in ["vmp", "vf", "vr", "vt", "vd", "fm"] {
        h.extend(axes(p));
    }
    h.extend(indexed("tau", dof));
    h.extend(["gain_scale", "mode"].map(String::from));
    h
}

pub fn detector_header(models: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["tick".into(), "t".into(), "score".into()];
    h.extend(indexed("score", models));
    h.extend(["abnormal_score", "threshold", "mode"].map(String::from));
    h
}

pub const PREDICTION_HEADER: [&str; 10] = [
    "tick", "t", "f_t", "f_n", "f_t_mean", "f_t_lower", "f_t_upper", "f_n_mean", "f_n_lower", "f_n_upper",
];

pub const DATASET_HEADER: [&str; 7] = ["window", "step", "v_t", "v_n", "w", "f_t", "f_n"];

fn writer(path: &Path) -> Result<Writer<std::fs::File>> {
    Writer::from_path(path).map_err(|e| Error::format(path, e))
}

fn finish(mut w: Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

impl ControlRow {
    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.tick.to_string(), fmt_f64(self.t)];
        let floats = self
            .q
            .iter()
            .chain(&self.qdot)
            .chain(&self.pose)
            .chain(&self.twist)
            .chain(&self.f_e)
            .chain([&self.f_d, &self.alpha_hat, &self.mu_hat])
            .chain(&self.v_vmp)
            .chain(&self.v_f)
            .chain(&self.v_r)
            .chain(&self.v_t)
            .chain(&self.v_d)
            .chain(&self.f_m)
            .chain(&self.tau)
            .chain([&self.gain_scale]);
        f.extend(floats.map(|v| fmt_f64(*v)));
        f.push(self.mode.to_string());
        f
    }
}

pub fn write_control_log(path: &Path, rows: &[ControlRow], dof: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(control_header(dof)).map_err(|e| Error::format(path, e))?;
    for r in rows {
        w.write_record(r.fields()).map_err(|e| Error::format(path, e))?;
    }
    finish(w, path)
}

pub fn write_detector_log(path: &Path, rows: &[DetectorRow], models: usize) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(detector_header(models)).map_err(|e| Error::format(path, e))?;
    for r in rows {
        let mut f = vec![r.tick.to_string(), fmt_f64(r.t), fmt_f64(r.score)];
        f.extend(r.model_scores.iter().map(|v| fmt_f64(*v)));
        f.extend([fmt_f64(r.abnormal_score), fmt_f64(r.threshold), r.mode.to_string()]);
        w.write_record(f).map_err(|e| Error::format(path, e))?;
    }
    finish(w, path)
}

pub fn write_prediction_log(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PREDICTION_HEADER).map_err(|e| Error::format(path, e))?;
    for r in rows {
        let mut f = vec![r.tick.to_string()];
        f.extend(
            [r.t, r.f_t, r.f_n, r.f_t_mean, r.f_t_lower, r.f_t_upper, r.f_n_mean, r.f_n_lower, r.f_n_upper].map(fmt_f64),
        );
        w.write_record(f).map_err(|e| Error::format(path, e))?;
    }
    finish(w, path)
}

pub fn write_dataset(path: &Path, windows: &[Window]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(DATASET_HEADER).map_err(|e| Error::format(path, e))?;
    for (i, win) in windows.iter().enumerate() {
        let steps = win.velocity.len() / 3;
        for s in 0..steps {
            let mut f = vec![i.to_string(), s.to_string()];
            f.extend(win.velocity[3 * s..3 * s + 3].iter().chain(&win.force[2 * s..2 * s + 2]).map(|v| fmt_f64(*v)));
            w.write_record(f).map_err(|e| Error::format(path, e))?;
        }
    }
    finish(w, path)
}

/// Reads named columns of one CSV file.
struct Table {
    path: std::path::PathBuf,
    header: StringRecord,
    records: Vec<StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = ReaderBuilder::new().from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path, format!("{other:?}")),
        })?;
        let header = r.headers().map_err(|e| Error::format(path, e))?.clone();
        let records = r.records().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::format(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            records,
        })
    }

    fn count_prefixed(&self, prefix: &str) -> usize {
        (0..).take_while(|i| self.header.iter().any(|h| h == format!("{prefix}_{i}"))).count()
    }

    fn expect_header(&self, expected: &[String]) -> Result<()> {
        if self.header.iter().eq(expected.iter().map(String::as_str)) {
            Ok(())
        } else {
            Err(Error::format(&self.path, "unexpected header"))
        }
    }

    fn parse<T: FromStr>(&self, row: usize, field: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        field
            .parse()
            .map_err(|e: T::Err| Error::format(&self.path, format!("row {}: {e}", row + 1)))
    }
}

/// Sequential field cursor over one record.
struct Cursor<'a> {
    table: &'a Table,
    row: usize,
    fields: csv::StringRecordIter<'a>,
}

impl<'a> Cursor<'a> {
    fn next_str(&mut self) -> Result<&'a str> {
        self.fields
            .next()
            .ok_or_else(|| Error::format(&self.table.path, format!("row {}: too few fields", self.row + 1)))
    }

    fn f(&mut self) -> Result<f64> {
        let s = self.next_str()?;
        self.table.parse(self.row, s)
    }

    fn usize(&mut self) -> Result<usize> {
        let s = self.next_str()?;
        self.table.parse(self.row, s)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f()).collect()
    }

    fn arr3(&mut self) -> Result<[f64; 3]> {
        Ok([self.f()?, self.f()?, self.f()?])
    }

    fn mode(&mut self) -> Result<ControlMode> {
        let s = self.next_str()?;
        ControlMode::parse(s).ok_or_else(|| Error::format(&self.table.path, format!("row {}: unknown mode {s:?}", self.row + 1)))
    }
}

impl Table {
    fn rows(&self) -> impl Iterator<Item = Cursor<'_>> {
        self.records.iter().enumerate().map(move |(row, r)| Cursor {
            table: self,
            row,
            fields: r.iter(),
        })
    }
}

pub fn read_control_log(path: &Path) -> Result<Vec<ControlRow>> {
    let table = Table::read(path)?;
    let dof = table.count_prefixed("q");
    table.expect_header(&control_header(dof))?;
    table
        .rows()
        .map(|mut c| {
            Ok(ControlRow {
                tick: c.usize()?,
                t: c.f()?,
                q: c.vec(dof)?,
                qdot: c.vec(dof)?,
                pose: c.arr3()?,
                twist: c.arr3()?,
                f_e: c.arr3()?,
                f_d: c.f()?,
                alpha_hat: c.f()?,
                mu_hat: c.f()?,
                v_vmp: c.arr3()?,
                v_f: c.arr3()?,
                v_r: c.arr3()?,
                v_t: c.arr3()?,
                v_d: c.arr3()?,
                f_m: c.arr3()?,
                tau: c.vec(dof)?,
                gain_scale: c.f()?,
                mode: c.mode()?,
            })
        })
        .collect()
}

pub fn read_detector_log(path: &Path) -> Result<Vec<DetectorRow>> {
    let table = Table::read(path)?;
    let models = table.count_prefixed("score");
    table.expect_header(&detector_header(models))?;
    table
        .rows()
        .map(|mut c| {
            Ok(DetectorRow {
                tick: c.usize()?,
                t: c.f()?,
                score: c.f()?,
                model_scores: c.vec(models)?,
                abnormal_score: c.f()?,
                threshold: c.f()?,
                mode: c.mode()?,
            })
        })
        .collect()
}

pub fn read_prediction_log(path: &Path) -> Result<Vec<PredictionRow>> {
    let table = Table::read(path)?;
    table.expect_header(&PREDICTION_HEADER.map(String::from))?;
    table
        .rows()
        .map(|mut c| {
            Ok(PredictionRow {
                tick: c.usize()?,
                t: c.f()?,
                f_t: c.f()?,
                f_n: c.f()?,
                f_t_mean: c.f()?,
                f_t_lower: c.f()?,
                f_t_upper: c.f()?,
                f_n_mean: c.f()?,
                f_n_lower: c.f()?,
                f_n_upper: c.f()?,
            })
        })
        .collect()
}

/// Read a dataset back into windows; every window must have the same length.
pub fn read_dataset(path: &Path) -> Result<(Vec<Window>, usize)> {
    let table = Table::read(path)?;
    table.expect_header(&DATASET_HEADER.map(String::from))?;
    let mut windows: Vec<Window> = Vec::new();
    for mut c in table.rows() {
        let (w, s) = (c.usize()?, c.usize()?);
        let vals = c.vec(5)?;
        if w == windows.len() && s == 0 {
            windows.push(Window {
                velocity: Vec::new(),
                force: Vec::new(),
            });
        }
        let current = windows.len().checked_sub(1);
        let win = match current {
            Some(i) if i == w && windows[i].velocity.len() / 3 == s => &mut windows[i],
            _ => return Err(Error::format(path, format!("row {}: windows and steps must be consecutive", c.row + 1))),
        };
        win.velocity.extend(&vals[..3]);
        win.force.extend(&vals[3..]);
    }
    let len = windows.first().map(|w| w.velocity.len() / 3).unwrap_or(0);
    if len == 0 {
        return Err(Error::format(path, "dataset has no windows"));
    }
    if windows.iter().any(|w| w.velocity.len() != 3 * len) {
        return Err(Error::format(path, "windows differ in length"));
    }
    Ok((windows, len))
}
