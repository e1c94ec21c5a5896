//! CSV and JSON artifacts.
//!
//! Designs are written as `index,x1,…,xn,weight` with one row per point of
//! positive weight; `index` is the zero-based row of the candidate set.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::design::{CandidateSet, Design};
use crate::diagnostics::TitteringtonRow;
use crate::error::{Error, Result};
use crate::flow::FlowTrace;

/// Version of the diagnostics JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|d| format!("x{d}")).collect()
}

pub fn write_points_csv<W: Write>(out: W, x: &CandidateSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(coordinate_header(x.dim()))?;
    for i in 0..x.len() {
        w.write_record(x.point(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_design_csv<W: Write>(out: W, x: &CandidateSet, w: &DVector<f64>) -> Result<()> {
    if w.len() != x.len() {
        return Err(Error::Dimension(format!("{} weights for {} points", w.len(), x.len())));
    }
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(coordinate_header(x.dim()));
    header.push("weight".into());
    wr.write_record(&header)?;
    for i in 0..x.len() {
        if w[i] > 0.0 {
            let mut rec = vec![i.to_string()];
            rec.extend(x.point(i).iter().map(|v| v.to_string()));
            rec.push(w[i].to_string());
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads a design CSV back onto `m` candidates. Only the `index` and
/// `weight` columns are used.
pub fn read_design_csv(path: impl AsRef<Path>, m: usize) -> Result<Design> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidConfig(format!("design file has no `{name}` column")))
    };
    let (ci, cw) = (col("index")?, col("weight")?);
    let mut w = DVector::zeros(m);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::InvalidConfig(format!("design row {}: bad {what}", line + 1));
        let i: usize = rec.get(ci).and_then(|s| s.parse().ok()).ok_or_else(|| bad("index"))?;
        let v: f64 = rec.get(cw).and_then(|s| s.parse().ok()).ok_or_else(|| bad("weight"))?;
        if i >= m {
            return Err(Error::Dimension(format!("design index {i} outside {m} candidates")));
        }
        w[i] += v;
    }
    Design::new(w)
}

/// Per-point KKT data: `on_support`, `dE = 1 − B/N` and the residual.
pub fn write_kkt_csv<W: Write>(
    out: W,
    x: &CandidateSet,
    w: &Design,
    grad_e: &DVector<f64>,
    residual: &[f64],
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    let mut header = vec!["index".to_string()];
    header.extend(coordinate_header(x.dim()));
    header.extend(["on_support", "weight", "dE", "residual"].map(String::from));
    wr.write_record(&header)?;
    let t = w.support_threshold();
    for i in 0..x.len() {
        let mut rec = vec![i.to_string()];
        rec.extend(x.point(i).iter().map(|v| v.to_string()));
        let on = w.weights()[i] > t;
        rec.push(u8::from(on).to_string());
        rec.push(w.weights()[i].to_string());
        rec.push(grad_e[i].to_string());
        rec.push(residual[i].to_string());
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(out: W, eigenvalues: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["k", "eigenvalue"])?;
    for (k, v) in eigenvalues.iter().enumerate() {
        wr.write_record([k.to_string(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// KKT residual against wall-clock time for one or more algorithms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualTimeRow {
    pub algorithm: String,
    pub iter: usize,
    pub elapsed_s: f64,
    pub kkt_residual: f64,
}

impl ResidualTimeRow {
    pub fn from_trace(trace: &FlowTrace) -> Vec<ResidualTimeRow> {
        trace
            .rows
            .iter()
            .map(|r| ResidualTimeRow {
                algorithm: "flow".into(),
                iter: r.k,
                elapsed_s: r.elapsed_s,
                kkt_residual: r.kkt_residual,
            })
            .collect()
    }

    pub fn from_titterington(rows: &[TitteringtonRow]) -> Vec<ResidualTimeRow> {
        rows.iter()
            .map(|r| ResidualTimeRow {
                algorithm: "titterington".into(),
                iter: r.iter,
                elapsed_s: r.elapsed_s,
                kkt_residual: r.kkt_residual,
            })
            .collect()
    }
}

pub fn write_residual_time_csv<W: Write>(out: W, rows: &[ResidualTimeRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Opens `dir/name` for writing.
pub fn create(dir: &Path, name: &str) -> Result<File> {
    Ok(File::create(dir.join(name))?)
}

/// Machine-readable form of an error.
#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub error: ErrorBody,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport {
            schema_version: SCHEMA_VERSION,
            error: ErrorBody { kind: e.kind().into(), message: e.to_string(), exit_code: e.exit_code() },
        }
    }
}
