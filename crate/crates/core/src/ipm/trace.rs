use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    NumericalFailure,
    TimedOut,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Converged => "Converged",
            SolveStatus::MaxIters => "MaxIters",
            SolveStatus::NumericalFailure => "NumericalFailure",
            SolveStatus::TimedOut => "TimedOut",
        })
    }
}

impl FromStr for SolveStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Converged" => Ok(SolveStatus::Converged),
            "MaxIters" => Ok(SolveStatus::MaxIters),
            "NumericalFailure" => Ok(SolveStatus::NumericalFailure),
            "TimedOut" => Ok(SolveStatus::TimedOut),
            other => Err(Error::InvalidParameter(format!("unknown status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub k: usize,
    /// `μ_k` for the barrier method, `t_k` for path following, `NaN` otherwise.
    pub homotopy: f64,
    pub grad_inf: f64,
    pub grad_l2: f64,
    pub nbhd_resid: Option<f64>,
    pub decrement: Option<f64>,
    pub step_norm: f64,
    pub pcg_iters: Option<usize>,
    pub wall_ms: f64,
    /// ℓ₂ distance to reference prices.
    pub dist: Option<f64>,
    /// Neighborhood residual of the previous iterate measured at the new `μ`.
    pub nbhd_shifted: Option<f64>,
    /// Largest KKT residual reported by the best-response oracles.
    pub oracle_kkt: Option<f64>,
    /// Damped corrector steps taken at this `μ`.
    pub correctors: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTrace {
    pub rows: Vec<TraceRow>,
    pub status: SolveStatus,
    /// Warnings raised during the run (safeguard activations, fallbacks).
    pub notes: Vec<String>,
}

/// Optional trace column, written only when some row has a value.
type OptionalColumn = (&'static str, fn(&TraceRow) -> Option<f64>);

impl SolveTrace {
    pub fn new() -> Self {
        Self { rows: Vec::new(), status: SolveStatus::MaxIters, notes: Vec::new() }
    }

    pub fn push(&mut self, row: TraceRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.k < row.k));
        self.rows.push(row);
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let optional: [OptionalColumn; 4] = [
            ("dist", |r| r.dist),
            ("nbhd_shifted", |r| r.nbhd_shifted),
            ("oracle_kkt", |r| r.oracle_kkt),
            ("correctors", |r| r.correctors.map(|c| c as f64)),
        ];
        let present: Vec<_> = optional.iter().filter(|(_, get)| self.rows.iter().any(|r| get(r).is_some())).collect();
        let mut header = vec!["k", "homotopy", "grad_inf", "grad_l2", "nbhd_resid", "decrement", "step_norm", "pcg_iters", "wall_ms"];
        header.extend(present.iter().map(|(name, _)| *name));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![
                r.k.to_string(),
                r.homotopy.to_string(),
                r.grad_inf.to_string(),
                r.grad_l2.to_string(),
                opt(r.nbhd_resid),
                opt(r.decrement),
                r.step_norm.to_string(),
                r.pcg_iters.map_or(String::new(), |v| v.to_string()),
                r.wall_ms.to_string(),
            ];
            rec.extend(present.iter().map(|(_, get)| opt(get(r))));
            w.write_record(&rec)?;
        }
        let mut out = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        for n in &self.notes {
            writeln!(out, "# note={}", n.replace('\n', " "))?;
        }
        writeln!(out, "# status={}", self.status)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

impl Default for SolveTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// Parses a trace written by [`SolveTrace::write_csv`].
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<SolveTrace> {
    let mut body = String::new();
    let mut status = None;
    let mut notes = Vec::new();
    for line in input.lines() {
        let line = line?;
        if let Some(s) = line.strip_prefix("# status=") {
            status = Some(s.trim().parse()?);
        } else if let Some(s) = line.strip_prefix("# note=") {
            notes.push(s.to_string());
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let status = status.ok_or_else(|| Error::InvalidParameter("trace has no status line".into()))?;
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let bad = |what: &str| Error::InvalidParameter(format!("trace column {what} is malformed"));
    let f = |rec: &csv::StringRecord, name: &str| -> Result<Option<f64>> {
        match col(name).and_then(|c| rec.get(c)) {
            None | Some("") => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad(name)),
        }
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let req = |name: &str| f(&rec, name)?.ok_or_else(|| bad(name));
        rows.push(TraceRow {
            k: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad("k"))?,
            homotopy: req("homotopy")?,
            grad_inf: req("grad_inf")?,
            grad_l2: req("grad_l2")?,
            nbhd_resid: f(&rec, "nbhd_resid")?,
            decrement: f(&rec, "decrement")?,
            step_norm: req("step_norm")?,
            pcg_iters: f(&rec, "pcg_iters")?.map(|v| v as usize),
            wall_ms: req("wall_ms")?,
            dist: f(&rec, "dist")?,
            nbhd_shifted: f(&rec, "nbhd_shifted")?,
            oracle_kkt: f(&rec, "oracle_kkt")?,
            correctors: f(&rec, "correctors")?.map(|v| v as usize),
        });
    }
    Ok(SolveTrace { rows, status, notes })
}
