//! Columnar CSV files for ensembles, trajectories and coupling runs. Floats
//! are written with 17 significant digits, which round-trips exactly.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::chain::Trajectory;
use super::coupling::CouplingRun;
use super::ensemble::Ensemble;
use crate::error::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn coord_header(d: usize) -> String {
    (0..d).map(|i| format!("coord_{i}")).collect::<Vec<_>>().join(",")
}

pub fn write_ensemble_csv<W: Write>(ens: &Ensemble, mut w: W) -> Result<()> {
    let d = ens.snapshots.first().map_or(0, |m| m.ncols());
    writeln!(w, "replica,time,{}", coord_header(d))?;
    for (k, &t) in ens.snapshot_times.iter().enumerate() {
        let snap = &ens.snapshots[k];
        for r in 0..ens.n_replicas {
            write!(w, "{r},{t}")?;
            for j in 0..d {
                write!(w, ",{}", fmt_f64(snap[(r, j)]))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(tr: &Trajectory, mut w: W) -> Result<()> {
    let d = tr.iterates.nrows();
    writeln!(w, "time,{}", coord_header(d))?;
    for (i, t) in tr.times.iter().enumerate() {
        write!(w, "{t}")?;
        for j in 0..d {
            write!(w, ",{}", fmt_f64(tr.iterates[(j, i)]))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_coupling_csv<W: Write>(run: &CouplingRun, mut w: W) -> Result<()> {
    writeln!(w, "pair,step,sq_dist")?;
    for p in 0..run.n_pairs {
        for t in 0..=run.n_steps {
            writeln!(w, "{p},{t},{}", fmt_f64(run.sq_dists[(t, p)]))?;
        }
    }
    Ok(())
}

fn parse_err(line: usize, what: &str) -> Error {
    Error::Config { message: format!("malformed CSV: {what}"), line: Some(line) }
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim().parse().map_err(|_| parse_err(line, "expected an integer"))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| parse_err(line, "expected a number"))
}

/// Snapshot data read back from [`write_ensemble_csv`] output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTable {
    pub snapshot_times: Vec<usize>,
    pub snapshots: Vec<DMatrix<f64>>,
}

pub fn read_ensemble_csv<R: BufRead>(r: R) -> Result<EnsembleTable> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "replica" || cols[1] != "time" {
        return Err(parse_err(1, "expected header replica,time,coord_0,..."));
    }
    let d = cols.len() - 2;
    let mut times: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != d + 2 {
            return Err(parse_err(lineno, "wrong number of fields"));
        }
        let replica = parse_usize(f[0], lineno)?;
        let t = parse_usize(f[1], lineno)?;
        let v = f[2..].iter().map(|s| parse_f64(s, lineno)).collect::<Result<Vec<_>>>()?;
        if times.last() != Some(&t) {
            if times.contains(&t) {
                return Err(parse_err(lineno, "snapshot times not grouped"));
            }
            times.push(t);
            rows.push(Vec::new());
        }
        rows.last_mut().expect("group exists").push((replica, v));
    }
    let mut snapshots = Vec::with_capacity(rows.len());
    for group in rows {
        let n = group.len();
        let mut m = DMatrix::zeros(n, d);
        for (replica, v) in group {
            if replica >= n {
                return Err(parse_err(0, "replica index out of range"));
            }
            for j in 0..d {
                m[(replica, j)] = v[j];
            }
        }
        snapshots.push(m);
    }
    Ok(EnsembleTable { snapshot_times: times, snapshots })
}

/// Reads [`write_coupling_csv`] output into an (n_steps+1) × n_pairs matrix.
pub fn read_coupling_csv<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    if header.trim() != "pair,step,sq_dist" {
        return Err(parse_err(1, "expected header pair,step,sq_dist"));
    }
    let mut entries = Vec::new();
    let (mut max_p, mut max_t) = (0, 0);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(parse_err(lineno, "wrong number of fields"));
        }
        let p = parse_usize(f[0], lineno)?;
        let t = parse_usize(f[1], lineno)?;
        max_p = max_p.max(p);
        max_t = max_t.max(t);
        entries.push((p, t, parse_f64(f[2], lineno)?));
    }
    let mut m = DMatrix::zeros(max_t + 1, max_p + 1);
    for (p, t, v) in entries {
        m[(t, p)] = v;
    }
    Ok(m)
}
