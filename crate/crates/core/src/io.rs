//! File formats.
//!
//! Checkpoint layout, all little-endian: `a: f64`, `b: f64`, `nx: u64`,
//! `ny: u64`, `lambda: f64`, `t: f64`, then `nx·ny` values of `w` as `f64` in
//! row-major order (index `iy·nx + ix`).
//!
//! CSV files start with `#`-prefixed metadata lines, then a header row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::flow::TrajectoryRecord;
use crate::scalar::Real;
use crate::torus::{Field, TorusGrid};

pub const CHECKPOINT_HEADER_BYTES: usize = 6 * 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub a: f64,
    pub b: f64,
    pub nx: usize,
    pub ny: usize,
    pub lambda: f64,
    pub t: f64,
    pub w: Vec<f64>,
}

impl Checkpoint {
    pub fn from_field<T: Real>(w: &Field<T>, lambda: T, t: T) -> Self {
        let g = w.grid();
        Self {
            a: g.a().as_f64(),
            b: g.b().as_f64(),
            nx: g.nx(),
            ny: g.ny(),
            lambda: lambda.as_f64(),
            t: t.as_f64(),
            w: w.values().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn grid<T: Real>(&self) -> Result<Arc<TorusGrid<T>>> {
        Ok(TorusGrid::new(T::lit(self.a), T::lit(self.b), self.nx, self.ny)?)
    }

    /// The stored field on a freshly built grid.
    pub fn field<T: Real>(&self) -> Result<Field<T>> {
        let g = self.grid()?;
        Ok(self.field_on(&g)?)
    }

    /// The stored field on an existing grid of matching shape.
    pub fn field_on<T: Real>(&self, grid: &Arc<TorusGrid<T>>) -> Result<Field<T>> {
        if grid.nx() != self.nx || grid.ny() != self.ny {
            return Err(Error::Checkpoint(format!(
                "checkpoint is {}x{}, grid is {}x{}",
                self.nx,
                self.ny,
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(Field::from_values(grid, self.w.iter().map(|&v| T::lit(v)).collect()))
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        out.write_all(&self.a.to_le_bytes())?;
        out.write_all(&self.b.to_le_bytes())?;
        out.write_all(&(self.nx as u64).to_le_bytes())?;
        out.write_all(&(self.ny as u64).to_le_bytes())?;
        out.write_all(&self.lambda.to_le_bytes())?;
        out.write_all(&self.t.to_le_bytes())?;
        for v in &self.w {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        input.read_to_end(&mut buf)?;
        if buf.len() < CHECKPOINT_HEADER_BYTES {
            return Err(Error::Checkpoint(format!(
                "file has {} bytes, header needs 48",
                buf.len()
            )));
        }
        let word = |i: usize| -> [u8; 8] { buf[8 * i..8 * i + 8].try_into().expect("8 bytes") };
        let a = f64::from_le_bytes(word(0));
        let b = f64::from_le_bytes(word(1));
        let nx = u64::from_le_bytes(word(2)) as usize;
        let ny = u64::from_le_bytes(word(3)) as usize;
        let lambda = f64::from_le_bytes(word(4));
        let t = f64::from_le_bytes(word(5));
        let expected = nx
            .checked_mul(ny)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(CHECKPOINT_HEADER_BYTES))
            .ok_or_else(|| Error::Checkpoint("grid size overflows".into()))?;
        if buf.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{nx}x{ny} grid needs {expected} bytes, file has {}",
                buf.len()
            )));
        }
        let w = buf[CHECKPOINT_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            a,
            b,
            nx,
            ny,
            lambda,
            t,
            w,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 9] = [
    "t",
    "E",
    "grad_l2",
    "grad_Vstar",
    "mass",
    "min_u",
    "max_u",
    "dissipation",
    "bc_ratio",
];

pub const DIAGNOSTIC_COLUMNS: [&str; 7] = ["t", "energy_gap", "dist_l2", "dist_v", "wt_l2", "bc_max", "H"];

fn write_meta(out: &mut impl Write, meta: &[String]) -> Result<()> {
    for line in meta {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

fn cell<T: Real>(v: Option<T>) -> String {
    v.map(|x| format!("{:e}", x.as_f64())).unwrap_or_default()
}

pub fn write_trajectory_csv<T: Real>(
    mut out: impl Write,
    records: &[TrajectoryRecord<T>],
    meta: &[String],
) -> Result<()> {
    write_meta(&mut out, meta)?;
    writeln!(out, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for r in records {
        let row = [
            r.t,
            r.energy_e,
            r.grad_e_l2,
            r.grad_e_vstar,
            r.mass,
            r.min_u,
            r.max_u,
            r.dissipation,
            r.bc_ratio,
        ];
        let cells: Vec<String> = row.iter().map(|&v| cell(Some(v))).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_diagnostics_csv<T: Real>(
    mut out: impl Write,
    records: &[TrajectoryRecord<T>],
    meta: &[String],
) -> Result<()> {
    write_meta(&mut out, meta)?;
    writeln!(out, "{}", DIAGNOSTIC_COLUMNS.join(","))?;
    for r in records {
        let cells = [
            cell(Some(r.t)),
            cell(r.energy_gap),
            cell(r.dist_l2),
            cell(r.dist_v),
            cell(Some(r.wt_l2)),
            cell(Some(r.bc_max)),
            cell(r.h),
        ];
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Generic numeric table with `#` metadata lines.
pub fn write_table(mut out: impl Write, columns: &[&str], rows: &[Vec<f64>], meta: &[String]) -> Result<()> {
    write_meta(&mut out, meta)?;
    writeln!(out, "{}", columns.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back a table written by [`write_table`] or the trajectory writers;
/// empty cells become NaN.
pub fn read_table(input: impl Read) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut text = String::new();
    BufReader::new(input).read_to_string(&mut text)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidArgument("table has no header row".into()))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let row: std::result::Result<Vec<f64>, _> = line
            .split(',')
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
            .collect();
        let row = row.map_err(|e| Error::InvalidArgument(format!("bad table cell in '{line}': {e}")))?;
        if row.len() != header.len() {
            return Err(Error::InvalidArgument(format!(
                "row '{line}' has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}
