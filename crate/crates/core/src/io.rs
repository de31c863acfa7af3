//! Field files (CSV and flat binary) and plain CSV tables.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dynamics::{ComplexField, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

/// Shortest decimal that parses back to the same f64.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Header line followed by one comma-separated line per row.
pub fn write_csv<W: Write>(mut w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::InvalidParameter(format!(
                "row has {} columns, header {}",
                row.len(),
                header.len()
            )));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), header, rows)
}

pub fn write_field_csv<W: Write>(w: W, u: &Field) -> Result<()> {
    let g = u.grid();
    write_csv(
        w,
        &["x", "value"],
        u.values().iter().enumerate().map(|(i, v)| vec![num(g.coord(i)), num(*v)]),
    )
}

/// Inverse of [`write_field_csv`]; the grid is recovered from the first
/// abscissa (-L) and the row count (M).
pub fn read_field_csv<R: Read>(r: R) -> Result<Field> {
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (k, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if k == 0 || line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| Error::InvalidField(format!("line {}: missing column", k + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidField(format!("line {}: {e}", k + 1)))
        };
        xs.push(parse(parts.next())?);
        vs.push(parse(parts.next())?);
    }
    let first = *xs.first().ok_or_else(|| Error::InvalidField("empty field file".into()))?;
    let half = -first;
    if half < 1.0 || (half - half.round()).abs() > 1e-9 {
        return Err(Error::InvalidField(format!("first abscissa {first} is not -L for an integer L")));
    }
    let grid = GridSpec::new(half.round() as u32, vs.len())?;
    for (i, x) in xs.iter().enumerate() {
        if (x - grid.coord(i)).abs() > 1e-9 * half {
            return Err(Error::InvalidField(format!("abscissa {i} is {x}, expected {}", grid.coord(i))));
        }
    }
    Field::new(grid, vs)
}

/// L as u64, M as u64, then the M values, all little-endian.
pub fn write_field_binary<W: Write>(mut w: W, u: &Field) -> Result<()> {
    let g = u.grid();
    w.write_all(&u64::from(g.half_width()).to_le_bytes())?;
    w.write_all(&(g.points() as u64).to_le_bytes())?;
    for v in u.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_binary<R: Read>(mut r: R) -> Result<Field> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let l = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let m = u64::from_le_bytes(b8);
    let l = u32::try_from(l).map_err(|_| Error::InvalidField(format!("L = {l} too large")))?;
    if m > 1 << 28 {
        return Err(Error::InvalidField(format!("M = {m} too large")));
    }
    let grid = GridSpec::new(l, m as usize)?;
    let mut vals = Vec::with_capacity(m as usize);
    for _ in 0..m {
        r.read_exact(&mut b8)?;
        vals.push(f64::from_le_bytes(b8));
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::InvalidField("trailing bytes after the field".into()));
    }
    Field::new(grid, vals)
}

/// Reads a field by extension: `.bin` is binary, anything else CSV.
pub fn read_field(path: &Path) -> Result<Field> {
    let f = File::open(path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        read_field_binary(BufReader::new(f))
    } else {
        read_field_csv(f)
    }
}

pub fn write_field(path: &Path, u: &Field) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if path.extension().is_some_and(|e| e == "bin") {
        write_field_binary(f, u)
    } else {
        write_field_csv(f, u)
    }
}

/// L and M as u64, then M (re, im) pairs, all little-endian.
pub fn write_complex_field_binary<W: Write>(mut w: W, psi: &ComplexField) -> Result<()> {
    let g = psi.grid();
    w.write_all(&u64::from(g.half_width()).to_le_bytes())?;
    w.write_all(&(g.points() as u64).to_le_bytes())?;
    for z in psi.values() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eigenvalues<W: Write>(w: W, values: &[f64]) -> Result<()> {
    write_csv(
        w,
        &["index", "value"],
        values.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    )
}

pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    write_csv(
        w,
        &["t", "mass", "energy", "orbit_distance"],
        traj.points
            .iter()
            .map(|p| vec![num(p.t), num(p.mass), num(p.energy), num(p.orbit_distance)]),
    )
}
