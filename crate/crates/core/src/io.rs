//! Binary field, boundary and matrix files.
//!
//! Field file: ASCII line `nx ny nz h ox oy oz` (node counts, optionally followed by a
//! `periodic=xyz` token of 0/1 flags), then little-endian f64 real parts followed by imaginary
//! parts, x-fastest. Boundary file: ASCII line `m h`, then the same layout over the
//! `(2m+1)²` nodes of the patch square. Matrix file: ASCII line `rows cols`, then interleaved
//! little-endian (re, im) pairs in row-major order.

use crate::boundary::{BoundaryField, PatchSquare};
use crate::error::{Error, Result};
use crate::fields::GridField;
use crate::geometry::{BoundaryPatch, Grid3};
use crate::linalg::CMat;
use num_complex::Complex64 as C64;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

fn split_header<R: BufRead>(r: &mut R) -> Result<Vec<String>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Parse("missing header line".into()));
    }
    Ok(line.split_whitespace().map(str::to_owned).collect())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse(format!("bad {what} '{s}' in header")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Parse(format!("payload shorter than {n} doubles: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn split_planes<W: Write>(w: &mut W, values: &[C64]) -> Result<()> {
    for v in values {
        w.write_all(&v.re.to_le_bytes())?;
    }
    for v in values {
        w.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

fn join_planes(raw: &[f64]) -> Vec<C64> {
    let n = raw.len() / 2;
    (0..n).map(|i| C64::new(raw[i], raw[n + i])).collect()
}

pub fn write_field<W: Write>(mut w: W, f: &GridField) -> Result<()> {
    let g = &f.grid;
    let d = g.dims();
    write!(w, "{} {} {} {:e} {:e} {:e} {:e}", d[0], d[1], d[2], g.h, g.origin[0], g.origin[1], g.origin[2])?;
    if g.periodic.iter().any(|p| *p) {
        let flag = |p: bool| if p { '1' } else { '0' };
        write!(w, " periodic={}{}{}", flag(g.periodic[0]), flag(g.periodic[1]), flag(g.periodic[2]))?;
    }
    writeln!(w)?;
    split_planes(&mut w, &f.values)
}

pub fn read_field<R: Read>(r: R) -> Result<GridField> {
    let mut r = BufReader::new(r);
    let t = split_header(&mut r)?;
    if t.len() != 7 && t.len() != 8 {
        return Err(Error::Parse(format!("field header has {} tokens, expected 7", t.len())));
    }
    let dims: [usize; 3] = [num(&t[0], "nx")?, num(&t[1], "ny")?, num(&t[2], "nz")?];
    let h: f64 = num(&t[3], "h")?;
    let origin = [num(&t[4], "ox")?, num(&t[5], "oy")?, num(&t[6], "oz")?];
    let mut periodic = [false; 3];
    if let Some(p) = t.get(7) {
        let flags = p
            .strip_prefix("periodic=")
            .filter(|s| s.len() == 3)
            .ok_or_else(|| Error::Parse(format!("bad periodicity token '{p}'")))?;
        for (a, c) in flags.chars().enumerate() {
            periodic[a] = c == '1';
        }
    }
    if dims.iter().any(|&n| n < 2) || !(h > 0.0) {
        return Err(Error::Parse("field header needs at least two nodes per axis and h > 0".into()));
    }
    let cells = |a: usize| if periodic[a] { dims[a] } else { dims[a] - 1 };
    let grid = Grid3 { nx: cells(0), ny: cells(1), nz: cells(2), h, origin, periodic };
    let raw = read_f64s(&mut r, 2 * grid.len())?;
    GridField::from_values(grid, join_planes(&raw))
}

pub fn save_field(path: &Path, f: &GridField) -> Result<()> {
    write_field(std::io::BufWriter::new(std::fs::File::create(path)?), f)
}

pub fn load_field(path: &Path) -> Result<GridField> {
    read_field(std::fs::File::open(path)?)
}

pub fn write_boundary<W: Write>(mut w: W, f: &BoundaryField) -> Result<()> {
    writeln!(w, "{} {:e}", f.square.m, f.square.h)?;
    split_planes(&mut w, &f.values)
}

/// Read boundary values and attach them to `patch`.
pub fn read_boundary<R: Read>(r: R, patch: BoundaryPatch) -> Result<BoundaryField> {
    let mut r = BufReader::new(r);
    let t = split_header(&mut r)?;
    if t.len() != 2 {
        return Err(Error::Parse(format!("boundary header has {} tokens, expected 2", t.len())));
    }
    let square = PatchSquare { m: num(&t[0], "m")?, h: num(&t[1], "h")? };
    let raw = read_f64s(&mut r, 2 * square.len())?;
    BoundaryField::new(patch, square, join_planes(&raw))
}

pub fn load_boundary(path: &Path, patch: BoundaryPatch) -> Result<BoundaryField> {
    read_boundary(std::fs::File::open(path)?, patch)
}

pub fn write_matrix<W: Write>(mut w: W, m: &CMat) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].re.to_le_bytes())?;
            w.write_all(&m[(i, j)].im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: R) -> Result<CMat> {
    let mut r = BufReader::new(r);
    let t = split_header(&mut r)?;
    if t.len() != 2 {
        return Err(Error::Parse(format!("matrix header has {} tokens, expected 2", t.len())));
    }
    let (rows, cols): (usize, usize) = (num(&t[0], "rows")?, num(&t[1], "cols")?);
    let raw = read_f64s(&mut r, 2 * rows * cols)?;
    Ok(CMat::from_fn(rows, cols, |i, j| {
        let n = 2 * (i * cols + j);
        C64::new(raw[n], raw[n + 1])
    }))
}

pub fn save_matrix(path: &Path, m: &CMat) -> Result<()> {
    write_matrix(std::io::BufWriter::new(std::fs::File::create(path)?), m)
}

pub fn load_matrix(path: &Path) -> Result<CMat> {
    read_matrix(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_box, SlabGeometry};

    #[test]
    fn field_round_trip() {
        let g = Grid3 { nx: 3, ny: 2, nz: 4, h: 0.25, origin: [-0.375, -0.25, 0.0], periodic: [false; 3] };
        let f = GridField::from_fn(g, |x| C64::new(x[0] + 2.0 * x[1], x[2]));
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        let head = String::from_utf8_lossy(&buf[..buf.iter().position(|b| *b == b'\n').unwrap()]).to_string();
        assert_eq!(head.split_whitespace().count(), 7);
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back.grid, g);
        assert_eq!(back.values, f.values);

        let b = build_box(3.0, 6).unwrap();
        let f = GridField::from_real_fn(b, |x| x[0]);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap().grid, b);
        buf.truncate(buf.len() - 3);
        assert!(read_field(&buf[..]).is_err());
    }

    #[test]
    fn matrix_and_boundary_round_trip() {
        let m = CMat::from_fn(3, 2, |i, j| C64::new(i as f64, -(j as f64) - 0.5));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert!(buf.starts_with(b"3 2\n"));
        assert_eq!(f64::from_le_bytes(buf[4 + 16..4 + 24].try_into().unwrap()), 0.0);
        assert_eq!(f64::from_le_bytes(buf[4 + 24..4 + 32].try_into().unwrap()), -1.5);
        assert_eq!(read_matrix(&buf[..]).unwrap(), m);

        let geom = SlabGeometry::reference();
        let patch = BoundaryPatch::dirichlet(&geom);
        let sq = PatchSquare::for_radius(0.5, 0.125);
        let f = BoundaryField::from_fn(patch, sq, |x, y| C64::new(x * y, 0.0));
        let mut buf = Vec::new();
        write_boundary(&mut buf, &f).unwrap();
        assert_eq!(read_boundary(&buf[..], patch).unwrap(), f);
    }
}
