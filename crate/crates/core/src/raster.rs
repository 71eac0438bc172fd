//! Grid raster export: CSV tables and 16-bit PGM images.
//!
//! A grid becomes `nz * ny` rows of `nx` values, slice by slice (`iz`
//! ascending), each slice with `iy` ascending. PGM images flip each slice so
//! that north is up.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

fn check_len(grid: &GridSpec, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_blocks() {
        return Err(Error::InvalidInput(format!(
            "raster has {} values for a grid of {} blocks",
            values.len(),
            grid.n_blocks()
        )));
    }
    Ok(())
}

pub fn write_csv(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    check_len(grid, values)?;
    let [nx, _, _] = grid.dims();
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(e.to_string()))?;
    for row in values.chunks(nx) {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path, grid: &GridSpec) -> Result<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let [nx, _, _] = grid.dims();
    let mut out = Vec::with_capacity(grid.n_blocks());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if rec.len() != nx {
            return Err(Error::Row {
                path: path.into(),
                line: i as u64 + 1,
                message: format!("expected {nx} columns, found {}", rec.len()),
            });
        }
        for cell in rec.iter() {
            out.push(cell.trim().parse::<f64>().map_err(|_| Error::Row {
                path: path.into(),
                line: i as u64 + 1,
                message: format!("not a number: {cell:?}"),
            })?);
        }
    }
    check_len(grid, &out).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(out)
}

/// Linear grey scale between the finite minimum and maximum; non-finite
/// values are black.
pub fn write_pgm(path: &Path, grid: &GridSpec, values: &[f64]) -> Result<()> {
    check_len(grid, values)?;
    let [nx, ny, nz] = grid.dims();
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "P5\n{nx} {}\n65535\n", ny * nz).map_err(io)?;
    for iz in 0..nz {
        for iy in (0..ny).rev() {
            for ix in 0..nx {
                let v = values[grid.index(ix, iy, iz)];
                let g = if v.is_finite() {
                    ((v - lo) / span * 65535.0).round() as u16
                } else {
                    0
                };
                w.write_all(&g.to_be_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_and_shape() {
        let grid = GridSpec::new([3, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        write_csv(&p, &grid, &v).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), "-1,-0.75,-0.5");
        assert_eq!(read_csv(&p, &grid).unwrap(), v);
        let other = GridSpec::new([3, 3, 2], [1.0; 3], [0.0; 3]).unwrap();
        assert!(read_csv(&p, &other).is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let grid = GridSpec::new([2, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        write_pgm(&p, &grid, &[0.0, 1.0, 2.0, f64::NAN]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px: Vec<u16> = bytes[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        // top row is iy = 1
        assert_eq!(px, vec![65535, 0, 0, 32768]);
    }
}
