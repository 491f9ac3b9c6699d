//! On-disk formats: the binary noise dump and plain CSV tables.
//!
//! Noise dump layout (little endian throughout):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SPDENOIS"
//! 8       4     u32 spatial dimension k
//! 12      4     u32 points per axis N
//! 16      8     f64 time step dt
//! 24      8     reserved, zero
//! 32      -     N^k f64 field values, row-major
//! ```
//!
//! Floats in CSV output go through `Display`, which prints the shortest
//! string that round-trips, so re-parsing reproduces the exact bits.

use crate::error::{Error, Result};
use crate::grid::SpatialGrid;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const NOISE_MAGIC: &[u8; 8] = b"SPDENOIS";

pub fn write_noise_dump(
    path: &Path,
    grid: &SpatialGrid,
    dt: f64,
    field: &[f64],
) -> Result<()> {
    if field.len() != grid.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(NOISE_MAGIC)?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    w.write_all(&[0u8; 8])?;
    for v in field {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub struct NoiseDump {
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    pub field: Vec<f64>,
}

pub fn read_noise_dump(path: &Path) -> Result<NoiseDump> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[0..8] != NOISE_MAGIC {
        return Err(Error::invalid("bad magic in noise dump"));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let dt = f64::from_le_bytes(header[16..24].try_into().unwrap());
    let expected = n
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::invalid("noise dump header overflows"))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != expected * 8 {
        return Err(Error::invalid(format!(
            "noise dump payload is {} bytes, expected {}",
            raw.len(),
            expected * 8
        )));
    }
    let field = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(NoiseDump { dim, n, dt, field })
}

/// Write a CSV table; every cell formats through `Display`.
pub fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_dump_roundtrip() {
        let dir = std::env::temp_dir().join(format!("spde-io-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.bin");
        let grid = SpatialGrid::new(2, 4, 1.0).unwrap();
        let field: Vec<f64> = (0..16).map(|i| (i as f64).sin() * 1e-3 + 0.25).collect();
        write_noise_dump(&path, &grid, 0.03125, &field).unwrap();
        let dump = read_noise_dump(&path).unwrap();
        assert_eq!(dump.dim, 2);
        assert_eq!(dump.n, 4);
        assert_eq!(dump.dt, 0.03125);
        assert_eq!(dump.field, field);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_corrupt_dump() {
        let dir = std::env::temp_dir().join(format!("spde-io-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC").unwrap();
        assert!(read_noise_dump(&path).is_err());
        std::fs::write(&path, [0u8; 40]).unwrap();
        assert!(read_noise_dump(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn csv_cells_roundtrip_exactly() {
        let dir = std::env::temp_dir().join(format!("spde-io-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let vals = vec![vec![0.1, 1.0 / 3.0, 2.0_f64.sqrt()]];
        write_csv(&path, &["a", "b", "c"], &vals).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "a,b,c");
        let parsed: Vec<f64> =
            lines.next().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed, vals[0]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
