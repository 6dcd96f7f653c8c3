//! Matrix files.
//!
//! CSV: first line `rows,cols`, then one line per row with comma separated
//! values (shortest round-trip decimal form).
//!
//! Binary: magic `MPX1`, `u64` rows, `u64` cols, then `rows * cols` `f64`
//! values in row-major order, all little-endian.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"MPX1";

pub fn write_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    writeln!(out, "{},{}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let line = row
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut lines = BufReader::new(input).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty matrix file".into()))??;
    let (rows, cols) = parse_header(&header)?;
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("cannot parse '{field}' as a number")))?;
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "expected {} values, found {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn parse_header(header: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidInput(format!("bad matrix header '{header}'"));
    let mut it = header.split(',').map(|s| s.trim().parse::<usize>());
    let rows = it.next().ok_or_else(bad)?.map_err(|_| bad())?;
    let cols = it.next().ok_or_else(bad)?.map_err(|_| bad())?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((rows, cols))
}

pub fn write_binary<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for row in m.row_iter() {
        for v in row.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::InvalidInput("missing MPX1 magic".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidInput("matrix too large".into()))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn is_binary_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("bin") | Some("mpx")
    )
}

/// Writes CSV, or binary when the extension is `.bin` or `.mpx`.
pub fn save(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    if is_binary_path(path) {
        write_binary(m, file)
    } else {
        write_csv(m, file)
    }
}

/// Reads a matrix; binary files are recognized by their magic.
pub fn load(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(bytes.as_slice())
    } else {
        read_csv(bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.5, -3.0, 0.0, 1e-300, 7.0]);
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "2,3\n1.0,2.5,-3.0\n0.0,1e-300,7.0\n");
        assert_eq!(read_csv(text.as_bytes()).unwrap(), m);
    }

    #[test]
    fn binary_layout() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let mut buf = Vec::new();
        write_binary(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MPX1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[20..28].try_into().unwrap()), 1.0);
        assert_eq!(buf.len(), 36);
    }

    #[test]
    fn malformed_inputs() {
        assert!(read_csv("2,2\n1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv("x,2\n".as_bytes()).is_err());
        assert!(read_binary(&b"MPX2"[..]).is_err());
        assert!(read_binary(&b"MPX1\x01\0\0\0\0\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            bits in proptest::collection::vec(any::<u64>(), 36),
        ) {
            let data: Vec<f64> = bits[..rows * cols].iter().map(|b| f64::from_bits(*b)).collect();
            let m = DMatrix::from_row_slice(rows, cols, &data);
            let mut buf = Vec::new();
            write_binary(&m, &mut buf).unwrap();
            let back = read_binary(buf.as_slice()).unwrap();
            let a: Vec<u64> = m.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn csv_round_trip_finite(
            data in proptest::collection::vec(-1e6f64..1e6, 12),
        ) {
            let m = DMatrix::from_row_slice(3, 4, &data);
            let mut buf = Vec::new();
            write_csv(&m, &mut buf).unwrap();
            prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), m);
        }
    }
}
