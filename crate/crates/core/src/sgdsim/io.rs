//! Ensemble serialization.
//!
//! CSV: a header `x1,…,xd`, one row per uncensored run, and a trailing
//! `# censored=N` comment. Binary: magic `TSEM`, `u16` version, `u64` rows,
//! `u64` cols, `u64` censored count, then row-major little-endian `f64`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::EnsembleMatrix;
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"TSEM";
pub const BINARY_VERSION: u16 = 1;

pub fn write_csv(ens: &EnsembleMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (1..=ens.cols()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in ens.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    writeln!(w, "# censored={}", ens.censored())?;
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<EnsembleMatrix> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut cols = None;
    let mut censored = 0;
    let mut data = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("censored=") {
                censored = v
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad censored count", n + 1)))?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) => {
                if fields.len() != c {
                    return Err(Error::Format(format!("line {}: expected {c} fields", n + 1)));
                }
                for f in fields {
                    data.push(
                        f.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Format(format!("line {}: bad number {f:?}", n + 1)))?,
                    );
                }
            }
        }
    }
    let cols = cols.ok_or_else(|| Error::Format("empty ensemble file".into()))?;
    EnsembleMatrix::new(data, cols, censored)
}

pub fn write_binary(ens: &EnsembleMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    for v in [ens.rows() as u64, ens.cols() as u64, ens.censored() as u64] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in ens.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<EnsembleMatrix> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("not a TSEM file".into()));
    }
    let mut v2 = [0u8; 2];
    r.read_exact(&mut v2)?;
    let version = u16::from_le_bytes(v2);
    if version != BINARY_VERSION {
        return Err(Error::Format(format!("unsupported TSEM version {version}")));
    }
    let mut u = [0u8; 8];
    let mut next = |r: &mut BufReader<std::fs::File>| -> Result<u64> {
        r.read_exact(&mut u)?;
        Ok(u64::from_le_bytes(u))
    };
    let rows = next(&mut r)? as usize;
    let cols = next(&mut r)? as usize;
    let censored = next(&mut r)? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "TSEM payload has {} bytes, header promises {}",
            bytes.len(),
            rows * cols * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    EnsembleMatrix::new(data, cols, censored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ens = EnsembleMatrix::from_rows(&[vec![1.5, -2.0], vec![0.1, 3e-300]], 4).unwrap();
        let csv = dir.path().join("e.csv");
        write_csv(&ens, &csv).unwrap();
        assert_eq!(read_csv(&csv).unwrap(), ens);
        let bin = dir.path().join("e.tsem");
        write_binary(&ens, &bin).unwrap();
        assert_eq!(read_binary(&bin).unwrap(), ens);
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(&bytes[..4], b"TSEM");
        assert_eq!(bytes.len(), 4 + 2 + 24 + 4 * 8);
    }

    #[test]
    fn rejects_truncated_binary() {
        let dir = tempfile::tempdir().unwrap();
        let ens = EnsembleMatrix::from_rows(&[vec![1.0, 2.0]], 0).unwrap();
        let bin = dir.path().join("e.tsem");
        write_binary(&ens, &bin).unwrap();
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.pop();
        std::fs::write(&bin, bytes).unwrap();
        assert!(matches!(read_binary(&bin), Err(Error::Format(_))));
    }
}
