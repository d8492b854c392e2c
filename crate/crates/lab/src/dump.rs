//! Matrix dumps and CSV tables.
//!
//! Binary layout (little endian): the 8-byte magic `SLABMAT1`, `u64` rows,
//! `u64` columns, the 32-byte SHA-256 of the occupation basis, then the
//! entries in row-major order as `(re, im)` pairs of `f64`.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use scatterlab_core::fock::OccupationBasis;
use scatterlab_core::{CMatrix, C64};

use crate::LabError;

pub const MAGIC: &[u8; 8] = b"SLABMAT1";

/// Hash of the mode range and the ordered occupation vectors.
pub fn basis_digest(basis: &OccupationBasis) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((basis.mode_cutoff() as u64).to_le_bytes());
    h.update((basis.n_max() as u64).to_le_bytes());
    for s in basis.states() {
        for &n in s {
            h.update(n.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn write_matrix<W: Write>(mut w: W, m: &CMatrix, basis_sha: &[u8; 32]) -> Result<(), LabError> {
    w.write_all(MAGIC)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    w.write_all(basis_sha)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<(CMatrix, [u8; 32]), LabError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LabError::Format("not a matrix dump".into()));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut sha = [0u8; 32];
    r.read_exact(&mut sha)?;
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            r.read_exact(&mut word)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word)?;
            let im = f64::from_le_bytes(word);
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok((m, sha))
}

pub fn save_matrix(path: &Path, m: &CMatrix, basis: &OccupationBasis) -> Result<(), LabError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(file, m, &basis_digest(basis))
}

/// A named table of numeric columns, written as CSV for external plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Series {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), LabError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|&v| crate::report::format_float(v)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), LabError> {
        let file = std::fs::File::create(dir.join(format!("{}.csv", self.name)))?;
        self.write_csv(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use scatterlab_core::fock::{build_basis, TruncationParams};

    #[test]
    fn dump_round_trip_and_header() {
        let p = TruncationParams::new(1.0, 6.0, 1, 2, 8).unwrap();
        let basis = build_basis(&p).unwrap();
        let m = CMatrix::from_fn(3, 2, |i, j| C64::new(i as f64 + 0.1, -(j as f64) / 3.0));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m, &basis_digest(&basis)).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(buf.len(), 8 + 16 + 32 + 6 * 16);
        // row-major: second entry is (0, 1)
        let off = 8 + 16 + 32 + 16;
        assert_eq!(f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), 0.1);
        let (back, sha) = read_matrix(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(sha, basis_digest(&basis));
        assert!(read_matrix(&b"garbage!........"[..]).is_err());
    }

    #[test]
    fn csv_columns_and_precision() {
        let mut s = Series::new("t", &["x", "y"]);
        s.push(vec![0.5, 1.0 / 3.0]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "x,y\n5.0000000000000000e-1,3.3333333333333331e-1\n");
    }
}
