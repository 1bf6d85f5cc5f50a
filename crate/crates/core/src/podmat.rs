//! `PODMAT1` binary matrix files.
//!
//! Layout: the 8 bytes `PODMAT1\0`, `rows` and `cols` as little-endian `u64`,
//! then `rows * cols` little-endian IEEE-754 binary64 values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PODMAT1\0";

/// Row-major dense matrix as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PodMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl PodMat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::validation(format!(
                "{rows}x{cols} matrix cannot hold {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        // DMatrix is column-major; its transpose's storage is our row-major order.
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    /// Parses a stream; `origin` is only used in error messages.
    pub fn read_from<R: Read>(mut r: R, origin: &Path) -> Result<Self> {
        let mut head = [0u8; 24];
        r.read_exact(&mut head)
            .map_err(|_| Error::format(origin, "truncated header"))?;
        if &head[..8] != MAGIC {
            return Err(Error::format(origin, "bad magic, expected PODMAT1"));
        }
        let rows = u64::from_le_bytes(head[8..16].try_into().unwrap());
        let cols = u64::from_le_bytes(head[16..24].try_into().unwrap());
        let count = rows
            .checked_mul(cols)
            .and_then(|c| usize::try_from(c).ok())
            .ok_or_else(|| Error::format(origin, format!("dimensions {rows}x{cols} overflow")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload).map_err(|e| Error::io(origin, e))?;
        if payload.len() != count * 8 {
            return Err(Error::format(
                origin,
                format!(
                    "payload is {} bytes, expected {} for {rows}x{cols}",
                    payload.len(),
                    count * 8
                ),
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            rows: rows as usize,
            cols: cols as usize,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_byte_layout() {
        let m = PodMat::new(1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let mut expected = b"PODMAT1\0".to_vec();
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f64.to_le_bytes());
        expected.extend((-2.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn dmatrix_row_major_order() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let m = PodMat::from_dmatrix(&d);
        assert_eq!(m.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(m.to_dmatrix(), d);
    }

    #[test]
    fn rejects_malformed() {
        let p = Path::new("mem");
        assert!(PodMat::read_from(&b"PODMAT2\0"[..], p).is_err());
        assert!(PodMat::read_from(&b"PODMAT1\0\x01"[..], p).is_err());
        let mut buf = Vec::new();
        PodMat::new(2, 2, vec![0.0; 4]).unwrap().write_to(&mut buf).unwrap();
        buf.pop();
        assert!(matches!(PodMat::read_from(&buf[..], p), Err(Error::Format { .. })));
        assert!(PodMat::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn empty_matrix() {
        let m = PodMat::new(5, 0, vec![]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(PodMat::read_from(&buf[..], Path::new("mem")).unwrap(), m);
        assert_eq!(m.to_dmatrix().shape(), (5, 0));
    }
}
