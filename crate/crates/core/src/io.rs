//! Matrix exchange files.
//!
//! Binary `MADM`: magic `MADM`, u32 rows, u32 cols, u8 dtype tag
//! (0 f64, 1 f32, 2 i8, 3 i32), then the row-major little-endian payload.
//! CSV is accepted for small hand-written inputs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Reader;

pub const MATRIX_MAGIC: [u8; 4] = *b"MADM";

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixFile {
    F64(Matrix<f64>),
    F32(Matrix<f32>),
    I8(Matrix<i8>),
    I32(Matrix<i32>),
}

impl MatrixFile {
    pub fn tag(&self) -> u8 {
        match self {
            Self::F64(_) => 0,
            Self::F32(_) => 1,
            Self::I8(_) => 2,
            Self::I32(_) => 3,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::F64(m) => m.shape(),
            Self::F32(m) => m.shape(),
            Self::I8(m) => m.shape(),
            Self::I32(m) => m.shape(),
        }
    }

    /// Widens any payload to f64.
    pub fn to_f64(&self) -> Matrix<f64> {
        match self {
            Self::F64(m) => m.clone(),
            Self::F32(m) => m.to_f64(),
            Self::I8(m) => m.map(f64::from),
            Self::I32(m) => m.map(f64::from),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols) = self.shape();
        let mut out = Vec::new();
        out.extend_from_slice(&MATRIX_MAGIC);
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        out.push(self.tag());
        match self {
            Self::F64(m) => m.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::F32(m) => m.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Self::I8(m) => out.extend(m.as_slice().iter().map(|&v| v as u8)),
            Self::I32(m) => m.as_slice().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MATRIX_MAGIC {
            return Err(Error::Format("not a MADM matrix file".into()));
        }
        let rows = r.u32()?;
        let cols = r.u32()?;
        let tag = r.u8()?;
        let width = match tag {
            0 => 8,
            1 | 3 => 4,
            2 => 1,
            t => return Err(Error::Format(format!("unknown dtype tag {t}"))),
        };
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        if r.remaining() != len * width {
            return Err(Error::Format(format!(
                "{rows}x{cols} payload needs {} bytes, file has {}",
                len * width,
                r.remaining()
            )));
        }
        let payload = r.take(len * width)?;
        Ok(match tag {
            0 => Self::F64(Matrix::from_vec(rows, cols, payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())?),
            1 => Self::F32(Matrix::from_vec(rows, cols, payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())?),
            2 => Self::I8(Matrix::from_vec(rows, cols, payload.iter().map(|&b| b as i8).collect())?),
            _ => Self::I32(Matrix::from_vec(rows, cols, payload.chunks_exact(4).map(|b| i32::from_le_bytes(b.try_into().unwrap())).collect())?),
        })
    }
}

pub fn write_matrix(path: impl AsRef<Path>, m: &MatrixFile) -> Result<()> {
    std::fs::write(path, m.to_bytes())?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixFile> {
    MatrixFile::from_bytes(&std::fs::read(path)?)
}

/// Parses comma- or whitespace-separated numbers. Blank lines and lines
/// starting with `#` are skipped, as is a first line that is not numeric.
pub fn parse_csv(text: &str) -> Result<Matrix<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if rows == 0 && cols.is_none() => continue,
            Err(e) => return Err(Error::Format(format!("line {}: {e}", lineno + 1))),
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {c}",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Format("no numeric rows".into()))?;
    Matrix::from_vec(rows, cols, data)
}

pub fn to_csv(m: &Matrix<f64>) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Loads `.csv` files as text and everything else as `MADM`, widening to f64.
pub fn load_f64(path: impl AsRef<Path>) -> Result<Matrix<f64>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        parse_csv(&std::fs::read_to_string(path)?)
    } else {
        Ok(read_matrix(path)?.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_dtypes() {
        let cases = [
            MatrixFile::F64(Matrix::from_vec(2, 2, vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap()),
            MatrixFile::F32(Matrix::from_vec(1, 3, vec![1.25f32, -7.0, 3.1]).unwrap()),
            MatrixFile::I8(Matrix::from_vec(2, 1, vec![-128i8, 127]).unwrap()),
            MatrixFile::I32(Matrix::from_vec(1, 2, vec![-(1 << 23), 8_388_607]).unwrap()),
        ];
        for m in cases {
            let back = MatrixFile::from_bytes(&m.to_bytes()).unwrap();
            assert_eq!(back.to_bytes(), m.to_bytes());
            assert_eq!(back, m);
        }
    }

    #[test]
    fn header_layout() {
        let b = MatrixFile::I8(Matrix::from_vec(1, 2, vec![1, 2]).unwrap()).to_bytes();
        assert_eq!(b, [b'M', b'A', b'D', b'M', 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2]);
    }

    #[test]
    fn rejects_bad_files() {
        let good = MatrixFile::F64(Matrix::zeros(2, 2).unwrap()).to_bytes();
        assert!(MatrixFile::from_bytes(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[12] = 9;
        assert!(MatrixFile::from_bytes(&bad).is_err());
        bad = good;
        bad[0] = b'X';
        assert!(MatrixFile::from_bytes(&bad).is_err());
    }

    #[test]
    fn csv_parsing() {
        let m = parse_csv("a,b\n# comment\n1, 2\n\n3 4\n").unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(parse_csv("1,2\n3\n").is_err());
        assert!(parse_csv("1,2\nx,y\n").is_err());
        assert!(parse_csv("").is_err());
        assert_eq!(parse_csv(&to_csv(&m)).unwrap(), m);
    }
}
