//! PMEB: a minimal binary container for one f32 matrix.
//!
//! Layout: magic `PMEB`, version u16 LE (= 1), rows u32 LE, cols u32 LE,
//! then rows·cols f32 LE values, row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::TokenStateMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PMEB";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4;

pub fn encode(matrix: &Array2<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(matrix.nrows()).map_err(|_| Error::DimensionOverflow)?;
    let cols = u32::try_from(matrix.ncols()).map_err(|_| Error::DimensionOverflow)?;
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in matrix.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic("PMEB"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionUnsupported {
            format: "PMEB",
            version,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let payload = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::DimensionOverflow)?;
    let expected = HEADER_LEN.checked_add(payload).ok_or(Error::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f64> = bytes[HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|_| Error::DimensionOverflow)
}

pub fn write_matrix(matrix: &Array2<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode(matrix)?).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_token_states(matrix: &TokenStateMatrix, path: &Path) -> Result<()> {
    write_matrix(matrix.as_array(), path)
}

pub fn read_token_states(path: &Path) -> Result<TokenStateMatrix> {
    TokenStateMatrix::new(read_matrix(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_3x4() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pmeb");
        let m = TokenStateMatrix::new(array![
            [0.5, -1.0, 0.25, 3.0],
            [1.0, 2.0, -0.125, 0.0],
            [7.0, 8.5, 9.0, -10.0]
        ])
        .unwrap();
        write_token_states(&m, &path).unwrap();
        assert_eq!(read_token_states(&path).unwrap(), m);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&array![[1.0]]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn truncated_payload() {
        let m = Array2::<f64>::zeros((10, 3));
        let bytes = encode(&m).unwrap();
        let short = &bytes[..bytes.len() - 3 * 4];
        assert!(matches!(
            decode(short),
            Err(Error::TruncatedFile { .. })
        ));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let bytes = encode(&Array2::<f64>::zeros((2, 3))).unwrap();
        assert_eq!(&bytes[..4], b"PMEB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..14], &[3, 0, 0, 0]);
        assert_eq!(bytes.len(), 14 + 24);
    }

    #[test]
    fn overflowing_header() {
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, Error::TruncatedFile { .. } | Error::DimensionOverflow));
    }
}
