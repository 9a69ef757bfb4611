//! Binary matrix container shared by embeddings, posteriors and models.
//!
//! Layout: 4-byte ASCII type tag, `u32` row count, `u32` column count (both
//! little-endian), then `rows * cols` little-endian `f32` values in row-major
//! order. Embedding and posterior files use the tag `EMB1`; model files use
//! their own tag. Metadata lives in a `.meta` sidecar of `key: value` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const EMBEDDING_TAG: [u8; 4] = *b"EMB1";
const HEADER_LEN: usize = 12;

/// A row-major `f32` matrix tagged with its payload type.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tag: [u8; 4],
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Container {
    pub fn new(tag: [u8; 4], rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "container payload has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if rows > u32::MAX as usize || cols > u32::MAX as usize {
            return Err(Error::invalid("container dimensions exceed u32"));
        }
        Ok(Container {
            tag,
            rows,
            cols,
            data,
        })
    }

    pub fn from_matrix(tag: [u8; 4], m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Container {
            tag,
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| v as f64))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a container, checking the tag, the payload length and that
    /// every value is finite.
    pub fn from_bytes(bytes: &[u8], expected_tag: [u8; 4]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::format(0, "file shorter than the 4-byte tag"));
        }
        let tag: [u8; 4] = bytes[..4].try_into().unwrap();
        if tag != expected_tag {
            return Err(Error::format(
                0,
                format!(
                    "bad magic '{}', expected '{}'",
                    String::from_utf8_lossy(&tag),
                    String::from_utf8_lossy(&expected_tag)
                ),
            ));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(bytes.len(), "truncated header"));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(4, "dimensions overflow"))?;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            let have_rows = (bytes.len() - HEADER_LEN) / 4 / cols.max(1);
            return Err(Error::format(
                bytes.len(),
                format!("truncated payload: header declares {rows} rows, found {have_rows}"),
            ));
        }
        if bytes.len() > expected {
            return Err(Error::format(expected, "trailing bytes after payload"));
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(HEADER_LEN + 4 * i, "non-finite value"));
            }
            data.push(v);
        }
        Ok(Container {
            tag,
            rows,
            cols,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, expected_tag: [u8; 4]) -> Result<Self> {
        let bytes = fs::read(path)?;
        Container::from_bytes(&bytes, expected_tag)
    }
}

/// `key: value` metadata stored next to a container file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar(pub BTreeMap<String, String>);

impl Sidecar {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("sidecar is missing '{key}'")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::invalid(format!("sidecar '{key}' = '{v}' is not a number")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| Error::invalid(format!("sidecar '{key}' = '{v}' is not an integer")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(idx + 1, "expected 'key: value'"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Sidecar(map))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            writeln!(out, "{k}: {v}").unwrap();
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self> {
        Sidecar::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// Path of the sidecar belonging to a container file: same basename, `.meta` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Writes a container together with its sidecar.
pub fn write_with_sidecar(path: &Path, container: &Container, meta: &Sidecar) -> Result<()> {
    container.write(path)?;
    meta.write(&sidecar_path(path))
}

pub fn read_with_sidecar(path: &Path, tag: [u8; 4]) -> Result<(Container, Sidecar)> {
    let container = Container::read(path, tag)?;
    let meta = Sidecar::read(&sidecar_path(path))?;
    Ok((container, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let c = Container::new(EMBEDDING_TAG, 2, 3, vec![1.0, -2.5, 3.0, 0.0, 1e-7, 7.0]).unwrap();
        let back = Container::from_bytes(&c.to_bytes(), EMBEDDING_TAG).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Container::new(EMBEDDING_TAG, 1, 1, vec![1.0]).unwrap().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            Container::from_bytes(&bytes, EMBEDDING_TAG),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_rows() {
        let c = Container::new(EMBEDDING_TAG, 10, 2, vec![0.5; 20]).unwrap();
        let bytes = c.to_bytes();
        let err = Container::from_bytes(&bytes[..bytes.len() - 8], EMBEDDING_TAG).unwrap_err();
        assert!(err.to_string().contains("10 rows"), "{err}");
        assert!(err.to_string().contains("found 9"), "{err}");
    }

    #[test]
    fn non_finite_value_offset() {
        let mut bytes = Container::new(EMBEDDING_TAG, 1, 3, vec![0.0; 3]).unwrap().to_bytes();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&bytes, EMBEDDING_TAG),
            Err(Error::Format { offset: 16, .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let mut m = Sidecar::default();
        m.set("recording_id", "rec1");
        m.set("window_shift", 0.25);
        let back = Sidecar::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.get_f64("window_shift").unwrap(), 0.25);
        assert!(back.get("dim").is_err());
    }
}
