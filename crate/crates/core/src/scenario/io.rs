//! Binary container and CSV export for [`ScenarioSet`].
//!
//! Layout (little-endian): `b"MSRA"`, version `u16`, `n u64`, `d u64`,
//! `n·d` row-major `f64`, `seed u64`, then the model tag as a `u32` byte
//! length followed by UTF-8 bytes.

use super::ScenarioSet;
use crate::error::{MsraError, Result};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MSRA";
pub const VERSION: u16 = 1;

impl ScenarioSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 16 + 8 * self.data.len() + 12 + self.model_tag.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.d as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.model_tag.len() as u32).to_le_bytes());
        out.extend_from_slice(self.model_tag.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ScenarioSet> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(MsraError::invalid("not a scenario file (bad magic)"));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(MsraError::Unsupported(format!("scenario file version {version}")));
        }
        let n = cur.u64()? as usize;
        let d = cur.u64()? as usize;
        let count = n
            .checked_mul(d)
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| MsraError::invalid("scenario file is truncated"))?;
        let data = cur
            .take(8 * count)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let seed = cur.u64()?;
        let len = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let tag = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| MsraError::invalid("model tag is not UTF-8"))?
            .to_string();
        if cur.pos != bytes.len() {
            return Err(MsraError::invalid("trailing bytes after scenario data"));
        }
        ScenarioSet::new(data, n, d, seed, tag)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<ScenarioSet> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        ScenarioSet::from_bytes(&bytes)
    }

    /// CSV with a header `x1,…,xd`, one scenario per line.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record((1..=self.d).map(|k| format!("x{k}")))?;
        for s in 0..self.n {
            w.write_record(self.row(s).iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MsraError::invalid("scenario file is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let s = ScenarioSet::from_rows(&[vec![1.5, -2.0], vec![0.0, 1e-300]], 42, "gaussian(d=2)").unwrap();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"MSRA");
        assert_eq!(ScenarioSet::from_bytes(&bytes).unwrap(), s);
        assert!(ScenarioSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = ScenarioSet::from_rows(&[vec![1.0, 2.0]], 0, "t").unwrap();
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().next(), Some("x1,x2"));
        assert_eq!(text.lines().count(), 2);
    }
}
