//! Binary result files: accepted simulation steps with full T and V fields.
//!
//! Layout (little-endian): magic `RFSIM1\0`, version byte `0x01`, `u32`
//! node count, then per step `u32` step, `f64` time, `f64` dt, `u32`
//! corrector iterations, `u8` converged flag, `node_count` × `f64` T,
//! `node_count` × `f64` V.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 7] = b"RFSIM1\0";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Error)]
pub enum ResultError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a result file (bad magic)")]
    BadMagic,
    #[error("unsupported result file version {0}")]
    BadVersion(u8),
    #[error("truncated step record {0}")]
    Truncated(usize),
    #[error("field length {found} does not match node count {expected}")]
    FieldLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u32,
    pub time: f64,
    pub dt: f64,
    pub corrector_iters: u32,
    pub converged: bool,
    pub temperature: Vec<f64>,
    pub voltage: Vec<f64>,
}

/// Streams step records to any writer.
pub struct ResultWriter<W: Write> {
    inner: W,
    node_count: usize,
}

impl<W: Write> ResultWriter<W> {
    pub fn new(mut inner: W, node_count: usize) -> Result<Self, ResultError> {
        inner.write_all(MAGIC)?;
        inner.write_all(&[VERSION])?;
        inner.write_all(&(node_count as u32).to_le_bytes())?;
        Ok(Self { inner, node_count })
    }

    pub fn write_step(&mut self, rec: &StepRecord) -> Result<(), ResultError> {
        for field in [&rec.temperature, &rec.voltage] {
            if field.len() != self.node_count {
                return Err(ResultError::FieldLength {
                    expected: self.node_count,
                    found: field.len(),
                });
            }
        }
        let mut buf = Vec::with_capacity(25 + 16 * self.node_count);
        buf.extend_from_slice(&rec.step.to_le_bytes());
        buf.extend_from_slice(&rec.time.to_le_bytes());
        buf.extend_from_slice(&rec.dt.to_le_bytes());
        buf.extend_from_slice(&rec.corrector_iters.to_le_bytes());
        buf.push(u8::from(rec.converged));
        for v in rec.temperature.iter().chain(&rec.voltage) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, ResultError> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub node_count: usize,
    pub steps: Vec<StepRecord>,
}

impl ResultFile {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            steps: Vec::new(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ResultError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ResultError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ResultError> {
        let mut w = ResultWriter::new(Vec::new(), self.node_count)?;
        for s in &self.steps {
            w.write_step(s)?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ResultError> {
        if bytes.len() < 12 || &bytes[..7] != MAGIC {
            return Err(ResultError::BadMagic);
        }
        if bytes[7] != VERSION {
            return Err(ResultError::BadVersion(bytes[7]));
        }
        let node_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let record_len = 25 + 16 * node_count;
        let body = &bytes[12..];
        if !body.len().is_multiple_of(record_len) {
            return Err(ResultError::Truncated(body.len() / record_len));
        }
        let f64_at = |b: &[u8], at: usize| f64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        let steps = body
            .chunks_exact(record_len)
            .map(|r| StepRecord {
                step: u32::from_le_bytes(r[0..4].try_into().unwrap()),
                time: f64_at(r, 4),
                dt: f64_at(r, 12),
                corrector_iters: u32::from_le_bytes(r[20..24].try_into().unwrap()),
                converged: r[24] != 0,
                temperature: (0..node_count).map(|i| f64_at(r, 25 + 8 * i)).collect(),
                voltage: (0..node_count).map(|i| f64_at(r, 25 + 8 * (node_count + i))).collect(),
            })
            .collect();
        Ok(Self { node_count, steps })
    }

    pub fn step_by_number(&self, step: u32) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step == step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u32, n: usize) -> StepRecord {
        StepRecord {
            step,
            time: step as f64 * 0.5,
            dt: 0.5,
            corrector_iters: 3,
            converged: true,
            temperature: (0..n).map(|i| 37.0 + i as f64).collect(),
            voltage: (0..n).map(|i| -(i as f64) / 3.0).collect(),
        }
    }

    #[test]
    fn header_layout() {
        let bytes = ResultFile::new(5).to_bytes().unwrap();
        assert_eq!(&bytes[..7], b"RFSIM1\0");
        assert_eq!(bytes[7], 1);
        assert_eq!(&bytes[8..12], &[5, 0, 0, 0]);
        assert_eq!(bytes.len(), 12);
    }

    #[test]
    fn record_layout_is_bit_exact() {
        let mut f = ResultFile::new(2);
        f.steps.push(record(7, 2));
        let bytes = f.to_bytes().unwrap();
        assert_eq!(bytes.len(), 12 + 25 + 32);
        let r = &bytes[12..];
        assert_eq!(&r[0..4], &7u32.to_le_bytes());
        assert_eq!(&r[4..12], &3.5f64.to_le_bytes());
        assert_eq!(&r[12..20], &0.5f64.to_le_bytes());
        assert_eq!(&r[20..24], &3u32.to_le_bytes());
        assert_eq!(r[24], 1);
        assert_eq!(&r[25..33], &37.0f64.to_le_bytes());
        assert_eq!(&r[41..49], &(-0.0f64).to_le_bytes());
        assert_eq!(&r[49..57], &(-1.0f64 / 3.0).to_le_bytes());
    }

    #[test]
    fn round_trip() {
        let mut f = ResultFile::new(4);
        f.steps = (1..=3).map(|s| record(s, 4)).collect();
        let back = ResultFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.step_by_number(2).unwrap().time, 1.0);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(ResultFile::from_bytes(b"nope"), Err(ResultError::BadMagic)));
        let mut bytes = ResultFile::new(1).to_bytes().unwrap();
        bytes[7] = 9;
        assert!(matches!(
            ResultFile::from_bytes(&bytes),
            Err(ResultError::BadVersion(9))
        ));
        let mut f = ResultFile::new(1);
        f.steps.push(record(1, 1));
        let mut bytes = f.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(ResultFile::from_bytes(&bytes), Err(ResultError::Truncated(0))));
    }

    #[test]
    fn writer_checks_field_length() {
        let mut w = ResultWriter::new(Vec::new(), 3).unwrap();
        assert!(matches!(
            w.write_step(&record(1, 2)),
            Err(ResultError::FieldLength { expected: 3, found: 2 })
        ));
    }
}
