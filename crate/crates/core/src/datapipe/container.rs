//! PSD1: a little-endian binary container for two-channel segments.
//!
//! ```text
//! header  "PSD1" | version u16 | task u8 | n_samples u32 | seg_len u32 | n_channels u32
//! record  case_id u32 | f32[n_channels][seg_len] | age f32 | sex f32 | height f32 | weight f32 | label f32
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Dataset, SampleRecord, N_CHANNELS};
use crate::backbones::Task;
use crate::error::Error;

pub const MAGIC: [u8; 4] = *b"PSD1";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic {found:?} (expected \"PSD1\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("truncated container: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown task code {0}")]
    BadTask(u8),
    #[error("unsupported geometry: {n_channels} channels x {seg_len} samples")]
    BadGeometry { seg_len: u32, n_channels: u32 },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("cannot encode: {0}")]
    Encode(String),
}

impl From<ContainerError> for Error {
    fn from(e: ContainerError) -> Self {
        Error::Data(e.to_string())
    }
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>, ContainerError> {
    let seg_len = dataset.records.first().map_or(super::SEGMENT_LEN, |r| r.ecg.len());
    if let Some(r) = dataset.records.iter().find(|r| r.ecg.len() != seg_len || r.ppg.len() != seg_len) {
        return Err(ContainerError::Encode(format!(
            "case {} has waveform lengths {}/{} (expected {seg_len})",
            r.case_id,
            r.ecg.len(),
            r.ppg.len()
        )));
    }
    let n = u32::try_from(dataset.records.len()).map_err(|_| ContainerError::Encode("too many records".into()))?;
    let record_len = record_len(seg_len);
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.records.len() * record_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(dataset.task.code());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(seg_len as u32).to_le_bytes());
    out.extend_from_slice(&(N_CHANNELS as u32).to_le_bytes());
    for r in &dataset.records {
        out.extend_from_slice(&r.case_id.to_le_bytes());
        for v in r.ecg.iter().chain(&r.ppg) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [r.age, r.sex, r.height, r.weight, r.label] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn record_len(seg_len: usize) -> usize {
    4 + 4 * N_CHANNELS * seg_len + 4 * 5
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ContainerError::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, ContainerError> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, ContainerError> {
    let mut rd = Reader { bytes, pos: 0 };
    let magic = rd.take(4)?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic { found: magic.to_vec() });
    }
    let version = u16::from_le_bytes(rd.take(2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ContainerError::VersionMismatch { found: version });
    }
    let task_code = rd.take(1)?[0];
    let task = Task::from_code(task_code).ok_or(ContainerError::BadTask(task_code))?;
    let n = rd.u32()? as usize;
    let seg_len = rd.u32()?;
    let n_channels = rd.u32()?;
    if n_channels as usize != N_CHANNELS || seg_len == 0 {
        return Err(ContainerError::BadGeometry { seg_len, n_channels });
    }
    let seg_len = seg_len as usize;
    let needed = HEADER_LEN + n * record_len(seg_len);
    if bytes.len() < needed {
        return Err(ContainerError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(ContainerError::TrailingBytes(bytes.len() - needed));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let case_id = rd.u32()?;
        let ecg = rd.f32s(seg_len)?;
        let ppg = rd.f32s(seg_len)?;
        let tail = rd.f32s(5)?;
        records.push(SampleRecord {
            case_id,
            ecg,
            ppg,
            age: tail[0],
            sex: tail[1],
            height: tail[2],
            weight: tail[3],
            label: tail[4],
        });
    }
    Ok(Dataset::new(task, records))
}

/// Plain-text `key=value` sidecar, one entry per line, keys sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest(BTreeMap<String, String>);

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut m = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("manifest line {}: expected key=value", no + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.0 {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}
