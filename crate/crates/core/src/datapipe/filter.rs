use std::fmt;

use super::SEGMENT_LEN;
use crate::error::{Error, Result};

pub const ECG_MIN_MV: f32 = -2.0;
pub const ECG_MAX_MV: f32 = 4.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Ecg,
    Ppg,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ecg => "ecg",
            Self::Ppg => "ppg",
        })
    }
}

/// The first offending sample of a rejected segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropReason {
    pub channel: Channel,
    pub index: usize,
    pub value: f32,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sample {} out of range ({})", self.channel, self.index, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterOutcome {
    Keep,
    Drop(DropReason),
}

impl FilterOutcome {
    pub fn is_keep(&self) -> bool {
        matches!(self, Self::Keep)
    }
}

/// Drops a segment if any ECG sample lies outside [-2, 4.5] mV or any PPG
/// sample is zero or negative. NaN fails both range tests.
///
/// ECG is scanned before PPG, so a segment bad in both reports ECG.
pub fn filter_segment(ecg: &[f32], ppg: &[f32]) -> Result<FilterOutcome> {
    if ecg.len() != SEGMENT_LEN || ppg.len() != SEGMENT_LEN {
        return Err(Error::Data(format!(
            "segment must have {SEGMENT_LEN} samples per channel, got ecg {} / ppg {}",
            ecg.len(),
            ppg.len()
        )));
    }
    if let Some((index, &value)) = ecg.iter().enumerate().find(|(_, v)| !(ECG_MIN_MV..=ECG_MAX_MV).contains(*v)) {
        return Ok(FilterOutcome::Drop(DropReason {
            channel: Channel::Ecg,
            index,
            value,
        }));
    }
    if let Some((index, &value)) = ppg.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Ok(FilterOutcome::Drop(DropReason {
            channel: Channel::Ppg,
            index,
            value,
        }));
    }
    Ok(FilterOutcome::Keep)
}
