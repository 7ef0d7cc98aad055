//! Segment filtering, hypotension labels, SVI targets, a synthetic waveform
//! generator, case-level splitting and the PSD1 dataset container.

mod container;
mod filter;
mod labels;
mod split;
mod synthetic;

pub use container::{decode_dataset, encode_dataset, ContainerError, Manifest, FORMAT_VERSION, MAGIC};
pub use filter::{filter_segment, Channel, DropReason, FilterOutcome, ECG_MAX_MV, ECG_MIN_MV};
pub use labels::{
    body_surface_area, compute_svi, compute_svi_with_bsa, label_hypotension, BsaFormula, HemoPoint, MapTrace,
    SviOutcome, HYPOTENSION_HORIZON_S, HYPOTENSION_MAP_MMHG, HYPOTENSION_MIN_DURATION_S, SV_MAX_ML, SV_MIN_ML,
};
pub use split::{split_by_case, test_case_count, DEFAULT_TEST_FRACTION};
pub use synthetic::{generate_synthetic, SyntheticReport, SyntheticSpec, DEFAULT_ARTIFACT_RATE, DEFAULT_PREVALENCE};

use crate::backbones::Task;
use crate::error::{Error, Result};

pub const SAMPLE_RATE_HZ: usize = 100;
/// 20 s at 100 Hz.
pub const SEGMENT_LEN: usize = 2000;
pub const N_CHANNELS: usize = 2;
/// age, sex, height, weight.
pub const N_DEMOGRAPHICS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub case_id: u32,
    /// mV
    pub ecg: Vec<f32>,
    /// unitless
    pub ppg: Vec<f32>,
    /// years
    pub age: f32,
    /// 0 or 1
    pub sex: f32,
    /// cm
    pub height: f32,
    /// kg
    pub weight: f32,
    /// Hypotension label in {0, 1}, or SVI in mL/m² for regression.
    pub label: f32,
}

impl SampleRecord {
    pub fn demographics(&self) -> [f32; N_DEMOGRAPHICS] {
        [self.age, self.sex, self.height, self.weight]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(task: Task, records: Vec<SampleRecord>) -> Self {
        Self { task, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted, deduplicated case ids.
    pub fn case_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.records.iter().map(|r| r.case_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| f64::from(r.label)).collect()
    }

    /// Fraction of records with label 1; meaningful for classification only.
    pub fn prevalence(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.label >= 0.5).count() as f64 / self.records.len() as f64
    }

    /// Checks waveform lengths and, for classification, that labels are 0 or 1.
    pub fn validate(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if r.ecg.len() != SEGMENT_LEN || r.ppg.len() != SEGMENT_LEN {
                return Err(Error::Data(format!(
                    "record {i} (case {}): waveform lengths {}/{} (expected {SEGMENT_LEN})",
                    r.case_id,
                    r.ecg.len(),
                    r.ppg.len()
                )));
            }
            if self.task == Task::Classification && r.label != 0.0 && r.label != 1.0 {
                return Err(Error::Data(format!("record {i}: classification label {} not in {{0,1}}", r.label)));
            }
        }
        Ok(())
    }
}
