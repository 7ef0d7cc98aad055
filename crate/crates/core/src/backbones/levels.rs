use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{BackboneFamily, ModelConfig};
use super::{build_full_architecture, build_model_shapes, count_params};
use crate::error::{Error, Result};

/// Which parameters a computed level table counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// Convolutional body only (stem, modules, batchnorm affine terms).
    Backbone,
    /// Everything trainable, including attention blocks and the dense head.
    Full,
}

impl FromStr for Counting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backbone" => Ok(Self::Backbone),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown counting {s:?} (expected backbone|full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Increasing,
    Decreasing,
    Mixed,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Increasing => "increasing",
            Self::Decreasing => "decreasing",
            Self::Mixed => "mixed",
        })
    }
}

/// Trainable parameters per level plus the untruncated model's count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub family: BackboneFamily,
    /// `(level, trainable parameters)` in increasing level order.
    pub counts: Vec<(usize, u64)>,
    pub default_count: u64,
}

/// Reduction ratio between the original 224x224 image inputs and a 2,000-sample
/// (about 45x45) waveform.
pub const REDUCTION_RATIO: f64 = 5.0;

impl LevelTable {
    /// Minimum acceptable parameter count: the default count divided by the reduction ratio.
    pub fn threshold(&self) -> f64 {
        self.default_count as f64 / REDUCTION_RATIO
    }

    /// Published per-level counts of the reduced VGG-16, ResNet-18 and Inception-V1 models.
    pub fn published(family: BackboneFamily) -> Option<LevelTable> {
        let (counts, default_count): (&[u64], u64) = match family {
            BackboneFamily::Vgg => (&[192_128_065, 189_891_329, 130_614_785, 90_639_361, 40_567_296], 40_567_296),
            BackboneFamily::Resnet => (
                &[26_048, 51_008, 134_080, 233_152, 563_136, 957_888, 2_273_216, 3_849_152],
                3_849_152,
            ),
            BackboneFamily::Inception => (
                &[117_744, 297_584, 538_592, 806_504, 1_089_280, 1_404_864, 1_884_096, 2_538_432],
                3_417_264,
            ),
            BackboneFamily::MsaOnly => return None,
        };
        Some(LevelTable {
            family,
            counts: counts.iter().enumerate().map(|(i, &c)| (i + 1, c)).collect(),
            default_count,
        })
    }

    /// Counts obtained by building `template` at every level of its family.
    pub fn computed(template: &ModelConfig, counting: Counting) -> Result<LevelTable> {
        let max = template
            .family
            .max_level()
            .ok_or_else(|| Error::Config("level tables exist only for CNN families".into()))?;
        let count = |m: &super::Model| match counting {
            Counting::Backbone => m.backbone_param_count() as u64,
            Counting::Full => count_params(m) as u64,
        };
        let mut counts = Vec::with_capacity(max);
        for level in 1..=max {
            let cfg = ModelConfig {
                level,
                ..template.clone()
            };
            counts.push((level, count(&build_model_shapes(&cfg)?)));
        }
        let default_count = count(&build_full_architecture(template)?);
        Ok(LevelTable {
            family: template.family,
            counts,
            default_count,
        })
    }
}

/// The level with the smallest count that still reaches the threshold; ties go
/// to the lower level.
pub fn select_level(table: &LevelTable) -> Result<usize> {
    if table.counts.is_empty() {
        return Err(Error::Config("empty level table".into()));
    }
    let threshold = table.threshold();
    table
        .counts
        .iter()
        .filter(|(_, c)| *c as f64 >= threshold)
        .min_by_key(|&&(level, c)| (c, level))
        .map(|&(level, _)| level)
        .ok_or_else(|| {
            let max = table.counts.iter().map(|&(_, c)| c).max().unwrap_or(0);
            Error::Config(format!(
                "no {} level reaches the threshold {threshold:.1}; largest available count is {max}",
                table.family
            ))
        })
}

/// Strict monotonicity of the counts with increasing level.
pub fn level_trend(table: &LevelTable) -> Result<Trend> {
    if table.counts.len() < 2 {
        return Err(Error::Config("trend needs at least two levels".into()));
    }
    let pairs = || table.counts.windows(2).map(|w| (w[0].1, w[1].1));
    Ok(if pairs().all(|(a, b)| b > a) {
        Trend::Increasing
    } else if pairs().all(|(a, b)| b < a) {
        Trend::Decreasing
    } else {
        Trend::Mixed
    })
}
