use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{
    AttentionKind, MsaConfig, NlNormalizer, DEFAULT_CBAM_REDUCTION, DEFAULT_CBAM_SPATIAL_KERNEL, DEFAULT_SE_REDUCTION,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    Vgg,
    Resnet,
    Inception,
    MsaOnly,
}

impl BackboneFamily {
    pub const CNN: [BackboneFamily; 3] = [Self::Vgg, Self::Resnet, Self::Inception];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vgg => "vgg",
            Self::Resnet => "resnet",
            Self::Inception => "inception",
            Self::MsaOnly => "msa_only",
        }
    }

    /// Deepest selectable level; `None` for the module-free self-attention model.
    pub fn max_level(self) -> Option<usize> {
        match self {
            Self::Vgg => Some(5),
            Self::Resnet | Self::Inception => Some(8),
            Self::MsaOnly => None,
        }
    }

    /// Level used for the baseline experiments.
    pub fn default_level(self) -> usize {
        match self {
            Self::Vgg => 5,
            Self::Resnet => 6,
            Self::Inception => 4,
            Self::MsaOnly => 1,
        }
    }

    /// Number of modules in the untruncated architecture. Inception-V1 has one
    /// module (5b) beyond its deepest selectable level.
    pub(crate) fn full_modules(self) -> usize {
        match self {
            Self::Vgg => 5,
            Self::Resnet => 8,
            Self::Inception => 9,
            Self::MsaOnly => 0,
        }
    }
}

impl fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgg" => Ok(Self::Vgg),
            "resnet" => Ok(Self::Resnet),
            "inception" => Ok(Self::Inception),
            "msa_only" | "msa" => Ok(Self::MsaOnly),
            _ => Err(Error::Config(format!(
                "unknown family {s:?} (expected vgg|resnet|inception|msa_only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Classification => "classification",
            Self::Regression => "regression",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Classification => 0,
            Self::Regression => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Classification),
            1 => Some(Self::Regression),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Self::Classification),
            "regression" | "reg" => Ok(Self::Regression),
            _ => Err(Error::Config(format!("unknown task {s:?} (expected cls|reg)"))),
        }
    }
}

pub const SUPPORTED_FRACTIONS: [u32; 3] = [0, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: BackboneFamily,
    pub level: usize,
    pub attention: AttentionKind,
    /// Percent of CNN modules followed by an attention block.
    pub fraction: u32,
    pub msa: Option<MsaConfig>,
    pub demographics_dim: usize,
    pub input_channels: usize,
    pub input_len: usize,
    pub task: Task,
    pub se_reduction: usize,
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
    pub nl_normalizer: NlNormalizer,
    pub msa_stem_kernel: usize,
    pub msa_stem_stride: usize,
    pub msa_positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: BackboneFamily::Resnet,
            level: BackboneFamily::Resnet.default_level(),
            attention: AttentionKind::None,
            fraction: 0,
            msa: None,
            demographics_dim: 4,
            input_channels: 2,
            input_len: 2000,
            task: Task::Classification,
            se_reduction: DEFAULT_SE_REDUCTION,
            cbam_reduction: DEFAULT_CBAM_REDUCTION,
            cbam_kernel: DEFAULT_CBAM_SPATIAL_KERNEL,
            nl_normalizer: NlNormalizer::Softmax,
            msa_stem_kernel: 20,
            msa_stem_stride: 10,
            msa_positional: true,
        }
    }
}

impl ModelConfig {
    /// A CNN configuration at the family's default level.
    pub fn cnn(family: BackboneFamily, attention: AttentionKind, fraction: u32) -> Self {
        Self {
            family,
            level: family.default_level(),
            attention,
            fraction,
            ..Self::default()
        }
    }

    /// The stand-alone self-attention model.
    pub fn msa_only(msa: MsaConfig) -> Self {
        Self {
            family: BackboneFamily::MsaOnly,
            level: 1,
            attention: AttentionKind::Msa,
            fraction: 100,
            msa: Some(msa),
            ..Self::default()
        }
    }

    /// The level reported for this model; encoder depth for the self-attention model.
    pub fn effective_level(&self) -> usize {
        match (self.family, self.msa) {
            (BackboneFamily::MsaOnly, Some(m)) => m.n_layers,
            _ => self.level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !SUPPORTED_FRACTIONS.contains(&self.fraction) {
            return bad(format!("attention fraction {} not in {{0, 50, 100}}", self.fraction));
        }
        if self.input_channels == 0 || self.input_len == 0 {
            return bad("input channels and length must be positive".into());
        }
        if self.family == BackboneFamily::MsaOnly {
            if self.attention != AttentionKind::Msa {
                return bad(format!("msa_only requires attention=msa, got {}", self.attention));
            }
            if self.fraction != 100 {
                return bad("msa_only is entirely self-attention; fraction must be 100".into());
            }
            let msa = self.msa.ok_or_else(|| Error::Config("msa_only requires an msa configuration".into()))?;
            msa.validate()?;
            if self.msa_stem_kernel == 0 || self.msa_stem_stride == 0 || self.msa_stem_kernel > self.input_len {
                return bad(format!(
                    "msa stem kernel {} / stride {} invalid for input length {}",
                    self.msa_stem_kernel, self.msa_stem_stride, self.input_len
                ));
            }
            return Ok(());
        }
        let max = self.family.max_level().expect("cnn family");
        if self.level == 0 || self.level > max {
            return bad(format!("{} level {} out of range 1..={max}", self.family, self.level));
        }
        match self.attention {
            AttentionKind::Msa => bad(format!("attention=msa is only valid for msa_only, not {}", self.family)),
            AttentionKind::None if self.fraction != 0 => {
                bad(format!("attention=none requires fraction 0, got {}", self.fraction))
            }
            AttentionKind::Se | AttentionKind::Nl | AttentionKind::Cbam if self.fraction == 0 => {
                bad(format!("attention={} with fraction 0 places no blocks; use attention=none", self.attention))
            }
            _ => Ok(()),
        }?;
        if self.cbam_kernel % 2 == 0 {
            return bad(format!("cbam spatial kernel must be odd, got {}", self.cbam_kernel));
        }
        if self.se_reduction == 0 || self.cbam_reduction == 0 {
            return bad("reduction ratios must be positive".into());
        }
        Ok(())
    }

    /// Short human-readable identifier, e.g. `resnet-L6-se-50`.
    pub fn label(&self) -> String {
        match (self.family, self.msa) {
            (BackboneFamily::MsaOnly, Some(m)) => {
                format!("msa_only-d{}-h{}-ff{}-n{}", m.d_model, m.n_heads, m.d_ff, m.n_layers)
            }
            _ => format!("{}-L{}-{}-{}", self.family, self.level, self.attention, self.fraction),
        }
    }
}

/// 1-based indices of the modules that receive an attention block.
///
/// 50% places one block in every second module (even indices), 100% in all.
pub fn attention_placement(n_modules: usize, fraction: u32) -> Result<Vec<usize>> {
    if n_modules == 0 {
        return Err(Error::Config("attention placement needs at least one module".into()));
    }
    match fraction {
        0 => Ok(Vec::new()),
        50 => Ok((2..=n_modules).step_by(2).collect()),
        100 => Ok((1..=n_modules).collect()),
        f => Err(Error::Config(format!("attention fraction {f} not in {{0, 50, 100}}"))),
    }
}
