//! Shape-preserving attention blocks for `[B, C, L]` feature maps, plus the
//! transformer encoder used by the stand-alone self-attention model.

mod cbam;
mod msa;
mod nl;
mod se;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

pub use cbam::{CbamBlock, CbamOutput};
pub use msa::{sinusoidal_encoding, MsaConfig, MsaEncoder, MsaLayer, MsaOutput};
pub use nl::{NlBlock, NlNormalizer, NlOutput};
pub use se::SeBlock;

pub const DEFAULT_SE_REDUCTION: usize = 16;
pub const DEFAULT_CBAM_REDUCTION: usize = 16;
pub const DEFAULT_CBAM_SPATIAL_KERNEL: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Se,
    Nl,
    Cbam,
    Msa,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 5] = [Self::None, Self::Se, Self::Nl, Self::Cbam, Self::Msa];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Se => "se",
            Self::Nl => "nl",
            Self::Cbam => "cbam",
            Self::Msa => "msa",
        }
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attention kind {s:?} (expected none|se|nl|cbam|msa)")))
    }
}

/// An attention block attached to the end of a CNN module.
#[derive(Debug, Clone)]
pub enum AttentionBlock {
    Se(SeBlock),
    Nl(NlBlock),
    Cbam(CbamBlock),
}

impl AttentionBlock {
    pub fn kind(&self) -> AttentionKind {
        match self {
            Self::Se(_) => AttentionKind::Se,
            Self::Nl(_) => AttentionKind::Nl,
            Self::Cbam(_) => AttentionKind::Cbam,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Self::Se(b) => b.forward(g, x),
            Self::Nl(b) => b.forward(g, x),
            Self::Cbam(b) => b.forward(g, x),
        }
    }
}
