use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::graph::{Graph, Padding, Var};
use crate::nn::{Conv1d, Feeds};
use crate::params::ParamBuilder;

/// How pairwise similarities are turned into attention weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlNormalizer {
    /// Row-wise softmax (embedded Gaussian).
    #[default]
    Softmax,
    /// Raw dot products divided by the number of positions.
    DotProduct,
}

impl NlNormalizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::DotProduct => "dot_product",
        }
    }
}

impl fmt::Display for NlNormalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NlNormalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "dot_product" | "dot" => Ok(Self::DotProduct),
            _ => Err(Error::Config(format!("unknown NL normalizer {s:?} (expected softmax|dot_product)"))),
        }
    }
}

/// Embedded-Gaussian non-local block.
///
/// `theta`, `phi` and `g` are pointwise convolutions to `C/2` channels; every
/// position attends to every other through `softmax(theta^T phi)` over the key
/// axis, and the result is projected back to `C` channels and added to the input.
#[derive(Debug, Clone)]
pub struct NlBlock {
    pub theta: Conv1d,
    pub phi: Conv1d,
    pub g: Conv1d,
    pub out: Conv1d,
    pub channels: usize,
    pub normalizer: NlNormalizer,
}

pub struct NlOutput {
    pub output: Var,
    /// `[B, L, L]`, rows indexed by query position. Row-stochastic only for
    /// [`NlNormalizer::Softmax`].
    pub attention: Var,
}

impl NlBlock {
    /// With `zero_output` the final projection starts at zero, making the block an
    /// exact identity at initialization.
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, zero_output: bool) -> Result<Self> {
        if channels < 2 {
            return Err(arg_err("nl_block", format!("needs at least 2 channels, got {channels}")));
        }
        let inner = channels / 2;
        let proj = |pb: &mut ParamBuilder, n: &str| {
            Conv1d::new(pb, &format!("{name}/{n}"), channels, inner, 1, 1, Padding::Valid, Feeds::Other)
        };
        let theta = proj(pb, "theta");
        // A bias on phi shifts every score in a row equally, which softmax ignores.
        let phi = Conv1d::unbiased_pointwise(pb, &format!("{name}/phi"), channels, inner, Feeds::Other);
        let g = proj(pb, "g");
        let out = if zero_output {
            Conv1d::zeroed_pointwise(pb, &format!("{name}/out"), inner, channels)
        } else {
            Conv1d::new(pb, &format!("{name}/out"), inner, channels, 1, 1, Padding::Valid, Feeds::Other)
        };
        Ok(Self {
            theta,
            phi,
            g,
            out,
            channels,
            normalizer: NlNormalizer::Softmax,
        })
    }

    pub fn forward_with_attention(&self, g: &mut Graph, x: Var) -> Result<NlOutput> {
        let theta = self.theta.forward(g, x)?;
        let phi = self.phi.forward(g, x)?;
        let values = self.g.forward(g, x)?;
        let scores = g.bmm(theta, phi, true, false)?;
        let attention = match self.normalizer {
            NlNormalizer::Softmax => g.softmax(scores, 2)?,
            NlNormalizer::DotProduct => {
                let l = g.shape(x)[2];
                g.scale(scores, 1.0 / l as f64)
            }
        };
        // y[c, i] = sum_j values[c, j] * attention[i, j]
        let y = g.bmm(values, attention, false, true)?;
        let z = self.out.forward(g, y)?;
        let output = g.add(x, z)?;
        Ok(NlOutput { output, attention })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, x)?.output)
    }
}
