use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Dense, Feeds, LayerNorm};
use crate::params::ParamBuilder;
use crate::tensor::Tensor;

/// Hyperparameters of the stacked multi-head self-attention encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MsaConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
}

impl Default for MsaConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            d_ff: 128,
            n_layers: 2,
        }
    }
}

impl MsaConfig {
    pub const GRID_D_MODEL: [usize; 3] = [16, 32, 64];
    pub const GRID_HEADS: [usize; 4] = [2, 4, 6, 8];
    pub const GRID_D_FF: [usize; 3] = [32, 64, 128];
    pub const GRID_LAYERS: [usize; 3] = [1, 2, 3];

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.n_layers == 0 {
            return Err(Error::Config(format!("msa dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "msa d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every point of the search grid, valid or not, in lexicographic order
    /// (d_model, n_heads, d_ff, n_layers).
    pub fn grid() -> Vec<MsaConfig> {
        let mut out = Vec::with_capacity(108);
        for d_model in Self::GRID_D_MODEL {
            for n_heads in Self::GRID_HEADS {
                for d_ff in Self::GRID_D_FF {
                    for n_layers in Self::GRID_LAYERS {
                        out.push(MsaConfig {
                            d_model,
                            n_heads,
                            d_ff,
                            n_layers,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Fixed sinusoidal position table `[len, d]`: even columns `sin(pos / 10000^(i/d))`,
/// odd columns the matching cosine.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d as f64);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[len, d], data).expect("positive dims")
}

/// One encoder layer: multi-head attention and a position-wise feed-forward
/// network, each followed by a residual add and layer normalization.
#[derive(Debug, Clone)]
pub struct MsaLayer {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub norm1: LayerNorm,
    pub ff_inner: Dense,
    pub ff_outer: Dense,
    pub norm2: LayerNorm,
    pub cfg: MsaConfig,
}

pub struct MsaOutput {
    pub output: Var,
    /// Per layer, `[B * n_heads, L, L]` with batch-major, head-minor ordering.
    pub attention: Vec<Var>,
}

impl MsaLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: MsaConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let proj = |pb: &mut ParamBuilder, n: &str| Dense::new(pb, &format!("{name}/{n}"), d, d, Feeds::Other);
        Ok(Self {
            query: proj(pb, "query"),
            // Same argument as for the non-local phi projection: a key bias cannot change the attention.
            key: Dense::unbiased(pb, &format!("{name}/key"), d, d, Feeds::Other),
            value: proj(pb, "value"),
            output: proj(pb, "output"),
            norm1: LayerNorm::new(pb, &format!("{name}/norm1"), d),
            ff_inner: Dense::new(pb, &format!("{name}/ff_inner"), d, cfg.d_ff, Feeds::Relu),
            ff_outer: Dense::new(pb, &format!("{name}/ff_outer"), cfg.d_ff, d, Feeds::Other),
            norm2: LayerNorm::new(pb, &format!("{name}/norm2"), d),
            cfg,
        })
    }

    fn split_heads(&self, g: &mut Graph, x: Var, b: usize, l: usize) -> Result<Var> {
        let (h, dk) = (self.cfg.n_heads, self.cfg.d_k());
        let x = g.reshape(x, &[b, l, h, dk])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[b * h, l, dk])
    }

    /// Returns the layer output and its attention weights.
    pub fn forward_with_attention(&self, g: &mut Graph, tokens: Var) -> Result<(Var, Var)> {
        let (b, l, d) = match *g.shape(tokens) {
            [b, l, d] if d == self.cfg.d_model => (b, l, d),
            ref s => {
                return Err(arg_err(
                    "msa_block",
                    format!("tokens {s:?} do not match d_model {}", self.cfg.d_model),
                ))
            }
        };
        let (h, dk) = (self.cfg.n_heads, self.cfg.d_k());
        let flat = g.reshape(tokens, &[b * l, d])?;
        let q = self.query.forward(g, flat)?;
        let k = self.key.forward(g, flat)?;
        let v = self.value.forward(g, flat)?;
        let q = self.split_heads(g, q, b, l)?;
        let k = self.split_heads(g, k, b, l)?;
        let v = self.split_heads(g, v, b, l)?;

        let scores = g.bmm(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
        let attention = g.softmax(scores, 2)?;
        let ctx = g.bmm(attention, v, false, false)?;
        let ctx = g.reshape(ctx, &[b, h, l, dk])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b * l, d])?;
        let attended = self.output.forward(g, ctx)?;

        let res1 = g.add(flat, attended)?;
        let n1 = self.norm1.forward(g, res1)?;
        let inner = self.ff_inner.forward(g, n1)?;
        let inner = g.relu(inner);
        let ff = self.ff_outer.forward(g, inner)?;
        let res2 = g.add(n1, ff)?;
        let n2 = self.norm2.forward(g, res2)?;
        Ok((g.reshape(n2, &[b, l, d])?, attention))
    }

    pub fn forward(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, tokens)?.0)
    }
}

/// `n_layers` identical encoder layers, optionally preceded by a sinusoidal
/// position encoding added to the tokens.
#[derive(Debug, Clone)]
pub struct MsaEncoder {
    pub layers: Vec<MsaLayer>,
    pub positional: bool,
    pub cfg: MsaConfig,
}

impl MsaEncoder {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: MsaConfig, positional: bool) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.n_layers)
            .map(|i| MsaLayer::new(pb, &format!("{name}/layer{i}"), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            positional,
            cfg,
        })
    }

    pub fn forward_with_attention(&self, g: &mut Graph, tokens: Var) -> Result<MsaOutput> {
        let mut x = tokens;
        if self.positional {
            let s = g.shape(tokens).to_vec();
            if s.len() != 3 {
                return Err(arg_err("msa_block", format!("tokens must be [B, L, d], got {s:?}")));
            }
            let pe = sinusoidal_encoding(s[1], s[2]).reshape(&[1, s[1], s[2]])?;
            let pe = g.input(pe);
            x = g.add(x, pe)?;
        }
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, a) = layer.forward_with_attention(g, x)?;
            attention.push(a);
            x = y;
        }
        Ok(MsaOutput { output: x, attention })
    }

    pub fn forward(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, tokens)?.output)
    }
}
