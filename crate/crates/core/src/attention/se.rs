use crate::error::{arg_err, Result};
use crate::graph::{Graph, PoolKind, Var};
use crate::nn::{Dense, Feeds};
use crate::params::ParamBuilder;

/// Squeeze-and-excitation: global average pool, bottleneck MLP, sigmoid gate per channel.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub squeeze: Dense,
    pub excite: Dense,
    pub channels: usize,
}

impl SeBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || reduction > channels {
            return Err(arg_err(
                "se_block",
                format!("reduction ratio {reduction} must be in 1..={channels}"),
            ));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: Dense::new(pb, &format!("{name}/squeeze"), channels, hidden, Feeds::Relu),
            excite: Dense::new(pb, &format!("{name}/excite"), hidden, channels, Feeds::Other),
            channels,
        })
    }

    /// Per-channel gate in (0, 1), shape `[B, C]`.
    pub fn gate(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.global_pool(x, PoolKind::Avg)?;
        let h = self.squeeze.forward(g, s)?;
        let h = g.relu(h);
        let e = self.excite.forward(g, h)?;
        Ok(g.sigmoid(e))
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gate = self.gate(g, x)?;
        let (b, c) = (g.shape(x)[0], g.shape(x)[1]);
        let gate = g.reshape(gate, &[b, c, 1])?;
        g.mul(x, gate)
    }
}
