use crate::error::{arg_err, Result};
use crate::graph::{Graph, Padding, PoolKind, Var};
use crate::nn::{Conv1d, Dense, Feeds};
use crate::params::ParamBuilder;

/// Convolutional block attention module: a channel gate (shared MLP over the
/// average- and max-pooled descriptors) followed by a spatial gate (convolution
/// over the channel-mean and channel-max maps).
#[derive(Debug, Clone)]
pub struct CbamBlock {
    pub mlp_hidden: Dense,
    pub mlp_out: Dense,
    pub spatial: Conv1d,
    pub channels: usize,
}

pub struct CbamOutput {
    pub output: Var,
    /// `[B, C]`
    pub channel_gate: Var,
    /// `[B, 1, L]`
    pub spatial_gate: Var,
}

impl CbamBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize, reduction: usize, spatial_kernel: usize) -> Result<Self> {
        if reduction == 0 || reduction > channels {
            return Err(arg_err(
                "cbam_block",
                format!("reduction ratio {reduction} must be in 1..={channels}"),
            ));
        }
        if spatial_kernel % 2 == 0 {
            return Err(arg_err("cbam_block", format!("spatial kernel must be odd, got {spatial_kernel}")));
        }
        let hidden = channels / reduction;
        Ok(Self {
            mlp_hidden: Dense::new(pb, &format!("{name}/mlp_hidden"), channels, hidden, Feeds::Relu),
            mlp_out: Dense::new(pb, &format!("{name}/mlp_out"), hidden, channels, Feeds::Other),
            spatial: Conv1d::new(
                pb,
                &format!("{name}/spatial"),
                2,
                1,
                spatial_kernel,
                1,
                Padding::Same,
                Feeds::Other,
            ),
            channels,
        })
    }

    fn mlp(&self, g: &mut Graph, v: Var) -> Result<Var> {
        let h = self.mlp_hidden.forward(g, v)?;
        let h = g.relu(h);
        self.mlp_out.forward(g, h)
    }

    pub fn forward_with_gates(&self, g: &mut Graph, x: Var) -> Result<CbamOutput> {
        let (b, c, l) = {
            let s = g.shape(x);
            (s[0], s[1], s[2])
        };
        let avg = g.global_pool(x, PoolKind::Avg)?;
        let max = g.global_pool(x, PoolKind::Max)?;
        let a = self.mlp(g, avg)?;
        let m = self.mlp(g, max)?;
        let logits = g.add(a, m)?;
        let channel_gate = g.sigmoid(logits);
        let cg = g.reshape(channel_gate, &[b, c, 1])?;
        let refined = g.mul(x, cg)?;

        let mean_map = g.reduce(refined, 1, PoolKind::Avg)?;
        let max_map = g.reduce(refined, 1, PoolKind::Max)?;
        let mean_map = g.reshape(mean_map, &[b, 1, l])?;
        let max_map = g.reshape(max_map, &[b, 1, l])?;
        let stacked = g.concat(&[mean_map, max_map], 1)?;
        let s = self.spatial.forward(g, stacked)?;
        let spatial_gate = g.sigmoid(s);
        let output = g.mul(refined, spatial_gate)?;
        Ok(CbamOutput {
            output,
            channel_gate,
            spatial_gate,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(self.forward_with_gates(g, x)?.output)
    }
}
