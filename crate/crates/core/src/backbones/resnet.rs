use crate::error::Result;
use crate::graph::{Graph, Padding, PoolKind, Var};
use crate::nn::{BatchNorm1d, Conv1d, Feeds};
use crate::params::ParamBuilder;

/// Output channels of the eight ResNet-18 basic blocks.
pub const RESNET18_CHANNELS: [usize; 8] = [64, 64, 128, 128, 256, 256, 512, 512];

#[derive(Debug, Clone)]
struct ConvBn {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, stride: usize, feeds: Feeds) -> Self {
        Self {
            conv: Conv1d::new(pb, &format!("{name}/conv"), cin, cout, k, stride, Padding::Same, feeds),
            bn: BatchNorm1d::new(pb, &format!("{name}/bn"), cout),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        self.bn.forward(g, y)
    }
}

/// Two kernel-3 convolutions with a residual path; the path is projected by a
/// strided pointwise convolution when the block downsamples.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    first: ConvBn,
    second: ConvBn,
    downsample: Option<ConvBn>,
}

impl BasicBlock {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.first.forward(g, x)?;
        let h = g.relu(h);
        let h = self.second.forward(g, h)?;
        let skip = match &self.downsample {
            Some(d) => d.forward(g, x)?,
            None => x,
        };
        let y = g.add(h, skip)?;
        Ok(g.relu(y))
    }
}

#[derive(Debug, Clone)]
pub struct ResNet {
    stem: ConvBn,
    pub blocks: Vec<BasicBlock>,
}

impl ResNet {
    pub fn new(pb: &mut ParamBuilder, in_ch: usize, n_blocks: usize) -> Self {
        let stem = ConvBn::new(pb, "backbone/stem", in_ch, 64, 7, 2, Feeds::Relu);
        let mut cin = 64;
        let blocks = RESNET18_CHANNELS[..n_blocks]
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let name = format!("backbone/block{}", i + 1);
                let stride = if cout != cin { 2 } else { 1 };
                let b = BasicBlock {
                    first: ConvBn::new(pb, &format!("{name}/a"), cin, cout, 3, stride, Feeds::Relu),
                    second: ConvBn::new(pb, &format!("{name}/b"), cout, cout, 3, 1, Feeds::Relu),
                    downsample: (stride != 1)
                        .then(|| ConvBn::new(pb, &format!("{name}/down"), cin, cout, 1, stride, Feeds::Other)),
                };
                cin = cout;
                b
            })
            .collect();
        Self { stem, blocks }
    }

    pub fn out_channels(&self, module: usize) -> usize {
        RESNET18_CHANNELS[module]
    }

    pub fn forward_stem(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.stem.forward(g, x)?;
        let h = g.relu(h);
        g.pool1d(h, PoolKind::Max, 3, 2, Padding::Same)
    }

    pub fn forward_module(&self, g: &mut Graph, i: usize, x: Var) -> Result<Var> {
        self.blocks[i].forward(g, x)
    }
}
