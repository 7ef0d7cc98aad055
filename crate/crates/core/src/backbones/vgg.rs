use crate::error::Result;
use crate::graph::{Graph, Padding, PoolKind, Var};
use crate::nn::{Conv1d, Feeds};
use crate::params::ParamBuilder;

/// (convolutions, filters) per VGG-16 block.
pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

/// A run of kernel-3 convolutions followed by a 2/2 max pool.
#[derive(Debug, Clone)]
pub struct VggBlock {
    pub convs: Vec<Conv1d>,
}

impl VggBlock {
    fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for c in &self.convs {
            x = c.forward(g, x)?;
            x = g.relu(x);
        }
        g.pool1d(x, PoolKind::Max, 2, 2, Padding::Valid)
    }
}

#[derive(Debug, Clone)]
pub struct Vgg {
    pub blocks: Vec<VggBlock>,
}

impl Vgg {
    pub fn new(pb: &mut ParamBuilder, in_ch: usize, n_blocks: usize) -> Self {
        let mut cin = in_ch;
        let blocks = VGG16_BLOCKS[..n_blocks]
            .iter()
            .enumerate()
            .map(|(i, &(n, filters))| {
                let convs = (0..n)
                    .map(|j| {
                        let name = format!("backbone/block{}/conv{}", i + 1, j + 1);
                        let c = Conv1d::new(pb, &name, cin, filters, 3, 1, Padding::Same, Feeds::Relu);
                        cin = filters;
                        c
                    })
                    .collect();
                VggBlock { convs }
            })
            .collect();
        Self { blocks }
    }

    pub fn out_channels(&self, module: usize) -> usize {
        VGG16_BLOCKS[module].1
    }

    /// Length after `n_blocks` pooling stages.
    pub fn out_len(input_len: usize, n_blocks: usize) -> usize {
        (0..n_blocks).fold(input_len, |l, _| l / 2)
    }

    pub fn forward_module(&self, g: &mut Graph, i: usize, x: Var) -> Result<Var> {
        self.blocks[i].forward(g, x)
    }
}
