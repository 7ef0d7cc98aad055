use crate::error::Result;
use crate::graph::{Graph, Padding, PoolKind, Var};
use crate::nn::{Conv1d, Feeds};
use crate::params::ParamBuilder;

/// Branch widths of one Inception-V1 module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionSpec {
    pub name: &'static str,
    pub b1: usize,
    pub b3_reduce: usize,
    pub b3: usize,
    pub b5_reduce: usize,
    pub b5: usize,
    pub pool_proj: usize,
    /// A 3/2 max pool precedes the module (stage transitions).
    pub pool_before: bool,
}

impl InceptionSpec {
    pub const fn out_channels(&self) -> usize {
        self.b1 + self.b3 + self.b5 + self.pool_proj
    }
}

const fn spec(
    name: &'static str,
    b1: usize,
    b3_reduce: usize,
    b3: usize,
    b5_reduce: usize,
    b5: usize,
    pool_proj: usize,
    pool_before: bool,
) -> InceptionSpec {
    InceptionSpec {
        name,
        b1,
        b3_reduce,
        b3,
        b5_reduce,
        b5,
        pool_proj,
        pool_before,
    }
}

/// Modules 3a through 5b; the first eight are selectable levels.
pub const INCEPTION_V1: [InceptionSpec; 9] = [
    spec("3a", 64, 96, 128, 16, 32, 32, false),
    spec("3b", 128, 128, 192, 32, 96, 64, false),
    spec("4a", 192, 96, 208, 16, 48, 64, true),
    spec("4b", 160, 112, 224, 24, 64, 64, false),
    spec("4c", 128, 128, 256, 24, 64, 64, false),
    spec("4d", 112, 144, 288, 32, 64, 64, false),
    spec("4e", 256, 160, 320, 32, 128, 128, false),
    spec("5a", 256, 160, 320, 32, 128, 128, true),
    spec("5b", 384, 192, 384, 48, 128, 128, false),
];

pub const STEM_CHANNELS: usize = 192;

#[derive(Debug, Clone)]
pub struct InceptionModule {
    pub spec: InceptionSpec,
    b1: Conv1d,
    b3_reduce: Conv1d,
    b3: Conv1d,
    b5_reduce: Conv1d,
    b5: Conv1d,
    pool_proj: Conv1d,
}

impl InceptionModule {
    fn new(pb: &mut ParamBuilder, s: InceptionSpec, cin: usize) -> Self {
        let n = |b: &str| format!("backbone/inception{}/{b}", s.name);
        let conv = |pb: &mut ParamBuilder, b: &str, ci, co, k| Conv1d::new(pb, &n(b), ci, co, k, 1, Padding::Same, Feeds::Relu);
        Self {
            spec: s,
            b1: conv(pb, "b1", cin, s.b1, 1),
            b3_reduce: conv(pb, "b3_reduce", cin, s.b3_reduce, 1),
            b3: conv(pb, "b3", s.b3_reduce, s.b3, 3),
            b5_reduce: conv(pb, "b5_reduce", cin, s.b5_reduce, 1),
            b5: conv(pb, "b5", s.b5_reduce, s.b5, 5),
            pool_proj: conv(pb, "pool_proj", cin, s.pool_proj, 1),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = if self.spec.pool_before {
            g.pool1d(x, PoolKind::Max, 3, 2, Padding::Same)?
        } else {
            x
        };
        let conv_relu = |c: &Conv1d, g: &mut Graph, v: Var| -> Result<Var> {
            let y = c.forward(g, v)?;
            Ok(g.relu(y))
        };
        let a = conv_relu(&self.b1, g, x)?;
        let b = conv_relu(&self.b3_reduce, g, x)?;
        let b = conv_relu(&self.b3, g, b)?;
        let c = conv_relu(&self.b5_reduce, g, x)?;
        let c = conv_relu(&self.b5, g, c)?;
        let d = g.pool1d(x, PoolKind::Max, 3, 1, Padding::Same)?;
        let d = conv_relu(&self.pool_proj, g, d)?;
        g.concat(&[a, b, c, d], 1)
    }
}

#[derive(Debug, Clone)]
pub struct Inception {
    stem7: Conv1d,
    stem3: Conv1d,
    pub modules: Vec<InceptionModule>,
}

impl Inception {
    pub fn new(pb: &mut ParamBuilder, in_ch: usize, n_modules: usize) -> Self {
        let stem7 = Conv1d::new(pb, "backbone/stem/conv7", in_ch, 64, 7, 2, Padding::Same, Feeds::Relu);
        let stem3 = Conv1d::new(pb, "backbone/stem/conv3", 64, STEM_CHANNELS, 3, 1, Padding::Same, Feeds::Relu);
        let mut cin = STEM_CHANNELS;
        let modules = INCEPTION_V1[..n_modules]
            .iter()
            .map(|&s| {
                let m = InceptionModule::new(pb, s, cin);
                cin = s.out_channels();
                m
            })
            .collect();
        Self { stem7, stem3, modules }
    }

    pub fn out_channels(&self, module: usize) -> usize {
        INCEPTION_V1[module].out_channels()
    }

    pub fn forward_stem(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.stem7.forward(g, x)?;
        let h = g.relu(h);
        let h = g.pool1d(h, PoolKind::Max, 3, 2, Padding::Same)?;
        let h = self.stem3.forward(g, h)?;
        let h = g.relu(h);
        g.pool1d(h, PoolKind::Max, 3, 2, Padding::Same)
    }

    pub fn forward_module(&self, g: &mut Graph, i: usize, x: Var) -> Result<Var> {
        self.modules[i].forward(g, x)
    }
}
