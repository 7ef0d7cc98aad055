//! Level-truncated 1D VGG-16 / ResNet-18 / Inception-V1 backbones with attention
//! blocks at module ends, the stand-alone self-attention model, and the
//! parameter-count planning used to choose backbone depth.

mod config;
mod inception;
mod levels;
mod resnet;
mod vgg;

use crate::attention::{AttentionBlock, AttentionKind, CbamBlock, MsaEncoder, NlBlock, SeBlock};
use crate::error::{arg_err, Result};
use crate::graph::{Graph, Padding, PoolKind, Var};
use crate::nn::{Conv1d, Dense, Feeds};
use crate::params::{ParamBuilder, ParamStore};
use crate::tensor::Tensor;

pub use config::{attention_placement, BackboneFamily, ModelConfig, Task, SUPPORTED_FRACTIONS};
pub use inception::{InceptionSpec, INCEPTION_V1};
pub use levels::{level_trend, select_level, Counting, LevelTable, Trend};
pub use resnet::RESNET18_CHANNELS;
pub use vgg::VGG16_BLOCKS;

/// Width of the first dense layer for the CNN families' heads.
pub const VGG_HIDDEN: usize = 4096;
pub const GAP_HIDDEN: usize = 1000;

#[derive(Debug, Clone)]
enum Body {
    Vgg(vgg::Vgg),
    Resnet(resnet::ResNet),
    Inception(inception::Inception),
    Msa { stem: Conv1d, encoder: MsaEncoder },
}

/// Dense layers before and after the demographics are concatenated.
#[derive(Debug, Clone)]
struct Head {
    before: Vec<Dense>,
    after: Vec<Dense>,
}

impl Head {
    fn new(pb: &mut ParamBuilder, features: usize, before: &[usize], after: &[usize], demo: usize) -> Self {
        let mut n_in = features;
        let mk = |pb: &mut ParamBuilder, name: String, n_out: usize, last: bool, n_in: &mut usize| {
            let feeds = if last { Feeds::Other } else { Feeds::Relu };
            let d = Dense::new(pb, &name, *n_in, n_out, feeds);
            *n_in = n_out;
            d
        };
        let before_layers: Vec<Dense> = before
            .iter()
            .enumerate()
            .map(|(i, &n)| mk(pb, format!("head/fc{}", i + 1), n, false, &mut n_in))
            .collect();
        n_in += demo;
        let after_layers = after
            .iter()
            .chain(std::iter::once(&1))
            .enumerate()
            .map(|(i, &n)| {
                let last = i == after.len();
                let name = if last {
                    "head/out".to_string()
                } else {
                    format!("head/fc{}", before.len() + i + 1)
                };
                mk(pb, name, n, last, &mut n_in)
            })
            .collect();
        Self {
            before: before_layers,
            after: after_layers,
        }
    }

    fn forward(&self, g: &mut Graph, features: Var, demographics: Var) -> Result<Var> {
        let mut h = features;
        for d in &self.before {
            h = d.forward(g, h)?;
            h = g.relu(h);
        }
        if g.shape(demographics)[1] > 0 {
            h = g.concat(&[h, demographics], 1)?;
        }
        let last = self.after.len() - 1;
        for (i, d) in self.after.iter().enumerate() {
            h = d.forward(g, h)?;
            if i != last {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// A built network together with its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    body: Body,
    /// One slot per CNN module, in module order.
    attention: Vec<Option<AttentionBlock>>,
    head: Head,
}

/// Builds `cfg` with weights drawn from `seed`.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let (body, attention, head) = build_parts(cfg, cfg.level, &mut ParamBuilder::seeded(&mut store, seed))?;
    Ok(Model {
        config: cfg.clone(),
        store,
        body,
        attention,
        head,
    })
}

/// Builds `cfg` with zero-filled parameters; cheap enough for counting even the
/// largest configurations.
pub fn build_model_shapes(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    build_shapes_with_modules(cfg, cfg.level)
}

fn build_shapes_with_modules(cfg: &ModelConfig, n_modules: usize) -> Result<Model> {
    let mut store = ParamStore::new();
    let (body, attention, head) = build_parts(cfg, n_modules, &mut ParamBuilder::shapes_only(&mut store))?;
    Ok(Model {
        config: cfg.clone(),
        store,
        body,
        attention,
        head,
    })
}

/// Shape-only build of the untruncated architecture (including Inception's
/// unselectable final module), with `cfg`'s attention and head settings.
pub fn build_full_architecture(cfg: &ModelConfig) -> Result<Model> {
    let mut probe = cfg.clone();
    if let Some(max) = cfg.family.max_level() {
        probe.level = max;
    }
    probe.validate()?;
    build_shapes_with_modules(&probe, cfg.family.full_modules().max(1))
}

fn build_parts(
    cfg: &ModelConfig,
    n_modules: usize,
    pb: &mut ParamBuilder,
) -> Result<(Body, Vec<Option<AttentionBlock>>, Head)> {
    let demo = cfg.demographics_dim;
    let (body, channels, features, before, after): (Body, Vec<usize>, usize, Vec<usize>, Vec<usize>) = match cfg.family {
        BackboneFamily::Vgg => {
            let v = vgg::Vgg::new(pb, cfg.input_channels, n_modules);
            let ch: Vec<usize> = (0..n_modules).map(|i| v.out_channels(i)).collect();
            let len = vgg::Vgg::out_len(cfg.input_len, n_modules);
            if len == 0 {
                return Err(arg_err("build_model", format!("input length {} too short for vgg", cfg.input_len)));
            }
            let feats = ch[n_modules - 1] * len;
            (Body::Vgg(v), ch, feats, vec![VGG_HIDDEN], vec![VGG_HIDDEN])
        }
        BackboneFamily::Resnet => {
            let r = resnet::ResNet::new(pb, cfg.input_channels, n_modules);
            let ch: Vec<usize> = (0..n_modules).map(|i| r.out_channels(i)).collect();
            let feats = ch[n_modules - 1];
            (Body::Resnet(r), ch, feats, vec![GAP_HIDDEN], vec![])
        }
        BackboneFamily::Inception => {
            let inc = inception::Inception::new(pb, cfg.input_channels, n_modules);
            let ch: Vec<usize> = (0..n_modules).map(|i| inc.out_channels(i)).collect();
            let feats = ch[n_modules - 1];
            (Body::Inception(inc), ch, feats, vec![GAP_HIDDEN], vec![])
        }
        BackboneFamily::MsaOnly => {
            let msa = cfg.msa.expect("validated");
            let stem = Conv1d::new(
                pb,
                "backbone/stem",
                cfg.input_channels,
                msa.d_model,
                cfg.msa_stem_kernel,
                cfg.msa_stem_stride,
                Padding::Valid,
                Feeds::Other,
            );
            let encoder = MsaEncoder::new(pb, "backbone/msa", msa, cfg.msa_positional)?;
            (Body::Msa { stem, encoder }, vec![], msa.d_model, vec![msa.d_ff], vec![])
        }
    };
    let mut attention: Vec<Option<AttentionBlock>> = vec![None; channels.len()];
    if !channels.is_empty() {
        for idx in attention_placement(channels.len(), cfg.fraction)? {
            let c = channels[idx - 1];
            let name = format!("attention/module{idx}");
            let block = match cfg.attention {
                AttentionKind::Se => AttentionBlock::Se(SeBlock::new(pb, &name, c, cfg.se_reduction)?),
                AttentionKind::Nl => {
                    let mut b = NlBlock::new(pb, &name, c, true)?;
                    b.normalizer = cfg.nl_normalizer;
                    AttentionBlock::Nl(b)
                }
                AttentionKind::Cbam => {
                    AttentionBlock::Cbam(CbamBlock::new(pb, &name, c, cfg.cbam_reduction, cfg.cbam_kernel)?)
                }
                AttentionKind::None | AttentionKind::Msa => continue,
            };
            attention[idx - 1] = Some(block);
        }
    }
    let head = Head::new(pb, features, &before, &after, demo);
    Ok((body, attention, head))
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of CNN modules (zero for the self-attention model).
    pub fn n_modules(&self) -> usize {
        self.attention.len()
    }

    /// 1-based module indices that carry an attention block, with the block kind.
    pub fn attention_sites(&self) -> Vec<(usize, AttentionKind)> {
        self.attention
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.as_ref().map(|a| (i + 1, a.kind())))
            .collect()
    }

    /// Trainable parameters of the convolutional or encoder body alone.
    pub fn backbone_param_count(&self) -> usize {
        self.store.count_trainable_with_prefix("backbone/")
    }

    /// `x`: `[B, channels, length]`; `demographics`: `[B, demographics_dim]`. Returns `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, x: Var, demographics: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        let ds = g.shape(demographics).to_vec();
        let want = [self.config.input_channels, self.config.input_len];
        if xs.len() != 3 || xs[1..] != want {
            return Err(arg_err("forward", format!("input {xs:?} does not match [B, {}, {}]", want[0], want[1])));
        }
        if ds != [xs[0], self.config.demographics_dim] {
            return Err(arg_err(
                "forward",
                format!("demographics {ds:?} do not match [{}, {}]", xs[0], self.config.demographics_dim),
            ));
        }
        let features = match &self.body {
            Body::Msa { stem, encoder } => {
                let t = stem.forward(g, x)?;
                let t = g.permute(t, &[0, 2, 1])?;
                let t = encoder.forward(g, t)?;
                g.reduce(t, 1, PoolKind::Avg)?
            }
            body => {
                let mut h = match body {
                    Body::Vgg(_) => x,
                    Body::Resnet(r) => r.forward_stem(g, x)?,
                    Body::Inception(i) => i.forward_stem(g, x)?,
                    Body::Msa { .. } => unreachable!(),
                };
                for (i, attn) in self.attention.iter().enumerate() {
                    h = match body {
                        Body::Vgg(v) => v.forward_module(g, i, h)?,
                        Body::Resnet(r) => r.forward_module(g, i, h)?,
                        Body::Inception(inc) => inc.forward_module(g, i, h)?,
                        Body::Msa { .. } => unreachable!(),
                    };
                    if let Some(a) = attn {
                        h = a.forward(g, h)?;
                    }
                }
                if matches!(body, Body::Vgg(_)) {
                    let s = g.shape(h).to_vec();
                    g.reshape(h, &[s[0], s[1] * s[2]])?
                } else {
                    g.global_pool(h, PoolKind::Avg)?
                }
            }
        };
        self.head.forward(g, features, demographics)
    }

    /// Inference-mode forward pass on concrete tensors.
    pub fn predict(&self, x: &Tensor, demographics: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference(&self.store);
        let xv = g.input(x.clone());
        let dv = g.input(demographics.clone());
        let y = self.forward(&mut g, xv, dv)?;
        Ok(g.value(y).clone())
    }
}

/// Trainable parameter count; batchnorm running statistics are excluded.
pub fn count_params(model: &Model) -> usize {
    model.store.count_trainable()
}
