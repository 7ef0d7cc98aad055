//! Parameterized layers built on top of [`Graph`] primitives.

use crate::error::Result;
use crate::graph::{Graph, Padding, Var};
use crate::params::{Init, ParamBuilder, ParamId};

/// Which nonlinearity a layer's output feeds; selects the initializer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feeds {
    Relu,
    Other,
}

fn weight_init(feeds: Feeds, fan_in: usize, fan_out: usize) -> Init {
    match feeds {
        Feeds::Relu => Init::KaimingUniform { fan_in },
        Feeds::Other => Init::XavierUniform { fan_in, fan_out },
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        feeds: Feeds,
    ) -> Self {
        let init = weight_init(feeds, cin * kernel, cout * kernel);
        Self {
            kernel: pb.param(format!("{name}/kernel"), &[cout, cin, kernel], init),
            bias: Some(pb.param(format!("{name}/bias"), &[cout], Init::Zeros)),
            stride,
            padding,
        }
    }

    /// Pointwise convolution without a bias term.
    pub fn unbiased_pointwise(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize, feeds: Feeds) -> Self {
        Self {
            kernel: pb.param(format!("{name}/kernel"), &[cout, cin, 1], weight_init(feeds, cin, cout)),
            bias: None,
            stride: 1,
            padding: Padding::Valid,
        }
    }

    /// Pointwise (kernel 1) convolution with a zero-initialized kernel and bias.
    pub fn zeroed_pointwise(pb: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            kernel: pb.param(format!("{name}/kernel"), &[cout, cin, 1], Init::Zeros),
            bias: Some(pb.param(format!("{name}/bias"), &[cout], Init::Zeros)),
            stride: 1,
            padding: Padding::Valid,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.kernel);
        let b = self.bias.map(|b| g.param(b));
        g.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Dense {
    pub fn new(pb: &mut ParamBuilder, name: &str, n_in: usize, n_out: usize, feeds: Feeds) -> Self {
        Self {
            weight: pb.param(format!("{name}/weight"), &[n_in, n_out], weight_init(feeds, n_in, n_out)),
            bias: Some(pb.param(format!("{name}/bias"), &[n_out], Init::Zeros)),
        }
    }

    pub fn unbiased(pb: &mut ParamBuilder, name: &str, n_in: usize, n_out: usize, feeds: Feeds) -> Self {
        Self {
            weight: pb.param(format!("{name}/weight"), &[n_in, n_out], weight_init(feeds, n_in, n_out)),
            bias: None,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.dense(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm1d {
    pub fn new(pb: &mut ParamBuilder, name: &str, channels: usize) -> Self {
        Self {
            gamma: pb.param(format!("{name}/gamma"), &[channels], Init::Constant(1.0)),
            beta: pb.param(format!("{name}/beta"), &[channels], Init::Zeros),
            running_mean: pb.buffer(format!("{name}/running_mean"), &[channels], 0.0),
            running_var: pb.buffer(format!("{name}/running_var"), &[channels], 1.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.batchnorm1d(x, gamma, beta, self.running_mean, self.running_var)
    }
}

pub const LAYERNORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize) -> Self {
        Self {
            gamma: pb.param(format!("{name}/gamma"), &[dim], Init::Constant(1.0)),
            beta: pb.param(format!("{name}/beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layernorm(x, gamma, beta, LAYERNORM_EPS)
    }
}
