use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { rho: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: Self = Self::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    pub const RMSPROP: Self = Self::RmsProp { rho: 0.9, eps: 1e-7 };

    pub fn name(&self) -> &'static str {
        match self {
            Self::Adam { .. } => "adam",
            Self::RmsProp { .. } => "rmsprop",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::ADAM),
            "rmsprop" => Ok(Self::RMSPROP),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected adam|rmsprop)"))),
        }
    }
}

/// Per-parameter optimizer state, indexed like the [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| if p.requires_grad { vec![0.0; p.numel()] } else { Vec::new() }).collect();
        Self {
            kind,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update to every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        for (id, g) in grads.params() {
            let w = store.get_mut(id).value.data_mut();
            let i = id.index();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for k in 0..g.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        w[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp { rho, eps } => {
                    let v = &mut self.second[i];
                    for k in 0..g.len() {
                        v[k] = rho * v[k] + (1.0 - rho) * g[k] * g[k];
                        w[k] -= lr * g[k] / (v[k].sqrt() + eps);
                    }
                }
            }
        }
    }
}
