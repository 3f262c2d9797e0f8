//! Parameterized building blocks. Each layer registers its tensors in a [`ParamStore`] at
//! construction and records its computation on a [`Graph`] at forward time.

use rand::Rng;

use crate::config::BnOrder;
use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: Option<ParamId>,
    k: usize,
}

impl Conv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = ParamStore::he_normal(&[cout, cin, k, k, k], cin * k * k * k, rng);
        let w = store.add_param(format!("{name}.weight"), w);
        let b = bias.then(|| store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { w, b, k }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.conv(x, self.w, self.b, self.k)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    mean: BufferId,
    var: BufferId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.batchnorm(x, self.gamma, self.beta, self.mean, self.var)
    }
}

/// Two 3×3×3 convolutions, each followed by ReLU and, when `norm` is set, batch norm.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    units: Vec<(Conv, Option<BatchNorm>)>,
    order: BnOrder,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        norm: bool,
        order: BnOrder,
        rng: &mut R,
    ) -> Self {
        let units = (0..2)
            .map(|i| {
                let inc = if i == 0 { cin } else { cout };
                // a bias directly before batch norm is cancelled by the mean subtraction
                let bias = !(norm && order == BnOrder::BnRelu);
                let conv = Conv::new(store, &format!("{name}.conv{i}"), inc, cout, 3, bias, rng);
                let bn = norm.then(|| BatchNorm::new(store, &format!("{name}.bn{i}"), cout));
                (conv, bn)
            })
            .collect();
        Self { units, order }
    }

    pub fn forward(&self, g: &mut Graph, mut x: NodeId) -> Result<NodeId> {
        for (conv, bn) in &self.units {
            x = conv.forward(g, x)?;
            x = match (bn, self.order) {
                (None, _) => g.relu(x),
                (Some(bn), BnOrder::ReluBn) => {
                    let r = g.relu(x);
                    bn.forward(g, r)?
                }
                (Some(bn), BnOrder::BnRelu) => {
                    let n = bn.forward(g, x)?;
                    g.relu(n)
                }
            };
        }
        Ok(x)
    }
}

/// 2×2×2 up-convolution with stride 2.
#[derive(Debug, Clone)]
pub struct UpConv {
    w: ParamId,
    b: ParamId,
}

impl UpConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        let w = ParamStore::he_normal(&[cin, cout, 2, 2, 2], cin, rng);
        Self {
            w: store.add_param(format!("{name}.weight"), w),
            b: store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.upconv(x, self.w, self.b)
    }
}

/// 1×1×1 convolution to one channel followed by a sigmoid.
#[derive(Debug, Clone)]
pub struct Head {
    conv: Conv,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv::new(store, name, cin, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let logits = self.conv.forward(g, x)?;
        Ok(g.sigmoid(logits))
    }
}
