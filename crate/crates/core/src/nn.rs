//! Dense layers built on the autodiff tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::numeric::{Matrix, Rng};
use crate::params::{glorot, ParamGroup, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softplus,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Softplus => g.softplus(x),
        }
    }
}

/// How a forward pass reads its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    /// Trainable leaves that collect gradients.
    Live,
    /// Constant copies; gradients still flow to the inputs.
    Frozen,
}

pub(crate) fn weight_node(g: &mut Graph, store: &ParamStore, id: ParamId, mode: Weights) -> NodeId {
    match mode {
        Weights::Live => g.param(store, id),
        Weights::Frozen => g.frozen(store, id),
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, glorot(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), group, Matrix::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, mode: Weights) -> Result<NodeId> {
        let w = weight_node(g, store, self.weight, mode);
        let b = weight_node(g, store, self.bias, mode);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

/// Stack of linear layers; `hidden` activation between layers, `output` after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        group: ParamGroup,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), group, w[0], w[1]))
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId, mode: Weights) -> Result<NodeId> {
        let cols = g.value(x).cols();
        if cols != self.in_dim() {
            return Err(Error::DimensionMismatch(format!(
                "MLP expects input width {}, got {cols}",
                self.in_dim()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h, mode)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply(g, h);
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }
}
