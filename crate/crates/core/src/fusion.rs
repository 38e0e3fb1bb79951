//! Fusion network, regression head and the supervised losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Weights};
use crate::numeric::Rng;
use crate::params::{ParamGroup, ParamId, ParamStore};

/// `F: concat(h_t, h_v, h_a) → Z`, two ReLU layers then a linear projection.
#[derive(Clone, Debug)]
pub struct FusionNetwork {
    pub net: Mlp,
    pub input_dims: [usize; 3],
}

impl FusionNetwork {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, input_dims: [usize; 3], hidden: usize, fusion_dim: usize) -> Self {
        let total: usize = input_dims.iter().sum();
        let net = Mlp::new(
            store,
            rng,
            "fusion",
            ParamGroup::Fusion,
            &[total, hidden, hidden, fusion_dim],
            Activation::Relu,
            Activation::Identity,
        );
        Self { net, input_dims }
    }

    pub fn fusion_dim(&self) -> usize {
        self.net.out_dim()
    }

    /// `Z` for embedding nodes given in `(t, v, a)` order.
    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, h: [NodeId; 3], mode: Weights) -> Result<NodeId> {
        for (k, id) in h.iter().enumerate() {
            let cols = g.value(*id).cols();
            if cols != self.input_dims[k] {
                return Err(Error::DimensionMismatch(format!(
                    "fusion input {k} has width {cols}, expected {}",
                    self.input_dims[k]
                )));
            }
        }
        let x = g.concat_cols(&h)?;
        self.net.forward(g, store, x, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }
}

/// Regression head `Z → ŷ`; predictions are left unclamped.
#[derive(Clone, Debug)]
pub struct RegressionHead {
    pub net: Mlp,
}

impl RegressionHead {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, fusion_dim: usize, hidden: usize) -> Self {
        let net = Mlp::new(
            store,
            rng,
            "head",
            ParamGroup::Head,
            &[fusion_dim, hidden, 1],
            Activation::Relu,
            Activation::Identity,
        );
        Self { net }
    }

    /// `N × 1` predictions.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, z: NodeId, mode: Weights) -> Result<NodeId> {
        self.net.forward(g, store, z, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.net.params()
    }
}

/// Mean absolute error.
pub fn task_loss(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if preds.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            truths.len()
        )));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

pub fn task_loss_node(g: &mut Graph, preds: NodeId, truths: NodeId) -> Result<NodeId> {
    if g.value(preds).is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = g.sub(preds, truths)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.1 }
    }
}

/// `L_task + α L_CPC + β L_BA`.
pub fn main_loss(task: f64, l_cpc: f64, l_ba: f64, weights: LossWeights) -> f64 {
    task + weights.alpha * l_cpc + weights.beta * l_ba
}
