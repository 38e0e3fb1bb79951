//! Fusion-level contrastive term: reverse predictors from the fusion vector back to
//! each modality, scored against in-batch negatives.

use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Weights};
use crate::numeric::{Matrix, Rng};
use crate::params::{ParamGroup, ParamId, ParamStore};

const NORM_EPS: f64 = 1e-12;

/// One MLP `d_Z → hidden → d_m` per modality, in `Modality::ALL` order.
#[derive(Clone, Debug)]
pub struct ReversePredictor {
    pub nets: [Mlp; 3],
}

impl ReversePredictor {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, fusion_dim: usize, dims: [usize; 3], hidden: usize) -> Self {
        let nets = Modality::ALL.map(|m| {
            Mlp::new(
                store,
                rng,
                &format!("g_{}", m.tag()),
                ParamGroup::Reverse,
                &[fusion_dim, hidden, dims[m.index()]],
                Activation::Relu,
                Activation::Identity,
            )
        });
        Self { nets }
    }

    pub fn net(&self, m: Modality) -> &Mlp {
        &self.nets[m.index()]
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: NodeId, m: Modality, mode: Weights) -> Result<NodeId> {
        self.net(m).forward(g, store, z, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.nets.iter().flat_map(Mlp::params).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine between `h_m` and a prediction `G(Z)`.
pub fn cosine(h: &[f64], prediction: &[f64]) -> Result<f64> {
    if h.len() != prediction.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of length {} and {}",
            h.len(),
            prediction.len()
        )));
    }
    let (nh, np) = (norm(h), norm(prediction));
    if nh < NORM_EPS || np < NORM_EPS {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = h.iter().zip(prediction).map(|(a, b)| a * b).sum();
    Ok((dot / (nh * np)).clamp(-1.0, 1.0))
}

/// `exp(cos(h_m, G(Z)))`, in `[e⁻¹, e]`.
pub fn score(h: &[f64], prediction: &[f64]) -> Result<f64> {
    cosine(h, prediction).map(f64::exp)
}

/// `s_ij = s(h^j, Z_i)` over a batch; the diagonal holds the positive pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scores: Matrix,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix) -> Result<Self> {
        if scores.rows() != scores.cols() || scores.rows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "score matrix must be square and nonempty, got {}x{}",
                scores.rows(),
                scores.cols()
            )));
        }
        Ok(Self { scores })
    }

    /// Row `i` scores prediction `i` against every embedding in `h`.
    pub fn from_batch(predictions: &Matrix, h: &Matrix) -> Result<Self> {
        let n = predictions.rows();
        if h.rows() != n {
            return Err(Error::DimensionMismatch(format!("{n} predictions for {} embeddings", h.rows())));
        }
        let mut s = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = score(h.row(j), predictions.row(i))?;
            }
        }
        Self::new(s)
    }

    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean over rows of `−log(s_ii / Σ_j s_ij)`.
pub fn nce_loss(s: &ScoreMatrix) -> f64 {
    let n = s.len();
    if n == 1 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let row = s.scores.row(i);
            row.iter().sum::<f64>().ln() - row[i].ln()
        })
        .sum();
    total / n as f64
}

/// `L_CPC = L_N^{z,t} + L_N^{z,v} + L_N^{z,a}`.
pub fn l_cpc(l_n_t: f64, l_n_v: f64, l_n_a: f64) -> f64 {
    l_n_t + l_n_v + l_n_a
}

/// Sum of the terms whose `keep` flag is set.
pub fn l_cpc_masked(terms: [f64; 3], keep: [bool; 3]) -> f64 {
    terms.iter().zip(keep).filter(|(_, k)| *k).map(|(t, _)| t).sum()
}

/// Per-row cosine between `predictions[i]` and `h[i]`.
pub fn paired_cosines(predictions: &Matrix, h: &Matrix) -> Result<Vec<f64>> {
    if predictions.shape() != h.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} predictions for {:?} embeddings",
            predictions.shape(),
            h.shape()
        )));
    }
    (0..h.rows()).map(|i| cosine(h.row(i), predictions.row(i))).collect()
}

/// Graph node of the in-batch NCE loss for predictions `p` (`N × d`) and targets `h`.
pub fn nce_loss_node(g: &mut Graph, predictions: NodeId, h: NodeId) -> Result<NodeId> {
    for id in [predictions, h] {
        if g.value(id).row_iter().any(|r| norm(r) < NORM_EPS) {
            return Err(Error::ZeroVector);
        }
    }
    let n = g.value(h).rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let pn = g.normalize_rows(predictions)?;
    let hn = g.normalize_rows(h)?;
    let cos = g.matmul_t(pn, hn)?;
    let lse = g.row_logsumexp(cos);
    let pos = g.diag(cos)?;
    let diff = g.sub(lse, pos)?;
    Ok(g.mean(diff))
}
