//! Inter-modality mutual information lower bound.
//!
//! A diagonal-Gaussian predictor `q(y|x) = N(μ(x), diag σ²(x))` gives
//! `I(X;Y) ≥ E[log q(y|x)] + H(Y)`, with equality when `q` is the true conditional.

use serde::{Deserialize, Serialize};

use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{Activation, Mlp, Weights};
use crate::numeric::{Matrix, Rng, LN_2PI};
use crate::params::{Adam, AdamConfig, ParamGroup, ParamId, ParamStore};

pub const PREDICTED_VARIANCE_FLOOR: f64 = 1e-6;

/// Source and target modality of one bound, `x → y`. Serialized as a two-letter tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModalityPair {
    pub x: Modality,
    pub y: Modality,
}

impl ModalityPair {
    pub const TV: ModalityPair = ModalityPair {
        x: Modality::Text,
        y: Modality::Visual,
    };
    pub const TA: ModalityPair = ModalityPair {
        x: Modality::Text,
        y: Modality::Acoustic,
    };

    /// Two-letter tag such as `tv`.
    pub fn tag(self) -> String {
        format!("{}{}", self.x.tag(), self.y.tag())
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut chars = s.chars();
        let x = Modality::from_tag(chars.next()?)?;
        let y = Modality::from_tag(chars.next()?)?;
        if chars.next().is_some() || x == y {
            return None;
        }
        Some(ModalityPair { x, y })
    }
}

impl TryFrom<String> for ModalityPair {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        ModalityPair::parse(&s).ok_or_else(|| format!("`{s}` is not a modality pair such as `tv`"))
    }
}

impl From<ModalityPair> for String {
    fn from(p: ModalityPair) -> String {
        p.tag()
    }
}

#[derive(Clone, Debug)]
pub struct VariationalPredictor {
    pub pair: ModalityPair,
    pub mean: Mlp,
    pub variance: Mlp,
}

impl VariationalPredictor {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        pair: ModalityPair,
        x_dim: usize,
        y_dim: usize,
        hidden: usize,
    ) -> Self {
        let name = format!("q_{}", pair.tag());
        let group = ParamGroup::Predictor;
        let mean = Mlp::new(
            store,
            rng,
            &format!("{name}.mean"),
            group,
            &[x_dim, hidden, y_dim],
            Activation::Relu,
            Activation::Identity,
        );
        let variance = Mlp::new(
            store,
            rng,
            &format!("{name}.var"),
            group,
            &[x_dim, hidden, y_dim],
            Activation::Relu,
            Activation::Softplus,
        );
        Self { pair, mean, variance }
    }

    pub fn x_dim(&self) -> usize {
        self.mean.in_dim()
    }

    pub fn y_dim(&self) -> usize {
        self.mean.out_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.mean.params().into_iter().chain(self.variance.params()).collect()
    }

    /// Predicted mean and variance nodes for rows of `x`.
    pub fn predict(&self, g: &mut Graph, store: &ParamStore, x: NodeId, mode: Weights) -> Result<(NodeId, NodeId)> {
        let mu = self.mean.forward(g, store, x, mode)?;
        let raw = self.variance.forward(g, store, x, mode)?;
        let var = g.add_scalar(raw, PREDICTED_VARIANCE_FLOOR);
        Ok((mu, var))
    }

    /// Per-row `log q(y_i | x_i)` as an `n × 1` node.
    pub fn log_likelihood(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        y: NodeId,
        mode: Weights,
    ) -> Result<NodeId> {
        if g.value(y).cols() != self.y_dim() {
            return Err(Error::DimensionMismatch(format!(
                "predictor {} targets width {}, got {}",
                self.pair.tag(),
                self.y_dim(),
                g.value(y).cols()
            )));
        }
        let (mu, var) = self.predict(g, store, x, mode)?;
        let resid = g.sub(y, mu)?;
        let r2 = g.square(resid);
        let quad = g.div(r2, var)?;
        let log_var = g.ln(var);
        let t = g.add(quad, log_var)?;
        let t = g.add_scalar(t, LN_2PI);
        let s = g.row_sums(t);
        Ok(g.scale(s, -0.5))
    }
}

/// `log N(y; μ, diag σ²)`.
pub fn gaussian_log_density(y: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    -0.5 * y
        .iter()
        .zip(mu)
        .zip(var)
        .map(|((y, m), v)| (y - m) * (y - m) / v + v.ln() + LN_2PI)
        .sum::<f64>()
}

/// `log q(y|x)` for a single pair of vectors.
pub fn q_log_likelihood(pred: &VariationalPredictor, store: &ParamStore, x: &[f64], y: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let xn = g.constant(Matrix::row_vector(x));
    let yn = g.constant(Matrix::row_vector(y));
    let ll = pred.log_likelihood(&mut g, store, xn, yn, Weights::Frozen)?;
    Ok(g.value(ll).item())
}

/// `L_lld = −(1/N) Σ_pairs Σ_i log q(y_i|x_i)` as a graph node; each entry of
/// `pairs` holds the predictor and its `(x, y)` batch nodes.
pub fn lld_loss_node(
    g: &mut Graph,
    store: &ParamStore,
    pairs: &[(&VariationalPredictor, NodeId, NodeId)],
    mode: Weights,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for &(pred, x, y) in pairs {
        let ll = pred.log_likelihood(g, store, x, y, mode)?;
        let m = g.mean(ll);
        let neg = g.scale(m, -1.0);
        total = Some(match total {
            None => neg,
            Some(t) => g.add(t, neg)?,
        });
    }
    total.ok_or(Error::EmptyBatch)
}

/// Value of [`lld_loss_node`] for concrete batches.
pub fn lld_loss(store: &ParamStore, pairs: &[(&VariationalPredictor, &Matrix, &Matrix)]) -> Result<f64> {
    if pairs.iter().any(|(_, x, _)| x.rows() == 0) {
        return Err(Error::EmptyBatch);
    }
    let mut g = Graph::new();
    let nodes: Vec<(&VariationalPredictor, NodeId, NodeId)> = pairs
        .iter()
        .map(|&(p, x, y)| (p, g.constant(x.clone()), g.constant(y.clone())))
        .collect();
    let l = lld_loss_node(&mut g, store, &nodes, Weights::Frozen)?;
    Ok(g.value(l).item())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub pair: ModalityPair,
    pub expected_log_likelihood: f64,
    pub entropy: f64,
    pub i_ba: f64,
    /// Standard error of the sample mean of `log q`.
    pub standard_error: f64,
}

/// `I_BA = mean log q + H(Y)` over a batch, with the entropy term supplied.
pub fn i_ba(pred: &VariationalPredictor, store: &ParamStore, x: &Matrix, y: &Matrix, entropy: f64) -> Result<MiEstimate> {
    if x.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let yn = g.constant(y.clone());
    let ll = pred.log_likelihood(&mut g, store, xn, yn, Weights::Frozen)?;
    Ok(mi_estimate_from(pred.pair, g.value(ll).as_slice(), entropy))
}

pub fn mi_estimate_from(pair: ModalityPair, log_q: &[f64], entropy: f64) -> MiEstimate {
    let n = log_q.len() as f64;
    let mean = log_q.iter().sum::<f64>() / n;
    let var = if log_q.len() > 1 {
        log_q.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MiEstimate {
        pair,
        expected_log_likelihood: mean,
        entropy,
        i_ba: mean + entropy,
        standard_error: (var / n).sqrt(),
    }
}

/// `L_BA = −I_BA^{t,v} − I_BA^{t,a}`.
pub fn l_ba(i_ba_tv: f64, i_ba_ta: f64) -> f64 {
    -i_ba_tv - i_ba_ta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 5e-3,
            batch_size: 32,
        }
    }
}

/// Trains `pred` alone by likelihood maximization on fixed `(x, y)` data; returns the
/// per-step minibatch loss.
pub fn fit_predictor(
    pred: &VariationalPredictor,
    store: &mut ParamStore,
    x: &Matrix,
    y: &Matrix,
    config: FitConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = x.rows();
    if n == 0 || y.rows() != n {
        return Err(Error::EmptyBatch);
    }
    let ids = pred.params();
    let mut adam = Adam::new(store, ids.clone(), AdamConfig::default());
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size.min(n)).map(|_| rng.below(n)).collect();
        let mut g = Graph::new();
        let xb = g.constant(x.select_rows(&idx));
        let yb = g.constant(y.select_rows(&idx));
        let loss = lld_loss_node(&mut g, store, &[(pred, xb, yb)], Weights::Live)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(format!("predictor fit step {step}")));
        }
        let grads = g.backward(loss)?;
        let gs: Vec<Matrix> = ids
            .iter()
            .map(|&id| {
                grads.param(id).cloned().unwrap_or_else(|| {
                    let (r, c) = store.value(id).shape();
                    Matrix::zeros(r, c)
                })
            })
            .collect();
        adam.step(store, &gs, config.lr);
        losses.push(value);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, LN_2PI_E};

    /// A 1→k predictor rigged to output mean `a·x` and variance `v` exactly.
    fn rigged(store: &mut ParamStore, k: usize, a: f64, v: f64) -> VariationalPredictor {
        let mut rng = Rng::new(0);
        let p = VariationalPredictor::new(store, &mut rng, ModalityPair::TV, 1, k, 2);
        // hidden = relu(x·[1, -1]) gives (x⁺, x⁻); mean = a·(x⁺ − x⁻)
        let l0 = &p.mean.layers[0];
        *store.value_mut(l0.weight) = Matrix::from_rows(&[[1.0, -1.0]]).unwrap();
        let l1 = &p.mean.layers[1];
        *store.value_mut(l1.weight) =
            Matrix::from_vec(2, k, [vec![a; k], vec![-a; k]].concat()).unwrap();
        let vl0 = &p.variance.layers[0];
        *store.value_mut(vl0.weight) = Matrix::zeros(1, 2);
        let vl1 = &p.variance.layers[1];
        *store.value_mut(vl1.weight) = Matrix::zeros(2, k);
        // softplus(b) + floor = v
        let b = ((v - PREDICTED_VARIANCE_FLOOR).exp() - 1.0).ln();
        *store.value_mut(vl1.bias) = Matrix::filled(1, k, b);
        p
    }

    #[test]
    fn log_likelihood_values() {
        let mut store = ParamStore::new();
        let p = rigged(&mut store, 2, 0.0, 1.0);
        let v = q_log_likelihood(&p, &store, &[0.3], &[0.0, 0.0]).unwrap();
        assert!((v + LN_2PI).abs() < 1e-9, "{v}");

        let mut store = ParamStore::new();
        let p = rigged(&mut store, 1, 0.0, 1.0);
        let v = q_log_likelihood(&p, &store, &[0.3], &[1.0]).unwrap();
        assert!((v + 1.41894).abs() < 1e-5);

        let mut store = ParamStore::new();
        let p = rigged(&mut store, 1, 0.0, 4.0);
        let v = q_log_likelihood(&p, &store, &[0.3], &[0.0]).unwrap();
        assert!((v + 1.61209).abs() < 1e-5);
        assert!((v - gaussian_log_density(&[0.0], &[0.0], &[4.0])).abs() < 1e-9);
    }

    #[test]
    fn lld_loss_values() {
        let mut store = ParamStore::new();
        let p1 = rigged(&mut store, 1, 1.0, 1.0);
        let x = Matrix::column_vector(&[0.5, -1.0, 2.0]);
        let y = x.clone();
        let l = lld_loss(&store, &[(&p1, &x, &y), (&p1, &x, &y)]).unwrap();
        assert!((l - 1.83788).abs() < 1e-5, "{l}");

        let x1 = Matrix::column_vector(&[0.7]);
        let y1 = Matrix::column_vector(&[0.1]);
        let single = lld_loss(&store, &[(&p1, &x1, &y1)]).unwrap();
        assert!((single + q_log_likelihood(&p1, &store, &[0.7], &[0.1]).unwrap()).abs() < 1e-12);

        let yb = Matrix::column_vector(&[0.0, 1.0, -2.0]);
        let base = lld_loss(&store, &[(&p1, &x, &yb)]).unwrap();
        let xx = Matrix::column_vector(&[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        let yy = Matrix::column_vector(&[0.0, 1.0, -2.0, 0.0, 1.0, -2.0]);
        let dup = lld_loss(&store, &[(&p1, &xx, &yy)]).unwrap();
        assert!((base - dup).abs() < 1e-12);
    }

    #[test]
    fn i_ba_arithmetic_and_independence() {
        let e = mi_estimate_from(ModalityPair::TV, &[-0.91894, -0.91894], 1.41894);
        assert!((e.i_ba - 0.5).abs() < 1e-12);
        assert_eq!(e.i_ba, e.expected_log_likelihood + e.entropy);

        // q = marginal N(0, 1) of an independent Y: E log q = −H(Y)
        let mut store = ParamStore::new();
        let p = rigged(&mut store, 1, 0.0, 1.0);
        let mut rng = Rng::new(3);
        let n = 100_000;
        let x = Matrix::column_vector(&(0..n).map(|_| rng.normal()).collect::<Vec<_>>());
        let y = Matrix::column_vector(&(0..n).map(|_| rng.normal()).collect::<Vec<_>>());
        let est = i_ba(&p, &store, &x, &y, 0.5 * LN_2PI_E).unwrap();
        assert!(est.i_ba.abs() < 3.0 * est.standard_error + 1e-3, "{est:?}");
    }

    #[test]
    fn true_conditional_recovers_mi() {
        let rho: f64 = 0.9;
        let mut store = ParamStore::new();
        let p = rigged(&mut store, 1, rho, 1.0 - rho * rho);
        let mut rng = Rng::new(4);
        let n = 100_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.normal();
            let b = rng.normal();
            xs.push(a);
            ys.push(rho * a + (1.0 - rho * rho).sqrt() * b);
        }
        let est = i_ba(&p, &store, &Matrix::column_vector(&xs), &Matrix::column_vector(&ys), 0.5 * LN_2PI_E).unwrap();
        let truth = -0.5 * (1.0 - rho * rho).ln();
        assert!((truth - 0.83037).abs() < 1e-5);
        assert!((est.i_ba - truth).abs() < 0.02, "{est:?}");
    }

    #[test]
    fn l_ba_values() {
        assert!((l_ba(0.5, 0.3) + 0.8).abs() < 1e-15);
        assert_eq!(l_ba(0.0, 0.0), 0.0);
        assert!((l_ba(-0.2, 0.7) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn pair_tags() {
        assert_eq!(ModalityPair::TA.tag(), "ta");
        assert_eq!(ModalityPair::parse("va").unwrap().tag(), "va");
        assert!(ModalityPair::parse("tt").is_none());
        assert!(ModalityPair::parse("tva").is_none());
    }

    #[test]
    fn lld_gradient() {
        let mut rng = Rng::new(5);
        let mut store = ParamStore::new();
        let p = VariationalPredictor::new(&mut store, &mut rng, ModalityPair::TV, 3, 2, 4);
        let x = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let y = Matrix::from_vec(5, 2, (0..10).map(|_| rng.normal()).collect()).unwrap();
        let f = |vals: &[Matrix]| {
            let mut s = store.clone();
            s.set_values(vals);
            let mut g = Graph::new();
            let xn = g.constant(x.clone());
            let yn = g.constant(y.clone());
            let l = lld_loss_node(&mut g, &s, &[(&p, xn, yn)], Weights::Live)?;
            let grads = g.backward(l)?;
            Ok((g.value(l).item(), grads.dense(&s)))
        };
        let r = grad_check(f, &store.values(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn fitting_decreases_loss_on_fixed_batch() {
        let mut ok = 0;
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let mut store = ParamStore::new();
            let p = VariationalPredictor::new(&mut store, &mut rng, ModalityPair::TV, 2, 2, 16);
            let x = Matrix::from_vec(32, 2, (0..64).map(|_| rng.normal()).collect()).unwrap();
            let y = x.map(|v| 0.8 * v) ;
            let before = lld_loss(&store, &[(&p, &x, &y)]).unwrap();
            let cfg = FitConfig { steps: 50, lr: 5e-3, batch_size: 32 };
            // batch_size == n with sampling by replacement still sees a fixed pool
            fit_predictor(&p, &mut store, &x, &y, cfg, &mut rng).unwrap();
            let after = lld_loss(&store, &[(&p, &x, &y)]).unwrap();
            if after <= before {
                ok += 1;
            }
        }
        assert!(ok >= 4, "{ok}/5");
    }
}
