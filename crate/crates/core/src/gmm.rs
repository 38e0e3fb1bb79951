//! Entropy of embedding distributions from a polarity-keyed two-component Gaussian
//! mixture, with a FIFO memory of recent embeddings to enlarge the estimation set.
//!
//! Covariances are diagonal: the second moment is taken element-wise, so each
//! component is a mean vector plus per-dimension variances.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::numeric::{Matrix, LN_2PI_E};

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Pos,
    Neg,
}

impl Polarity {
    /// Non-negative labels are positive.
    pub fn of_label(label: f64) -> Self {
        if label >= 0.0 {
            Polarity::Pos
        } else {
            Polarity::Neg
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
        }
    }
}

/// FIFO queue of `(embedding, polarity)` pairs with a fixed entry capacity.
#[derive(Clone, Debug, Default)]
pub struct HistoryMemory {
    capacity: usize,
    entries: VecDeque<(Vec<f64>, Polarity)>,
}

impl HistoryMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn with_batches(batches: usize, batch_size: usize) -> Self {
        Self::new(batches * batch_size)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries oldest first.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Polarity)> {
        self.entries.iter().map(|(v, c)| (v.as_slice(), *c))
    }

    pub fn count(&self, class: Polarity) -> usize {
        self.entries.iter().filter(|(_, c)| *c == class).count()
    }

    /// Appends a batch, then evicts oldest entries until within capacity.
    pub fn update(&mut self, batch: &Matrix, classes: &[Polarity]) {
        debug_assert_eq!(batch.rows(), classes.len());
        for (row, &c) in batch.row_iter().zip(classes) {
            self.entries.push_back((row.to_vec(), c));
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    fn rows(&self, class: Option<Polarity>) -> Vec<&[f64]> {
        self.entries
            .iter()
            .filter(|(_, c)| class.is_none_or(|k| *c == k))
            .map(|(v, _)| v.as_slice())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmClassStats {
    /// `None` for a pooled single Gaussian.
    pub class: Option<Polarity>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: usize,
    pub weight: f64,
    /// Dimensions whose variance was raised to the floor.
    pub degenerate: Vec<usize>,
}

impl GmmClassStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn has_degenerate_dimension(&self) -> bool {
        !self.degenerate.is_empty()
    }

    pub fn log_det(&self) -> f64 {
        self.variance.iter().map(|v| v.ln()).sum()
    }
}

fn class_label(class: Option<Polarity>) -> &'static str {
    class.map_or("pooled", Polarity::name)
}

/// Maximum-likelihood mean and diagonal variance `mean(h²) − mean(h)²`, floored.
pub fn estimate_class_params(class: Option<Polarity>, samples: &Matrix) -> Result<GmmClassStats> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            class: class_label(class),
            count: n,
        });
    }
    let d = samples.cols();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for r in samples.row_iter() {
        for j in 0..d {
            mean[j] += r[j];
            second[j] += r[j] * r[j];
        }
    }
    let inv = 1.0 / n as f64;
    let mut degenerate = Vec::new();
    let variance = (0..d)
        .map(|j| {
            mean[j] *= inv;
            let v = second[j] * inv - mean[j] * mean[j];
            if v < VARIANCE_FLOOR {
                degenerate.push(j);
                VARIANCE_FLOOR
            } else {
                v
            }
        })
        .collect();
    Ok(GmmClassStats {
        class,
        mean,
        variance,
        count: n,
        weight: if class.is_some() { 0.5 } else { 1.0 },
        degenerate,
    })
}

/// Differential entropy of `N(μ, Σ)` in nats: `(k/2) ln(2πe) + ½ ln det Σ`.
pub fn gaussian_entropy(stats: &GmmClassStats) -> f64 {
    0.5 * stats.dim() as f64 * LN_2PI_E + 0.5 * stats.log_det()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Lower and upper bounds on the entropy of an equal-weight two-component mixture:
/// `Σ w_c h_c ≤ H ≤ Σ w_c (h_c − ln w_c)`.
pub fn gmm_entropy_bounds(pos: &GmmClassStats, neg: &GmmClassStats) -> EntropyBounds {
    entropy_bounds_from(gaussian_entropy(pos), gaussian_entropy(neg))
}

pub fn entropy_bounds_from(h_pos: f64, h_neg: f64) -> EntropyBounds {
    let w = 0.5f64;
    let lower = w * h_pos + w * h_neg;
    let upper = w * (h_pos - w.ln()) + w * (h_neg - w.ln());
    EntropyBounds { lower, upper }
}

/// Training-time entropy term `¼ (ln det Σ_pos + ln det Σ_neg)`; the additive
/// `(2πe)^k` constant is dropped.
pub fn entropy_train(pos: &GmmClassStats, neg: &GmmClassStats) -> f64 {
    0.25 * (pos.log_det() + neg.log_det())
}

/// Constant-free entropy of a single pooled Gaussian: `½ ln det Σ`.
pub fn pooled_entropy_train(stats: &GmmClassStats) -> f64 {
    0.5 * stats.log_det()
}

/// How the entropy term is modelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyModel {
    /// One component per polarity class, equal weights.
    #[default]
    PolarityMixture,
    /// One Gaussian over all samples regardless of class.
    Pooled,
}

/// Differentiable entropy term over `current` (rows are this batch's embeddings)
/// together with the detached rows in `memory`.
#[derive(Clone, Debug)]
pub struct EntropyTerm {
    pub node: NodeId,
    /// Samples used per component, pos then neg (or a single pooled count).
    pub counts: Vec<usize>,
}

pub fn entropy_term(
    g: &mut Graph,
    current: NodeId,
    classes: &[Polarity],
    memory: &HistoryMemory,
    model: EntropyModel,
) -> Result<EntropyTerm> {
    let components: Vec<Option<Polarity>> = match model {
        EntropyModel::PolarityMixture => vec![Some(Polarity::Pos), Some(Polarity::Neg)],
        EntropyModel::Pooled => vec![None],
    };
    let coef = 0.5 / components.len() as f64;
    let mut total: Option<NodeId> = None;
    let mut counts = Vec::new();
    for class in components {
        let log_det = component_log_det(g, current, classes, memory, class)?;
        counts.push(log_det.1);
        let term = g.scale(log_det.0, coef);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(EntropyTerm {
        node: total.expect("at least one component"),
        counts,
    })
}

/// Number of samples each component would see without building anything.
pub fn component_counts(classes: &[Polarity], memory: &HistoryMemory, model: EntropyModel) -> Vec<usize> {
    match model {
        EntropyModel::PolarityMixture => [Polarity::Pos, Polarity::Neg]
            .iter()
            .map(|&c| classes.iter().filter(|&&k| k == c).count() + memory.count(c))
            .collect(),
        EntropyModel::Pooled => vec![classes.len() + memory.len()],
    }
}

fn component_log_det(
    g: &mut Graph,
    current: NodeId,
    classes: &[Polarity],
    memory: &HistoryMemory,
    class: Option<Polarity>,
) -> Result<(NodeId, usize)> {
    let idx: Vec<usize> = classes
        .iter()
        .enumerate()
        .filter(|(_, &c)| class.is_none_or(|k| c == k))
        .map(|(i, _)| i)
        .collect();
    let hist = memory.rows(class);
    let n = idx.len() + hist.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            class: class_label(class),
            count: n,
        });
    }
    let mut parts = Vec::with_capacity(2);
    if !idx.is_empty() {
        parts.push(g.gather_rows(current, &idx)?);
    }
    if !hist.is_empty() {
        parts.push(g.constant(Matrix::from_rows(&hist)?));
    }
    let all = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
    let inv = 1.0 / n as f64;
    let sum = g.column_sums(all);
    let mean = g.scale(sum, inv);
    let sq = g.square(all);
    let sq_sum = g.column_sums(sq);
    let second = g.scale(sq_sum, inv);
    let mean_sq = g.square(mean);
    let var = g.sub(second, mean_sq)?;
    let var = g.clamp_min(var, VARIANCE_FLOOR);
    let log_var = g.ln(var);
    Ok((g.sum(log_var), n))
}

/// Sequential training-time entropy values over a stream of batches, estimating
/// from memory ∪ batch and then updating the memory, as the trainer does.
pub fn entropy_stream(
    batches: &[(Matrix, Vec<Polarity>)],
    memory_capacity: usize,
    model: EntropyModel,
) -> Result<Vec<f64>> {
    let mut memory = HistoryMemory::new(memory_capacity);
    let mut out = Vec::with_capacity(batches.len());
    for (rows, classes) in batches {
        let mut g = Graph::new();
        let current = g.constant(rows.clone());
        let term = entropy_term(&mut g, current, classes, &memory, model)?;
        out.push(g.value(term.node).item());
        memory.update(rows, classes);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, Rng};
    use crate::params::{ParamGroup, ParamStore};
    use proptest::{prop_assert, proptest};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn fifo_eviction_and_order() {
        let mut mem = HistoryMemory::with_batches(2, 4);
        let batch = |k: f64| Matrix::from_vec(4, 1, vec![k, k + 0.1, k + 0.2, k + 0.3]).unwrap();
        let cls = [Polarity::Pos, Polarity::Neg, Polarity::Pos, Polarity::Neg];
        mem.update(&batch(1.0), &cls);
        assert_eq!(mem.len(), 4);
        mem.update(&batch(2.0), &cls);
        mem.update(&batch(3.0), &cls);
        assert_eq!(mem.len(), 8);
        let firsts: Vec<f64> = mem.iter().map(|(v, _)| v[0]).collect();
        assert_eq!(firsts, vec![2.0, 2.1, 2.2, 2.3, 3.0, 3.1, 3.2, 3.3]);
        assert_eq!(mem.count(Polarity::Pos), 4);

        let mut none = HistoryMemory::new(0);
        none.update(&batch(1.0), &cls);
        assert!(none.is_empty());
    }

    #[test]
    fn class_params_by_hand() {
        let s = estimate_class_params(Some(Polarity::Pos), &m(&[&[1.0, 2.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(s.mean, vec![2.0, 3.0]);
        assert_eq!(s.variance, vec![1.0, 1.0]);
        assert_eq!(s.weight, 0.5);
        assert!(!s.has_degenerate_dimension());
    }

    #[test]
    fn single_sample_is_insufficient() {
        let r = estimate_class_params(Some(Polarity::Neg), &m(&[&[1.0, 2.0]]));
        assert!(matches!(r, Err(Error::InsufficientSamples { class: "neg", count: 1 })));
    }

    #[test]
    fn constant_dimension_is_floored() {
        let s = estimate_class_params(None, &m(&[&[1.0, 5.0], &[3.0, 5.0], &[2.0, 5.0]])).unwrap();
        assert_eq!(s.variance[1], VARIANCE_FLOOR);
        assert_eq!(s.degenerate, vec![1]);
    }

    fn stats(var: &[f64]) -> GmmClassStats {
        GmmClassStats {
            class: Some(Polarity::Pos),
            mean: vec![0.0; var.len()],
            variance: var.to_vec(),
            count: 10,
            weight: 0.5,
            degenerate: vec![],
        }
    }

    #[test]
    fn gaussian_entropy_values() {
        assert!((gaussian_entropy(&stats(&[1.0])) - 1.41894).abs() < 1e-5);
        assert!((gaussian_entropy(&stats(&[1.0, 1.0])) - 2.83788).abs() < 1e-5);
        assert!((gaussian_entropy(&stats(&[0.5, 2.0])) - 2.83788).abs() < 1e-5);
    }

    #[test]
    fn bounds_arithmetic() {
        let b = entropy_bounds_from(1.41894, 1.41894);
        assert!((b.lower - 1.41894).abs() < 1e-12);
        assert!((b.upper - 2.11209).abs() < 1e-5);
        assert!((b.upper - b.lower - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_train_values() {
        assert_eq!(entropy_train(&stats(&[1.0, 1.0]), &stats(&[1.0, 1.0])), 0.0);
        let v = entropy_train(&stats(&[2.0, 2.0]), &stats(&[3.0, 3.0]));
        assert!((v - 0.25 * 36f64.ln()).abs() < 1e-12);
        assert!((v - 0.89588).abs() < 1e-5);
        // scaling all variances by c shifts by (k/2) ln c
        let c = 7.5f64;
        let scaled = entropy_train(&stats(&[2.0 * c, 2.0 * c]), &stats(&[3.0 * c, 3.0 * c]));
        assert!((scaled - v - c.ln()).abs() < 1e-12);
    }

    fn random_rows(rng: &mut Rng, n: usize, d: usize, shift: f64) -> Matrix {
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.normal() + shift).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn translation_invariance(seed in 0u64..5000, shift in -20.0f64..20.0) {
            let mut rng = Rng::new(seed);
            let a = random_rows(&mut rng, 12, 3, 0.0);
            let b = random_rows(&mut rng, 9, 3, 0.0);
            let base = entropy_train(
                &estimate_class_params(Some(Polarity::Pos), &a).unwrap(),
                &estimate_class_params(Some(Polarity::Neg), &b).unwrap(),
            );
            let moved = entropy_train(
                &estimate_class_params(Some(Polarity::Pos), &a.map(|v| v + shift)).unwrap(),
                &estimate_class_params(Some(Polarity::Neg), &b.map(|v| v + shift)).unwrap(),
            );
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn train_term_plus_constants_is_lower_bound(seed in 0u64..5000, k in 1usize..6) {
            let mut rng = Rng::new(seed);
            let pos = estimate_class_params(Some(Polarity::Pos), &random_rows(&mut rng, 20, k, 1.0)).unwrap();
            let neg = estimate_class_params(Some(Polarity::Neg), &random_rows(&mut rng, 20, k, -1.0)).unwrap();
            let lhs = entropy_train(&pos, &neg) + 0.5 * k as f64 * LN_2PI_E;
            prop_assert!((lhs - gmm_entropy_bounds(&pos, &neg).lower).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_term_matches_value_path() {
        let mut rng = Rng::new(8);
        let batch = random_rows(&mut rng, 6, 3, 0.0);
        let classes = [Polarity::Pos, Polarity::Neg, Polarity::Pos, Polarity::Neg, Polarity::Neg, Polarity::Pos];
        let mut mem = HistoryMemory::new(5);
        let hist = random_rows(&mut rng, 5, 3, 0.5);
        let hist_cls = [Polarity::Pos, Polarity::Pos, Polarity::Neg, Polarity::Neg, Polarity::Neg];
        mem.update(&hist, &hist_cls);

        let mut g = Graph::new();
        let cur = g.constant(batch.clone());
        let term = entropy_term(&mut g, cur, &classes, &mem, EntropyModel::PolarityMixture).unwrap();
        assert_eq!(term.counts, vec![5, 6]);

        let pick = |rows: &Matrix, cls: &[Polarity], c: Polarity| -> Vec<Vec<f64>> {
            rows.row_iter().zip(cls).filter(|(_, &k)| k == c).map(|(r, _)| r.to_vec()).collect()
        };
        let mut pos = pick(&batch, &classes, Polarity::Pos);
        pos.extend(pick(&hist, &hist_cls, Polarity::Pos));
        let mut neg = pick(&batch, &classes, Polarity::Neg);
        neg.extend(pick(&hist, &hist_cls, Polarity::Neg));
        let expected = entropy_train(
            &estimate_class_params(Some(Polarity::Pos), &Matrix::from_rows(&pos).unwrap()).unwrap(),
            &estimate_class_params(Some(Polarity::Neg), &Matrix::from_rows(&neg).unwrap()).unwrap(),
        );
        assert!((g.value(term.node).item() - expected).abs() < 1e-12);

        let mut g = Graph::new();
        let cur = g.constant(batch.clone());
        let pooled = entropy_term(&mut g, cur, &classes, &mem, EntropyModel::Pooled).unwrap();
        let mut all: Vec<Vec<f64>> = batch.row_iter().map(|r| r.to_vec()).collect();
        all.extend(hist.row_iter().map(|r| r.to_vec()));
        let expected = pooled_entropy_train(&estimate_class_params(None, &Matrix::from_rows(&all).unwrap()).unwrap());
        assert!((g.value(pooled.node).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn graph_term_reports_insufficient() {
        let mut g = Graph::new();
        let cur = g.constant(m(&[&[1.0], &[2.0], &[3.0]]));
        let r = entropy_term(
            &mut g,
            cur,
            &[Polarity::Pos, Polarity::Pos, Polarity::Neg],
            &HistoryMemory::new(0),
            EntropyModel::PolarityMixture,
        );
        assert!(matches!(r, Err(Error::InsufficientSamples { class: "neg", count: 1 })));
    }

    #[test]
    fn entropy_term_gradient() {
        let mut rng = Rng::new(4);
        let batch = random_rows(&mut rng, 7, 3, 0.0);
        let classes = [Polarity::Pos, Polarity::Neg, Polarity::Pos, Polarity::Neg, Polarity::Neg, Polarity::Pos, Polarity::Pos];
        let mut mem = HistoryMemory::new(4);
        mem.update(&random_rows(&mut rng, 4, 3, 0.0), &[Polarity::Neg, Polarity::Pos, Polarity::Neg, Polarity::Pos]);
        let mut store = ParamStore::new();
        store.add("h", ParamGroup::VisualEncoder, batch);
        let f = |p: &[Matrix]| {
            let mut s = store.clone();
            s.set_values(p);
            let mut g = Graph::new();
            let h = g.param(&s, s.find("h").unwrap());
            let t = entropy_term(&mut g, h, &classes, &mem, EntropyModel::PolarityMixture)?;
            let grads = g.backward(t.node)?;
            Ok((g.value(t.node).item(), grads.dense(&s)))
        };
        let r = grad_check(f, &store.values(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn estimator_consistency() {
        let mut rng = Rng::new(21);
        let scales: Vec<f64> = (0..8).map(|j| 0.5 + 0.25 * j as f64).collect();
        let data = Matrix::from_vec(
            5000,
            8,
            (0..5000 * 8).map(|i| scales[i % 8] * rng.normal() + 3.0).collect(),
        )
        .unwrap();
        let s = estimate_class_params(None, &data).unwrap();
        for (j, v) in s.variance.iter().enumerate() {
            let truth = scales[j] * scales[j];
            assert!(((v - truth) / truth).abs() < 0.1, "dim {j}: {v} vs {truth}");
        }
    }
}
