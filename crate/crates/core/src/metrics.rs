//! Regression and polarity-classification metrics for sentiment scores in `[-3, 3]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub corr: f64,
    pub acc7: f64,
    /// Binary accuracy with classes `≥ 0` / `< 0` over all samples.
    pub acc2_nonneg: f64,
    /// Binary accuracy with classes `> 0` / `< 0`, zero-label samples excluded.
    pub acc2_pos: f64,
    pub f1_nonneg: f64,
    pub f1_pos: f64,
}

/// Seven-way bin: clamp to `[-3, 3]`, round half away from zero.
pub fn bin7(value: f64) -> i32 {
    value.clamp(-3.0, 3.0).round() as i32
}

pub fn mae(preds: &[f64], truths: &[f64]) -> f64 {
    preds.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Accuracy and positive-class F1 of boolean predictions.
fn binary(pairs: impl Iterator<Item = (bool, bool)>) -> (f64, f64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, t) in pairs {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = (tp + fp + fn_ + tn) as f64;
    let acc = (tp + tn) as f64 / n;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    (acc, f1)
}

pub fn compute_metrics(preds: &[f64], truths: &[f64]) -> Result<MetricReport> {
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
    let pairs = || preds.iter().copied().zip(truths.iter().copied());
    let (acc2_nonneg, f1_nonneg) = binary(pairs().map(|(p, t)| (p >= 0.0, t >= 0.0)));
    if !truths.iter().any(|&t| t != 0.0) {
        return Err(Error::EmptyAfterExclusion);
    }
    let (acc2_pos, f1_pos) = binary(pairs().filter(|&(_, t)| t != 0.0).map(|(p, t)| (p > 0.0, t > 0.0)));
    let acc7 = pairs().filter(|&(p, t)| bin7(p) == bin7(t)).count() as f64 / preds.len() as f64;
    Ok(MetricReport {
        mae: mae(preds, truths),
        corr: pearson(preds, truths)?,
        acc7,
        acc2_nonneg,
        acc2_pos,
        f1_nonneg,
        f1_pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    #[test]
    fn bin7_rule() {
        assert_eq!(bin7(0.4), 0);
        assert_eq!(bin7(-3.6), -3);
        assert_eq!(bin7(2.5), 3);
        assert_eq!(bin7(-2.5), -3);
        assert_eq!(bin7(-0.5), -1);
        assert_eq!(bin7(7.0), 3);
    }

    #[test]
    fn perfect_predictions() {
        let v = [1.0, -1.0, 2.0];
        let r = compute_metrics(&v, &v).unwrap();
        assert_eq!(r.mae, 0.0);
        assert!((r.corr - 1.0).abs() < 1e-12);
        for x in [r.acc7, r.acc2_nonneg, r.acc2_pos, r.f1_nonneg, r.f1_pos] {
            assert_eq!(x, 1.0);
        }
    }

    #[test]
    fn error_cases() {
        assert!((mae(&[1.0, 2.0], &[0.0, 0.0]) - 1.5).abs() < 1e-15);
        assert!(matches!(compute_metrics(&[1.0, 2.0], &[0.0, 0.0]), Err(Error::EmptyAfterExclusion)));
        assert!(matches!(compute_metrics(&[1.0, 1.0], &[0.5, -1.0]), Err(Error::ZeroVariance)));
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn permutation_invariance_and_convention_agreement() {
        let mut rng = Rng::new(3);
        let p: Vec<f64> = (0..50).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let a = compute_metrics(&p, &t).unwrap();
        let mut idx: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut idx);
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let tt: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
        let b = compute_metrics(&pp, &tt).unwrap();
        assert!((a.mae - b.mae).abs() < 1e-12 && (a.corr - b.corr).abs() < 1e-12);
        assert_eq!((a.acc7, a.acc2_pos, a.f1_pos), (b.acc7, b.acc2_pos, b.f1_pos));
        // no zero labels or predictions: both conventions coincide
        assert_eq!(a.acc2_nonneg, a.acc2_pos);
        assert_eq!(a.f1_nonneg, a.f1_pos);
    }

    #[test]
    fn zero_valued_entries_follow_each_convention() {
        let p = [0.0, 1.0, -1.0, 0.0];
        let t = [0.0, 1.0, -1.0, -2.0];
        let r = compute_metrics(&p, &t).unwrap();
        // nonneg: (T,T) (T,T) (F,F) (T,F) → 3/4
        assert_eq!(r.acc2_nonneg, 0.75);
        // pos: first sample dropped; (F,F)... zero prediction counts as negative
        assert_eq!(r.acc2_pos, 1.0);
        assert_eq!(r.f1_pos, 1.0);
        let none = compute_metrics(&[-1.0, -2.0], &[1.0, -1.0]).unwrap();
        assert_eq!(none.f1_pos, 0.0);
    }
}
