//! Synthetic ground truth: Gaussian pairs with closed-form mutual information, a
//! Monte-Carlo entropy estimator, diagonal Gaussian mixtures, and a latent-factor
//! sentiment dataset.

use serde::{Deserialize, Serialize};

use crate::encoders::{RawSample, TextInput};
use crate::error::{Error, Result};
use crate::mi_ba::{fit_predictor, i_ba, FitConfig, ModalityPair, VariationalPredictor};
use crate::numeric::{Matrix, Rng, LN_2PI, LN_2PI_E};
use crate::par::{self, Execution};
use crate::params::ParamStore;

/// Per-dimension correlated pair: `(X_j, Y_j)` bivariate normal with correlation `rho`,
/// dimensions independent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPairSpec {
    pub dim: usize,
    pub rho: f64,
    pub var_x: f64,
    pub var_y: f64,
}

impl GaussianPairSpec {
    pub fn new(dim: usize, rho: f64) -> Self {
        Self {
            dim,
            rho,
            var_x: 1.0,
            var_y: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {}", self.rho)));
        }
        if !(self.var_x > 0.0 && self.var_y > 0.0) {
            return Err(Error::InvalidArgument("marginal variances must be positive".into()));
        }
        Ok(())
    }

    /// Differential entropy of the `Y` marginal.
    pub fn entropy_y(&self) -> f64 {
        0.5 * self.dim as f64 * (LN_2PI_E + self.var_y.ln())
    }
}

pub fn gen_gaussian_pair(spec: &GaussianPairSpec, rng: &mut Rng, n: usize) -> Result<(Matrix, Matrix)> {
    spec.validate()?;
    let k = spec.dim;
    let (sx, sy) = (spec.var_x.sqrt(), spec.var_y.sqrt());
    let c = (1.0 - spec.rho * spec.rho).sqrt();
    let mut x = Matrix::zeros(n, k);
    let mut y = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let a = rng.normal();
            let b = rng.normal();
            x[(i, j)] = sx * a;
            y[(i, j)] = sy * (spec.rho * a + c * b);
        }
    }
    Ok((x, y))
}

/// `−(k/2) ln(1 − ρ²)` nats.
pub fn true_gaussian_mi(spec: &GaussianPairSpec) -> f64 {
    // adding 0.0 turns −0 into +0 for ρ = 0
    -0.5 * spec.dim as f64 * (1.0 - spec.rho * spec.rho).ln() + 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub n: usize,
}

pub const MC_CHUNK: usize = 4096;
pub const MC_MIN_SAMPLES: usize = 1000;

/// `−(1/n) Σ log p(x_i)` with `x_i` drawn by `sampler`. Each fixed-size chunk draws
/// from its own stream derived from `seed`, so the result does not depend on `exec`.
pub fn mc_entropy<D, S>(log_density: D, sampler: S, n: usize, seed: u64, exec: Execution) -> Result<McEstimate>
where
    D: Fn(&[f64]) -> f64 + Sync + Send,
    S: Fn(&mut Rng) -> Vec<f64> + Sync + Send,
{
    if n < MC_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo entropy needs at least {MC_MIN_SAMPLES} samples, got {n}"
        )));
    }
    let root = Rng::new(seed);
    let bounds = par::chunks(n, MC_CHUNK);
    let partial = par::map(exec, &bounds, |&(s, e)| {
        let mut rng = root.derive(s as u64);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in s..e {
            let v = -log_density(&sampler(&mut rng));
            sum += v;
            sq += v * v;
        }
        (sum, sq)
    });
    let (sum, sq) = partial.iter().fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    if !mean.is_finite() {
        return Err(Error::NonFiniteLoss("Monte-Carlo entropy".into()));
    }
    Ok(McEstimate {
        estimate: mean,
        standard_error: (var / nf).sqrt(),
        n,
    })
}

/// Mixture of diagonal Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl DiagonalGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidArgument("mixture needs matching weights, means and variances".into()));
        }
        let d = means[0].len();
        if means.iter().chain(&variances).any(|v| v.len() != d) || d == 0 {
            return Err(Error::DimensionMismatch("mixture components differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must be positive and sum to 1".into()));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = (0..self.weights.len())
            .map(|c| {
                let quad: f64 = x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((x, m), v)| (x - m) * (x - m) / v + v.ln() + LN_2PI)
                    .sum();
                self.weights[c].ln() - 0.5 * quad
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut c = self.weights.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                c = k;
                break;
            }
        }
        self.means[c]
            .iter()
            .zip(&self.variances[c])
            .map(|(m, v)| m + v.sqrt() * rng.normal())
            .collect()
    }

    pub fn component_entropy(&self, c: usize) -> f64 {
        0.5 * self.variances[c].iter().map(|v| LN_2PI_E + v.ln()).sum::<f64>()
    }

    /// Weighted component entropies and that plus the mixing-weight entropy.
    pub fn entropy_bounds(&self) -> (f64, f64) {
        let lower: f64 = (0..self.weights.len())
            .map(|c| self.weights[c] * self.component_entropy(c))
            .sum();
        let h_w: f64 = -self.weights.iter().map(|w| w * w.ln()).sum::<f64>();
        (lower, lower + h_w)
    }
}

/// Latent-factor multimodal sentiment data. Every sample draws a shared latent `u`
/// and per-modality nuisance factors; each modality is a noisy linear readout of
/// both over time, and the label depends on `u` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthMsaSpec {
    pub latent_dim: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    /// Observation noise per modality, `(t, v, a)`.
    pub noise: [f64; 3],
    /// Private factors per modality that do not affect the label.
    pub nuisance_dim: usize,
    pub nuisance_scale: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Label map `wᵀu`; `None` spreads `label_scale` evenly over the latent.
    pub label_weights: Option<Vec<f64>>,
    pub label_scale: f64,
    pub label_noise: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SynthMsaSpec {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            text_dim: 8,
            visual_dim: 6,
            acoustic_dim: 4,
            noise: [0.5, 0.8, 0.8],
            nuisance_dim: 2,
            nuisance_scale: 1.0,
            min_len: 3,
            max_len: 6,
            label_weights: None,
            label_scale: 1.5,
            label_noise: 0.1,
            n_train: 2000,
            n_val: 250,
            n_test: 250,
        }
    }
}

impl SynthMsaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.text_dim == 0 || self.visual_dim == 0 || self.acoustic_dim == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 ≤ min_len ≤ max_len".into()));
        }
        if self.noise.iter().chain([&self.nuisance_scale, &self.label_noise]).any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if let Some(w) = &self.label_weights {
            if w.len() != self.latent_dim {
                return Err(Error::Config(format!(
                    "label_weights has {} entries for latent_dim {}",
                    w.len(),
                    self.latent_dim
                )));
            }
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.label_weights
            .clone()
            .unwrap_or_else(|| vec![self.label_scale / (self.latent_dim as f64).sqrt(); self.latent_dim])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<RawSample>,
    pub val: Vec<RawSample>,
    pub test: Vec<RawSample>,
}

struct Layout {
    readout: [Matrix; 3],
    nuisance: [Matrix; 3],
}

fn random_matrix(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| scale * rng.normal()).collect()).expect("shape")
}

fn gen_sample(spec: &SynthMsaSpec, layout: &Layout, w: &[f64], id: String, rng: &mut Rng) -> RawSample {
    let u: Vec<f64> = (0..spec.latent_dim).map(|_| rng.normal()).collect();
    let signal = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    let label = (signal.clamp(-3.0, 3.0) + spec.label_noise * rng.normal()).clamp(-3.0, 3.0);
    let mut seqs = Vec::with_capacity(3);
    for m in 0..3 {
        let v: Vec<f64> = (0..spec.nuisance_dim).map(|_| rng.normal()).collect();
        let len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
        let a = &layout.readout[m];
        let b = &layout.nuisance[m];
        let d = a.cols();
        let mut base = vec![0.0; d];
        for (j, bj) in base.iter_mut().enumerate() {
            *bj = (0..spec.latent_dim).map(|k| u[k] * a[(k, j)]).sum::<f64>()
                + (0..spec.nuisance_dim).map(|k| v[k] * b[(k, j)]).sum::<f64>();
        }
        let mut seq = Matrix::zeros(len, d);
        for t in 0..len {
            for j in 0..d {
                seq[(t, j)] = base[j] + spec.noise[m] * rng.normal();
            }
        }
        seqs.push(seq);
    }
    let acoustic = seqs.pop().expect("three");
    let visual = seqs.pop().expect("three");
    let text = seqs.pop().expect("three");
    RawSample {
        id,
        label,
        text: TextInput::Vectors(text),
        visual,
        acoustic,
    }
}

/// Draws the readout layout from `rng`, then every sample from its own derived stream.
pub fn gen_msa_dataset(spec: &SynthMsaSpec, rng: &mut Rng) -> Result<Splits> {
    spec.validate()?;
    let dims = [spec.text_dim, spec.visual_dim, spec.acoustic_dim];
    let ls = 1.0 / (spec.latent_dim as f64).sqrt();
    let ns = spec.nuisance_scale / (spec.nuisance_dim.max(1) as f64).sqrt();
    let layout = Layout {
        readout: dims.map(|d| random_matrix(rng, spec.latent_dim, d, ls)),
        nuisance: dims.map(|d| random_matrix(rng, spec.nuisance_dim, d, ns)),
    };
    let root = Rng::new(rng.next_u64());
    let w = spec.weights();
    let total = spec.n_train + spec.n_val + spec.n_test;
    let samples = par::map_range(Execution::default(), total, |i| {
        let (split, k) = if i < spec.n_train {
            ("train", i)
        } else if i < spec.n_train + spec.n_val {
            ("val", i - spec.n_train)
        } else {
            ("test", i - spec.n_train - spec.n_val)
        };
        gen_sample(spec, &layout, &w, format!("{split}-{k:05}"), &mut root.derive(i as u64))
    });
    let mut it = samples.into_iter();
    Ok(Splits {
        train: it.by_ref().take(spec.n_train).collect(),
        val: it.by_ref().take(spec.n_val).collect(),
        test: it.collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiOracleReport {
    pub true_mi: f64,
    pub i_ba: f64,
    pub i_ba_se: f64,
    pub infonce: f64,
    /// `log N` for the InfoNCE batch size.
    pub infonce_ceiling: f64,
    pub gap_ba: f64,
    pub gap_infonce: f64,
}

pub const INFONCE_BATCH: usize = 128;

/// Fits a predictor on `n` fresh pairs, then scores a second `n`-sample draw: the
/// bound `E log q + H(Y)` with analytic `H(Y)`, and InfoNCE over batches with the
/// critic `log q(y|x) − log p̂(y)`, where `p̂` is a diagonal Gaussian fitted to the
/// evaluation `y` sample.
pub fn mi_oracle(spec: &GaussianPairSpec, n: usize, fit: FitConfig, hidden: usize, seed: u64) -> Result<MiOracleReport> {
    spec.validate()?;
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let root = Rng::new(seed);
    let (x, y) = gen_gaussian_pair(spec, &mut root.derive(0), n)?;
    let (xe, ye) = gen_gaussian_pair(spec, &mut root.derive(1), n)?;
    let mut store = ParamStore::new();
    let k = spec.dim;
    let pred = VariationalPredictor::new(&mut store, &mut root.derive(2), ModalityPair::TV, k, k, hidden);
    fit_predictor(&pred, &mut store, &x, &y, fit, &mut root.derive(3))?;
    let est = i_ba(&pred, &store, &xe, &ye, spec.entropy_y())?;

    let means = ye.column_means();
    let vars: Vec<f64> = (0..k)
        .map(|j| ye.row_iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let batch = INFONCE_BATCH.min(n);
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, e) in par::chunks(n, batch) {
        if e - s < batch {
            break;
        }
        let idx: Vec<usize> = (s..e).collect();
        let xb = xe.select_rows(&idx);
        let yb = ye.select_rows(&idx);
        let b = e - s;
        // critic[i][j] = f(x_i, y_j)
        let (mu, var) = predict_all(&pred, &store, &xb)?;
        let mut critic = Matrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                let yj = yb.row(j);
                let lq = crate::mi_ba::gaussian_log_density(yj, mu.row(i), var.row(i));
                let lp = crate::mi_ba::gaussian_log_density(yj, &means, &vars);
                critic[(i, j)] = lq - lp;
            }
        }
        for i in 0..b {
            let row = critic.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += row[i] - (lse - (b as f64).ln());
            count += 1;
        }
    }
    let infonce = total / count as f64;
    let true_mi = true_gaussian_mi(spec);
    Ok(MiOracleReport {
        true_mi,
        i_ba: est.i_ba,
        i_ba_se: est.standard_error,
        infonce,
        infonce_ceiling: (batch as f64).ln(),
        gap_ba: true_mi - est.i_ba,
        gap_infonce: true_mi - infonce,
    })
}

fn predict_all(pred: &VariationalPredictor, store: &ParamStore, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let mut g = crate::graph::Graph::new();
    let xn = g.constant(x.clone());
    let (mu, var) = pred.predict(&mut g, store, xn, crate::nn::Weights::Frozen)?;
    Ok((g.value(mu).clone(), g.value(var).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(x: &Matrix, y: &Matrix, j: usize) -> f64 {
        let n = x.rows() as f64;
        let (mx, my) = (x.column_means()[j], y.column_means()[j]);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..x.rows() {
            let (a, b) = (x[(i, j)] - mx, y[(i, j)] - my);
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        let _ = n;
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn pair_correlations_and_variances() {
        let mut rng = Rng::new(1);
        let (x, y) = gen_gaussian_pair(&GaussianPairSpec::new(1, 0.0), &mut rng, 10_000).unwrap();
        assert!(corr(&x, &y, 0).abs() < 0.05);
        let (x, y) = gen_gaussian_pair(&GaussianPairSpec::new(3, 0.9), &mut rng, 10_000).unwrap();
        for j in 0..3 {
            let r = corr(&x, &y, j);
            assert!((0.88..=0.92).contains(&r), "{r}");
        }
        let spec = GaussianPairSpec {
            var_x: 2.0,
            var_y: 0.5,
            ..GaussianPairSpec::new(2, 0.3)
        };
        let (x, y) = gen_gaussian_pair(&spec, &mut rng, 10_000).unwrap();
        for j in 0..2 {
            let vx = x.row_iter().map(|r| r[j] * r[j]).sum::<f64>() / 10_000.0;
            let vy = y.row_iter().map(|r| r[j] * r[j]).sum::<f64>() / 10_000.0;
            assert!((vx / 2.0 - 1.0).abs() < 0.05 && (vy / 0.5 - 1.0).abs() < 0.05);
        }
        assert!(gen_gaussian_pair(&GaussianPairSpec::new(1, 1.0), &mut rng, 1).is_err());
    }

    #[test]
    fn closed_form_mi() {
        assert_eq!(true_gaussian_mi(&GaussianPairSpec::new(3, 0.0)).to_bits(), 0f64.to_bits());
        assert!((true_gaussian_mi(&GaussianPairSpec::new(1, 0.9)) - 0.83037).abs() < 1e-5);
        let four = true_gaussian_mi(&GaussianPairSpec::new(4, 0.9));
        assert!((four - 4.0 * true_gaussian_mi(&GaussianPairSpec::new(1, 0.9))).abs() < 1e-12);
        // 4 × 0.83037 = 3.32149 carries the rounding of the one-dimensional value
        assert!((four - 3.321462).abs() < 1e-6);
        assert!(true_gaussian_mi(&GaussianPairSpec::new(2, -0.4)) > 0.0);
    }

    #[test]
    fn mc_entropy_of_normals() {
        let one = mc_entropy(
            |x| -0.5 * (x[0] * x[0] + LN_2PI),
            |r| vec![r.normal()],
            100_000,
            3,
            Execution::Parallel,
        )
        .unwrap();
        assert!((one.estimate - 1.41894).abs() < 0.01, "{one:?}");
        assert!((one.estimate - 0.5 * LN_2PI_E).abs() < 3.0 * one.standard_error + 1e-3);
        let two = mc_entropy(
            |x| -0.5 * (x[0] * x[0] + x[1] * x[1] + 2.0 * LN_2PI),
            |r| vec![r.normal(), r.normal()],
            100_000,
            4,
            Execution::Sequential,
        )
        .unwrap();
        assert!((two.estimate - 2.838).abs() < 0.02);
        assert!(mc_entropy(|_| 0.0, |_| vec![0.0], 999, 0, Execution::Sequential).is_err());
    }

    #[test]
    fn mc_entropy_is_execution_independent() {
        let f = |e| mc_entropy(|x| -x[0].abs(), |r| vec![r.normal()], 20_000, 9, e).unwrap();
        let a = f(Execution::Sequential);
        let b = f(Execution::Parallel);
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.standard_error.to_bits(), b.standard_error.to_bits());
    }

    #[test]
    fn separated_mixture_reaches_upper_bound() {
        let gmm = DiagonalGmm::new(vec![0.5, 0.5], vec![vec![-10.0], vec![10.0]], vec![vec![1.0], vec![1.0]]).unwrap();
        let (lo, hi) = gmm.entropy_bounds();
        assert!((hi - lo - 2f64.ln()).abs() < 1e-12);
        let est = mc_entropy(|x| gmm.log_density(x), |r| gmm.sample(r), 100_000, 5, Execution::Parallel).unwrap();
        assert!((est.estimate - hi).abs() < 3.0 * est.standard_error + 1e-3, "{est:?} vs {hi}");

        let same = DiagonalGmm::new(vec![0.5, 0.5], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).unwrap();
        let est = mc_entropy(|x| same.log_density(x), |r| same.sample(r), 50_000, 6, Execution::Parallel).unwrap();
        assert!((est.estimate - same.entropy_bounds().0).abs() < 3.0 * est.standard_error + 1e-3);
    }

    fn small_spec() -> SynthMsaSpec {
        SynthMsaSpec {
            n_train: 200,
            n_val: 20,
            n_test: 30,
            ..SynthMsaSpec::default()
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let spec = small_spec();
        let a = gen_msa_dataset(&spec, &mut Rng::new(7)).unwrap();
        let b = gen_msa_dataset(&spec, &mut Rng::new(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (200, 20, 30));
        for s in a.train.iter().chain(&a.test) {
            assert!((-3.0..=3.0).contains(&s.label));
            assert!((3..=6).contains(&s.visual.rows()));
            assert_eq!(s.acoustic.cols(), 4);
            s.validate().unwrap();
        }
        let c = gen_msa_dataset(&spec, &mut Rng::new(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_balance() {
        let spec = SynthMsaSpec {
            n_train: 2000,
            n_val: 0,
            n_test: 0,
            ..SynthMsaSpec::default()
        };
        let d = gen_msa_dataset(&spec, &mut Rng::new(11)).unwrap();
        let pos = d.train.iter().filter(|s| s.label >= 0.0).count() as f64 / 2000.0;
        assert!((0.45..=0.55).contains(&pos), "{pos}");
    }

    #[test]
    fn noiseless_text_is_linearly_sufficient() {
        let spec = SynthMsaSpec {
            noise: [0.0; 3],
            nuisance_scale: 0.0,
            label_noise: 0.0,
            n_train: 500,
            n_val: 0,
            n_test: 200,
            ..SynthMsaSpec::default()
        };
        let d = gen_msa_dataset(&spec, &mut Rng::new(12)).unwrap();
        let feats = |s: &RawSample| {
            let TextInput::Vectors(m) = &s.text else { unreachable!() };
            let mut f = m.column_means();
            f.push(1.0);
            f
        };
        // normal equations solved through the Cholesky factor
        let p = spec.text_dim + 1;
        let mut xtx = Matrix::zeros(p, p);
        let mut xty = vec![0.0; p];
        for s in &d.train {
            let f = feats(s);
            for i in 0..p {
                xty[i] += f[i] * s.label;
                for j in 0..p {
                    xtx[(i, j)] += f[i] * f[j];
                }
            }
        }
        for i in 0..p {
            xtx[(i, i)] += 1e-9;
        }
        let l = crate::numeric::cholesky(&xtx).unwrap();
        let mut z = vec![0.0; p];
        for i in 0..p {
            z[i] = (xty[i] - (0..i).map(|k| l[(i, k)] * z[k]).sum::<f64>()) / l[(i, i)];
        }
        let mut beta = vec![0.0; p];
        for i in (0..p).rev() {
            beta[i] = (z[i] - (i + 1..p).map(|k| l[(k, i)] * beta[k]).sum::<f64>()) / l[(i, i)];
        }
        let err: f64 = d
            .test
            .iter()
            .map(|s| (feats(s).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() - s.label).abs())
            .sum::<f64>()
            / d.test.len() as f64;
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn oracle_report_at_zero_correlation() {
        let fit = FitConfig { steps: 200, ..FitConfig::default() };
        let r = mi_oracle(&GaussianPairSpec::new(1, 0.0), 1000, fit, 16, 1).unwrap();
        assert_eq!(r.true_mi, 0.0);
        assert!(r.infonce <= r.infonce_ceiling + 1e-9);
        assert!(r.i_ba < 0.05 + 3.0 * r.i_ba_se, "{r:?}");
    }
}
