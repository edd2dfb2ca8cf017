//! Bayesian models exposed as a prior gradient plus a sum of per-datum
//! likelihood gradients.
//!
//! Data indices are 0-based throughout the crate.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("data index {index} out of range (N = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("data file line {line}: {msg}")]
    Data { line: u64, msg: String },
}

/// The gradient decomposition `∇log π = ∇log P₀ + Σᵢ ∇log Pᵉ(xᵢ|θ)`.
pub trait Model: Sync {
    fn dim(&self) -> usize;
    fn n_data(&self) -> usize;

    /// Writes `∇log P₀(θ)` into `out`.
    fn grad_log_prior(&self, theta: &[f64], out: &mut [f64]);

    /// Adds `∇log Pᵉ(xᵢ|θ)` to `out`.
    fn add_grad_log_elementary(&self, i: usize, theta: &[f64], out: &mut [f64]);

    fn log_prior(&self, theta: &[f64]) -> f64;
    fn log_elementary(&self, i: usize, theta: &[f64]) -> f64;

    fn grad_log_elementary(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.add_grad_log_elementary(i, theta, &mut g);
        g
    }

    fn log_posterior_unnorm(&self, theta: &[f64]) -> f64 {
        let mut acc = self.log_prior(theta);
        for i in 0..self.n_data() {
            acc += self.log_elementary(i, theta);
        }
        acc
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn n_data(&self) -> usize {
        (**self).n_data()
    }
    fn grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        (**self).grad_log_prior(theta, out)
    }
    fn add_grad_log_elementary(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        (**self).add_grad_log_elementary(i, theta, out)
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        (**self).log_prior(theta)
    }
    fn log_elementary(&self, i: usize, theta: &[f64]) -> f64 {
        (**self).log_elementary(i, theta)
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), ModelError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Standard normal prior on every coordinate.
fn std_normal_prior_grad(theta: &[f64], out: &mut [f64]) {
    for (o, t) in out.iter_mut().zip(theta) {
        *o = -t;
    }
}

fn std_normal_log_prior(theta: &[f64]) -> f64 {
    -0.5 * theta.iter().map(|t| t * t).sum::<f64>() - theta.len() as f64 * LN_SQRT_2PI
}

// ---------------------------------------------------------------------------
// Gaussian mean model

/// Unknown mean θ of Gaussian data with known variance σ_x², prior N(0, σ_θ²).
#[derive(Debug, Clone)]
pub struct GaussianMeanModel {
    pub data: Vec<f64>,
    pub sigma_x: f64,
    pub sigma_theta: f64,
    inv_var_x: f64,
    inv_var_theta: f64,
}

impl GaussianMeanModel {
    pub fn new(data: Vec<f64>, sigma_x: f64, sigma_theta: f64) -> Result<Self, ModelError> {
        check_positive("sigma_x", sigma_x)?;
        check_positive("sigma_theta", sigma_theta)?;
        Ok(GaussianMeanModel {
            data,
            sigma_x,
            sigma_theta,
            inv_var_x: 1.0 / (sigma_x * sigma_x),
            inv_var_theta: 1.0 / (sigma_theta * sigma_theta),
        })
    }
}

impl Model for GaussianMeanModel {
    fn dim(&self) -> usize {
        1
    }
    fn n_data(&self) -> usize {
        self.data.len()
    }
    fn grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        out[0] = -theta[0] * self.inv_var_theta;
    }
    #[inline]
    fn add_grad_log_elementary(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        out[0] += (self.data[i] - theta[0]) * self.inv_var_x;
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        let z = theta[0] / self.sigma_theta;
        -0.5 * z * z - self.sigma_theta.ln() - LN_SQRT_2PI
    }
    fn log_elementary(&self, i: usize, theta: &[f64]) -> f64 {
        let z = (self.data[i] - theta[0]) / self.sigma_x;
        -0.5 * z * z - self.sigma_x.ln() - LN_SQRT_2PI
    }
}

/// Closed-form posterior `(μ_post, σ²_post)`.
pub fn gaussian_posterior_params(m: &GaussianMeanModel) -> (f64, f64) {
    let n = m.data.len() as f64;
    let sx2 = m.sigma_x * m.sigma_x;
    let st2 = m.sigma_theta * m.sigma_theta;
    let sum: f64 = m.data.iter().sum();
    let mu = sum / (sx2 / st2 + n);
    let var = 1.0 / (1.0 / st2 + n / sx2);
    (mu, var)
}

/// Unbiased sample variance (1/(N−1) normalisation).
pub fn sample_variance(data: &[f64]) -> Result<f64, ModelError> {
    if data.len() < 2 {
        return Err(ModelError::DegenerateData(format!(
            "need at least 2 data points, got {}",
            data.len()
        )));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    Ok(data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
}

/// `Σ_x = var(x)/σ_x⁴`, constant in θ.
pub fn gaussian_sigma_x(m: &GaussianMeanModel) -> Result<f64, ModelError> {
    Ok(sample_variance(&m.data)? / m.sigma_x.powi(4))
}

// ---------------------------------------------------------------------------
// Two-component mixture

/// `Pᵉ(x|θ) = w N(x; θ₁, σ₁²) + (1−w) N(x; θ₂, σ₂²)` with a standard normal
/// prior on θ = (μ₁, μ₂).
#[derive(Debug, Clone)]
pub struct GaussianMixtureModel {
    pub data: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub w: f64,
    /// `ln w − ln σ₁ − ln √(2π)` and its second-component counterpart.
    c1: f64,
    c2: f64,
    inv_var1: f64,
    inv_var2: f64,
}

impl GaussianMixtureModel {
    pub fn new(data: Vec<f64>, sigma1: f64, sigma2: f64, w: f64) -> Result<Self, ModelError> {
        check_positive("sigma1", sigma1)?;
        check_positive("sigma2", sigma2)?;
        if !(0.0..=1.0).contains(&w) {
            return Err(ModelError::InvalidParameter(format!(
                "mixture weight must lie in [0, 1], got {w}"
            )));
        }
        Ok(GaussianMixtureModel {
            data,
            sigma1,
            sigma2,
            w,
            c1: w.ln() - sigma1.ln() - LN_SQRT_2PI,
            c2: (1.0 - w).ln() - sigma2.ln() - LN_SQRT_2PI,
            inv_var1: 1.0 / (sigma1 * sigma1),
            inv_var2: 1.0 / (sigma2 * sigma2),
        })
    }

    /// Log-weighted component densities at `x`.
    #[inline]
    fn log_terms(&self, x: f64, theta: &[f64]) -> (f64, f64) {
        let u1 = x - theta[0];
        let u2 = x - theta[1];
        let a1 = self.c1 - 0.5 * u1 * u1 * self.inv_var1;
        let a2 = self.c2 - 0.5 * u2 * u2 * self.inv_var2;
        (a1, a2)
    }

    /// Posterior responsibilities of the two components for datum `x`.
    #[inline]
    pub fn responsibilities(&self, x: f64, theta: &[f64]) -> (f64, f64) {
        let (a1, a2) = self.log_terms(x, theta);
        if a1 >= a2 {
            let e = (a2 - a1).exp();
            (1.0 / (1.0 + e), e / (1.0 + e))
        } else {
            let e = (a1 - a2).exp();
            (e / (1.0 + e), 1.0 / (1.0 + e))
        }
    }

    /// Log of the elementary density at an arbitrary `x`.
    pub fn log_density(&self, x: f64, theta: &[f64]) -> f64 {
        let (a1, a2) = self.log_terms(x, theta);
        log_sum_exp2(a1, a2)
    }

    /// Gradient of `log Pᵉ(x|θ)` for an arbitrary `x`.
    #[inline]
    pub fn grad_at(&self, x: f64, theta: &[f64]) -> [f64; 2] {
        let (r1, r2) = self.responsibilities(x, theta);
        [
            r1 * (x - theta[0]) * self.inv_var1,
            r2 * (x - theta[1]) * self.inv_var2,
        ]
    }
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl Model for GaussianMixtureModel {
    fn dim(&self) -> usize {
        2
    }
    fn n_data(&self) -> usize {
        self.data.len()
    }
    fn grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        std_normal_prior_grad(theta, out)
    }
    #[inline]
    fn add_grad_log_elementary(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let g = self.grad_at(self.data[i], theta);
        out[0] += g[0];
        out[1] += g[1];
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        std_normal_log_prior(theta)
    }
    fn log_elementary(&self, i: usize, theta: &[f64]) -> f64 {
        self.log_density(self.data[i], theta)
    }
}

/// Gradient of one mixture datum (free-function form).
pub fn mixture_grad_elementary(m: &GaussianMixtureModel, i: usize, theta: &[f64]) -> [f64; 2] {
    m.grad_at(m.data[i], theta)
}

// ---------------------------------------------------------------------------
// Logistic regression

/// Binary logistic regression with a standard normal prior on the weights.
#[derive(Debug, Clone)]
pub struct LogisticRegressionModel {
    dim: usize,
    /// Row-major `N × d`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

impl LogisticRegressionModel {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidParameter("feature dimension is 0".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(ModelError::InvalidParameter(format!(
                "{} feature values do not fill {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "label {y} is not 0 or 1"
            )));
        }
        Ok(LogisticRegressionModel {
            dim,
            features,
            labels,
        })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn margin(&self, i: usize, theta: &[f64]) -> f64 {
        self.row(i).iter().zip(theta).map(|(z, t)| z * t).sum()
    }

    /// Reads a CSV with the label in the first column and features after it.
    /// A header row is recognised by a non-numeric first cell.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut dim: Option<usize> = None;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let line = k as u64 + 1;
            let rec = rec.map_err(|e| ModelError::Data {
                line,
                msg: e.to_string(),
            })?;
            let first = rec.get(0).unwrap_or("");
            if k == 0 && first.parse::<f64>().is_err() {
                continue;
            }
            if rec.len() < 2 {
                return Err(ModelError::Data {
                    line,
                    msg: "need a label and at least one feature".into(),
                });
            }
            let width = rec.len() - 1;
            match dim {
                None => dim = Some(width),
                Some(d) if d != width => {
                    return Err(ModelError::Data {
                        line,
                        msg: format!("expected {d} features, found {width}"),
                    })
                }
                _ => {}
            }
            let parse = |s: &str| -> Result<f64, ModelError> {
                let v: f64 = s.parse().map_err(|_| ModelError::Data {
                    line,
                    msg: format!("not a number: {s:?}"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ModelError::Data {
                        line,
                        msg: format!("non-finite value {s:?}"),
                    })
                }
            };
            let y = parse(first)?;
            if y != 0.0 && y != 1.0 {
                return Err(ModelError::Data {
                    line,
                    msg: format!("label must be 0 or 1, got {first:?}"),
                });
            }
            labels.push(y);
            for cell in rec.iter().skip(1) {
                features.push(parse(cell)?);
            }
        }
        let Some(dim) = dim else {
            return Err(ModelError::DegenerateData("no data rows".into()));
        };
        Self::new(dim, features, labels)
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        Self::from_csv_reader(bytes)
    }
}

impl Model for LogisticRegressionModel {
    fn dim(&self) -> usize {
        self.dim
    }
    fn n_data(&self) -> usize {
        self.labels.len()
    }
    fn grad_log_prior(&self, theta: &[f64], out: &mut [f64]) {
        std_normal_prior_grad(theta, out)
    }
    #[inline]
    fn add_grad_log_elementary(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let r = self.labels[i] - sigmoid(self.margin(i, theta));
        for (o, z) in out.iter_mut().zip(self.row(i)) {
            *o += r * z;
        }
    }
    fn log_prior(&self, theta: &[f64]) -> f64 {
        std_normal_log_prior(theta)
    }
    fn log_elementary(&self, i: usize, theta: &[f64]) -> f64 {
        let t = self.margin(i, theta);
        self.labels[i] * t - softplus(t)
    }
}

// ---------------------------------------------------------------------------
// Toy model with injected noise

/// Standard normal target whose gradient is corrupted by θ-dependent
/// Gaussian noise of variance `Σ(θ) = α²(1 + δ cos 2πθ)/2`.
#[derive(Debug, Clone, Copy)]
pub struct ToyInjectedNoiseModel {
    pub alpha: f64,
    pub delta: f64,
}

impl ToyInjectedNoiseModel {
    pub fn new(alpha: f64, delta: f64) -> Result<Self, ModelError> {
        check_positive("alpha", alpha)?;
        if !(delta.abs() <= 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "|delta| must be at most 1, got {delta}"
            )));
        }
        Ok(ToyInjectedNoiseModel { alpha, delta })
    }

    pub fn noise_variance(&self, theta: f64) -> f64 {
        let v = self.alpha * self.alpha
            * (1.0 + self.delta * (2.0 * std::f64::consts::PI * theta).cos())
            / 2.0;
        v.max(0.0)
    }

    /// One draw of the noisy force `−θ + √Σ(θ)·G`.
    pub fn force_sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> f64 {
        let g: f64 = StandardNormal.sample(rng);
        -theta + self.noise_variance(theta).sqrt() * g
    }
}

pub fn toy_force_sample<R: Rng + ?Sized>(m: &ToyInjectedNoiseModel, theta: f64, rng: &mut R) -> f64 {
    m.force_sample(theta, rng)
}

// ---------------------------------------------------------------------------
// Seeded dataset generators

pub fn generate_gaussian_data(seed: u64, n: usize, mean: f64, sigma_x: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(mean, sigma_x).expect("sigma_x validated by caller");
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// Draws `n` points from the two-component mixture with means `mu`.
pub fn generate_mixture_data(
    seed: u64,
    n: usize,
    mu: [f64; 2],
    sigma: [f64; 2],
    w: f64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let g: f64 = StandardNormal.sample(&mut rng);
            if u < w {
                mu[0] + sigma[0] * g
            } else {
                mu[1] + sigma[1] * g
            }
        })
        .collect()
}

/// Standard normal features scaled by `feature_scale`, labels drawn from the
/// logistic model with weights `theta_true`.
pub fn generate_logistic_data(
    seed: u64,
    n: usize,
    theta_true: &[f64],
    feature_scale: f64,
) -> LogisticRegressionModel {
    let d = theta_true.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        for _ in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            features.push(feature_scale * g);
        }
        let t: f64 = features[start..]
            .iter()
            .zip(theta_true)
            .map(|(z, w)| z * w)
            .sum();
        let u: f64 = rng.random();
        labels.push(if u < sigmoid(t) { 1.0 } else { 0.0 });
    }
    LogisticRegressionModel::new(d, features, labels).expect("generated data is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd_check<M: Model>(m: &M, theta: &[f64]) {
        let d = m.dim();
        let mut g = vec![0.0; d];
        m.grad_log_prior(theta, &mut g);
        for i in 0..m.n_data() {
            m.add_grad_log_elementary(i, theta, &mut g);
        }
        let h = 1e-6;
        for j in 0..d {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let fd = (m.log_posterior_unnorm(&tp) - m.log_posterior_unnorm(&tm)) / (2.0 * h);
            let scale = g[j].abs().max(1.0);
            assert!(
                (fd - g[j]).abs() <= 1e-4 * scale,
                "coord {j}: analytic {} vs fd {fd}",
                g[j]
            );
        }
    }

    #[test]
    fn posterior_params_examples() {
        let m = GaussianMeanModel::new(vec![0.0; 100], 1.0, 1.0).unwrap();
        let (mu, var) = gaussian_posterior_params(&m);
        assert_eq!(mu, 0.0);
        assert_abs_diff_eq!(var, 1.0 / 101.0, epsilon = 1e-15);

        let mut data = vec![0.0; 100];
        data[0] = 50.5;
        let m = GaussianMeanModel::new(data, 1.0, 1.0).unwrap();
        let (mu, var) = gaussian_posterior_params(&m);
        assert_abs_diff_eq!(mu, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(var, 1.0 / 101.0, epsilon = 1e-15);

        let m = GaussianMeanModel::new(vec![], 1.0, 2.0).unwrap();
        assert_eq!(gaussian_posterior_params(&m), (0.0, 4.0));
    }

    #[test]
    fn sigma_x_examples() {
        let m = GaussianMeanModel::new(vec![-1.0, 1.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_sigma_x(&m).unwrap(), 2.0, epsilon = 1e-15);
        let m = GaussianMeanModel::new(vec![3.0; 3], 0.7, 1.0).unwrap();
        assert_eq!(gaussian_sigma_x(&m).unwrap(), 0.0);
        let m = GaussianMeanModel::new(vec![0.0, 1.0, 2.0, 3.0], 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(gaussian_sigma_x(&m).unwrap(), 5.0 / 3.0, epsilon = 1e-15);
        let m = GaussianMeanModel::new(vec![1.0], 1.0, 1.0).unwrap();
        assert!(matches!(
            gaussian_sigma_x(&m),
            Err(ModelError::DegenerateData(_))
        ));
    }

    #[test]
    fn mixture_degenerate_weights() {
        let theta = [0.3, -0.2];
        let m = GaussianMixtureModel::new(vec![1.1], 0.4, 0.5, 1.0).unwrap();
        let g = mixture_grad_elementary(&m, 0, &theta);
        assert_abs_diff_eq!(g[0], (1.1 - 0.3) / 0.16, epsilon = 1e-12);
        assert_eq!(g[1], 0.0);
        let m = GaussianMixtureModel::new(vec![1.1], 0.4, 0.5, 0.0).unwrap();
        let g = mixture_grad_elementary(&m, 0, &theta);
        assert_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[1], (1.1 + 0.2) / 0.25, epsilon = 1e-12);
    }

    #[test]
    fn mixture_symmetric_point() {
        let m = GaussianMixtureModel::new(vec![0.6], 0.4, 0.4, 0.5).unwrap();
        let (r1, r2) = m.responsibilities(0.6, &[0.6, 0.6]);
        assert_eq!((r1, r2), (0.5, 0.5));
        let g = mixture_grad_elementary(&m, 0, &[0.6, 0.6]);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let m = GaussianMixtureModel::new(vec![], 0.4, 0.4, 0.4).unwrap();
        let theta = [1.0, 0.5];
        let (lo, hi, k) = (-6.0, 8.0, 140_000);
        let h = (hi - lo) / k as f64;
        let total: f64 = (0..k)
            .map(|j| m.log_density(lo + (j as f64 + 0.5) * h, &theta).exp() * h)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn mixture_far_tail_is_finite() {
        let m = GaussianMixtureModel::new(vec![16.0, -16.0], 0.4, 0.4, 0.4).unwrap();
        let theta = [0.0, 0.0];
        for i in 0..2 {
            assert!(m.log_elementary(i, &theta).is_finite());
            assert!(m.grad_log_elementary(i, &theta).iter().all(|g| g.is_finite()));
        }
        let m = GaussianMixtureModel::new(vec![16.0], 0.4, 0.5, 0.4).unwrap();
        let g = m.grad_log_elementary(0, &theta);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn finite_difference_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gauss =
            GaussianMeanModel::new(generate_gaussian_data(1, 30, 0.3, 1.0), 1.0, 2.0).unwrap();
        let mix = GaussianMixtureModel::new(
            generate_mixture_data(2, 40, [1.0, 0.5], [0.4, 0.4], 0.4),
            0.4,
            0.4,
            0.4,
        )
        .unwrap();
        let logit = generate_logistic_data(3, 50, &[0.5, -1.0, 0.25], 1.0);
        for _ in 0..20 {
            let t: f64 = rng.random_range(-2.0..2.0);
            fd_check(&gauss, &[t]);
            let t2 = [rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)];
            fd_check(&mix, &t2);
            let t3 = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            fd_check(&logit, &t3);
        }
    }

    #[test]
    fn logistic_single_datum() {
        let m = LogisticRegressionModel::new(2, vec![1.0, 0.0], vec![1.0]).unwrap();
        let g = m.grad_log_elementary(0, &[0.0, 0.0]);
        assert_eq!(g, vec![0.5, 0.0]);
    }

    #[test]
    fn logistic_csv_with_and_without_header() {
        let a = LogisticRegressionModel::from_csv_bytes(b"y,z1,z2\n1,0.5,2\n0,-1,3\n").unwrap();
        let b = LogisticRegressionModel::from_csv_bytes(b"1,0.5,2\n0,-1,3\n").unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, vec![1.0, 0.0]);
        assert_eq!(a.dim(), 2);
        assert!(LogisticRegressionModel::from_csv_bytes(b"2,0.5\n").is_err());
        assert!(LogisticRegressionModel::from_csv_bytes(b"1,0.5\n0,1,2\n").is_err());
        assert!(LogisticRegressionModel::from_csv_bytes(b"").is_err());
        assert!(LogisticRegressionModel::from_csv_bytes(b"1,nan\n").is_err());
    }

    #[test]
    fn toy_force_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ToyInjectedNoiseModel::new(50.0, 1.0).unwrap();
        assert_eq!(m.force_sample(0.5, &mut rng), -0.5);

        let draws: Vec<f64> = (0..100_000).map(|_| m.force_sample(0.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() <= 3.0 * 50.0 / (1e5f64).sqrt(), "mean {mean}");

        let m = ToyInjectedNoiseModel::new(2.0, 0.0).unwrap();
        for theta in [0.0, 0.3] {
            let draws: Vec<f64> = (0..100_000)
                .map(|_| m.force_sample(theta, &mut rng) + theta)
                .collect();
            let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
            assert!((var - 2.0).abs() <= 0.1, "var {var}");
        }
        assert!(ToyInjectedNoiseModel::new(1.0, 1.5).is_err());
    }
}
