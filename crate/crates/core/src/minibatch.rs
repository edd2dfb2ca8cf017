//! The mini-batch gradient estimator `F̂_n`, its exact second-order
//! statistics and the standardised residual `Z`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_inv_sqrt, LinalgError, SymMatrix};
use crate::models::{Model, ModelError, ToyInjectedNoiseModel};
use crate::rng::ChainRng;

/// Eigenvalue floor below which `Σ_x` is treated as singular.
pub const SINGULAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("data index {index} out of range (N = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("enumeration needs N <= 8 and n <= 3 or a full batch (got N = {n_data}, n = {n})")]
    TooLargeToEnumerate { n_data: usize, n: usize },
    #[error("gradient covariance is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { min_eigenvalue: f64 },
    #[error("full batch: the estimator has no noise (epsilon = 0)")]
    FullBatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<ModelError> for BatchError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::IndexOutOfRange { index, n } => BatchError::IndexOutOfRange { index, n },
            other => BatchError::DegenerateData(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    WithReplacement,
    WithoutReplacement,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::WithReplacement => "with_replacement",
            SamplingMode::WithoutReplacement => "without_replacement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchScheme {
    pub n: usize,
    pub mode: SamplingMode,
}

impl BatchScheme {
    pub fn new(n: usize, mode: SamplingMode) -> Self {
        BatchScheme { n, mode }
    }

    pub fn full(n_data: usize) -> Self {
        BatchScheme::new(n_data, SamplingMode::WithoutReplacement)
    }

    pub fn validate(&self, n_data: usize) -> Result<(), BatchError> {
        if n_data < 1 {
            return Err(BatchError::InvalidBatch("the dataset is empty".into()));
        }
        if self.n < 1 {
            return Err(BatchError::InvalidBatch("batch size must be at least 1".into()));
        }
        if self.mode == SamplingMode::WithoutReplacement && self.n > n_data {
            return Err(BatchError::InvalidBatch(format!(
                "batch size {} exceeds N = {n_data} without replacement",
                self.n
            )));
        }
        Ok(())
    }

    pub fn is_full_batch(&self, n_data: usize) -> bool {
        self.mode == SamplingMode::WithoutReplacement && self.n == n_data
    }
}

/// Variance amplification factor `ε(n)`.
pub fn epsilon(n_data: usize, scheme: BatchScheme) -> Result<f64, BatchError> {
    scheme.validate(n_data)?;
    let big = n_data as f64;
    let n = scheme.n as f64;
    Ok(match scheme.mode {
        SamplingMode::WithReplacement => big * (big - 1.0) / n,
        SamplingMode::WithoutReplacement => big * (big - n) / n,
    })
}

/// Reusable index sampler. Without replacement it runs a partial
/// Fisher–Yates shuffle on a persistent permutation; a full batch returns
/// `0..N` in order and consumes no randomness.
#[derive(Debug, Clone)]
pub struct IndexSampler {
    n_data: usize,
    scheme: BatchScheme,
    perm: Vec<usize>,
}

impl IndexSampler {
    pub fn new(n_data: usize, scheme: BatchScheme) -> Result<Self, BatchError> {
        scheme.validate(n_data)?;
        let perm = if scheme.mode == SamplingMode::WithoutReplacement {
            (0..n_data).collect()
        } else {
            Vec::new()
        };
        Ok(IndexSampler {
            n_data,
            scheme,
            perm,
        })
    }

    pub fn scheme(&self) -> BatchScheme {
        self.scheme
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        let big = self.n_data;
        match self.scheme.mode {
            SamplingMode::WithReplacement if big <= u32::MAX as usize => {
                let b = big as u32;
                for _ in 0..self.scheme.n {
                    out.push(rng.random_range(0..b) as usize);
                }
            }
            SamplingMode::WithReplacement => {
                for _ in 0..self.scheme.n {
                    out.push(rng.random_range(0..big));
                }
            }
            SamplingMode::WithoutReplacement if self.scheme.n == big => {
                out.extend(0..big);
            }
            SamplingMode::WithoutReplacement if big <= u32::MAX as usize => {
                let b = big as u32;
                for k in 0..self.scheme.n {
                    let j = rng.random_range(k as u32..b) as usize;
                    self.perm.swap(k, j);
                    out.push(self.perm[k]);
                }
            }
            SamplingMode::WithoutReplacement => {
                for k in 0..self.scheme.n {
                    let j = rng.random_range(k..big);
                    self.perm.swap(k, j);
                    out.push(self.perm[k]);
                }
            }
        }
    }
}

/// One batch of `n` indices in draw order.
pub fn sample_indices<R: Rng + ?Sized>(
    rng: &mut R,
    n_data: usize,
    scheme: BatchScheme,
) -> Result<Vec<usize>, BatchError> {
    let mut sampler = IndexSampler::new(n_data, scheme)?;
    let mut out = Vec::with_capacity(scheme.n);
    sampler.sample(rng, &mut out);
    Ok(out)
}

/// `out = ∇log P₀(θ) + (N/n) Σ_{i ∈ indices} ∇log Pᵉ(xᵢ|θ)`, with `n` the
/// number of indices. `acc` is scratch of length d.
///
/// The likelihood terms are summed first and scaled once, so a full batch in
/// index order reproduces `full_gradient` bit for bit.
#[inline]
pub fn stochastic_force_unchecked<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    indices: &[usize],
    acc: &mut [f64],
    out: &mut [f64],
) {
    let scale = model.n_data() as f64 / indices.len() as f64;
    stochastic_force_scaled(model, theta, indices, scale, acc, out)
}

/// As `stochastic_force_unchecked` with a precomputed `scale = N/n`.
#[inline]
pub fn stochastic_force_scaled<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    indices: &[usize],
    scale: f64,
    acc: &mut [f64],
    out: &mut [f64],
) {
    acc.fill(0.0);
    for &i in indices {
        model.add_grad_log_elementary(i, theta, acc);
    }
    model.grad_log_prior(theta, out);
    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o += scale * a;
    }
}

pub fn stochastic_force<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    indices: &[usize],
) -> Result<Vec<f64>, BatchError> {
    let big = model.n_data();
    if indices.is_empty() {
        return Err(BatchError::InvalidBatch("empty index list".into()));
    }
    if let Some(&index) = indices.iter().find(|&&i| i >= big) {
        return Err(BatchError::IndexOutOfRange { index, n: big });
    }
    let d = model.dim();
    let mut acc = vec![0.0; d];
    let mut out = vec![0.0; d];
    stochastic_force_unchecked(model, theta, indices, &mut acc, &mut out);
    Ok(out)
}

/// `∇log π(θ|x)` using the same summation order as a full batch.
pub fn full_gradient<M: Model + ?Sized>(model: &M, theta: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let all: Vec<usize> = (0..model.n_data()).collect();
    let mut acc = vec![0.0; d];
    let mut out = vec![0.0; d];
    if all.is_empty() {
        model.grad_log_prior(theta, &mut out);
        return out;
    }
    stochastic_force_unchecked(model, theta, &all, &mut acc, &mut out);
    out
}

/// Per-datum gradient mean `𝓕_x(θ)` and covariance `Σ_x(θ)`.
#[derive(Debug, Clone)]
pub struct ForceStats {
    pub mean_force: Vec<f64>,
    pub sigma: SymMatrix,
}

pub fn force_stats<M: Model + ?Sized>(model: &M, theta: &[f64]) -> Result<ForceStats, BatchError> {
    let big = model.n_data();
    if big < 2 {
        return Err(BatchError::DegenerateData(format!(
            "need at least 2 data points, got {big}"
        )));
    }
    let d = model.dim();
    let grads: Vec<Vec<f64>> = (0..big)
        .map(|i| model.grad_log_elementary(i, theta))
        .collect();
    let mut mean = vec![0.0; d];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= big as f64;
    }
    let mut sigma = SymMatrix::zeros(d);
    for g in &grads {
        for a in 0..d {
            let da = g[a] - mean[a];
            for b in a..d {
                let v = sigma.get(a, b) + da * (g[b] - mean[b]);
                sigma.set(a, b, v);
            }
        }
    }
    let sigma = sigma.scale(1.0 / (big as f64 - 1.0));
    Ok(ForceStats {
        mean_force: mean,
        sigma,
    })
}

/// Exact first and second moments of `F̂_n(θ)` obtained by enumerating every
/// batch.
#[derive(Debug, Clone)]
pub struct EnumeratedMoments {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

fn for_each_batch(n_data: usize, scheme: BatchScheme, mut f: impl FnMut(&[usize], f64)) {
    let n = scheme.n;
    let mut idx = vec![0usize; n];
    match scheme.mode {
        SamplingMode::WithReplacement => {
            let total = n_data.pow(n as u32);
            let p = 1.0 / total as f64;
            for code in 0..total {
                let mut c = code;
                for slot in idx.iter_mut() {
                    *slot = c % n_data;
                    c /= n_data;
                }
                f(&idx, p);
            }
        }
        SamplingMode::WithoutReplacement => {
            let mut combos = Vec::new();
            fn rec(start: usize, n_data: usize, cur: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
                if cur.len() == n {
                    out.push(cur.clone());
                    return;
                }
                for i in start..n_data {
                    cur.push(i);
                    rec(i + 1, n_data, cur, n, out);
                    cur.pop();
                }
            }
            rec(0, n_data, &mut Vec::new(), n, &mut combos);
            let p = 1.0 / combos.len() as f64;
            for c in &combos {
                f(c, p);
            }
        }
    }
}

/// Enumerates all batches (N ≤ 8, and n ≤ 3 unless the batch is the whole
/// dataset) and returns the exact mean and
/// covariance of the estimator.
pub fn covariance_identity_check<M: Model + ?Sized>(
    model: &M,
    theta: &[f64],
    scheme: BatchScheme,
) -> Result<EnumeratedMoments, BatchError> {
    let big = model.n_data();
    scheme.validate(big)?;
    if big > 8 || (scheme.n > 3 && !scheme.is_full_batch(big)) {
        return Err(BatchError::TooLargeToEnumerate {
            n_data: big,
            n: scheme.n,
        });
    }
    let d = model.dim();
    let mut acc = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut values: Vec<(Vec<f64>, f64)> = Vec::new();
    for_each_batch(big, scheme, |idx, p| {
        stochastic_force_unchecked(model, theta, idx, &mut acc, &mut f);
        values.push((f.clone(), p));
    });
    let mut mean = vec![0.0; d];
    for (v, p) in &values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += p * x;
        }
    }
    let mut cov = SymMatrix::zeros(d);
    for (v, p) in &values {
        for a in 0..d {
            for b in a..d {
                let c = cov.get(a, b) + p * (v[a] - mean[a]) * (v[b] - mean[b]);
                cov.set(a, b, c);
            }
        }
    }
    Ok(EnumeratedMoments { mean, cov })
}

/// Draws of `Z = Σ_x^{-1/2}(F̂_n − ∇log π)/√ε` at a fixed θ.
pub struct ZSampler<'a, M: Model + ?Sized> {
    model: &'a M,
    theta: Vec<f64>,
    full: Vec<f64>,
    inv_sqrt: SymMatrix,
    sqrt_eps: f64,
    sampler: IndexSampler,
    idx: Vec<usize>,
    acc: Vec<f64>,
    force: Vec<f64>,
    diff: Vec<f64>,
}

impl<'a, M: Model + ?Sized> ZSampler<'a, M> {
    pub fn new(model: &'a M, theta: &[f64], scheme: BatchScheme) -> Result<Self, BatchError> {
        let big = model.n_data();
        let eps = epsilon(big, scheme)?;
        if eps == 0.0 {
            return Err(BatchError::FullBatch);
        }
        let stats = force_stats(model, theta)?;
        let inv_sqrt = match sym_inv_sqrt(&stats.sigma, SINGULAR_FLOOR) {
            Ok(m) => m,
            Err(LinalgError::Singular { min_eigenvalue }) | Err(LinalgError::NotPsd { min_eigenvalue }) => {
                return Err(BatchError::SingularCovariance { min_eigenvalue })
            }
            Err(e) => return Err(e.into()),
        };
        let d = model.dim();
        Ok(ZSampler {
            model,
            theta: theta.to_vec(),
            full: full_gradient(model, theta),
            inv_sqrt,
            sqrt_eps: eps.sqrt(),
            sampler: IndexSampler::new(big, scheme)?,
            idx: Vec::with_capacity(scheme.n),
            acc: vec![0.0; d],
            force: vec![0.0; d],
            diff: vec![0.0; d],
        })
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [f64]) {
        self.sampler.sample(rng, &mut self.idx);
        stochastic_force_unchecked(self.model, &self.theta, &self.idx, &mut self.acc, &mut self.force);
        for k in 0..self.diff.len() {
            self.diff[k] = (self.force[k] - self.full[k]) / self.sqrt_eps;
        }
        self.inv_sqrt.mul_vec(&self.diff, out);
    }
}

pub fn z_sample<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    theta: &[f64],
    scheme: BatchScheme,
    rng: &mut R,
) -> Result<Vec<f64>, BatchError> {
    let mut z = ZSampler::new(model, theta, scheme)?;
    let mut out = vec![0.0; model.dim()];
    z.sample(rng, &mut out);
    Ok(out)
}

/// Anything that produces a (noisy) force at θ. Implementations must draw
/// all of their randomness from `rng` inside `force`.
pub trait ForceSource {
    fn dim(&self) -> usize;
    fn force(&mut self, theta: &[f64], rng: &mut ChainRng, out: &mut [f64]);
    /// `ε(n)` of the underlying estimator, if it is a mini-batch estimator.
    fn epsilon(&self) -> Option<f64> {
        None
    }
}

/// The mini-batch estimator for a model and batch scheme.
pub struct MiniBatchForce<M: Model> {
    model: M,
    sampler: IndexSampler,
    eps: f64,
    scale: f64,
    idx: Vec<usize>,
    acc: Vec<f64>,
}

impl<M: Model> MiniBatchForce<M> {
    pub fn new(model: M, scheme: BatchScheme) -> Result<Self, BatchError> {
        let big = model.n_data();
        let eps = epsilon(big, scheme)?;
        let d = model.dim();
        Ok(MiniBatchForce {
            sampler: IndexSampler::new(big, scheme)?,
            model,
            eps,
            scale: big as f64 / scheme.n as f64,
            idx: Vec::with_capacity(scheme.n),
            acc: vec![0.0; d],
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    /// Indices of the most recent batch.
    pub fn last_batch(&self) -> &[usize] {
        &self.idx
    }
}

impl<M: Model> ForceSource for MiniBatchForce<M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    #[inline]
    fn force(&mut self, theta: &[f64], rng: &mut ChainRng, out: &mut [f64]) {
        self.sampler.sample(rng, &mut self.idx);
        stochastic_force_scaled(&self.model, theta, &self.idx, self.scale, &mut self.acc, out);
    }

    fn epsilon(&self) -> Option<f64> {
        Some(self.eps)
    }
}

impl ForceSource for ToyInjectedNoiseModel {
    fn dim(&self) -> usize {
        1
    }

    fn force(&mut self, theta: &[f64], rng: &mut ChainRng, out: &mut [f64]) {
        let g: f64 = StandardNormal.sample(rng);
        out[0] = -theta[0] + self.noise_variance(theta[0]).sqrt() * g;
    }
}

/// Deterministic force from a closure, for tests and exact-gradient runs.
pub struct FnForce<F: FnMut(&[f64], &mut [f64])> {
    pub dim: usize,
    pub f: F,
}

impl<F: FnMut(&[f64], &mut [f64])> ForceSource for FnForce<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn force(&mut self, theta: &[f64], _rng: &mut ChainRng, out: &mut [f64]) {
        (self.f)(theta, out)
    }
}
