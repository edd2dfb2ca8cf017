//! SGLD, mini-batched underdamped Langevin, AdL and eAdL integrators, plus
//! the chain driver that accumulates observables.
//!
//! Random numbers are consumed in a fixed order within each step: the two
//! OU Gaussians (first half-step, then second), then the SGLD diffusion
//! increment, then whatever the force source draws (batch indices or
//! injected noise).

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::linalg::{ou_coefficients, ou_scalar, LinalgError, SymMatrix};
use crate::minibatch::ForceSource;
use crate::rng::ChainRng;

/// A chain is declared divergent once `|θ|∞` exceeds this.
pub const DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("friction coefficients disagree in shape")]
    ShapeMismatch,
    #[error("numerical error: {0}")]
    Numerical(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid sampler configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgld,
    Langevin,
    Adl,
    Eadl,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgld => "sgld",
            Method::Langevin => "langevin",
            Method::Adl => "adl",
            Method::Eadl => "eadl",
        }
    }

    pub fn has_momentum(self) -> bool {
        self != Method::Sgld
    }

    pub fn has_friction(self) -> bool {
        matches!(self, Method::Adl | Method::Eadl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrictionShape {
    Scalar,
    Diagonal,
    Full,
}

impl FrictionShape {
    pub fn as_str(self) -> &'static str {
        match self {
            FrictionShape::Scalar => "scalar",
            FrictionShape::Diagonal => "diagonal",
            FrictionShape::Full => "full",
        }
    }
}

/// One friction coefficient `ξ_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum Friction {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(SymMatrix),
}

impl Friction {
    pub fn zeros(shape: FrictionShape, d: usize) -> Self {
        Self::scaled_identity(shape, d, 0.0)
    }

    pub fn scaled_identity(shape: FrictionShape, d: usize, s: f64) -> Self {
        match shape {
            FrictionShape::Scalar => Friction::Scalar(s),
            FrictionShape::Diagonal => Friction::Diagonal(vec![s; d]),
            FrictionShape::Full => Friction::Full(SymMatrix::scaled_identity(d, s)),
        }
    }

    pub fn shape(&self) -> FrictionShape {
        match self {
            Friction::Scalar(_) => FrictionShape::Scalar,
            Friction::Diagonal(_) => FrictionShape::Diagonal,
            Friction::Full(_) => FrictionShape::Full,
        }
    }

    /// Stored values: the scalar, the diagonal, or the packed upper triangle.
    pub fn values(&self) -> &[f64] {
        match self {
            Friction::Scalar(v) => std::slice::from_ref(v),
            Friction::Diagonal(v) => v,
            Friction::Full(m) => m.packed(),
        }
    }

    fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Friction::Scalar(v) => std::slice::from_mut(v),
            Friction::Diagonal(v) => v,
            Friction::Full(m) => m.packed_mut(),
        }
    }

    /// Lifts to a full matrix (Scalar → s·I).
    pub fn to_matrix(&self, d: usize) -> SymMatrix {
        match self {
            Friction::Scalar(s) => SymMatrix::scaled_identity(d, *s),
            Friction::Diagonal(v) => SymMatrix::from_diagonal(v),
            Friction::Full(m) => m.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// `self += c · (p pᵀ − I)`, projected on the shape.
    #[inline]
    fn feedback(&mut self, c: f64, p: &[f64]) {
        match self {
            Friction::Scalar(s) => {
                let k: f64 = p.iter().map(|v| v * v).sum();
                *s += c * (k - p.len() as f64);
            }
            Friction::Diagonal(v) => {
                for (x, pi) in v.iter_mut().zip(p) {
                    *x += c * (pi * pi - 1.0);
                }
            }
            Friction::Full(m) => {
                let d = p.len();
                let a = m.packed_mut();
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        a[k] += c * (p[i] * p[j] - delta);
                        k += 1;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// Empty for SGLD.
    pub p: Vec<f64>,
    /// One coefficient per basis function; empty for SGLD and Langevin.
    pub xi: Vec<Friction>,
}

impl ChainState {
    /// `θ⁰ = 0`, `p⁰ = 0`, constant-function coefficient `γ`, other
    /// coefficients 0.
    pub fn initial(
        method: Method,
        d: usize,
        shape: FrictionShape,
        basis: Option<&BasisSet>,
        gamma: f64,
    ) -> Self {
        let p = if method.has_momentum() { vec![0.0; d] } else { Vec::new() };
        let xi = match method {
            Method::Sgld | Method::Langevin => Vec::new(),
            Method::Adl => vec![Friction::scaled_identity(shape, d, gamma)],
            Method::Eadl => {
                let basis = basis.expect("eAdL needs a basis");
                basis
                    .functions
                    .iter()
                    .map(|f| {
                        let s = if matches!(f.kind, crate::basis::BasisKind::Constant) {
                            gamma
                        } else {
                            0.0
                        };
                        Friction::scaled_identity(shape, d, s)
                    })
                    .collect()
            }
        };
        ChainState {
            theta: vec![0.0; d],
            p,
            xi,
        }
    }

    pub fn check(&self) -> Result<(), StepError> {
        for &t in &self.theta {
            if !t.is_finite() || t.abs() > DIVERGENCE_BOUND {
                return Err(StepError::Divergence(format!("theta component {t:e}")));
            }
        }
        if self.p.iter().any(|v| !v.is_finite()) {
            return Err(StepError::Divergence("non-finite momentum".into()));
        }
        if self.xi.iter().any(|x| !x.is_finite()) {
            return Err(StepError::Divergence("non-finite friction".into()));
        }
        Ok(())
    }
}

/// Full-matrix OU coefficients for the last friction value seen. Reused
/// only on an exact match, so caching never changes results.
#[derive(Debug, Default, Clone)]
struct OuCache {
    key: Vec<f64>,
    mean: Option<SymMatrix>,
    noise: Option<SymMatrix>,
}

/// Scratch buffers owned by one chain.
#[derive(Debug, Clone)]
pub struct Scratch {
    g1: Vec<f64>,
    g2: Vec<f64>,
    force: Vec<f64>,
    tmp: Vec<f64>,
    ou: OuCache,
    f_now: Vec<f64>,
    f_next: Vec<f64>,
    f_theta: Vec<f64>,
    f_valid: bool,
    assembled: Option<Friction>,
}

impl Scratch {
    pub fn new(d: usize, n_basis: usize) -> Self {
        Scratch {
            g1: vec![0.0; d],
            g2: vec![0.0; d],
            force: vec![0.0; d],
            tmp: vec![0.0; d],
            ou: OuCache::default(),
            f_now: vec![0.0; n_basis],
            f_next: vec![0.0; n_basis],
            f_theta: vec![0.0; d],
            f_valid: false,
            assembled: None,
        }
    }
}

#[inline]
fn fill_normal(rng: &mut ChainRng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// `p ← exp(−Δt ξ/2) p + g(ξ)^{1/2} G` with `g(λ) = γ(1 − e^{−Δtλ})/λ`.
#[inline]
fn apply_ou(
    xi: &Friction,
    gamma: f64,
    dt: f64,
    p: &mut [f64],
    g: &[f64],
    cache: &mut OuCache,
    tmp: &mut [f64],
) -> Result<(), StepError> {
    match xi {
        Friction::Scalar(l) => {
            let (m, v) = ou_scalar(*l, gamma, dt);
            let s = v.sqrt();
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi = m * *pi + s * gi;
            }
        }
        Friction::Diagonal(ls) => {
            for ((pi, gi), l) in p.iter_mut().zip(g).zip(ls) {
                let (m, v) = ou_scalar(*l, gamma, dt);
                *pi = m * *pi + v.sqrt() * gi;
            }
        }
        Friction::Full(x) => {
            if cache.mean.is_none() || cache.key.as_slice() != x.packed() {
                let (mean, noise) = ou_coefficients(x, gamma, dt)?;
                cache.key.clear();
                cache.key.extend_from_slice(x.packed());
                cache.mean = Some(mean);
                cache.noise = Some(noise);
            }
            let mean = cache.mean.as_ref().unwrap();
            let noise = cache.noise.as_ref().unwrap();
            let d = p.len();
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += mean.get(i, j) * p[j] + noise.get(i, j) * g[j];
                }
                tmp[i] = acc;
            }
            p.copy_from_slice(tmp);
        }
    }
    Ok(())
}

/// `θ ← θ + Δt F̂(θ) + √(2Δt) G`.
pub fn sgld_step<F: ForceSource + ?Sized>(
    state: &mut ChainState,
    force: &mut F,
    dt: f64,
    rng: &mut ChainRng,
    scratch: &mut Scratch,
) -> Result<(), StepError> {
    fill_normal(rng, &mut scratch.g1);
    force.force(&state.theta, rng, &mut scratch.force);
    let s = (2.0 * dt).sqrt();
    for ((t, f), g) in state.theta.iter_mut().zip(&scratch.force).zip(&scratch.g1) {
        *t += dt * f + s * g;
    }
    state.check()
}

/// O(Δt/2) A(Δt/2) B(Δt) A(Δt/2) O(Δt/2) with friction `γI`.
pub fn langevin_step<F: ForceSource + ?Sized>(
    state: &mut ChainState,
    force: &mut F,
    dt: f64,
    gamma: f64,
    rng: &mut ChainRng,
    scratch: &mut Scratch,
) -> Result<(), StepError> {
    fill_normal(rng, &mut scratch.g1);
    fill_normal(rng, &mut scratch.g2);
    let alpha = (-0.5 * gamma * dt).exp();
    let s = (-(-gamma * dt).exp_m1()).sqrt();
    let h = 0.5 * dt;
    for (p, g) in state.p.iter_mut().zip(&scratch.g1) {
        *p = alpha * *p + s * g;
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    force.force(&state.theta, rng, &mut scratch.force);
    for (p, f) in state.p.iter_mut().zip(&scratch.force) {
        *p += dt * f;
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    for (p, g) in state.p.iter_mut().zip(&scratch.g2) {
        *p = alpha * *p + s * g;
    }
    state.check()
}

/// Friction parameters shared by AdL and eAdL.
#[derive(Debug, Clone, Copy)]
pub struct AdlParams<'a> {
    pub dt: f64,
    pub gamma: f64,
    /// One timescale per coefficient; `f64::INFINITY` freezes that
    /// coefficient.
    pub eta: &'a [f64],
}

#[inline]
fn feedback_rate(dt: f64, eta: f64) -> Option<f64> {
    if eta.is_infinite() {
        None
    } else {
        Some(dt / (2.0 * eta))
    }
}

/// Adaptive Langevin with a single friction coefficient.
pub fn adl_step<F: ForceSource + ?Sized>(
    state: &mut ChainState,
    force: &mut F,
    params: AdlParams<'_>,
    rng: &mut ChainRng,
    scratch: &mut Scratch,
) -> Result<(), StepError> {
    let AdlParams { dt, gamma, eta } = params;
    if state.xi.len() != 1 || eta.len() != 1 {
        return Err(StepError::ShapeMismatch);
    }
    fill_normal(rng, &mut scratch.g1);
    fill_normal(rng, &mut scratch.g2);
    let c = feedback_rate(dt, eta[0]);
    let h = 0.5 * dt;

    apply_ou(&state.xi[0], gamma, dt, &mut state.p, &scratch.g1, &mut scratch.ou, &mut scratch.tmp)?;
    if let Some(c) = c {
        state.xi[0].feedback(c, &state.p);
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    force.force(&state.theta, rng, &mut scratch.force);
    for (p, f) in state.p.iter_mut().zip(&scratch.force) {
        *p += dt * f;
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    if let Some(c) = c {
        state.xi[0].feedback(c, &state.p);
    }
    apply_ou(&state.xi[0], gamma, dt, &mut state.p, &scratch.g2, &mut scratch.ou, &mut scratch.tmp)?;
    state.check()
}

/// `out = Σ_k f_k ξ_k`.
fn assemble(xi: &[Friction], f: &[f64], out: &mut Friction) {
    let dst = out.values_mut();
    dst.fill(0.0);
    for (x, &fk) in xi.iter().zip(f) {
        if fk == 0.0 {
            continue;
        }
        for (o, v) in dst.iter_mut().zip(x.values()) {
            *o += fk * v;
        }
    }
}

/// Extended Adaptive Langevin with friction field `ξ(θ) = Σ_k ξ_k f_k(θ)`.
pub fn eadl_step<F: ForceSource + ?Sized>(
    state: &mut ChainState,
    force: &mut F,
    params: AdlParams<'_>,
    basis: &BasisSet,
    rng: &mut ChainRng,
    scratch: &mut Scratch,
) -> Result<(), StepError> {
    let AdlParams { dt, gamma, eta } = params;
    let k = basis.len();
    if state.xi.len() != k || eta.len() != k {
        return Err(StepError::ShapeMismatch);
    }
    let shape = state.xi[0].shape();
    if state.xi.iter().any(|x| x.shape() != shape) {
        return Err(StepError::ShapeMismatch);
    }
    let d = state.theta.len();
    let mut assembled = match scratch.assembled.take() {
        Some(a) if a.shape() == shape => a,
        _ => Friction::zeros(shape, d),
    };
    let result = eadl_inner(state, force, dt, gamma, eta, basis, rng, scratch, &mut assembled);
    scratch.assembled = Some(assembled);
    result
}

#[allow(clippy::too_many_arguments)]
fn eadl_inner<F: ForceSource + ?Sized>(
    state: &mut ChainState,
    force: &mut F,
    dt: f64,
    gamma: f64,
    eta: &[f64],
    basis: &BasisSet,
    rng: &mut ChainRng,
    scratch: &mut Scratch,
    assembled: &mut Friction,
) -> Result<(), StepError> {
    fill_normal(rng, &mut scratch.g1);
    fill_normal(rng, &mut scratch.g2);
    let h = 0.5 * dt;

    if !(scratch.f_valid && scratch.f_theta == state.theta) {
        basis.evaluate_into(&state.theta, &mut scratch.f_now);
    }
    assemble(&state.xi, &scratch.f_now, assembled);
    apply_ou(assembled, gamma, dt, &mut state.p, &scratch.g1, &mut scratch.ou, &mut scratch.tmp)?;
    for (j, x) in state.xi.iter_mut().enumerate() {
        if let Some(c) = feedback_rate(dt, eta[j]) {
            let fk = scratch.f_now[j];
            if fk != 0.0 {
                x.feedback(c * fk, &state.p);
            }
        }
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    force.force(&state.theta, rng, &mut scratch.force);
    for (p, f) in state.p.iter_mut().zip(&scratch.force) {
        *p += dt * f;
    }
    for (t, p) in state.theta.iter_mut().zip(&state.p) {
        *t += h * p;
    }
    basis.evaluate_into(&state.theta, &mut scratch.f_next);
    for (j, x) in state.xi.iter_mut().enumerate() {
        if let Some(c) = feedback_rate(dt, eta[j]) {
            let fk = scratch.f_next[j];
            if fk != 0.0 {
                x.feedback(c * fk, &state.p);
            }
        }
    }
    assemble(&state.xi, &scratch.f_next, assembled);
    apply_ou(assembled, gamma, dt, &mut state.p, &scratch.g2, &mut scratch.ou, &mut scratch.tmp)?;

    std::mem::swap(&mut scratch.f_now, &mut scratch.f_next);
    scratch.f_theta.copy_from_slice(&state.theta);
    scratch.f_valid = true;
    state.check()
}

/// Everything needed to advance one chain by one step.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    pub method: Method,
    pub shape: FrictionShape,
    pub dt: f64,
    pub gamma: f64,
    pub eta: Vec<f64>,
    pub basis: Option<&'a BasisSet>,
}

impl<'a> Integrator<'a> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.method.has_momentum() && !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        let expected = match self.method {
            Method::Sgld | Method::Langevin => 0,
            Method::Adl => 1,
            Method::Eadl => match self.basis {
                Some(b) => b.len(),
                None => return bad("eadl requires a basis".into()),
            },
        };
        if self.method.has_friction() {
            if self.eta.len() != expected {
                return bad(format!(
                    "expected {expected} eta values, got {}",
                    self.eta.len()
                ));
            }
            if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0)) {
                return bad(format!("eta must be positive, got {e}"));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self, d: usize) -> ChainState {
        ChainState::initial(self.method, d, self.shape, self.basis, self.gamma)
    }

    pub fn scratch(&self, d: usize) -> Scratch {
        Scratch::new(d, self.basis.map_or(1, |b| b.len()))
    }

    #[inline]
    pub fn step<F: ForceSource + ?Sized>(
        &self,
        state: &mut ChainState,
        force: &mut F,
        rng: &mut ChainRng,
        scratch: &mut Scratch,
    ) -> Result<(), StepError> {
        match self.method {
            Method::Sgld => sgld_step(state, force, self.dt, rng, scratch),
            Method::Langevin => langevin_step(state, force, self.dt, self.gamma, rng, scratch),
            Method::Adl => adl_step(
                state,
                force,
                AdlParams {
                    dt: self.dt,
                    gamma: self.gamma,
                    eta: &self.eta,
                },
                rng,
                scratch,
            ),
            Method::Eadl => eadl_step(
                state,
                force,
                AdlParams {
                    dt: self.dt,
                    gamma: self.gamma,
                    eta: &self.eta,
                },
                self.basis.expect("validated"),
                rng,
                scratch,
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Accumulation

/// Sample count, mean and centred sum of squares of a block of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Block {
    fn new(m: usize) -> Self {
        Block {
            count: 0,
            mean: vec![0.0; m],
            m2: vec![0.0; m],
        }
    }

    /// Chan's pairwise update.
    pub fn merge(&mut self, other: &Block) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Population variance (1/count).
    pub fn variance(&self, k: usize) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.m2[k] / self.count as f64
        }
    }
}

/// Shifted running sums; cheaper per sample than Welford and converted to a
/// `Block` once the block is complete.
#[derive(Debug, Clone)]
struct BlockAcc {
    count: u64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl BlockAcc {
    fn new(m: usize) -> Self {
        BlockAcc {
            count: 0,
            s1: vec![0.0; m],
            s2: vec![0.0; m],
        }
    }

    #[inline]
    fn push(&mut self, q: &[f64], shift: &[f64]) {
        self.count += 1;
        for k in 0..q.len() {
            let x = q[k] - shift[k];
            self.s1[k] += x;
            self.s2[k] += x * x;
        }
    }

    fn finish(&self, shift: &[f64]) -> Block {
        let m = self.s1.len();
        if self.count == 0 {
            return Block::new(m);
        }
        let c = self.count as f64;
        Block {
            count: self.count,
            mean: (0..m).map(|k| shift[k] + self.s1[k] / c).collect(),
            m2: (0..m)
                .map(|k| (self.s2[k] - self.s1[k] * self.s1[k] / c).max(0.0))
                .collect(),
        }
    }
}

/// Fixed-grid histogram on `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(axis: usize, lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            axis,
            lo,
            hi,
            counts: vec![0; bins],
            below: 0,
            above: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        if x < self.lo {
            self.below += 1;
        } else if x >= self.hi {
            self.above += 1;
        } else {
            let bins = self.counts.len();
            let k = ((x - self.lo) * (bins as f64 / (self.hi - self.lo))) as usize;
            self.counts[k.min(bins - 1)] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Density per bin, normalised by the total count including samples
    /// outside the grid.
    pub fn density(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        let w = self.bin_width();
        self.counts.iter().map(|&c| c as f64 / (t * w)).collect()
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.below += other.below;
        self.above += other.above;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistSpec {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

/// A named scalar function of the chain state.
pub type Observable = fn(&ChainState) -> f64;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub blocks: usize,
    pub hists: Vec<HistSpec>,
    pub observables: Vec<(String, Observable)>,
    /// Keep every `k`-th retained θ, for basis normalisation.
    pub record_theta_every: Option<u64>,
    pub initial_theta: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(n_steps: u64) -> Self {
        RunOptions {
            n_steps,
            burn_in: n_steps / 10,
            thin: 1,
            blocks: 32,
            hists: Vec::new(),
            observables: Vec::new(),
            record_theta_every: None,
            initial_theta: None,
        }
    }

    pub fn retained(&self) -> u64 {
        self.n_steps.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.burn_in >= self.n_steps {
            return Err(ConfigError::Invalid(format!(
                "burn_in ({}) must be smaller than n_steps ({})",
                self.burn_in, self.n_steps
            )));
        }
        if self.thin == 0 {
            return Err(ConfigError::Invalid("thin must be at least 1".into()));
        }
        if self.blocks == 0 {
            return Err(ConfigError::Invalid("need at least one block".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub step: u64,
    pub reason: String,
}

/// Accumulated output of one or more chains.
///
/// The tracked scalars are, in order: θ₁…θ_d, p₁…p_d (if any), the stored
/// values of every ξ_k (if any), then the custom observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub labels: Vec<String>,
    pub blocks: Vec<Block>,
    pub hists: Vec<Histogram>,
    pub theta_samples: Vec<Vec<f64>>,
    pub divergences: Vec<DivergenceInfo>,
    pub final_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl ChainResult {
    pub fn retained(&self) -> u64 {
        self.blocks.iter().map(|b| b.count).sum()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn pooled(&self) -> Block {
        let m = self.labels.len();
        let mut all = Block::new(m);
        for b in &self.blocks {
            all.merge(b);
        }
        all
    }

    fn nonempty_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.count > 0)
    }

    fn batch_stderr(&self, per_block: impl Fn(&Block) -> f64) -> f64 {
        let vals: Vec<f64> = self.nonempty_blocks().map(per_block).collect();
        let b = vals.len();
        if b < 2 {
            return f64::NAN;
        }
        let mean = vals.iter().sum::<f64>() / b as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        (var / b as f64).sqrt()
    }

    /// Mean of tracked scalar `k` with its batch-means standard error.
    pub fn mean(&self, k: usize) -> Estimate {
        Estimate {
            value: self.pooled().mean[k],
            stderr: self.batch_stderr(|b| b.mean[k]),
        }
    }

    /// Variance of tracked scalar `k` with its batch-means standard error.
    pub fn variance(&self, k: usize) -> Estimate {
        Estimate {
            value: self.pooled().variance(k),
            stderr: self.batch_stderr(|b| b.variance(k)),
        }
    }

    pub fn mean_of(&self, label: &str) -> Option<Estimate> {
        self.index_of(label).map(|k| self.mean(k))
    }

    pub fn variance_of(&self, label: &str) -> Option<Estimate> {
        self.index_of(label).map(|k| self.variance(k))
    }

    /// Merges chains in the order given; blocks are concatenated.
    pub fn merge_all(results: Vec<ChainResult>) -> ChainResult {
        let mut it = results.into_iter();
        let mut acc = it.next().expect("at least one chain");
        for r in it {
            assert_eq!(acc.labels, r.labels, "merging incompatible results");
            acc.blocks.extend(r.blocks);
            for (a, b) in acc.hists.iter_mut().zip(&r.hists) {
                a.merge(b);
            }
            acc.theta_samples.extend(r.theta_samples);
            acc.divergences.extend(r.divergences);
            acc.final_states.extend(r.final_states);
        }
        acc
    }
}

fn labels_for(state: &ChainState, observables: &[(String, Observable)]) -> Vec<String> {
    let mut labels: Vec<String> = (0..state.theta.len()).map(|j| format!("theta{}", j + 1)).collect();
    labels.extend((0..state.p.len()).map(|j| format!("p{}", j + 1)));
    for (k, x) in state.xi.iter().enumerate() {
        match x {
            Friction::Scalar(_) => labels.push(format!("xi{k}")),
            Friction::Diagonal(v) => {
                labels.extend((0..v.len()).map(|j| format!("xi{k}_{}{}", j + 1, j + 1)))
            }
            Friction::Full(m) => {
                let d = m.dim();
                for i in 0..d {
                    for j in i..d {
                        labels.push(format!("xi{k}_{}{}", i + 1, j + 1));
                    }
                }
            }
        }
    }
    labels.extend(observables.iter().map(|(n, _)| n.clone()));
    labels
}

#[inline]
fn tracked(state: &ChainState, observables: &[(String, Observable)], q: &mut Vec<f64>) {
    q.clear();
    q.extend_from_slice(&state.theta);
    q.extend_from_slice(&state.p);
    for x in &state.xi {
        q.extend_from_slice(x.values());
    }
    for (_, f) in observables {
        q.push(f(state));
    }
}

/// Runs one chain from the standard initial condition.
///
/// A divergence stops the chain; the samples retained so far are kept and
/// the step index is recorded in `divergences`.
pub fn run_chain<F: ForceSource + ?Sized>(
    integrator: &Integrator<'_>,
    force: &mut F,
    opts: &RunOptions,
    rng: &mut ChainRng,
) -> ChainResult {
    let d = force.dim();
    let mut state = integrator.initial_state(d);
    if let Some(t0) = &opts.initial_theta {
        state.theta.copy_from_slice(t0);
    }
    let mut scratch = integrator.scratch(d);
    let labels = labels_for(&state, &opts.observables);
    let m = labels.len();
    let n_blocks = opts.blocks.max(1);
    let retained_total = opts.retained().max(1) as u128;
    let mut accs: Vec<BlockAcc> = (0..n_blocks).map(|_| BlockAcc::new(m)).collect();
    let mut shift: Vec<f64> = Vec::new();
    // Sample `kept` goes to block `b` while `kept < next_boundary`, with
    // boundaries at ceil((b+1)·R/B).
    let boundary = |b: usize| -> u64 {
        ((b as u128 + 1) * retained_total).div_ceil(n_blocks as u128) as u64
    };
    let mut block = 0usize;
    let mut next_boundary = boundary(0);
    let mut hists: Vec<Histogram> = opts
        .hists
        .iter()
        .map(|h| Histogram::new(h.axis, h.lo, h.hi, h.bins))
        .collect();
    let mut theta_samples = Vec::new();
    let mut divergences = Vec::new();
    let mut q = Vec::with_capacity(m);
    let thin = opts.thin.max(1);
    let mut kept: u64 = 0;

    for step in 0..opts.n_steps {
        if let Err(e) = integrator.step(&mut state, force, rng, &mut scratch) {
            divergences.push(DivergenceInfo {
                step: step + 1,
                reason: e.to_string(),
            });
            break;
        }
        let done = step + 1;
        if done <= opts.burn_in || (done - opts.burn_in) % thin != 0 {
            continue;
        }
        tracked(&state, &opts.observables, &mut q);
        if shift.is_empty() {
            shift = q.clone();
        }
        while kept >= next_boundary && block + 1 < n_blocks {
            block += 1;
            next_boundary = boundary(block);
        }
        accs[block].push(&q, &shift);
        for h in &mut hists {
            h.push(state.theta[h.axis]);
        }
        if let Some(every) = opts.record_theta_every {
            if kept % every.max(1) == 0 {
                theta_samples.push(state.theta.clone());
            }
        }
        kept += 1;
    }
    tracked(&state, &[], &mut q);
    if shift.is_empty() {
        shift = vec![0.0; m];
    }
    let blocks = accs.iter().map(|a| a.finish(&shift)).collect();
    ChainResult {
        labels,
        blocks,
        hists,
        theta_samples,
        divergences,
        final_states: vec![q],
    }
}
