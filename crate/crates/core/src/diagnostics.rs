//! Reference posteriors, error metrics, covariance fields and the `L²(π)`
//! projection residuals that predict the remaining bias of (e)AdL.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::linalg::{LinalgError, SymMatrix};
use crate::minibatch::{force_stats, BatchError};
use crate::models::{GaussianMeanModel, GaussianMixtureModel, Model};
use crate::samplers::{Friction, FrictionShape, Histogram};

/// Gram matrices with a larger condition number are solved by pseudo-inverse
/// and flagged.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagError {
    #[error("grids do not match")]
    GridMismatch,
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("full batch: epsilon * dt must be positive")]
    FullBatch,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Uniform grid of `n` cells on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        GridAxis { lo, hi, n }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.midpoint(k)).collect()
    }

    fn validate(&self) -> Result<(), DiagError> {
        if self.n == 0 || !(self.hi > self.lo) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(DiagError::Invalid(format!(
                "grid axis needs lo < hi and at least one cell, got [{}, {}] with {} cells",
                self.lo, self.hi, self.n
            )));
        }
        Ok(())
    }
}

/// Piecewise-constant density on a tensor grid (row-major, first axis
/// slowest). `outside_mass` is probability that fell outside the grid, which
/// only sampled densities carry.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    pub outside_mass: f64,
}

impl GridDensity {
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.width()).product()
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume() + self.outside_mass
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.axes.len()];
        for j in (0..self.axes.len().saturating_sub(1)).rev() {
            s[j] = s[j + 1] * self.axes[j + 1].n;
        }
        s
    }

    /// Cell probabilities (value × volume).
    pub fn masses(&self) -> Vec<f64> {
        let v = self.cell_volume();
        self.values.iter().map(|x| x * v).collect()
    }

    /// Marginal density along `axis`.
    pub fn marginal(&self, axis: usize) -> Result<GridDensity, DiagError> {
        if axis >= self.axes.len() {
            return Err(DiagError::Invalid(format!("no axis {axis}")));
        }
        let strides = self.strides();
        let ax = self.axes[axis];
        let mut mass = vec![0.0; ax.n];
        let v = self.cell_volume();
        for (idx, val) in self.values.iter().enumerate() {
            let k = (idx / strides[axis]) % ax.n;
            mass[k] += val * v;
        }
        let w = ax.width();
        Ok(GridDensity {
            axes: vec![ax],
            values: mass.into_iter().map(|m| m / w).collect(),
            outside_mass: self.outside_mass,
        })
    }

    /// Density from a sampled histogram; escaped samples go to
    /// `outside_mass`.
    pub fn from_histogram(h: &Histogram) -> GridDensity {
        let total = h.total().max(1) as f64;
        GridDensity {
            axes: vec![GridAxis::new(h.lo, h.hi, h.counts.len())],
            values: h.density(),
            outside_mass: (h.below + h.above) as f64 / total,
        }
    }

    /// Uniform density on the grid.
    pub fn uniform(axes: Vec<GridAxis>) -> GridDensity {
        let cells: usize = axes.iter().map(|a| a.n).product();
        let vol: f64 = axes.iter().map(|a| a.hi - a.lo).product();
        GridDensity {
            axes,
            values: vec![1.0 / vol; cells],
            outside_mass: 0.0,
        }
    }

    /// Cell midpoints in storage order.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        grid_nodes(&self.axes)
    }
}

pub fn grid_nodes(axes: &[GridAxis]) -> Vec<Vec<f64>> {
    let cells: usize = axes.iter().map(|a| a.n).product();
    let mut out = Vec::with_capacity(cells);
    for idx in 0..cells {
        let mut c = idx;
        let mut node = vec![0.0; axes.len()];
        for j in (0..axes.len()).rev() {
            node[j] = axes[j].midpoint(c % axes[j].n);
            c /= axes[j].n;
        }
        out.push(node);
    }
    out
}

fn boundary_mass(axes: &[GridAxis], masses: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (idx, m) in masses.iter().enumerate() {
        let mut c = idx;
        let mut edge = false;
        for j in (0..axes.len()).rev() {
            let k = c % axes[j].n;
            c /= axes[j].n;
            if k == 0 || k + 1 == axes[j].n {
                edge = true;
            }
        }
        if edge {
            acc += m;
        }
    }
    acc
}

/// Midpoint-rule normalisation of `exp(log_density)` on the grid.
pub fn density_on_grid(
    axes: &[GridAxis],
    log_density: impl Fn(&[f64]) -> f64,
) -> Result<GridDensity, DiagError> {
    for a in axes {
        a.validate()?;
    }
    let nodes = grid_nodes(axes);
    let logs: Vec<f64> = nodes.iter().map(|t| log_density(t)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(DiagError::UnderResolved("density vanishes on the grid".into()));
    }
    let mut values: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let vol: f64 = axes.iter().map(|a| a.width()).product();
    let z: f64 = values.iter().sum::<f64>() * vol;
    for v in &mut values {
        *v /= z;
    }
    let dens = GridDensity {
        axes: axes.to_vec(),
        values,
        outside_mass: 0.0,
    };
    if axes.iter().all(|a| a.n > 2) {
        let b = boundary_mass(axes, &dens.masses());
        if b > 0.1 {
            return Err(DiagError::UnderResolved(format!(
                "{:.1}% of the mass sits in boundary cells",
                100.0 * b
            )));
        }
    }
    Ok(dens)
}

/// Posterior on a grid by quadrature of the unnormalised density.
pub fn reference_posterior<M: Model + ?Sized>(
    model: &M,
    axes: &[GridAxis],
) -> Result<GridDensity, DiagError> {
    if axes.len() != model.dim() {
        return Err(DiagError::GridMismatch);
    }
    if axes.len() > 2 {
        return Err(DiagError::Invalid("grid quadrature supports d <= 2".into()));
    }
    density_on_grid(axes, |t| model.log_posterior_unnorm(t))
}

/// Closed-form Gaussian posterior sampled at the cell midpoints.
pub fn gaussian_reference(m: &GaussianMeanModel, axis: GridAxis) -> Result<GridDensity, DiagError> {
    let (mu, var) = crate::models::gaussian_posterior_params(m);
    normal_on_grid(mu, var.sqrt(), axis)
}

pub fn normal_on_grid(mu: f64, sd: f64, axis: GridAxis) -> Result<GridDensity, DiagError> {
    density_on_grid(&[axis], |t| {
        let z = (t[0] - mu) / sd;
        -0.5 * z * z
    })
}

/// `Σ_bins |m_a − m_b|·h` on the marginal along `axis`, plus the difference
/// in escaped mass.
pub fn l1_marginal_error(
    sampled: &GridDensity,
    reference: &GridDensity,
    axis: usize,
) -> Result<f64, DiagError> {
    let a = if sampled.axes.len() == 1 && axis == 0 {
        sampled.clone()
    } else {
        sampled.marginal(axis)?
    };
    let b = if reference.axes.len() == 1 && axis == 0 {
        reference.clone()
    } else {
        reference.marginal(axis)?
    };
    if a.axes[0] != b.axes[0] {
        return Err(DiagError::GridMismatch);
    }
    let h = a.axes[0].width();
    let inside: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() * h)
        .sum();
    Ok(inside + (a.outside_mass - b.outside_mass).abs())
}

/// `L¹` error of a sampled 1D histogram against a reference marginal.
pub fn l1_histogram_error(h: &Histogram, reference: &GridDensity, axis: usize) -> Result<f64, DiagError> {
    l1_marginal_error(&GridDensity::from_histogram(h), reference, axis)
}

/// `|var − σ²_post| / σ²_post`.
pub fn variance_relative_error(sample_var: f64, var_post: f64) -> f64 {
    (sample_var - var_post).abs() / var_post
}

/// Leading-order relative variance error of SGLD on the Gaussian model.
pub fn sgld_predicted_error(eps: f64, dt: f64, sigma_x: f64, var_post: f64) -> f64 {
    0.5 * dt * (eps * sigma_x + 1.0 / var_post)
}

/// Leading-order relative variance error of mini-batched Langevin.
pub fn langevin_predicted_error(eps: f64, dt: f64, sigma_x: f64, gamma: f64) -> f64 {
    eps * dt * sigma_x / (2.0 * gamma)
}

/// Stationary mean of the AdL friction: `γ + εΔtΣ/2`.
pub fn adl_friction_mean(gamma: f64, eps: f64, dt: f64, sigma_x: f64) -> f64 {
    gamma + 0.5 * eps * dt * sigma_x
}

/// Large-N limit `Σ(θ)` of the per-datum gradient covariance for data drawn
/// from the mixture at `theta_true`, by midpoint quadrature over `quad`.
pub fn analytic_sigma_limit(
    params: &GaussianMixtureModel,
    theta_true: &[f64; 2],
    theta: &[f64; 2],
    quad: GridAxis,
) -> Result<SymMatrix, DiagError> {
    quad.validate()?;
    let h = quad.width();
    let mut mass = 0.0;
    let mut m1 = [0.0; 2];
    let mut m2 = [0.0; 3];
    for k in 0..quad.n {
        let x = quad.midpoint(k);
        let w = params.log_density(x, theta_true).exp() * h;
        if w == 0.0 {
            continue;
        }
        let g = params.grad_at(x, theta);
        mass += w;
        m1[0] += w * g[0];
        m1[1] += w * g[1];
        m2[0] += w * g[0] * g[0];
        m2[1] += w * g[0] * g[1];
        m2[2] += w * g[1] * g[1];
    }
    if (1.0 - mass).abs() > 1e-8 {
        return Err(DiagError::UnderResolved(format!(
            "quadrature grid captures {mass} of the data density"
        )));
    }
    let mut s = SymMatrix::zeros(2);
    s.set(0, 0, m2[0] - m1[0] * m1[0]);
    s.set(0, 1, m2[1] - m1[0] * m1[1]);
    s.set(1, 1, m2[2] - m1[1] * m1[1]);
    Ok(s)
}

/// `Σ_x(θ)` at every cell midpoint of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceField {
    pub axes: Vec<GridAxis>,
    pub values: Vec<SymMatrix>,
}

impl CovarianceField {
    pub fn from_model<M: Model + ?Sized>(model: &M, axes: &[GridAxis]) -> Result<Self, DiagError> {
        for a in axes {
            a.validate()?;
        }
        if axes.len() != model.dim() {
            return Err(DiagError::GridMismatch);
        }
        let values = grid_nodes(axes)
            .iter()
            .map(|t| force_stats(model, t).map(|s| s.sigma))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CovarianceField {
            axes: axes.to_vec(),
            values,
        })
    }

    pub fn constant(axes: &[GridAxis], value: SymMatrix) -> Self {
        let cells: usize = axes.iter().map(|a| a.n).product();
        CovarianceField {
            axes: axes.to_vec(),
            values: vec![value; cells],
        }
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    /// Componentwise maximum over minimum of the diagonal entries.
    pub fn diagonal_range(&self, i: usize) -> (f64, f64) {
        let it = self.values.iter().map(|s| s.get(i, i));
        let lo = it.clone().fold(f64::INFINITY, f64::min);
        let hi = it.fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

fn check_weights(field: &CovarianceField, w: &GridDensity) -> Result<Vec<f64>, DiagError> {
    if field.axes != w.axes || field.values.len() != w.values.len() {
        return Err(DiagError::GridMismatch);
    }
    Ok(w.masses())
}

/// Posterior average of the field, constrained to `shape`.
pub fn average_sigma(
    field: &CovarianceField,
    weights: &GridDensity,
    shape: FrictionShape,
) -> Result<SymMatrix, DiagError> {
    let w = check_weights(field, weights)?;
    let d = field.dim();
    let total: f64 = w.iter().sum();
    let mut full = SymMatrix::zeros(d);
    for (s, wk) in field.values.iter().zip(&w) {
        for (a, b) in full.packed_mut().iter_mut().zip(s.packed()) {
            *a += wk * b;
        }
    }
    let full = full.scale(1.0 / total);
    Ok(match shape {
        FrictionShape::Full => full,
        FrictionShape::Diagonal => SymMatrix::from_diagonal(&full.diagonal()),
        FrictionShape::Scalar => SymMatrix::scaled_identity(d, full.trace() / d as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `‖Σ − S_K‖_{L²(π)}`.
    pub residual: f64,
    /// `‖S_K‖_{L²(π)}`.
    pub projected_norm: f64,
    /// `‖Σ‖_{L²(π)}`.
    pub field_norm: f64,
    pub gram_condition: f64,
    /// Set when the Gram condition number exceeds `GRAM_CONDITION_LIMIT`.
    pub singular_gram: bool,
}

/// `L²(π)` projection of the covariance field onto
/// `{Σ_k M_k f_k : M_k of the given shape}`.
///
/// The problem decouples into scalar least-squares problems (one per
/// projected entry) that share the Gram matrix `∫ f_j f_k dπ`.
pub fn projection_error(
    field: &CovarianceField,
    weights: &GridDensity,
    basis: &BasisSet,
    shape: FrictionShape,
) -> Result<Projection, DiagError> {
    let w = check_weights(field, weights)?;
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|x| x / total).collect();
    let d = field.dim();
    let kb = basis.len();
    let nodes = grid_nodes(&field.axes);
    if basis.dim != d && basis.dim != nodes[0].len() {
        return Err(DiagError::GridMismatch);
    }
    let fvals: Vec<Vec<f64>> = nodes.iter().map(|t| basis.evaluate_all(t)).collect();

    let mut gram = SymMatrix::zeros(kb);
    for (f, wk) in fvals.iter().zip(&w) {
        if *wk == 0.0 {
            continue;
        }
        for a in 0..kb {
            if f[a] == 0.0 {
                continue;
            }
            for b in a..kb {
                let v = gram.get(a, b) + wk * f[a] * f[b];
                gram.set(a, b, v);
            }
        }
    }
    let eig = gram.eigen()?;
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let lmin = eig.min_eigenvalue();
    let gram_condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    let singular_gram = !(gram_condition <= GRAM_CONDITION_LIMIT);
    let cutoff = lmax * 1e-13;
    let pinv = eig.map(|l| if l > cutoff { 1.0 / l } else { 0.0 });

    // Scalar targets to project: each packed entry (Full), the diagonal
    // (Diagonal) or tr Σ / d (Scalar).
    let targets: Vec<Box<dyn Fn(&SymMatrix) -> f64>> = match shape {
        FrictionShape::Full => (0..d)
            .flat_map(|i| (i..d).map(move |j| (i, j)))
            .map(|(i, j)| Box::new(move |s: &SymMatrix| s.get(i, j)) as Box<dyn Fn(&SymMatrix) -> f64>)
            .collect(),
        FrictionShape::Diagonal => (0..d)
            .map(|i| Box::new(move |s: &SymMatrix| s.get(i, i)) as Box<dyn Fn(&SymMatrix) -> f64>)
            .collect(),
        FrictionShape::Scalar => {
            vec![Box::new(move |s: &SymMatrix| s.trace() / d as f64)]
        }
    };

    let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
    for t in &targets {
        let mut rhs = vec![0.0; kb];
        for ((f, s), wk) in fvals.iter().zip(&field.values).zip(&w) {
            let v = t(s);
            for k in 0..kb {
                rhs[k] += wk * f[k] * v;
            }
        }
        let mut c = vec![0.0; kb];
        pinv.mul_vec(&rhs, &mut c);
        coeffs.push(c);
    }

    let mut resid2 = 0.0;
    let mut proj2 = 0.0;
    let mut field2 = 0.0;
    let mut approx = SymMatrix::zeros(d);
    for ((f, s), wk) in fvals.iter().zip(&field.values).zip(&w) {
        let vals: Vec<f64> = coeffs
            .iter()
            .map(|c| c.iter().zip(f).map(|(a, b)| a * b).sum())
            .collect();
        approx = match shape {
            FrictionShape::Full => {
                let mut m = approx;
                m.packed_mut().copy_from_slice(&vals);
                m
            }
            FrictionShape::Diagonal => SymMatrix::from_diagonal(&vals),
            FrictionShape::Scalar => SymMatrix::scaled_identity(d, vals[0]),
        };
        let diff = s.sub(&approx)?;
        resid2 += wk * diff.frobenius_norm().powi(2);
        proj2 += wk * approx.frobenius_norm().powi(2);
        field2 += wk * s.frobenius_norm().powi(2);
    }
    Ok(Projection {
        residual: resid2.max(0.0).sqrt(),
        projected_norm: proj2.sqrt(),
        field_norm: field2.sqrt(),
        gram_condition,
        singular_gram,
    })
}

/// `2(ξ̄ − γI)/(εΔt)`: the average gradient covariance implied by the
/// stationary friction mean `γI + εΔt·Σ̄/2`.
pub fn estimate_avg_covariance_from_xi(
    xi_mean: &Friction,
    gamma: f64,
    eps: f64,
    dt: f64,
    d: usize,
) -> Result<SymMatrix, DiagError> {
    let scale = 0.5 * eps * dt;
    if !(scale > 0.0) {
        return Err(DiagError::FullBatch);
    }
    let m = xi_mean.to_matrix(d);
    Ok(m.sub(&SymMatrix::scaled_identity(d, gamma))?.scale(1.0 / scale))
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// N(0, 1).
pub fn ks_distance_std_normal(samples: &[f64]) -> f64 {
    let mut s: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len() as f64;
    let normal = Normal::standard();
    let mut d: f64 = 0.0;
    for (i, x) in s.iter().enumerate() {
        let f = normal.cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Least-squares line `y = a + b x` and its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (intercept, slope, r2)
}
