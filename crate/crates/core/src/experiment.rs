//! Sweep execution behind the CLI commands.
//!
//! Every command turns a validated [`ExperimentConfig`] into rows of the CSV
//! tables in [`crate::io`]. Work is spread over the current rayon pool; each
//! chain draws from `chain_rng(seed, point, chain)` and results are merged in
//! chain order, so output never depends on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::basis::BasisSet;
use crate::config::{ConfigFileError, ExperimentConfig, LoadedModel, SamplerConfig};
use crate::diagnostics::{
    gaussian_reference, grid_nodes, ks_distance_std_normal, l1_histogram_error, normal_on_grid,
    projection_error, reference_posterior, CovarianceField, DiagError, GridAxis, GridDensity,
};
use crate::io::{FieldRow, HistogramRow, MetricsRow, ProjectionRow, ZHistRow, ZMomentRow};
use crate::minibatch::{epsilon, BatchError, BatchScheme, MiniBatchForce, SamplingMode, ZSampler};
use crate::models::{gaussian_posterior_params, gaussian_sigma_x, Model, ModelError};
use crate::rng::chain_rng;
use crate::samplers::{
    run_chain, ChainResult, ConfigError, FrictionShape, HistSpec, Histogram, Integrator, Method,
    RunOptions,
};

pub const DEFAULT_NORMALIZATION_SAMPLES: u64 = 100_000;
pub const DEFAULT_Z_SAMPLES: u64 = 100_000;
pub const DEFAULT_Z_BINS: usize = 100;
pub const DEFAULT_Z_RANGE: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error("{0}")]
    Sampler(#[from] ConfigError),
    #[error("{0}")]
    Batch(#[from] BatchError),
    #[error("{0}")]
    Diag(#[from] DiagError),
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("{0}")]
    Unsupported(String),
}

fn need<'a, T>(x: &'a Option<T>, what: &str) -> Result<&'a T, ExperimentError> {
    x.as_ref()
        .ok_or_else(|| ExperimentError::Unsupported(format!("config has no {what} block")))
}

/// Values the run filled in because the config left them out.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Defaults(pub BTreeMap<String, Value>);

impl Defaults {
    fn set(&mut self, key: &str, v: impl Serialize) {
        self.0
            .insert(key.to_string(), serde_json::to_value(v).expect("serialisable default"));
    }
}

/// One combination of the sweep axes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub index: usize,
    pub method: Method,
    /// `None` for methods without friction.
    pub shape: Option<FrictionShape>,
    pub dt: f64,
    /// `None` for the toy model, whose force is not a mini-batch estimator.
    pub scheme: Option<BatchScheme>,
    /// Index into the plan's bases (eAdL only).
    pub basis: Option<usize>,
}

impl SweepPoint {
    pub fn shape_str(&self) -> &'static str {
        self.shape.map_or("none", |s| s.as_str())
    }

    pub fn mode_str(&self) -> &'static str {
        self.scheme.map_or("none", |s| s.mode.as_str())
    }

    pub fn label(&self) -> String {
        let mut s = format!("{} {}", self.method.as_str(), self.shape_str());
        if let Some(b) = self.scheme {
            s.push_str(&format!(" n={} {}", b.n, b.mode.as_str()));
        }
        s.push_str(&format!(" dt={}", self.dt));
        s
    }
}

/// Resolved sampler settings.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub points: Vec<SweepPoint>,
    pub gamma: f64,
    pub eta: Vec<f64>,
    pub chains: u64,
    pub seed: u64,
    pub thin: u64,
    pub blocks: usize,
    pub hists: Vec<HistSpec>,
    pub metrics: Vec<String>,
    pub bases: Vec<PlannedBasis>,
    sampler: SamplerConfig,
}

#[derive(Debug, Clone)]
pub struct PlannedBasis {
    pub set: BasisSet,
    pub normalize: bool,
    pub normalization_samples: u64,
}

impl SweepPlan {
    pub fn n_steps(&self, p: &SweepPoint) -> u64 {
        self.sampler.n_steps_for(p.dt)
    }

    pub fn burn_in(&self, p: &SweepPoint) -> u64 {
        self.sampler.burn_in.unwrap_or(self.n_steps(p) / 10)
    }

    fn run_options(&self, p: &SweepPoint) -> RunOptions {
        let mut o = RunOptions::new(self.n_steps(p));
        o.burn_in = self.burn_in(p);
        o.thin = self.thin;
        o.blocks = self.blocks;
        o.hists = self.hists.clone();
        o
    }

    /// The friction timescales for `method`, broadcast to one per basis
    /// function.
    fn eta_for(&self, method: Method, basis: Option<usize>) -> Result<Vec<f64>, ExperimentError> {
        let k = match method {
            Method::Sgld | Method::Langevin => return Ok(Vec::new()),
            Method::Adl => 1,
            Method::Eadl => basis.map_or(1, |b| self.bases[b].set.len()),
        };
        match self.eta.len() {
            1 => Ok(vec![self.eta[0]; k]),
            m if m == k => Ok(self.eta.clone()),
            m => Err(ConfigFileError::Invalid {
                field: "sampler.eta".into(),
                msg: format!("{} needs 1 or {k} values, got {m}", method.as_str()),
            }
            .into()),
        }
    }
}

const METRIC_NAMES: [&str; 6] = [
    "var_rel_error",
    "var_rel_error_pred",
    "mean_error",
    "xi_pred",
    "l1",
    "moments",
];

fn check_metric_name(name: &str) -> Result<(), ConfigFileError> {
    if METRIC_NAMES.contains(&name)
        || name == "retained"
        || name.strip_prefix("mean_").is_some_and(|l| !l.is_empty())
        || name.strip_prefix("var_").is_some_and(|l| !l.is_empty())
    {
        Ok(())
    } else {
        Err(ConfigFileError::Invalid {
            field: "output.metrics".into(),
            msg: format!(
                "unknown metric {name:?}; expected one of {METRIC_NAMES:?}, retained, mean_<label> or var_<label>"
            ),
        })
    }
}

/// Expands the sweep axes and fills in defaults.
pub fn plan_sweep(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    defaults: &mut Defaults,
) -> Result<SweepPlan, ExperimentError> {
    let s = need(&cfg.sampler, "sampler")?.clone();
    let methods = s.method.as_ref().expect("validated").to_vec();
    let shapes = match &s.shape {
        Some(v) => v.to_vec(),
        None => {
            if methods.iter().any(|m| m.has_friction()) {
                defaults.set("sampler.shape", ["full"]);
            }
            vec![FrictionShape::Full]
        }
    };
    let dts = s.dt.as_ref().expect("validated").to_vec();
    let modes = match &s.mode {
        Some(m) => m.to_vec(),
        None if s.n.is_some() => {
            defaults.set("sampler.mode", ["without_replacement"]);
            vec![SamplingMode::WithoutReplacement]
        }
        None => Vec::new(),
    };
    let ns = s.n.as_ref().map(|n| n.to_vec());
    if let (Some(ns), Some(big)) = (&ns, model.n_data()) {
        if let Some(n) = ns.iter().find(|n| **n > big) {
            return Err(ConfigFileError::Invalid {
                field: "sampler.n".into(),
                msg: format!("batch size {n} exceeds N = {big}"),
            }
            .into());
        }
    }
    let n_bases = cfg.basis.as_ref().map_or(0, |b| b.to_vec().len());
    let mut points = Vec::new();
    for &method in &methods {
        let shape_axis: Vec<Option<FrictionShape>> = if method.has_friction() {
            shapes.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let basis_axis: Vec<Option<usize>> = if method == Method::Eadl {
            (0..n_bases).map(Some).collect()
        } else {
            vec![None]
        };
        for (&basis, &shape) in basis_axis
            .iter()
            .flat_map(|b| shape_axis.iter().map(move |s| (b, s)))
        {
            for &dt in &dts {
                let schemes: Vec<Option<BatchScheme>> = match &ns {
                    Some(ns) => ns
                        .iter()
                        .flat_map(|&n| modes.iter().map(move |&m| Some(BatchScheme::new(n, m))))
                        .collect(),
                    None => vec![None],
                };
                for scheme in schemes {
                    points.push(SweepPoint {
                        index: points.len(),
                        method,
                        shape,
                        dt,
                        scheme,
                        basis,
                    });
                }
            }
        }
    }

    let gamma = s.gamma.unwrap_or_else(|| {
        if methods.iter().any(|m| m.has_momentum()) {
            defaults.set("sampler.gamma", 1.0);
        }
        1.0
    });
    let eta = match &s.eta {
        Some(e) => e.to_vec(),
        None => {
            if methods.iter().any(|m| m.has_friction()) {
                defaults.set("sampler.eta", 1.0);
            }
            vec![1.0]
        }
    };
    let chains = s.chains.unwrap_or_else(|| {
        defaults.set("sampler.chains", 1);
        1
    });
    let seed = s.seed.unwrap_or_else(|| {
        defaults.set("sampler.seed", 0);
        0
    });
    let thin = s.thin.unwrap_or_else(|| {
        defaults.set("sampler.thin", 1);
        1
    });
    let blocks = s.blocks.unwrap_or_else(|| {
        defaults.set("sampler.blocks", 32);
        32
    });
    if s.burn_in.is_none() {
        defaults.set("sampler.burn_in", "n_steps / 10");
    }
    for p in &points {
        let n_steps = s.n_steps_for(p.dt);
        let burn = s.burn_in.unwrap_or(n_steps / 10);
        if burn >= n_steps {
            return Err(ConfigFileError::Invalid {
                field: "sampler.burn_in".into(),
                msg: format!("burn_in {burn} must be below n_steps {n_steps} (dt = {})", p.dt),
            }
            .into());
        }
    }

    let d = model.dim();
    let hists: Vec<HistSpec> = cfg
        .output
        .histograms
        .iter()
        .map(|h| HistSpec {
            axis: h.axis,
            lo: h.lo,
            hi: h.hi,
            bins: h.bins,
        })
        .collect();
    if let Some(h) = hists.iter().find(|h| h.axis >= d) {
        return Err(ConfigFileError::Invalid {
            field: "output.histograms".into(),
            msg: format!("axis {} out of range for dimension {d}", h.axis),
        }
        .into());
    }

    let has_l1_reference = match model {
        LoadedModel::Gaussian(_) | LoadedModel::Toy(_) => !hists.is_empty(),
        LoadedModel::Mixture { .. } => (0..2).all(|a| hists.iter().any(|h| h.axis == a)),
        LoadedModel::Logistic(_) => false,
    };
    let metrics = match &cfg.output.metrics {
        Some(m) => {
            for name in m {
                check_metric_name(name)?;
            }
            if m.iter().any(|x| x == "l1") && !has_l1_reference {
                return Err(ConfigFileError::Invalid {
                    field: "output.metrics".into(),
                    msg: "l1 needs histograms (both axes for the mixture; unavailable for logistic)".into(),
                }
                .into());
            }
            m.clone()
        }
        None => {
            let m: Vec<String> = match model {
                LoadedModel::Gaussian(_) => vec!["var_rel_error".into()],
                _ if has_l1_reference => vec!["l1".into()],
                _ => vec!["moments".into()],
            };
            defaults.set("output.metrics", &m);
            m
        }
    };

    let mut bases = Vec::new();
    if methods.contains(&Method::Eadl) {
        for (i, b) in cfg.basis.as_ref().map(|b| b.to_vec()).unwrap_or_default().iter().enumerate() {
            let set = b.build(d, &format!("basis[{i}]"))?;
            let normalize = b.normalize.unwrap_or_else(|| {
                defaults.set(&format!("basis[{i}].normalize"), true);
                true
            });
            let samples = b.normalization_samples.unwrap_or_else(|| {
                if normalize {
                    defaults.set(
                        &format!("basis[{i}].normalization_samples"),
                        DEFAULT_NORMALIZATION_SAMPLES,
                    );
                }
                DEFAULT_NORMALIZATION_SAMPLES
            });
            if normalize {
                defaults.set("basis.normalization_run", "adl at the point's settings, same n_steps and burn_in");
            }
            bases.push(PlannedBasis {
                set,
                normalize,
                normalization_samples: samples,
            });
        }
    }

    let plan = SweepPlan {
        points,
        gamma,
        eta,
        chains,
        seed,
        thin,
        blocks,
        hists,
        metrics,
        bases,
        sampler: s,
    };
    for p in &plan.points {
        plan.eta_for(p.method, p.basis)?;
    }
    Ok(plan)
}

/// Runs one chain of `integrator` on the loaded model.
pub fn run_model_chain(
    model: &LoadedModel,
    scheme: Option<BatchScheme>,
    integrator: &Integrator<'_>,
    opts: &RunOptions,
    seed: (u64, u64, u64),
) -> Result<ChainResult, ExperimentError> {
    let mut rng = chain_rng(seed.0, seed.1, seed.2);
    let scheme_or = |m: usize| scheme.unwrap_or(BatchScheme::full(m));
    Ok(match model {
        LoadedModel::Gaussian(m) => {
            let mut f = MiniBatchForce::new(m, scheme_or(m.n_data()))?;
            run_chain(integrator, &mut f, opts, &mut rng)
        }
        LoadedModel::Mixture { model: m, .. } => {
            let mut f = MiniBatchForce::new(m, scheme_or(m.n_data()))?;
            run_chain(integrator, &mut f, opts, &mut rng)
        }
        LoadedModel::Logistic(m) => {
            let mut f = MiniBatchForce::new(m, scheme_or(m.n_data()))?;
            run_chain(integrator, &mut f, opts, &mut rng)
        }
        LoadedModel::Toy(t) => {
            let mut f = *t;
            run_chain(integrator, &mut f, opts, &mut rng)
        }
    })
}

/// `ε(n)` of a point; the toy model reports `α²/2`, the constant part of
/// its injected noise variance.
fn point_epsilon(model: &LoadedModel, p: &SweepPoint) -> Result<f64, ExperimentError> {
    match (model, p.scheme) {
        (LoadedModel::Toy(t), _) => Ok(0.5 * t.alpha * t.alpha),
        (m, Some(s)) => Ok(epsilon(m.n_data().expect("dataset model"), s)?),
        (_, None) => Ok(0.0),
    }
}

/// Reference densities for the `l1` metric, one per histogram.
fn l1_references(model: &LoadedModel, hists: &[HistSpec]) -> Result<Vec<GridDensity>, ExperimentError> {
    let axis = |h: &HistSpec| GridAxis::new(h.lo, h.hi, h.bins);
    match model {
        LoadedModel::Gaussian(m) => hists
            .iter()
            .map(|h| Ok(gaussian_reference(m, axis(h))?))
            .collect(),
        LoadedModel::Toy(_) => hists
            .iter()
            .map(|h| Ok(normal_on_grid(0.0, 1.0, axis(h))?))
            .collect(),
        LoadedModel::Mixture { model: m, .. } => {
            let first = |a: usize| hists.iter().find(|h| h.axis == a).map(axis);
            let grid = match (first(0), first(1)) {
                (Some(a), Some(b)) => [a, b],
                _ => return Ok(Vec::new()),
            };
            let joint = reference_posterior(m, &grid)?;
            hists
                .iter()
                .map(|h| {
                    let ax = axis(h);
                    if ax == grid[h.axis] {
                        Ok(joint.marginal(h.axis)?)
                    } else {
                        let mut g = grid;
                        g[h.axis] = ax;
                        Ok(reference_posterior(m, &g)?.marginal(h.axis)?)
                    }
                })
                .collect()
        }
        LoadedModel::Logistic(_) => Ok(Vec::new()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub shape_label: &'static str,
    pub mode_label: &'static str,
    #[serde(rename = "K")]
    pub k: usize,
    pub eps: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub retained: u64,
    /// Basis norm constants used by eAdL.
    pub normalization: Option<Vec<f64>>,
    pub unsupported: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRecord {
    pub point: usize,
    pub chain: u64,
    pub step: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub plan: SweepPlan,
    pub summaries: Vec<PointSummary>,
    pub results: Vec<ChainResult>,
    pub metrics: Vec<MetricsRow>,
    pub histograms: Vec<HistogramRow>,
    pub divergences: Vec<DivergenceRecord>,
}

/// Basis normalised from a preliminary AdL run at the point's settings.
fn normalized_basis(
    model: &LoadedModel,
    plan: &SweepPlan,
    p: &SweepPoint,
    basis: &PlannedBasis,
) -> Result<BasisSet, ExperimentError> {
    let integ = Integrator {
        method: Method::Adl,
        shape: p.shape.unwrap_or(FrictionShape::Full),
        dt: p.dt,
        gamma: plan.gamma,
        eta: vec![plan.eta[0]],
        basis: None,
    };
    let mut opts = plan.run_options(p);
    opts.hists.clear();
    opts.blocks = 1;
    let retained = opts.retained().max(1);
    opts.record_theta_every = Some(retained.div_ceil(basis.normalization_samples).max(1));
    let r = run_model_chain(model, p.scheme, &integ, &opts, (plan.seed, p.index as u64, u64::MAX))?;
    if let Some(d) = r.divergences.first() {
        return Err(ExperimentError::Unsupported(format!(
            "normalisation run for point {} diverged at step {}: {}",
            p.index, d.step, d.reason
        )));
    }
    Ok(basis.set.normalize_l2_pi(&r.theta_samples))
}

/// Runs every (point, chain) pair of the sweep.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    defaults: &mut Defaults,
) -> Result<SweepOutput, ExperimentError> {
    let plan = plan_sweep(cfg, model, defaults)?;

    let bases: Vec<Option<BasisSet>> = plan
        .points
        .par_iter()
        .map(|p| match p.basis.map(|b| &plan.bases[b]) {
            Some(b) if b.normalize => normalized_basis(model, &plan, p, b).map(Some),
            Some(b) => Ok(Some(b.set.clone())),
            None => Ok(None),
        })
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, u64)> = (0..plan.points.len())
        .flat_map(|i| (0..plan.chains).map(move |c| (i, c)))
        .collect();
    let per_chain: Vec<ChainResult> = jobs
        .par_iter()
        .map(|&(i, c)| {
            let p = &plan.points[i];
            let integ = Integrator {
                method: p.method,
                shape: p.shape.unwrap_or(FrictionShape::Full),
                dt: p.dt,
                gamma: plan.gamma,
                eta: plan.eta_for(p.method, p.basis)?,
                basis: bases[i].as_ref(),
            };
            integ.validate()?;
            run_model_chain(model, p.scheme, &integ, &plan.run_options(p), (plan.seed, i as u64, c))
        })
        .collect::<Result<_, _>>()?;

    let refs = if plan.metrics.iter().any(|m| m == "l1") {
        l1_references(model, &plan.hists)?
    } else {
        Vec::new()
    };

    let mut summaries = Vec::new();
    let mut results = Vec::new();
    let mut metrics = Vec::new();
    let mut histograms = Vec::new();
    let mut divergences = Vec::new();
    let mut chunks = per_chain.into_iter();
    for (i, p) in plan.points.iter().enumerate() {
        let chain_results: Vec<ChainResult> = chunks.by_ref().take(plan.chains as usize).collect();
        for (c, r) in chain_results.iter().enumerate() {
            for d in &r.divergences {
                divergences.push(DivergenceRecord {
                    point: i,
                    chain: c as u64,
                    step: d.step,
                    reason: d.reason.clone(),
                });
            }
        }
        let n_div = chain_results.iter().filter(|r| !r.divergences.is_empty()).count();
        let merged = ChainResult::merge_all(chain_results);
        let eps = point_epsilon(model, p)?;
        let k = match p.method {
            Method::Eadl => bases[i].as_ref().map_or(0, |b| b.len() - 1),
            _ => 0,
        };
        let row = |metric: String, value: f64, stderr: f64| MetricsRow {
            method: p.method.as_str().into(),
            shape: p.shape_str().into(),
            k,
            n: p.scheme.map_or(0, |s| s.n),
            mode: p.mode_str().into(),
            eps,
            dt: p.dt,
            metric,
            value,
            stderr,
        };
        for (name, value, stderr) in point_metrics(model, &plan, p, eps, &merged, &refs)? {
            metrics.push(row(name, value, stderr));
        }
        if n_div > 0 {
            metrics.push(row("diverged_chains".into(), n_div as f64, 0.0));
        }
        for h in &merged.hists {
            histograms.extend(histogram_rows(p, k, h));
        }
        let norm = bases[i]
            .as_ref()
            .filter(|_| p.basis.is_some_and(|b| plan.bases[b].normalize));
        summaries.push(PointSummary {
            point: p.clone(),
            shape_label: p.shape_str(),
            mode_label: p.mode_str(),
            k,
            eps,
            n_steps: plan.n_steps(p),
            burn_in: plan.burn_in(p),
            retained: merged.retained(),
            normalization: norm.map(|b| b.norm_consts()),
            unsupported: norm.map(|b| {
                b.functions
                    .iter()
                    .enumerate()
                    .filter(|(_, f)| f.unsupported)
                    .map(|(j, _)| j)
                    .collect()
            }),
        });
        results.push(merged);
    }
    Ok(SweepOutput {
        plan,
        summaries,
        results,
        metrics,
        histograms,
        divergences,
    })
}

fn histogram_rows(p: &SweepPoint, k: usize, h: &Histogram) -> Vec<HistogramRow> {
    let w = h.bin_width();
    h.counts
        .iter()
        .zip(h.density())
        .enumerate()
        .map(|(b, (&count, density))| HistogramRow {
            method: p.method.as_str().into(),
            shape: p.shape_str().into(),
            k,
            n: p.scheme.map_or(0, |s| s.n),
            mode: p.mode_str().into(),
            dt: p.dt,
            axis: h.axis,
            bin_lo: h.lo + b as f64 * w,
            bin_hi: h.lo + (b + 1) as f64 * w,
            count,
            density,
        })
        .collect()
}

/// `(name, value, stderr)` for every requested metric available at `p`.
fn point_metrics(
    model: &LoadedModel,
    plan: &SweepPlan,
    p: &SweepPoint,
    eps: f64,
    r: &ChainResult,
    refs: &[GridDensity],
) -> Result<Vec<(String, f64, f64)>, ExperimentError> {
    let mut out = Vec::new();
    let gaussian = match model {
        LoadedModel::Gaussian(m) => {
            let (mu, var) = gaussian_posterior_params(m);
            Some((mu, var, gaussian_sigma_x(m)?))
        }
        _ => None,
    };
    let moments = |out: &mut Vec<(String, f64, f64)>, label: &str, var: bool| {
        let e = if var { r.variance_of(label) } else { r.mean_of(label) };
        if let Some(e) = e {
            let name = format!("{}_{label}", if var { "var" } else { "mean" });
            out.push((name, e.value, e.stderr));
        }
    };
    for name in &plan.metrics {
        match name.as_str() {
            "var_rel_error" => {
                if let (Some((_, var, _)), Some(e)) = (gaussian, r.variance_of("theta1")) {
                    out.push((name.clone(), (e.value - var) / var, e.stderr / var));
                }
            }
            "var_rel_error_pred" => {
                if let Some((_, var, sigma)) = gaussian {
                    let pred = match p.method {
                        Method::Sgld => crate::diagnostics::sgld_predicted_error(eps, p.dt, sigma, var),
                        Method::Langevin => {
                            crate::diagnostics::langevin_predicted_error(eps, p.dt, sigma, plan.gamma)
                        }
                        _ => continue,
                    };
                    out.push((name.clone(), pred, 0.0));
                }
            }
            "mean_error" => {
                if let (Some((mu, _, _)), Some(e)) = (gaussian, r.mean_of("theta1")) {
                    out.push((name.clone(), e.value - mu, e.stderr));
                }
            }
            "xi_pred" => {
                if let (Some((_, _, sigma)), Method::Adl) = (gaussian, p.method) {
                    let a = crate::diagnostics::adl_friction_mean(plan.gamma, eps, p.dt, sigma);
                    out.push((name.clone(), a, 0.0));
                }
            }
            "l1" => {
                for (h, reference) in r.hists.iter().zip(refs) {
                    if h.total() == 0 {
                        continue;
                    }
                    let l1 = l1_histogram_error(h, reference, 0)?;
                    out.push((format!("l1_theta{}", h.axis + 1), l1, f64::NAN));
                }
            }
            "retained" => out.push((name.clone(), r.retained() as f64, 0.0)),
            "moments" => {
                for label in &r.labels {
                    moments(&mut out, label, false);
                    moments(&mut out, label, true);
                }
            }
            other => {
                if let Some(l) = other.strip_prefix("mean_") {
                    moments(&mut out, l, false);
                } else if let Some(l) = other.strip_prefix("var_") {
                    moments(&mut out, l, true);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Z histograms

#[derive(Debug, Clone, Serialize)]
pub struct ZJob {
    pub point: usize,
    pub theta: Vec<f64>,
    pub n: usize,
    pub mode: SamplingMode,
}

#[derive(Debug, Clone)]
pub struct ZHistOutput {
    pub jobs: Vec<ZJob>,
    pub hists: Vec<ZHistRow>,
    pub moments: Vec<ZMomentRow>,
}

/// Draws `Z` at every (θ, n, mode) of the `zhist` block.
pub fn run_zhist(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    defaults: &mut Defaults,
) -> Result<ZHistOutput, ExperimentError> {
    let z = need(&cfg.zhist, "zhist")?;
    let modes = match &z.mode {
        Some(m) => m.to_vec(),
        None => {
            defaults.set("zhist.mode", ["without_replacement"]);
            vec![SamplingMode::WithoutReplacement]
        }
    };
    let samples = z.samples.unwrap_or_else(|| {
        defaults.set("zhist.samples", DEFAULT_Z_SAMPLES);
        DEFAULT_Z_SAMPLES
    });
    let bins = z.bins.unwrap_or_else(|| {
        defaults.set("zhist.bins", DEFAULT_Z_BINS);
        DEFAULT_Z_BINS
    });
    let range = z.range.unwrap_or_else(|| {
        defaults.set("zhist.range", DEFAULT_Z_RANGE);
        DEFAULT_Z_RANGE
    });
    let seed = z.seed.unwrap_or_else(|| {
        defaults.set("zhist.seed", 0);
        0
    });
    let d = model.dim();
    if let Some(t) = z.theta.iter().find(|t| t.len() != d) {
        return Err(ConfigFileError::Invalid {
            field: "zhist.theta".into(),
            msg: format!("points must have dimension {d}, got {}", t.len()),
        }
        .into());
    }
    let mut jobs = Vec::new();
    for t in &z.theta {
        for n in z.n.to_vec() {
            for &mode in &modes {
                jobs.push(ZJob {
                    point: jobs.len(),
                    theta: t.clone(),
                    n,
                    mode,
                });
            }
        }
    }
    let per_job: Vec<(Vec<ZHistRow>, Vec<ZMomentRow>)> = jobs
        .par_iter()
        .map(|j| z_job(model, j, samples, bins, range, seed))
        .collect::<Result<_, _>>()?;
    let mut out = ZHistOutput {
        jobs,
        hists: Vec::new(),
        moments: Vec::new(),
    };
    for (h, m) in per_job {
        out.hists.extend(h);
        out.moments.extend(m);
    }
    Ok(out)
}

fn z_job(
    model: &LoadedModel,
    j: &ZJob,
    samples: u64,
    bins: usize,
    range: f64,
    seed: u64,
) -> Result<(Vec<ZHistRow>, Vec<ZMomentRow>), ExperimentError> {
    fn draw<M: Model>(
        m: &M,
        j: &ZJob,
        samples: u64,
        seed: u64,
    ) -> Result<Result<Vec<Vec<f64>>, f64>, ExperimentError> {
        let scheme = BatchScheme::new(j.n, j.mode);
        let mut zs = match ZSampler::new(m, &j.theta, scheme) {
            Ok(z) => z,
            Err(BatchError::SingularCovariance { min_eigenvalue }) => return Ok(Err(min_eigenvalue)),
            Err(e) => return Err(e.into()),
        };
        let d = m.dim();
        let mut rng = chain_rng(seed, j.point as u64, 0);
        let mut cols = vec![Vec::with_capacity(samples as usize); d];
        let mut buf = vec![0.0; d];
        for _ in 0..samples {
            zs.sample(&mut rng, &mut buf);
            for (c, v) in cols.iter_mut().zip(&buf) {
                c.push(*v);
            }
        }
        Ok(Ok(cols))
    }
    let drawn = match model {
        LoadedModel::Gaussian(m) => draw(m, j, samples, seed)?,
        LoadedModel::Mixture { model: m, .. } => draw(m, j, samples, seed)?,
        LoadedModel::Logistic(m) => draw(m, j, samples, seed)?,
        LoadedModel::Toy(_) => {
            return Err(ExperimentError::Unsupported(
                "zhist needs a dataset model".into(),
            ))
        }
    };
    let mode = j.mode.as_str().to_string();
    let moment = |metric: String, value: f64| ZMomentRow {
        point: j.point,
        n: j.n,
        mode: mode.clone(),
        metric,
        value,
    };
    let cols = match drawn {
        Ok(c) => c,
        Err(min_eig) => {
            eprintln!(
                "warning: zhist point {} at theta {:?}: singular gradient covariance (min eigenvalue {min_eig:e})",
                j.point, j.theta
            );
            return Ok((Vec::new(), vec![moment("singular".into(), min_eig)]));
        }
    };
    let mut hists = Vec::new();
    let mut moments = Vec::new();
    let count = samples as f64;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / count).collect();
    for (a, c) in cols.iter().enumerate() {
        let mut h = Histogram::new(a, -range, range, bins);
        for &v in c {
            h.push(v);
        }
        let w = h.bin_width();
        for (b, (&cnt, dens)) in h.counts.iter().zip(h.density()).enumerate() {
            hists.push(ZHistRow {
                point: j.point,
                n: j.n,
                mode: mode.clone(),
                axis: a,
                bin_lo: -range + b as f64 * w,
                bin_hi: -range + (b + 1) as f64 * w,
                count: cnt,
                density: dens,
            });
        }
        moments.push(moment(format!("mean{}", a + 1), means[a]));
    }
    for a in 0..cols.len() {
        for b in a..cols.len() {
            let cov = cols[a]
                .iter()
                .zip(&cols[b])
                .map(|(x, y)| (x - means[a]) * (y - means[b]))
                .sum::<f64>()
                / (count - 1.0);
            moments.push(moment(format!("cov{}{}", a + 1, b + 1), cov));
        }
    }
    for (a, c) in cols.iter().enumerate() {
        moments.push(moment(format!("ks{}", a + 1), ks_distance_std_normal(c)));
    }
    Ok((hists, moments))
}

// ---------------------------------------------------------------------------
// Covariance fields and projections

#[derive(Debug, Clone)]
pub struct FieldOutput {
    pub empirical: Vec<FieldRow>,
    pub analytic: Option<Vec<FieldRow>>,
}

fn field_rows(nodes: &[Vec<f64>], values: &[crate::linalg::SymMatrix]) -> Vec<FieldRow> {
    nodes
        .iter()
        .zip(values)
        .map(|(t, s)| {
            if t.len() == 1 {
                FieldRow {
                    theta1: t[0],
                    theta2: 0.0,
                    s11: s.get(0, 0),
                    s12: 0.0,
                    s22: 0.0,
                }
            } else {
                FieldRow {
                    theta1: t[0],
                    theta2: t[1],
                    s11: s.get(0, 0),
                    s12: s.get(0, 1),
                    s22: s.get(1, 1),
                }
            }
        })
        .collect()
}

/// Empirical `Σ_x` on the grid, and the large-N limit for generated mixture
/// data.
pub fn run_sigma_field(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    defaults: &mut Defaults,
) -> Result<FieldOutput, ExperimentError> {
    let f = need(&cfg.field, "field")?;
    let axes = &f.grid;
    let nodes = grid_nodes(axes);
    let empirical = match model {
        LoadedModel::Gaussian(m) => CovarianceField::from_model(m, axes)?,
        LoadedModel::Mixture { model: m, .. } => CovarianceField::from_model(m, axes)?,
        _ => {
            return Err(ExperimentError::Unsupported(
                "sigma-field supports the gaussian and mixture models".into(),
            ))
        }
    };
    let analytic = match model {
        LoadedModel::Mixture {
            model: m,
            true_params: Some(mu),
        } => {
            let quad = f.analytic_quad.unwrap_or_else(|| {
                let s = m.sigma1.max(m.sigma2);
                let q = GridAxis::new(mu[0].min(mu[1]) - 12.0 * s, mu[0].max(mu[1]) + 12.0 * s, 20_000);
                defaults.set("field.analytic_quad", q);
                q
            });
            let values = nodes
                .iter()
                .map(|t| crate::diagnostics::analytic_sigma_limit(m, mu, &[t[0], t[1]], quad))
                .collect::<Result<Vec<_>, _>>()?;
            Some(field_rows(&nodes, &values))
        }
        _ => None,
    };
    Ok(FieldOutput {
        empirical: field_rows(&nodes, &empirical.values),
        analytic,
    })
}

/// Projection residual of the empirical `Σ_x` field for every basis and
/// shape of the `project` block, weighted by the reference posterior.
pub fn run_project(
    cfg: &ExperimentConfig,
    model: &LoadedModel,
    defaults: &mut Defaults,
) -> Result<Vec<ProjectionRow>, ExperimentError> {
    let pc = need(&cfg.project, "project")?;
    let shapes = pc.shapes.clone().unwrap_or_else(|| {
        defaults.set("project.shapes", ["scalar", "diagonal", "full"]);
        vec![FrictionShape::Scalar, FrictionShape::Diagonal, FrictionShape::Full]
    });
    let (field, weights) = match model {
        LoadedModel::Gaussian(m) => (
            CovarianceField::from_model(m, &pc.grid)?,
            reference_posterior(m, &pc.grid)?,
        ),
        LoadedModel::Mixture { model: m, .. } => (
            CovarianceField::from_model(m, &pc.grid)?,
            reference_posterior(m, &pc.grid)?,
        ),
        _ => {
            return Err(ExperimentError::Unsupported(
                "project supports the gaussian and mixture models".into(),
            ))
        }
    };
    let d = model.dim();
    let mut rows = Vec::new();
    for (i, bc) in pc.bases.iter().enumerate() {
        let basis = bc.build(d, &format!("project.bases[{i}]"))?;
        for &shape in &shapes {
            let pr = projection_error(&field, &weights, &basis, shape)?;
            if pr.singular_gram {
                eprintln!(
                    "warning: project basis {i}: singular Gram matrix (condition number {:e}); pseudo-inverse used",
                    pr.gram_condition
                );
            }
            rows.push(ProjectionRow {
                k: basis.len() - 1,
                degree: bc.degree,
                shape: shape.as_str().into(),
                residual: pr.residual,
            });
        }
    }
    Ok(rows)
}

/// Version string recorded in run metadata.
pub fn version_info() -> Value {
    json!({
        "mblangevin": env!("CARGO_PKG_VERSION"),
        "git": option_env!("MBL_GIT_DESCRIBE").unwrap_or("unknown"),
    })
}
