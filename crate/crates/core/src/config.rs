//! Experiment configuration files.
//!
//! One JSON document describes one experiment: the model and its dataset,
//! the sampler sweep, an optional eAdL basis, output options, and the blocks
//! read by the `zhist`, `sigma-field` and `project` commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{indicator_partition, tensor_monomials, uniform_grid_boxes, BasisKind, BasisSet, Region};
use crate::diagnostics::GridAxis;
use crate::minibatch::SamplingMode;
use crate::models::{
    generate_gaussian_data, generate_logistic_data, generate_mixture_data, GaussianMeanModel,
    GaussianMixtureModel, LogisticRegressionModel, ModelError, ToyInjectedNoiseModel,
};
use crate::samplers::{FrictionShape, Method};

#[derive(Debug, Error)]
pub enum ConfigFileError {
    /// Syntax or type error; `msg` ends with the line and column.
    #[error("{path}: {msg}")]
    Parse {
        path: String,
        msg: String,
        line: usize,
        column: usize,
    },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{field}: {source}")]
    Model {
        field: String,
        source: ModelError,
    },
}

fn invalid<T>(field: &str, msg: impl Into<String>) -> Result<T, ConfigFileError> {
    Err(ConfigFileError::Invalid {
        field: field.into(),
        msg: msg.into(),
    })
}

/// A scalar or a list of scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    /// One basis, or a list swept as an extra eAdL axis.
    #[serde(default)]
    pub basis: Option<OneOrMany<BasisConfig>>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub zhist: Option<ZHistConfig>,
    #[serde(default)]
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub project: Option<ProjectConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian {
        sigma_x: f64,
        sigma_theta: f64,
        data: DataSource,
    },
    Mixture {
        sigma1: f64,
        sigma2: f64,
        w: f64,
        data: DataSource,
    },
    Logistic {
        data: DataSource,
    },
    /// Standard normal target with injected noise; needs no dataset.
    Toy { alpha: f64, delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generate(GenerateSpec),
    /// Gaussian and mixture: one value per line (an optional non-numeric
    /// header is skipped). Logistic: CSV with the 0/1 label first, then the
    /// features.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub seed: u64,
    #[serde(alias = "N")]
    pub n: usize,
    /// Gaussian: `[mean]`; mixture: `[μ₁, μ₂]`; logistic: the weights.
    pub true_params: Vec<f64>,
    #[serde(default)]
    pub feature_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub method: Option<OneOrMany<Method>>,
    #[serde(default)]
    pub shape: Option<OneOrMany<FrictionShape>>,
    #[serde(default)]
    pub dt: Option<OneOrMany<f64>>,
    #[serde(default)]
    pub n: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub mode: Option<OneOrMany<SamplingMode>>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub eta: Option<OneOrMany<f64>>,
    /// Physical time; the step count is `round(T/dt)`.
    #[serde(default, alias = "T")]
    pub t: Option<f64>,
    #[serde(default)]
    pub n_steps: Option<u64>,
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default)]
    pub thin: Option<u64>,
    #[serde(default)]
    pub blocks: Option<usize>,
    #[serde(default)]
    pub chains: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// Include `f ≡ 1` first.
    #[serde(default)]
    pub constant: bool,
    #[serde(default)]
    pub boxes: Option<BoxesConfig>,
    /// Monomial degree on each box; 0 gives indicators.
    #[serde(default)]
    pub degree: u32,
    /// Frequency vectors `ω` of `cos(ω·θ)`.
    #[serde(default)]
    pub cosines: Vec<Vec<f64>>,
    #[serde(default)]
    pub normalize: Option<bool>,
    /// θ samples kept from the preliminary AdL run.
    #[serde(default)]
    pub normalization_samples: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoxesConfig {
    /// `splits^d` equal boxes covering `[lo, hi)^d`.
    Grid { lo: f64, hi: f64, splits: usize },
    List(Vec<Region>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistConfig {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub histograms: Vec<HistConfig>,
    #[serde(default)]
    pub metrics: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZHistConfig {
    pub theta: Vec<Vec<f64>>,
    pub n: OneOrMany<usize>,
    #[serde(default)]
    pub mode: Option<OneOrMany<SamplingMode>>,
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub bins: Option<usize>,
    /// Histograms cover `[-range, range]`.
    #[serde(default)]
    pub range: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub grid: Vec<GridAxis>,
    /// Quadrature over x for the large-N limit (mixture with generated data).
    #[serde(default)]
    pub analytic_quad: Option<GridAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub grid: Vec<GridAxis>,
    pub bases: Vec<BasisConfig>,
    #[serde(default)]
    pub shapes: Option<Vec<FrictionShape>>,
}

/// Parses a config document, reporting the JSON path of the first error.
pub fn parse_config(text: &[u8]) -> Result<ExperimentConfig, ConfigFileError> {
    let de = &mut serde_json::Deserializer::from_slice(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigFileError::Parse {
            path,
            msg: inner.to_string(),
            line: inner.line(),
            column: inner.column(),
        }
    })?;
    cfg.validate_static()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigFileError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&bytes)
}

fn finite_positive(field: &str, x: f64) -> Result<(), ConfigFileError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        invalid(field, format!("must be positive and finite, got {x}"))
    }
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<(), ConfigFileError> {
    if v.is_empty() {
        invalid(field, "list must not be empty")
    } else {
        Ok(())
    }
}

impl ExperimentConfig {
    /// Checks that need no file access.
    pub fn validate_static(&self) -> Result<(), ConfigFileError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
            || self.name.starts_with('.')
        {
            return invalid("name", "use letters, digits, '_', '-' or '.'");
        }
        match &self.model {
            ModelConfig::Gaussian { sigma_x, sigma_theta, data } => {
                finite_positive("model.sigma_x", *sigma_x)?;
                finite_positive("model.sigma_theta", *sigma_theta)?;
                data.validate(1)?;
            }
            ModelConfig::Mixture { sigma1, sigma2, w, data } => {
                finite_positive("model.sigma1", *sigma1)?;
                finite_positive("model.sigma2", *sigma2)?;
                if !(*w > 0.0 && *w < 1.0) {
                    return invalid("model.w", format!("must lie in (0, 1), got {w}"));
                }
                data.validate(2)?;
            }
            ModelConfig::Logistic { data } => data.validate(0)?,
            ModelConfig::Toy { alpha, delta } => {
                finite_positive("model.alpha", *alpha)?;
                if !(delta.abs() <= 1.0) {
                    return invalid("model.delta", "must satisfy |delta| <= 1");
                }
            }
        }
        if let Some(s) = &self.sampler {
            s.validate_static(self.model_is_toy())?;
            let methods = s.method.as_ref().map(|m| m.to_vec()).unwrap_or_default();
            if methods.contains(&Method::Eadl) && self.basis.is_none() {
                return invalid("basis", "method eadl requires a basis block");
            }
        }
        if let Some(b) = &self.basis {
            let list = b.to_vec();
            nonempty("basis", &list)?;
            for (i, b) in list.iter().enumerate() {
                b.validate_static(&format!("basis[{i}]"))?;
            }
        }
        for (i, h) in self.output.histograms.iter().enumerate() {
            let f = format!("output.histograms[{i}]");
            if !(h.lo < h.hi) || !h.lo.is_finite() || !h.hi.is_finite() || h.bins == 0 {
                return invalid(&f, "need finite lo < hi and bins > 0");
            }
        }
        if let Some(z) = &self.zhist {
            nonempty("zhist.theta", &z.theta)?;
            nonempty("zhist.n", &z.n.to_vec())?;
            if let Some(m) = &z.mode {
                nonempty("zhist.mode", &m.to_vec())?;
            }
            if z.samples == Some(0) || z.bins == Some(0) {
                return invalid("zhist", "samples and bins must be positive");
            }
            if let Some(r) = z.range {
                finite_positive("zhist.range", r)?;
            }
        }
        if let Some(f) = &self.field {
            validate_grid("field.grid", &f.grid)?;
            if let Some(q) = &f.analytic_quad {
                validate_grid("field.analytic_quad", std::slice::from_ref(q))?;
            }
        }
        if let Some(p) = &self.project {
            validate_grid("project.grid", &p.grid)?;
            nonempty("project.bases", &p.bases)?;
            for (i, b) in p.bases.iter().enumerate() {
                b.validate_static(&format!("project.bases[{i}]"))?;
            }
            if let Some(s) = &p.shapes {
                nonempty("project.shapes", s)?;
            }
        }
        Ok(())
    }

    pub fn model_is_toy(&self) -> bool {
        matches!(self.model, ModelConfig::Toy { .. })
    }
}

fn validate_grid(field: &str, axes: &[GridAxis]) -> Result<(), ConfigFileError> {
    nonempty(field, axes)?;
    for (i, a) in axes.iter().enumerate() {
        if !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() || a.n == 0 {
            return invalid(&format!("{field}[{i}]"), "need finite lo < hi and n > 0");
        }
    }
    Ok(())
}

impl DataSource {
    /// `params` is the expected length of `true_params` (0: any).
    fn validate(&self, params: usize) -> Result<(), ConfigFileError> {
        match self {
            DataSource::Generate(g) => {
                if g.n < 2 {
                    return invalid("model.data.generate.n", "need at least 2 data points");
                }
                if params > 0 && g.true_params.len() != params {
                    return invalid(
                        "model.data.generate.true_params",
                        format!("expected {params} values, got {}", g.true_params.len()),
                    );
                }
                if g.true_params.is_empty() || g.true_params.iter().any(|x| !x.is_finite()) {
                    return invalid("model.data.generate.true_params", "need finite values");
                }
                if let Some(s) = g.feature_scale {
                    finite_positive("model.data.generate.feature_scale", s)?;
                }
                Ok(())
            }
            DataSource::File { .. } => Ok(()),
        }
    }
}

impl SamplerConfig {
    fn validate_static(&self, toy: bool) -> Result<(), ConfigFileError> {
        let methods = match &self.method {
            Some(m) => m.to_vec(),
            None => return invalid("sampler.method", "missing"),
        };
        nonempty("sampler.method", &methods)?;
        if let Some(s) = &self.shape {
            nonempty("sampler.shape", &s.to_vec())?;
        }
        let dts = match &self.dt {
            Some(d) => d.to_vec(),
            None => return invalid("sampler.dt", "missing"),
        };
        nonempty("sampler.dt", &dts)?;
        for dt in &dts {
            finite_positive("sampler.dt", *dt)?;
        }
        match (&self.n, toy) {
            (Some(n), false) => {
                let n = n.to_vec();
                nonempty("sampler.n", &n)?;
                if n.contains(&0) {
                    return invalid("sampler.n", "batch sizes must be positive");
                }
            }
            (None, false) => return invalid("sampler.n", "missing"),
            (Some(_), true) => return invalid("sampler.n", "the toy model has no dataset"),
            (None, true) => {}
        }
        if let Some(m) = &self.mode {
            nonempty("sampler.mode", &m.to_vec())?;
        }
        if let Some(g) = self.gamma {
            finite_positive("sampler.gamma", g)?;
        }
        if let Some(e) = &self.eta {
            let e = e.to_vec();
            nonempty("sampler.eta", &e)?;
            if e.iter().any(|x| !(*x > 0.0)) {
                return invalid("sampler.eta", "values must be positive (inf freezes the friction)");
            }
        }
        match (self.t, self.n_steps) {
            (Some(_), Some(_)) => return invalid("sampler", "give either T or n_steps, not both"),
            (None, None) => return invalid("sampler", "one of T or n_steps is required"),
            (Some(t), None) => finite_positive("sampler.T", t)?,
            (None, Some(0)) => return invalid("sampler.n_steps", "must be positive"),
            (None, Some(_)) => {}
        }
        if self.thin == Some(0) {
            return invalid("sampler.thin", "must be at least 1");
        }
        if self.blocks == Some(0) {
            return invalid("sampler.blocks", "must be at least 1");
        }
        if self.chains == Some(0) {
            return invalid("sampler.chains", "must be at least 1");
        }
        Ok(())
    }

    /// Step count at time step `dt`.
    pub fn n_steps_for(&self, dt: f64) -> u64 {
        match (self.n_steps, self.t) {
            (Some(n), _) => n,
            (None, Some(t)) => ((t / dt).round() as u64).max(1),
            (None, None) => 1,
        }
    }
}

impl BasisConfig {
    fn validate_static(&self, field: &str) -> Result<(), ConfigFileError> {
        if !self.constant && self.boxes.is_none() && self.cosines.is_empty() {
            return invalid(field, "basis is empty");
        }
        if let Some(BoxesConfig::Grid { lo, hi, splits }) = &self.boxes {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || *splits == 0 {
                return invalid(&format!("{field}.boxes"), "need finite lo < hi and splits > 0");
            }
        }
        if self.degree > 8 {
            return invalid(&format!("{field}.degree"), "degree above 8 is not supported");
        }
        for w in &self.cosines {
            if w.iter().any(|x| !x.is_finite()) {
                return invalid(&format!("{field}.cosines"), "frequencies must be finite");
            }
        }
        if self.normalization_samples == Some(0) {
            return invalid(&format!("{field}.normalization_samples"), "must be positive");
        }
        Ok(())
    }

    /// Builds the (unnormalised) basis in dimension `d`: the constant, then
    /// the box functions, then the cosines.
    pub fn build(&self, d: usize, field: &str) -> Result<BasisSet, ConfigFileError> {
        let err = |e: crate::basis::BasisError| ConfigFileError::Invalid {
            field: field.into(),
            msg: e.to_string(),
        };
        let mut kinds = Vec::new();
        if self.constant {
            kinds.push(BasisKind::Constant);
        }
        if let Some(b) = &self.boxes {
            let boxes = match b {
                BoxesConfig::Grid { lo, hi, splits } => uniform_grid_boxes(d, *lo, *hi, *splits),
                BoxesConfig::List(v) => v.clone(),
            };
            let set = if self.degree == 0 {
                indicator_partition(&boxes)
            } else {
                tensor_monomials(&boxes, self.degree)
            }
            .map_err(err)?;
            kinds.extend(set.functions.into_iter().map(|f| f.kind));
        }
        for w in &self.cosines {
            if w.len() != d {
                return invalid(
                    &format!("{field}.cosines"),
                    format!("frequency vectors must have length {d}"),
                );
            }
            kinds.push(BasisKind::Cosine { frequency: w.clone() });
        }
        BasisSet::new(d, kinds).map_err(err)
    }
}

/// A model with its data loaded.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Gaussian(GaussianMeanModel),
    Mixture {
        model: GaussianMixtureModel,
        /// Means the data were generated from, if generated.
        true_params: Option<[f64; 2]>,
    },
    Logistic(LogisticRegressionModel),
    Toy(ToyInjectedNoiseModel),
}

impl LoadedModel {
    pub fn dim(&self) -> usize {
        match self {
            LoadedModel::Gaussian(_) | LoadedModel::Toy(_) => 1,
            LoadedModel::Mixture { .. } => 2,
            LoadedModel::Logistic(m) => crate::models::Model::dim(m),
        }
    }

    pub fn n_data(&self) -> Option<usize> {
        use crate::models::Model;
        match self {
            LoadedModel::Gaussian(m) => Some(m.n_data()),
            LoadedModel::Mixture { model, .. } => Some(model.n_data()),
            LoadedModel::Logistic(m) => Some(m.n_data()),
            LoadedModel::Toy(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Gaussian(_) => "gaussian",
            LoadedModel::Mixture { .. } => "mixture",
            LoadedModel::Logistic(_) => "logistic",
            LoadedModel::Toy(_) => "toy",
        }
    }
}

fn model_err(field: &str) -> impl Fn(ModelError) -> ConfigFileError + '_ {
    move |source| ConfigFileError::Model {
        field: field.into(),
        source,
    }
}

/// Parses one value per line; a non-numeric first line is a header.
pub fn parse_scalar_column(text: &str) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        match s.parse::<f64>() {
            Ok(x) if x.is_finite() => out.push(x),
            Ok(_) => {
                return Err(ModelError::Data {
                    line: i as u64 + 1,
                    msg: "non-finite value".into(),
                })
            }
            Err(_) if i == 0 => {}
            Err(e) => {
                return Err(ModelError::Data {
                    line: i as u64 + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_file(path: &Path) -> Result<String, ConfigFileError> {
    std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl ModelConfig {
    /// Generates or loads the dataset. Relative file paths are resolved
    /// against `base` (the config file's directory).
    pub fn load(&self, base: &Path) -> Result<LoadedModel, ConfigFileError> {
        let f = "model.data";
        match self {
            ModelConfig::Gaussian { sigma_x, sigma_theta, data } => {
                let xs = match data {
                    DataSource::Generate(g) => {
                        generate_gaussian_data(g.seed, g.n, g.true_params[0], *sigma_x)
                    }
                    DataSource::File { path } => {
                        parse_scalar_column(&read_file(&resolve(base, path))?).map_err(model_err(f))?
                    }
                };
                Ok(LoadedModel::Gaussian(
                    GaussianMeanModel::new(xs, *sigma_x, *sigma_theta).map_err(model_err("model"))?,
                ))
            }
            ModelConfig::Mixture { sigma1, sigma2, w, data } => {
                let (xs, true_params) = match data {
                    DataSource::Generate(g) => {
                        let mu = [g.true_params[0], g.true_params[1]];
                        (generate_mixture_data(g.seed, g.n, mu, [*sigma1, *sigma2], *w), Some(mu))
                    }
                    DataSource::File { path } => (
                        parse_scalar_column(&read_file(&resolve(base, path))?).map_err(model_err(f))?,
                        None,
                    ),
                };
                Ok(LoadedModel::Mixture {
                    model: GaussianMixtureModel::new(xs, *sigma1, *sigma2, *w).map_err(model_err("model"))?,
                    true_params,
                })
            }
            ModelConfig::Logistic { data } => Ok(LoadedModel::Logistic(match data {
                DataSource::Generate(g) => {
                    generate_logistic_data(g.seed, g.n, &g.true_params, g.feature_scale.unwrap_or(1.0))
                }
                DataSource::File { path } => {
                    let text = read_file(&resolve(base, path))?;
                    LogisticRegressionModel::from_csv_bytes(text.as_bytes()).map_err(model_err(f))?
                }
            })),
            ModelConfig::Toy { alpha, delta } => Ok(LoadedModel::Toy(
                ToyInjectedNoiseModel::new(*alpha, *delta).map_err(model_err("model"))?,
            )),
        }
    }
}
