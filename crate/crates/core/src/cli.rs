//! `mblangevin run|zhist|sigma-field|project <config.json>`.
//!
//! Output goes to `<dir>/<name>/` where `<dir>` is, in order of precedence,
//! `--out`, `$MBL_OUT`, the config's `output.directory`, or `results`.
//! Exit status: 0 on success, 1 on configuration or input errors, 2 when a
//! chain diverged (results are still written, divergent points flagged).

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{load_config, ExperimentConfig, LoadedModel};
use crate::experiment::{
    run_project, run_sigma_field, run_sweep, run_zhist, version_info, Defaults, ExperimentError,
};
use crate::io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mblangevin", version, about = "Mini-batched Langevin sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sampler sweep: metrics.csv, histograms.csv, meta.json.
    Run(CommonArgs),
    /// Histograms of the normalised gradient noise Z: zhist.csv, zmoments.csv.
    Zhist(CommonArgs),
    /// Per-datum gradient covariance on a grid: field.csv (+ field_analytic.csv).
    SigmaField(CommonArgs),
    /// Projection residuals over bases and friction shapes: projection.csv.
    Project(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_CONFIG
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn csv_err(path: &Path) -> impl Fn(io::CsvError) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

struct Prepared {
    cfg: ExperimentConfig,
    raw: Value,
    model: LoadedModel,
    out_dir: PathBuf,
    pool: rayon::ThreadPool,
}

fn output_root(args: &CommonArgs, cfg: &ExperimentConfig, defaults: &mut Defaults) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Some(o) = std::env::var_os("MBL_OUT").filter(|o| !o.is_empty()) {
        return PathBuf::from(o);
    }
    if let Some(o) = &cfg.output.directory {
        return o.clone();
    }
    defaults.0.insert("output.directory".into(), json!("results"));
    PathBuf::from("results")
}

fn prepare(args: &CommonArgs, defaults: &mut Defaults) -> Result<Prepared, CliError> {
    let mut cfg = load_config(&args.config).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = args.seed {
        if let Some(s) = cfg.sampler.as_mut() {
            s.seed = Some(seed);
        }
        if let Some(z) = cfg.zhist.as_mut() {
            z.seed = Some(seed);
        }
    }
    let mut raw = serde_json::to_value(&cfg).expect("config serialises");
    strip_nulls(&mut raw);
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let model = cfg
        .model
        .load(&base)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let out_dir = output_root(args, &cfg, defaults).join(&cfg.name);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    Ok(Prepared {
        cfg,
        raw,
        model,
        out_dir,
        pool,
    })
}

/// Drops unset optional fields from the config echo.
fn strip_nulls(v: &mut Value) {
    match v {
        Value::Object(m) => {
            m.retain(|_, x| !x.is_null());
            m.values_mut().for_each(strip_nulls);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_meta(
    dir: &Path,
    p: &Prepared,
    defaults: &Defaults,
    started: Instant,
    divergences: Value,
    extra: Value,
) -> Result<(), CliError> {
    let mut meta = json!({
        "config": p.raw,
        "defaults_applied": defaults,
        "versions": version_info(),
        "wall_seconds": started.elapsed().as_secs_f64(),
        "divergences": divergences,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serialises");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))
}

fn execute(cmd: &Command) -> Result<i32, CliError> {
    let started = Instant::now();
    let args = match cmd {
        Command::Run(a) | Command::Zhist(a) | Command::SigmaField(a) | Command::Project(a) => a,
    };
    let mut defaults = Defaults::default();
    let p = prepare(args, &mut defaults)?;
    let dir = p.out_dir.clone();
    let mut code = EXIT_OK;
    let extra;
    let divergences;
    match cmd {
        Command::Run(_) => {
            let out = p.pool.install(|| run_sweep(&p.cfg, &p.model, &mut defaults))?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let mpath = dir.join("metrics.csv");
            io::write_metrics(create(&mpath)?, &out.metrics).map_err(csv_err(&mpath))?;
            let hpath = dir.join("histograms.csv");
            io::write_histograms(create(&hpath)?, &out.histograms).map_err(csv_err(&hpath))?;
            let total = out.plan.points.len();
            for s in &out.summaries {
                let first = out
                    .metrics
                    .iter()
                    .find(|m| {
                        m.method == s.point.method.as_str()
                            && m.shape == s.shape_label
                            && m.dt == s.point.dt
                            && m.n == s.point.scheme.map_or(0, |b| b.n)
                            && m.mode == s.mode_label
                            && m.k == s.k
                    })
                    .map(|m| format!("{} = {:.6e} ± {:.2e}", m.metric, m.value, m.stderr))
                    .unwrap_or_default();
                let flag = if out.divergences.iter().any(|d| d.point == s.point.index) {
                    " DIVERGED"
                } else {
                    ""
                };
                let k = if s.point.basis.is_some() { format!(" K={}", s.k) } else { String::new() };
                println!(
                    "[{:>3}/{total}] {}{k} eps={:.4e} retained={}: {first}{flag}",
                    s.point.index + 1,
                    s.point.label(),
                    s.eps,
                    s.retained
                );
            }
            if !out.divergences.is_empty() {
                code = EXIT_DIVERGED;
                eprintln!(
                    "{} chain(s) diverged; see meta.json and the diverged_chains metric",
                    out.divergences.len()
                );
            }
            divergences = serde_json::to_value(&out.divergences).expect("serialisable");
            extra = json!({ "points": out.summaries });
        }
        Command::Zhist(_) => {
            let out = p.pool.install(|| run_zhist(&p.cfg, &p.model, &mut defaults))?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let hpath = dir.join("zhist.csv");
            io::write_zhist(create(&hpath)?, &out.hists).map_err(csv_err(&hpath))?;
            let mpath = dir.join("zmoments.csv");
            io::write_zmoments(create(&mpath)?, &out.moments).map_err(csv_err(&mpath))?;
            for j in &out.jobs {
                let ks: Vec<String> = out
                    .moments
                    .iter()
                    .filter(|m| m.point == j.point && (m.metric.starts_with("ks") || m.metric == "singular"))
                    .map(|m| format!("{}={:.4}", m.metric, m.value))
                    .collect();
                println!(
                    "[{:>3}/{}] theta={:?} n={} {}: {}",
                    j.point + 1,
                    out.jobs.len(),
                    j.theta,
                    j.n,
                    j.mode.as_str(),
                    ks.join(" ")
                );
            }
            divergences = json!([]);
            extra = json!({ "points": out.jobs });
        }
        Command::SigmaField(_) => {
            let out = run_sigma_field(&p.cfg, &p.model, &mut defaults)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join("field.csv");
            io::write_field(create(&path)?, &out.empirical).map_err(csv_err(&path))?;
            if let Some(a) = &out.analytic {
                let path = dir.join("field_analytic.csv");
                io::write_field(create(&path)?, a).map_err(csv_err(&path))?;
            }
            let range = |f: fn(&io::FieldRow) -> f64| {
                out.empirical
                    .iter()
                    .map(f)
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
            };
            let (lo, hi) = range(|r| r.s11);
            println!("{} nodes, S11 in [{lo:.4e}, {hi:.4e}]", out.empirical.len());
            divergences = json!([]);
            extra = json!({});
        }
        Command::Project(_) => {
            let rows = run_project(&p.cfg, &p.model, &mut defaults)?;
            std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            let path = dir.join("projection.csv");
            io::write_projection(create(&path)?, &rows).map_err(csv_err(&path))?;
            for r in &rows {
                println!("K={:<3} degree={} {:<8} residual={:.6e}", r.k, r.degree, r.shape, r.residual);
            }
            divergences = json!([]);
            extra = json!({});
        }
    }
    write_meta(&dir, &p, &defaults, started, divergences, extra)?;
    Ok(code)
}
