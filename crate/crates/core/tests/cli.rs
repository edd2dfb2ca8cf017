use std::fs;
use std::path::{Path, PathBuf};

use mblangevin::cli::{main_with_args, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK};
use mblangevin::io;
use mblangevin::models::{generate_gaussian_data, sample_variance};
use serde_json::Value;
use tempfile::TempDir;

const MINIMAL: &str = r#"{
  "name": "minimal",
  "model": {"kind": "gaussian", "sigma_x": 1, "sigma_theta": 1,
            "data": {"generate": {"seed": 1, "N": 100, "true_params": [0.0]}}},
  "sampler": {"method": "sgld", "dt": 0.001, "n": 10, "n_steps": 20000}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "mblangevin".to_string(),
        cmd.to_string(),
        config.display().to_string(),
        "--out".to_string(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    main_with_args(args)
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn minimal_run_writes_one_metric_row() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    assert_eq!(run("run", &cfg, tmp.path(), &[]), EXIT_OK);
    let dir = tmp.path().join("minimal");
    let rows = io::parse_metrics(&read(dir.join("metrics.csv"))[..]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "sgld");
    assert_eq!(rows[0].metric, "var_rel_error");
    assert!(dir.join("histograms.csv").exists());

    let meta: Value = serde_json::from_slice(&read(dir.join("meta.json"))).unwrap();
    for key in ["config", "defaults_applied", "versions", "wall_seconds", "divergences"] {
        assert!(meta.get(key).is_some(), "meta.json lacks {key}");
    }
    let d = &meta["defaults_applied"];
    for key in ["sampler.burn_in", "sampler.mode", "sampler.seed", "sampler.blocks", "output.metrics"] {
        assert!(d.get(key).is_some(), "default {key} not recorded: {d}");
    }
    assert_eq!(meta["config"]["sampler"]["n_steps"], 20000);
}

#[test]
fn reruns_and_thread_counts_give_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL
        .replace("\"n\": 10", "\"n\": [1, 10], \"mode\": [\"with_replacement\", \"without_replacement\"], \"chains\": 3")
        .replace("\"sgld\"", "[\"sgld\", \"langevin\"]");
    let cfg = write_config(tmp.path(), "c.json", &text);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("out{i}"));
        assert_eq!(run("run", &cfg, &out, &["--threads", threads]), EXIT_OK);
        let dir = out.join("minimal");
        outputs.push((read(dir.join("metrics.csv")), read(dir.join("histograms.csv"))));
    }
    assert!(outputs[0] == outputs[1], "rerun changed the output");
    assert!(outputs[0] == outputs[2], "thread count changed the output");
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("run", &cfg, &a, &["--seed", "7"]), EXIT_OK);
    assert_eq!(run("run", &cfg, &b, &[]), EXIT_OK);
    let ma = read(a.join("minimal/metrics.csv"));
    let mb = read(b.join("minimal/metrics.csv"));
    assert_ne!(ma, mb);
    let meta: Value = serde_json::from_slice(&read(a.join("minimal/meta.json"))).unwrap();
    assert_eq!(meta["config"]["sampler"]["seed"], 7);
}

#[test]
fn csv_outputs_round_trip_through_the_parsers() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace(
        "\"n_steps\": 20000}",
        "\"n_steps\": 20000}, \"output\": {\"histograms\": [{\"axis\": 0, \"lo\": -0.5, \"hi\": 0.5, \"bins\": 20}], \
         \"metrics\": [\"var_rel_error\", \"mean_error\", \"moments\"]}",
    );
    let cfg = write_config(tmp.path(), "c.json", &text);
    assert_eq!(run("run", &cfg, tmp.path(), &[]), EXIT_OK);
    let dir = tmp.path().join("minimal");

    let bytes = read(dir.join("metrics.csv"));
    let rows = io::parse_metrics(&bytes[..]).unwrap();
    assert!(rows.len() > 1);
    let mut again = Vec::new();
    io::write_metrics(&mut again, &rows).unwrap();
    assert_eq!(bytes, again);

    let bytes = read(dir.join("histograms.csv"));
    let rows = io::parse_histograms(&bytes[..]).unwrap();
    assert_eq!(rows.len(), 20);
    let mut again = Vec::new();
    io::write_histograms(&mut again, &rows).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn bad_config_exits_1() {
    let tmp = TempDir::new().unwrap();
    let bad = write_config(
        tmp.path(),
        "bad.json",
        &MINIMAL.replace("\"dt\": 0.001", "\"dt\": \"small\""),
    );
    assert_eq!(run("run", &bad, tmp.path(), &[]), EXIT_CONFIG);
    assert!(!tmp.path().join("minimal").exists());

    let missing = tmp.path().join("nope.json");
    assert_eq!(run("run", &missing, tmp.path(), &[]), EXIT_CONFIG);

    let bad_n = write_config(tmp.path(), "n.json", &MINIMAL.replace("\"n\": 10", "\"n\": 101"));
    assert_eq!(run("run", &bad_n, tmp.path(), &[]), EXIT_CONFIG);
}

#[test]
fn divergence_exits_2_and_still_writes_results() {
    let tmp = TempDir::new().unwrap();
    let text = MINIMAL.replace("\"dt\": 0.001", "\"dt\": [0.001, 0.5]");
    let cfg = write_config(tmp.path(), "c.json", &text);
    assert_eq!(run("run", &cfg, tmp.path(), &[]), EXIT_DIVERGED);
    let dir = tmp.path().join("minimal");
    let rows = io::parse_metrics(&read(dir.join("metrics.csv"))[..]).unwrap();
    assert!(rows.iter().any(|r| r.dt == 0.001 && r.metric == "var_rel_error" && r.value.is_finite()));
    assert!(rows.iter().any(|r| r.dt == 0.5 && r.metric == "diverged_chains" && r.value == 1.0));
    let meta: Value = serde_json::from_slice(&read(dir.join("meta.json"))).unwrap();
    assert_eq!(meta["divergences"].as_array().unwrap().len(), 1);
}

const ZHIST: &str = r#"{
  "name": "z",
  "model": {"kind": "gaussian", "sigma_x": 1, "sigma_theta": 1,
            "data": {"generate": {"seed": 3, "N": NDATA, "true_params": [0.0]}}},
  "zhist": {"theta": [[0.5]], "n": NLIST, "samples": 100000, "bins": BINS, "range": 5.0, "seed": 2}
}"#;

fn zhist_config(n_data: usize, n: &str, bins: usize) -> String {
    ZHIST
        .replace("NDATA", &n_data.to_string())
        .replace("NLIST", n)
        .replace("BINS", &bins.to_string())
}

#[test]
fn zhist_is_near_gaussian_at_n30_and_atomic_at_n1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "z.json", &zhist_config(100, "[30]", 100));
    assert_eq!(run("zhist", &cfg, tmp.path(), &[]), EXIT_OK);
    let m = io::parse_zmoments(&read(tmp.path().join("z/zmoments.csv"))[..]).unwrap();
    let ks = m.iter().find(|r| r.metric == "ks1").unwrap().value;
    assert!(ks <= 0.02, "KS distance {ks}");

    // 20 data points, 1000 narrow bins: at most 20 distinct Z values.
    let cfg = write_config(tmp.path(), "z1.json", &zhist_config(20, "[1]", 1000));
    let out = tmp.path().join("one");
    assert_eq!(run("zhist", &cfg, &out, &[]), EXIT_OK);
    let h = io::parse_zhist(&read(out.join("z/zhist.csv"))[..]).unwrap();
    let occupied = h.iter().filter(|r| r.count > 0).count();
    assert!(occupied > 1 && occupied <= 20, "{occupied} occupied bins");
    let total: u64 = h.iter().map(|r| r.count).sum();
    assert!(total <= 100_000);
}

#[test]
fn zhist_full_batch_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "z.json", &zhist_config(100, "[100]", 50));
    assert_eq!(run("zhist", &cfg, tmp.path(), &[]), EXIT_CONFIG);
}

#[test]
fn sigma_field_gaussian_is_constant() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "name": "f",
      "model": {"kind": "gaussian", "sigma_x": 2, "sigma_theta": 1,
                "data": {"generate": {"seed": 5, "N": 50, "true_params": [0.3]}}},
      "field": {"grid": [{"lo": -1, "hi": 1, "n": 9}]}
    }"#;
    let cfg = write_config(tmp.path(), "f.json", text);
    assert_eq!(run("sigma-field", &cfg, tmp.path(), &[]), EXIT_OK);
    let rows = io::parse_field(&read(tmp.path().join("f/field.csv"))[..]).unwrap();
    assert_eq!(rows.len(), 9);
    let x = generate_gaussian_data(5, 50, 0.3, 2.0);
    let expected = sample_variance(&x).unwrap() / 16.0;
    for r in &rows {
        assert!((r.s11 - expected).abs() <= 1e-12 * expected, "{} vs {expected}", r.s11);
        assert_eq!((r.theta2, r.s12, r.s22), (0.0, 0.0, 0.0));
    }
}

#[test]
fn sigma_field_mixture_varies_and_matches_the_large_n_limit() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "name": "f",
      "model": {"kind": "mixture", "sigma1": 0.4, "sigma2": 0.4, "w": 0.4,
                "data": {"generate": {"seed": 4, "N": 100000, "true_params": [1.0, 0.5]}}},
      "field": {"grid": [{"lo": 0, "hi": 1.4, "n": 6}, {"lo": 0, "hi": 1.4, "n": 6}],
                "analytic_quad": {"lo": -5.0, "hi": 6.5, "n": 20000}}
    }"#;
    let cfg = write_config(tmp.path(), "f.json", text);
    assert_eq!(run("sigma-field", &cfg, tmp.path(), &[]), EXIT_OK);
    let emp = io::parse_field(&read(tmp.path().join("f/field.csv"))[..]).unwrap();
    let ana = io::parse_field(&read(tmp.path().join("f/field_analytic.csv"))[..]).unwrap();
    assert_eq!(emp.len(), 36);

    let (lo, hi) = emp
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.s11), b.max(r.s11)));
    assert!(hi > 2.0 * lo, "S11 range [{lo}, {hi}]");

    for (e, a) in emp.iter().zip(&ana) {
        assert_eq!((e.theta1, e.theta2), (a.theta1, a.theta2));
        let diff = ((e.s11 - a.s11).powi(2) + 2.0 * (e.s12 - a.s12).powi(2) + (e.s22 - a.s22).powi(2)).sqrt();
        let norm = (a.s11.powi(2) + 2.0 * a.s12.powi(2) + a.s22.powi(2)).sqrt();
        assert!(diff <= 0.05 * norm, "at ({}, {}): {diff} vs {norm}", e.theta1, e.theta2);
    }
}

#[test]
fn projection_residuals_are_ordered() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "name": "p",
      "model": {"kind": "mixture", "sigma1": 0.4, "sigma2": 0.4, "w": 0.4,
                "data": {"generate": {"seed": 4, "N": 200, "true_params": [1.0, 0.5]}}},
      "project": {
        "grid": [{"lo": -0.2, "hi": 1.6, "n": 60}, {"lo": -0.2, "hi": 1.6, "n": 60}],
        "bases": [
          {"constant": true},
          {"boxes": {"lo": 0.0, "hi": 1.4, "splits": 2}, "degree": 0},
          {"boxes": {"lo": 0.0, "hi": 1.4, "splits": 2}, "degree": 1},
          {"boxes": {"lo": 0.0, "hi": 1.4, "splits": 2}, "degree": 2}
        ]
      }
    }"#;
    let cfg = write_config(tmp.path(), "p.json", text);
    assert_eq!(run("project", &cfg, tmp.path(), &[]), EXIT_OK);
    let bytes = read(tmp.path().join("p/projection.csv"));
    let rows = io::parse_projection(&bytes[..]).unwrap();
    let mut again = Vec::new();
    io::write_projection(&mut again, &rows).unwrap();
    assert_eq!(bytes, again);

    assert_eq!(rows.iter().map(|r| r.k).collect::<Vec<_>>(), [0, 0, 0, 3, 3, 3, 15, 15, 15, 35, 35, 35]);
    let by_shape = |s: &str| rows.iter().filter(|r| r.shape == s).map(|r| r.residual).collect::<Vec<_>>();
    let (sc, dg, fu) = (by_shape("scalar"), by_shape("diagonal"), by_shape("full"));
    for v in [&sc, &dg, &fu] {
        assert!(v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{v:?}");
    }
    for k in 0..4 {
        assert!(fu[k] <= dg[k] * (1.0 + 1e-9) && dg[k] <= sc[k] * (1.0 + 1e-9));
    }
}

#[test]
fn projection_of_a_constant_field_is_exact() {
    let tmp = TempDir::new().unwrap();
    let text = r#"{
      "name": "p",
      "model": {"kind": "gaussian", "sigma_x": 1, "sigma_theta": 1,
                "data": {"generate": {"seed": 1, "N": 100, "true_params": [0.0]}}},
      "project": {
        "grid": [{"lo": -0.5, "hi": 0.5, "n": 200}],
        "bases": [{"constant": true}, {"boxes": {"lo": -0.5, "hi": 0.5, "splits": 3}, "degree": 1}]
      }
    }"#;
    let cfg = write_config(tmp.path(), "p.json", text);
    assert_eq!(run("project", &cfg, tmp.path(), &[]), EXIT_OK);
    let rows = io::parse_projection(&read(tmp.path().join("p/projection.csv"))[..]).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r.residual.abs() < 1e-10, "{r:?}");
    }
}

#[test]
fn bundled_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            mblangevin::config::load_config(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            count += 1;
        }
    }
    assert!(count >= 10);
}
