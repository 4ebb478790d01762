use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

fn msra(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_msra")).args(args).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn gaussian(rho: f64, alpha: f64, n: usize, extra: &str) -> String {
    format!(
        r#"{{"model": {{"type": "gaussian", "sigma": [1, 1], "correlation": [[1, {rho}], [{rho}, 1]]}},
            "loss": {{"family": "quadratic_systemic", "d": 2, "params": {{"alpha": {alpha}}}}},
            "solver": {{"n_scenarios": {n}, "seed": 42}}{extra}}}"#
    )
}

fn run_ok(args: &[&str]) -> String {
    let (code, text) = msra(args);
    assert_eq!(code, 0, "{args:?} failed: {text}");
    text
}

fn allocate(dir: &Path, config: &Path, out: &str) -> Value {
    let out = dir.join(out);
    run_ok(&["allocate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    read_json(out.join("allocation.json"))
}

/// Keys listed as required by a shipped schema are present, and no key
/// outside its properties appears.
fn conforms(value: &Value, schema: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(schema);
    let schema = read_json(path);
    let obj = value.as_object().unwrap();
    for key in schema["required"].as_array().unwrap() {
        assert!(obj.contains_key(key.as_str().unwrap()), "missing {key}");
    }
    if schema["additionalProperties"] == Value::Bool(false) {
        let props = schema["properties"].as_object().unwrap();
        for key in obj.keys() {
            assert!(props.contains_key(key), "unexpected key {key}");
        }
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &gaussian(0.3, 1.0, 5000, ""));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let summary = run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    conforms(&serde_json::from_str(&summary).unwrap(), "simulation_summary.schema.json");
    run_ok(&["--threads", "1", "simulate", "--config", config.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let bytes = fs::read(a.join("scenarios.msra")).unwrap();
    assert_eq!(&bytes[..4], b"MSRA");
    assert_eq!(bytes, fs::read(b.join("scenarios.msra")).unwrap());
}

#[test]
fn allocation_matches_known_values_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &gaussian(0.0, 1.0, 200_000, ""));
    let first = allocate(dir.path(), &config, "a");
    conforms(&first, "allocation.schema.json");
    conforms(&read_json(dir.path().join("a").join("timing.json")), "timing.schema.json");
    let m = first["m_star"].as_array().unwrap();
    assert!((m[0].as_f64().unwrap() + 0.103).abs() < 0.01, "{first}");
    assert!((first["risk"].as_f64().unwrap() + 0.206).abs() < 0.02, "{first}");
    let second = allocate(dir.path(), &config, "b");
    assert_eq!(first, second);
}

#[test]
fn scenarios_file_is_reused() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &gaussian(0.5, 1.0, 20_000, ""));
    let sim = dir.path().join("sim");
    run_ok(&["simulate", "--config", config.to_str().unwrap(), "--out", sim.to_str().unwrap()]);
    let scen = sim.join("scenarios.msra");
    let out = dir.path().join("out");
    run_ok(&[
        "allocate", "--config", config.to_str().unwrap(),
        "--scenarios", scen.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    let direct = allocate(dir.path(), &config, "direct");
    assert_eq!(read_json(out.join("allocation.json"))["m_star"], direct["m_star"]);
}

#[test]
fn no_systemic_weight_means_no_dependence() {
    let dir = TempDir::new().unwrap();
    let risks: Vec<f64> = [-0.5, 0.0, 0.5]
        .iter()
        .enumerate()
        .map(|(i, rho)| {
            let config = write_config(dir.path(), &format!("c{i}.json"), &gaussian(*rho, 0.0, 200_000, ""));
            allocate(dir.path(), &config, &format!("o{i}"))["risk"].as_f64().unwrap()
        })
        .collect();
    for r in &risks {
        assert!((r - 2.0 * -0.1727).abs() < 0.02, "{risks:?}");
    }
}

#[test]
fn csv_format_writes_allocation_table() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &gaussian(0.2, 1.0, 20_000, ""));
    let out = dir.path().join("o");
    run_ok(&["--format", "csv", "allocate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("allocation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn independent_shock_moves_its_own_component() {
    let dir = TempDir::new().unwrap();
    let extra = r#", "sensitivity": {"shock": {"type": "independent_normal", "mean": [0.1, 0], "std": [0.05, 0]}, "alpha": true},
        "plots": {"src_grid": {"steps": 11}, "alpha_profile": {"n_scenarios": 20000, "rhos": [-0.5, 0.5]}}"#;
    let config = write_config(dir.path(), "c.json", &gaussian(0.5, 1.0, 200_000, extra));
    let out = dir.path().join("o");
    run_ok(&["sensitivity", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let report = read_json(out.join("sensitivity.json"));
    conforms(&report, "sensitivity.schema.json");
    let shock = &report["shock"];
    assert!((shock["marginal_risk"].as_f64().unwrap() - 0.1).abs() < 0.005, "{shock}");
    assert!((shock["marginal_alloc"][0].as_f64().unwrap() - 0.1).abs() < 0.005, "{shock}");
    assert!(shock["marginal_alloc"][1].as_f64().unwrap().abs() < 0.005, "{shock}");
    assert!(report["alpha"]["marginal_risk"].as_f64().unwrap() > 0.0);
    for plot in ["src_grid.csv", "alpha_profile.csv"] {
        assert!(out.join(plot).exists(), "{plot} missing");
    }
}

#[test]
fn default_fund_weights_sum_to_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "c.json",
        r#"{"model": {"type": "synthetic_book", "members": 6, "underlyings": 3},
            "solver": {"n_scenarios": 20000},
            "default_fund": {"im_level": 0.99}}"#,
    );
    let out = dir.path().join("o");
    run_ok(&["default-fund", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    conforms(&read_json(out.join("default_fund.json")), "default_fund.schema.json");
    let mut reader = csv::Reader::from_path(out.join("default_fund_weights.csv")).unwrap();
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["member", "im", "weight_im", "weight_l1", "weight_l2", "pct_diff_l1_im", "pct_diff_l1_l2"]);
    let mut sums = [0.0; 3];
    let mut rows = 0;
    for record in reader.records() {
        let record = record.unwrap();
        for (j, sum) in sums.iter_mut().enumerate() {
            *sum += record[2 + j].parse::<f64>().unwrap();
        }
        rows += 1;
    }
    assert_eq!(rows, 6);
    for s in sums {
        assert!((s - 1.0).abs() < 1e-10, "{sums:?}");
    }
}

#[test]
fn validate_loss_reports_axioms() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "c.json", &gaussian(0.0, 1.0, 1000, ""));
    let out = dir.path().join("o");
    run_ok(&["validate-loss", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--samples", "2000"]);
    conforms(&read_json(out.join("validation.json")), "validation.schema.json");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = |path: &PathBuf| path.to_str().unwrap().to_string();
    let non_psd = write_config(
        dir.path(),
        "bad.json",
        r#"{"model": {"type": "gaussian", "covariance": [[1, 2], [2, 1]]},
            "loss": {"family": "quadratic_systemic", "d": 2, "params": {"alpha": 1}}}"#,
    );
    assert_eq!(msra(&["allocate", "--config", &p(&non_psd)]).0, 1);
    let unknown = write_config(dir.path(), "unknown.json", &gaussian(0.0, 1.0, 100, r#", "bogus": 1"#));
    assert_eq!(msra(&["allocate", "--config", &p(&unknown)]).0, 1);
    assert_eq!(msra(&["allocate", "--config", &p(&dir.path().join("missing.json"))]).0, 3);
    let short = write_config(
        dir.path(),
        "short.json",
        &gaussian(0.0, 1.0, 10_000, "").replace(r#""seed": 42"#, r#""seed": 42, "max_iter": 1"#),
    );
    let out = dir.path().join("o");
    assert_eq!(msra(&["allocate", "--config", &p(&short), "--out", &p(&out)]).0, 2);
    assert_eq!(msra(&["frobnicate"]).0, 1);
}
