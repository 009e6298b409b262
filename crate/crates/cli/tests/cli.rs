use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dkf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dkf")).args(args).output().expect("run dkf")
}

fn ok(args: &[&str]) -> String {
    let out = dkf(args);
    assert!(
        out.status.success(),
        "dkf {args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small-image Healing generator and model settings that keep runs quick.
const SMALL: &str = r#"
[healing]
side = 12
square_size = 3
[model]
latent_dim = 3
obs_dim = 144
hidden = [16]
[model.recognition]
hidden = [16]
feature_dim = 8
rnn_hidden = 6
rnn_layers = 1
combiner_hidden = [8]
[train]
batch_size = 16
"#;

fn small_setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("healing.ntc");
    ok(&["generate", "--preset", "small-healing", "--sequences", "48", "--seed", "3", "--config", p(&cfg), "--out", p(&data)]);
    (p(&cfg).to_string(), p(&data).to_string())
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ntc"), dir.path().join("b.ntc"));
    for out in [&a, &b] {
        ok(&["generate", "--preset", "small-healing", "--seed", "7", "--sequences", "30", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.ntc");
    ok(&["generate", "--preset", "small-healing", "--seed", "8", "--sequences", "30", "--out", p(&c)]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn linear_oracle_writes_system_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lin.ntc");
    ok(&["generate", "--preset", "linear-oracle", "--sequences", "20", "--out", p(&out)]);
    assert!(out.is_file());
    assert!(dir.path().join("lin.theta.ntc").is_file());
}

#[test]
fn generate_into_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nope").join("x.ntc");
    let res = dkf(&["generate", "--preset", "small-healing", "--sequences", "5", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not exist"));
}

#[test]
fn train_is_reproducible_and_records_config() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_setup(dir.path());
    let runs: Vec<_> = ["r1", "r2"].iter().map(|r| dir.path().join(r)).collect();
    for run in &runs {
        let log = ok(&["train", "--data", &data, "--config", &cfg, "--variant", "q-brnn", "--epochs", "2", "--seed", "1", "--out", p(run)]);
        assert!(log.contains("epoch   2"));
    }
    let m1 = fs::read_to_string(runs[0].join("metrics.csv")).unwrap();
    assert_eq!(m1, fs::read_to_string(runs[1].join("metrics.csv")).unwrap());
    assert!(m1.starts_with("epoch,elbo,recon,kl\n"));
    assert_eq!(m1.lines().count(), 3);
    let config = fs::read_to_string(runs[0].join("config.toml")).unwrap();
    assert!(config.contains(&format!("version = \"{}\"", env!("CARGO_PKG_VERSION"))));
    assert!(config.contains("q-brnn"));
    assert!(runs[0].join("checkpoint.ntc").is_file());
}

#[test]
fn train_q_indep_logs_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_setup(dir.path());
    let run = dir.path().join("run");
    let log = ok(&["train", "--data", &data, "--config", &cfg, "--variant", "q-indep", "--epochs", "3", "--out", p(&run)]);
    for e in 1..=3 {
        assert!(log.contains(&format!("epoch   {e}  elbo")), "{log}");
    }
}

#[test]
fn invalid_variant_lists_valid_ones() {
    let res = dkf(&["train", "--data", "x.ntc", "--out", "y", "--variant", "q-deep"]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    for v in ["q-indep", "q-lr", "q-rnn", "q-brnn"] {
        assert!(err.contains(v), "{err}");
    }
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let data = dir.path().join("d.ntc");
    let res = dkf(&["generate", "--preset", "small-healing", "--sequences", "5", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("epochz"));
}

fn linear_run(dir: &Path) -> (String, String) {
    let data = dir.join("lin.ntc");
    ok(&["generate", "--preset", "linear-oracle", "--sequences", "40", "--steps", "6", "--seed", "2", "--out", p(&data)]);
    let run = dir.join("lin-run");
    ok(&["train", "--data", p(&data), "--linear", "--latent-dim", "2", "--epochs", "2", "--batch-size", "8", "--out", p(&run)]);
    (p(&data).to_string(), p(&run.join("checkpoint.ntc")).to_string())
}

#[test]
fn eval_reports_both_sample_sizes_and_exact_likelihood() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ck) = linear_run(dir.path());
    let report = dir.path().join("eval.json");
    let out = ok(&["eval", "--checkpoint", &ck, "--data", &data, "--limit", "10", "--out", p(&report)]);
    assert!(out.contains("S=1") && out.contains("S=100"), "{out}");
    assert!(out.contains("exact log-likelihood"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["sequences"], 10);
    assert!(json["kalman_loglik"].as_f64().unwrap().is_finite());
    assert!(json["is_loglik"].as_f64().unwrap().is_finite());

    let (_, healing) = small_setup(dir.path());
    let res = dkf(&["eval", "--checkpoint", &ck, "--data", &healing]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("channels"));
}

#[test]
fn sample_grid_is_deterministic_with_one_row_per_action() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = small_setup(dir.path());
    let run = dir.path().join("run");
    ok(&["train", "--data", &data, "--config", &cfg, "--epochs", "1", "--out", p(&run)]);
    let ck = run.join("checkpoint.ntc");
    let (a, b) = (dir.path().join("s1"), dir.path().join("s2"));
    for out in [&a, &b] {
        ok(&["sample", "--checkpoint", p(&ck), "--actions", "-1,0,1", "--steps", "4", "--seed", "5", "--out", p(out)]);
    }
    let grid = fs::read(a.join("grid.pgm")).unwrap();
    assert_eq!(grid, fs::read(b.join("grid.pgm")).unwrap());
    // Three 12-pixel rows and four 12-pixel columns with 1-pixel separators.
    assert!(grid.starts_with(b"P5\n51 38\n255\n"));
    assert!(a.join("samples.ntc").is_file());

    let (_, lin_ck) = linear_run(dir.path());
    let raw = dir.path().join("raw");
    let out = ok(&["sample", "--checkpoint", &lin_ck, "--out", p(&raw)]);
    assert!(out.contains("not square images"));
    assert!(raw.join("samples.ntc").is_file());
    assert!(!raw.join("grid.pgm").exists());
}

#[test]
fn counterfactual_equal_actions_give_zero_contrast() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ck) = linear_run(dir.path());
    let query = dir.path().join("q.json");
    fs::write(
        &query,
        r#"{"prefix_x": [[0.1, -0.3], [0.4, 0.2]], "prefix_u": [[0.5]],
            "factual": [[1.0], [0.0], [-1.0]], "alternative": [[1.0], [0.0], [-1.0]],
            "num_samples": 200, "threshold": {"channel": 0, "value": 0.0}}"#,
    )
    .unwrap();
    let out = dir.path().join("cf");
    ok(&["counterfactual", "--checkpoint", &ck, "--query", p(&query), "--out", p(&out)]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for row in report["latent_difference"].as_array().unwrap() {
        assert!(row.as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    }
    let csv = fs::read_to_string(out.join("threshold.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,factual,alternative"));
    assert_eq!(csv.lines().count(), 4);
    assert!(out.join("config.toml").is_file());

    let res = dkf(&["counterfactual", "--checkpoint", &ck, "--query", p(&query), "--do", "0=1", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("not an indicator"));
}

#[test]
fn selfcheck_passes_by_default_and_fails_below_the_numeric_floor() {
    let out = ok(&["selfcheck", "--instances", "2"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3, "{out}");
    assert!(out.contains("max deviation"));

    let res = dkf(&["selfcheck", "--tol", "1e-15"]);
    assert_eq!(res.status.code(), Some(2));
    let out = String::from_utf8_lossy(&res.stdout);
    assert!(out.lines().any(|l| l.starts_with("FAIL") && l.contains("factorization")), "{out}");
}
