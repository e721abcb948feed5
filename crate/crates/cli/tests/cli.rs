use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn vinemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinemix")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vinemix(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    vinemix(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_FIT: &str = r#"
[fit]
margin_families = ["normal", "gamma", "lognormal"]
copula_families = ["independence", "gaussian", "clayton", "gumbel"]
restarts = 4
"#;

/// Simulates a small sample and fits it with a reduced family set.
fn small_fit(dir: &Path, seed: &str) -> PathBuf {
    let cfg = dir.join("config.toml");
    fs::write(&cfg, SMALL_FIT).unwrap();
    let sim = dir.join("sim");
    ok(&["simulate", "--counts", "150,170", "--seed", seed, "--out", p(&sim)]);
    let fit = dir.join("fit");
    ok(&[
        "fit",
        "--config",
        p(&cfg),
        "--input",
        p(&sim.join("simulated.csv")),
        "--schema",
        p(&sim.join("simulated_schema.toml")),
        "--seed",
        seed,
        "--out",
        p(&fit),
    ]);
    fit
}

#[test]
fn simulate_example_gives_labelled_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", p(dir.path())]);
    let rows = csv_rows(&dir.path().join("simulated.csv"));
    assert_eq!(rows[0], ["zone_id", "x1", "x2", "x3", "component"]);
    assert_eq!(rows.len() - 1, 920 + 1044);
    let ones = rows[1..].iter().filter(|r| r[4] == "1").count();
    assert_eq!(ones, 920);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config"]["seed"], 1);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "simulated.csv"));
}

#[test]
fn fit_then_rank_covers_every_zone() {
    let dir = tempfile::tempdir().unwrap();
    let fit = small_fit(dir.path(), "3");
    let sim = dir.path().join("sim");
    let input = sim.join("simulated.csv");
    let schema = sim.join("simulated_schema.toml");
    let model = fit.join("model.json");
    let doc = json(&model);
    assert_eq!(doc["weights"].as_array().unwrap().len(), 2);
    assert_eq!(csv_rows(&fit.join("responsibilities.csv")).len(), 321);

    let rank = dir.path().join("rank");
    ok(&["rank", "--input", p(&input), "--schema", p(&schema), "--model", p(&model), "--out", p(&rank)]);
    let rows = csv_rows(&rank.join("ranking.csv"));
    assert_eq!(rows[0], ["zone_id", "posterior", "rank"]);
    assert_eq!(rows.len() - 1, 320);
    assert_eq!(rows[1][2], "1");
    let k_star = json(&rank.join("deprived_cluster.json"))["k_star"].as_u64().unwrap();
    assert!(k_star < 2);

    let plots = dir.path().join("plots");
    ok(&[
        "export-plot-data",
        "--input",
        p(&input),
        "--schema",
        p(&schema),
        "--model",
        p(&model),
        "--compare",
        p(&rank.join("ranking.csv")),
        "--out",
        p(&plots),
    ]);
    for f in ["plot_histogram.csv", "plot_boxplot.csv", "plot_posterior_curve.csv", "plot_rank_scatter.csv"] {
        assert!(plots.join(f).exists(), "{f} missing");
    }
    assert_eq!(csv_rows(&plots.join("plot_histogram.csv")).len(), 1 + 320 * 3);
    let scatter = csv_rows(&plots.join("plot_rank_scatter.csv"));
    assert!(scatter[1..].iter().all(|r| r[1] == r[2]));
}

#[test]
fn rank_comparison_against_reference() {
    let dir = tempfile::tempdir().unwrap();
    let fit = small_fit(dir.path(), "5");
    let sim = dir.path().join("sim");
    let rank = dir.path().join("rank");
    let args = |compare: &Path| {
        vec![
            "rank".to_string(),
            "--input".into(),
            p(&sim.join("simulated.csv")).into(),
            "--schema".into(),
            p(&sim.join("simulated_schema.toml")).into(),
            "--model".into(),
            p(&fit.join("model.json")).into(),
            "--compare".into(),
            p(compare).into(),
            "--out".into(),
            p(&rank).into(),
        ]
    };
    let first = dir.path().join("first");
    fs::create_dir_all(&first).unwrap();
    let a: Vec<String> = args(&first.join("none.csv"));
    assert_eq!(code(&a.iter().map(String::as_str).collect::<Vec<_>>()), 2);

    ok(&[
        "rank",
        "--input",
        p(&sim.join("simulated.csv")),
        "--schema",
        p(&sim.join("simulated_schema.toml")),
        "--model",
        p(&fit.join("model.json")),
        "--out",
        p(&first),
    ]);
    let a: Vec<String> = args(&first.join("ranking.csv"));
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let cmp = json(&rank.join("comparison.json"));
    assert_eq!(cmp["spearman"], 1.0);
    assert_eq!(cmp["kendall"], 1.0);
    assert_eq!(csv_rows(&rank.join("rank_comparison.csv")).len(), 1 + 2 * 320);
}

#[test]
fn select_k_with_stubbed_bic_follows_averaging() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "select-k",
        "--stub-bic",
        "2=100,3=101,4=102,6=103,10=104",
        "--vine",
        "rvine",
        "--init",
        "kmeans",
        "--out",
        p(dir.path()),
    ]);
    let report = json(&dir.path().join("ksearch.json"));
    let ks: Vec<u64> = report["evaluated"].as_array().unwrap().iter().map(|e| e["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, [2, 4, 6, 10, 3]);
    assert_eq!(report["chosen"]["k"], 2);
    let steps = report["trajectory"].as_array().unwrap();
    assert_eq!(steps[0]["best_pair"], serde_json::json!([2, 4]));
    assert_eq!(steps[0]["fitted"], serde_json::json!([3]));
    assert_eq!(steps[1]["best_pair"], serde_json::json!([2, 3]));
    assert_eq!(steps[1]["average"], 2.5);
    assert_eq!(steps.len(), 2);
    assert_eq!(csv_rows(&dir.path().join("ksearch.csv")).len(), 6);
}

#[test]
fn select_k_searches_every_combination_by_default() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["select-k", "--stub-bic", "2=9,3=8,4=7,5=7.5,6=8,10=20", "--out", p(dir.path())]);
    let report = json(&dir.path().join("ksearch.json"));
    assert_eq!(report["evaluated"].as_array().unwrap().len(), 4 * 5);
    assert_eq!(report["chosen"]["k"], 4);
    assert_eq!(report["chosen"]["vine_kind"], "rvine");
    assert_eq!(report["chosen"]["init"], "kmeans");
}

#[test]
fn outputs_are_identical_across_reruns() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = small_fit(a.path(), "11");
    let fb = small_fit(b.path(), "11");
    for f in ["model.json", "responsibilities.csv", "trace.csv"] {
        assert_eq!(fs::read(fa.join(f)).unwrap(), fs::read(fb.join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(
        fs::read(a.path().join("sim/simulated.csv")).unwrap(),
        fs::read(b.path().join("sim/simulated.csv")).unwrap()
    );
}

#[test]
fn different_seeds_give_different_samples() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["simulate", "--seed", "1", "--out", p(a.path())]);
    ok(&["simulate", "--seed", "2", "--out", p(b.path())]);
    assert_ne!(fs::read(a.path().join("simulated.csv")).unwrap(), fs::read(b.path().join("simulated.csv")).unwrap());
}

#[test]
fn preprocess_screens_and_drops_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("zone,a,b,flag\n");
    for i in 0..40 {
        let a = if i == 7 { "*".to_string() } else { format!("{}", (i * 37 % 41) as f64 / 3.0) };
        table += &format!("Z{i},{a},{},{}\n", (i * 13 % 29) as f64 + 0.5, i % 2);
    }
    let input = dir.path().join("raw.csv");
    fs::write(&input, table).unwrap();
    let out = dir.path().join("clean");
    ok(&["preprocess", "--input", p(&input), "--out", p(&out)]);
    let rows = csv_rows(&out.join("cleaned.csv"));
    assert_eq!(rows[0], ["zone_id", "a", "b"]);
    assert_eq!(rows.len() - 1, 39);
    assert!(!rows.iter().any(|r| r[0] == "Z7"));
    let report = json(&out.join("preprocess_report.json"));
    assert_eq!(report["dropped_discrete"][0]["name"], "flag");
    assert_eq!(report["rows_removed_missing"], 1);

    // the cleaned table round-trips unchanged
    let again = dir.path().join("again");
    ok(&[
        "preprocess",
        "--input",
        p(&out.join("cleaned.csv")),
        "--schema",
        p(&out.join("cleaned_schema.toml")),
        "--out",
        p(&again),
    ]);
    assert_eq!(fs::read(out.join("cleaned.csv")).unwrap(), fs::read(again.join("cleaned.csv")).unwrap());
    let report = json(&again.join("preprocess_report.json"));
    assert_eq!(report["dropped_discrete"], serde_json::json!([]));
    assert_eq!(report["rows_removed_missing"], 0);
}

#[test]
fn preprocess_all_missing_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.csv");
    fs::write(&input, "zone,a,b\nZ1,*,1\nZ2,2,*\n").unwrap();
    let out = vinemix(&["preprocess", "--input", p(&input), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset"));
    let manifest = json(&dir.path().join("o/manifest.json"));
    assert_eq!(manifest["status"], "error");
}

#[test]
fn simd_score_reproduces_weighted_health_domain() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("ranks.csv");
    fs::write(&input, "zone,h1,h2,h3,h4,h5,h6,h7\nA,3,2,4,4,3,5,1\nB,1,2,3,4,5,6,7\n").unwrap();
    let domains = dir.path().join("domains.toml");
    let mut spec = String::from("[[domain]]\nkind = \"weighted\"\nname = \"health\"\naxis = \"within-zone\"\n");
    for (j, w) in [0.06, 0.08, 0.07, 0.46, 0.19, 0.13, 0.01].iter().enumerate() {
        spec += &format!("[[domain.indicators]]\nname = \"h{}\"\nweight = {w}\n", j + 1);
    }
    fs::write(&domains, spec).unwrap();
    ok(&["simd-score", "--input", p(&input), "--domains", p(&domains), "--out", p(dir.path())]);
    let rows = csv_rows(&dir.path().join("domain_scores.csv"));
    assert_eq!(rows[0], ["zone_id", "health_score", "health_rank"]);
    let score: f64 = rows[1][1].parse().unwrap();
    assert!((score - 0.4067416).abs() < 1e-6, "{score}");
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["fit", "--vine", "dvine", "--out", out]), 1);
    assert_eq!(code(&["fit", "--out", out]), 1);
    assert_eq!(code(&["fit", "--k", "2,3", "--input", "x.csv", "--out", out]), 1);
    assert_eq!(code(&["select-k", "--stub-bic", "2:100", "--out", out]), 1);

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&["fit", "--input", p(&missing), "--out", out]), 2);
    let dup = dir.path().join("dup.csv");
    fs::write(&dup, "zone,a\nZ1,1\nZ1,2\n").unwrap();
    assert_eq!(code(&["fit", "--input", p(&dup), "--out", out]), 2);
    let text = dir.path().join("text.csv");
    fs::write(&text, "zone,a\nZ1,1\nZ2,abc\n").unwrap();
    assert_eq!(code(&["fit", "--input", p(&text), "--out", out]), 2);

    // every stubbed K failing is a fit failure
    assert_eq!(code(&["select-k", "--stub-bic", "7=1", "--k", "2,4", "--out", out]), 3);

    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "sed = 3\n").unwrap();
    assert_eq!(code(&["simulate", "--config", p(&bad_cfg), "--out", out]), 1);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 9\ncounts = [5, 6]\n").unwrap();
    let out = dir.path().join("o");
    ok(&["simulate", "--config", p(&cfg), "--seed", "4", "--out", p(&out)]);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["seed"], 4);
    assert_eq!(manifest["config"]["fit"]["seed"], 4);
    assert_eq!(csv_rows(&out.join("simulated.csv")).len(), 12);
}
