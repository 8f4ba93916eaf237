use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ksd-bayes"));
    c.env_remove("KSD_BAYES_OUTPUT_DIR").env_remove("KSD_BAYES_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn fit_conjugate_writes_posterior_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fit");
    let o = run(&["fit-conjugate", "--seed", "3", "--beta", "0.5", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary.is_object());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 3);
    assert_eq!(m["beta"]["value"], 0.5);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["flags"].as_array().unwrap().is_empty());
    for f in m["files"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "{f}");
    }
    let post = json(&out.join("posterior.json"));
    assert!(post.is_object());
    let mut rdr = csv::Reader::from_path(out.join("marginals.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0][2].parse::<f64>().unwrap() > 0.0);
    // no temporary files left behind
    let stray: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| !m["files"].as_array().unwrap().iter().any(|f| f.as_str() == e.file_name().to_str()))
        .collect();
    assert!(stray.is_empty(), "{stray:?}");
}

#[test]
fn strict_escalates_flags_to_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let relaxed = run(&["fit-mcmc", "--draws", "60", "-o", a.to_str().unwrap()]);
    assert_eq!(code(&relaxed), 0);
    assert!(!json(&a.join("manifest.json"))["flags"].as_array().unwrap().is_empty());
    let strict = run(&["--strict", "fit-mcmc", "--draws", "60", "-o", b.to_str().unwrap()]);
    assert_eq!(code(&strict), 3);
    // outputs are still written before escalation
    assert!(b.join("manifest.json").exists());
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "experiment = \"normal-location\"\nbogus = 1\n",
        "experiment = \"normal-location\"\n[beta]\nmode = \"auto\"\nvalue = 1.0\n",
        "experiment = \"normal-location\"\n[kernel]\ngamma = 1.5\n",
        "experiment = \"liu\"\nmodel = { kind = \"normal-location\" }\n",
        "experiment = \"nonsense\"\n",
        "experiment = \"ising\"\nn = 1\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("c{i}.toml"));
        std::fs::write(&path, text).unwrap();
        let o = run(&["run", path.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&run(&["run", tmp.path().join("missing.toml").to_str().unwrap()])), 2);
    assert_eq!(code(&run(&["fit-conjugate", "--epsilon", "0.1"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn environment_overrides_output_dir_and_threads_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("nl.toml");
    std::fs::write(&cfg, "experiment = \"normal-location\"\nseed = 2\noutput_dir = \"ignored\"\n").unwrap();
    let target = tmp.path().join("from-env");
    let o = bin()
        .args(["run", cfg.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("KSD_BAYES_OUTPUT_DIR", &target)
        .env("KSD_BAYES_THREADS", "2")
        .env("KSD_BAYES_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!tmp.path().join("ignored").exists());
    let m = json(&target.join("manifest.json"));
    assert_eq!(m["seed"], 2);
    // thread count stays out of the manifest so outputs match across pools
    assert!(m["config"].get("threads").is_none());
    let bad = bin()
        .args(["run", cfg.to_str().unwrap()])
        .env("KSD_BAYES_OUTPUT_DIR", &target)
        .env("KSD_BAYES_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn gen_data_round_trips_through_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("x.csv");
    let o = run(&[
        "gen-data", "--generator", "normal", "--n", "80", "--theta", "1.5", "--seed", "4", "--epsilon", "0.1", "--y", "10", "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let xs: Vec<f64> = rdr.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(xs.len(), 80);
    let hits = xs.iter().filter(|x| **x == 10.0).count();
    assert!((1..=20).contains(&hits), "{hits}");

    let out = tmp.path().join("fit");
    let o = run(&["fit-conjugate", "--data", csv.to_str().unwrap(), "--whiten", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let w = json(&out.join("whitening.json"));
    assert!(w.is_object());
    assert!(json(&out.join("manifest.json"))["files"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f == "whitening.json"));
}

#[test]
fn gen_data_preprocessing_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.csv");
    std::fs::write(&raw, "a,b\n1,4\n4,9\n9,16\n16,25\n1e6,36\n").unwrap();
    let out = tmp.path().join("clean.csv");
    let o = run(&[
        "gen-data", "--generator", "normal", "--input", raw.to_str().unwrap(), "--sqrt", "--outlier-sd", "1.5", "--unit-sd", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(&out).unwrap();
    assert_eq!(rows.lines().count(), 5, "{rows}");
}

#[test]
fn shipped_configs_parse() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ksd_bayes_cli::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 8);
}

#[test]
fn ksd_eval_reports_every_theta() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("k");
    let o = run(&["ksd-eval", "--theta", "0", "--theta", "1", "--theta", "-2.5", "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("ksd.csv")).unwrap();
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] >= 0.0));
    assert!(rows[1][1] < rows[2][1]);
}
