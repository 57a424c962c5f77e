//! End-to-end checks of the command-line interface: exit codes, output
//! layout, overrides, thread invariance, and CSV-backed runs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pofmkl");

fn pofmkl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn small_config() -> String {
    r#"
schema_version = 1

[experiment]
clients = 2
rounds = 30
rf_features = 5
subset_size = 3
seed = 9
bandwidth_cap = 1000

[kernels]
count = 7

[data]
source = "synth"
synth_dim = 2
synth_generators = 2
"#
    .to_string()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, small_config()).unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = pofmkl(&["run", "--config", "/nonexistent/nope.toml", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: config:"), "{stderr}");
    assert!(stderr.contains("/nonexistent/nope.toml"), "{stderr}");
}

#[test]
fn validate_accepts_good_and_rejects_budget_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let ok = pofmkl(&["validate", "--config", config.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    // 2 * 51 * 20 = 2040 > 1000
    let bad = pofmkl(&[
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--override",
        "kernels.count=51",
        "--override",
        "experiment.subset_size=51",
        "--override",
        "experiment.rf_features=20",
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("2040"), "{stderr}");
    assert!(stderr.contains("bandwidth_cap"), "{stderr}");
}

#[test]
fn validate_rejects_unknown_field_and_bad_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, small_config().replace("[kernels]", "[kernels]\nmystery = 1")).unwrap();
    let out = pofmkl(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let config = write_config(tmp.path());
    let out = pofmkl(&[
        "validate",
        "--config",
        config.to_str().unwrap(),
        "--override",
        "experiment.algorithm=made-up",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_single_seed_writes_one_trace_set() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let out_dir = tmp.path().join("out");
    let out = pofmkl(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let seed_dirs: Vec<_> = fs::read_dir(&out_dir)
        .unwrap()
        .filter_map(|e| {
            let e = e.unwrap();
            let name = e.file_name().into_string().unwrap();
            name.starts_with("seed_").then_some(name)
        })
        .collect();
    assert_eq!(seed_dirs, vec!["seed_9".to_string()]);
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let run = |threads: &str, sub: &str| {
        let dir = tmp.path().join(sub);
        let out = pofmkl(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--seeds",
            "2",
            "--threads",
            threads,
        ]);
        assert_eq!(out.status.code(), Some(0));
        dir
    };
    let a = run("1", "t1");
    let b = run("4", "t4");
    for seed in ["seed_9", "seed_10"] {
        let left = fs::read(a.join(seed).join("records.csv")).unwrap();
        let right = fs::read(b.join(seed).join("records.csv")).unwrap();
        assert_eq!(left, right, "{seed} differs across thread counts");
    }
}

#[test]
fn algo_override_flag_selects_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let dir = tmp.path().join("ofskl");
    let out = pofmkl(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--seeds",
        "1",
        "--algo",
        "ofskl",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"algorithm\": \"OFSKL\""), "{summary}");
}

#[test]
fn compare_emits_table_with_identical_rows_for_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let dir = tmp.path().join("cmp");
    let out = pofmkl(&[
        "compare",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--seeds",
        "2",
        "--algo",
        "ofskl",
        "--algo",
        "ofskl",
        "--algo",
        "pof-mkl:m=2,d=4",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    // duplicate algorithm rows agree on everything but wall-clock columns
    let strip = |line: &str| {
        line.split(',')
            .take(6)
            .collect::<Vec<_>>()
            .join(",")
    };
    assert_eq!(strip(lines[1]), strip(lines[2]));
    let pof = lines[3];
    assert!(pof.starts_with("POF-MKL,2,4"), "{pof}");
}

#[test]
fn env_var_sets_default_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path());
    let root = tmp.path().join("envroot");
    let out = Command::new(BIN)
        .args(["run", "--config", config.to_str().unwrap(), "--seeds", "1"])
        .env("POFMKL_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(root.exists());
    let found = fs::read_dir(&root).unwrap().count();
    assert_eq!(found, 1);
}

#[test]
fn csv_backed_run_works_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data_path = tmp.path().join("data.csv");
    let mut rows = String::from("f1,f2,y\n");
    for i in 0..120 {
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        rows.push_str(&format!("{a},{b},{}\n", 0.5 * a - 0.2 * b));
    }
    fs::write(&data_path, rows).unwrap();

    let config_path = tmp.path().join("csv.toml");
    fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1

[experiment]
clients = 2
rounds = 25
rf_features = 4
subset_size = 2
seed = 3

[kernels]
count = 5

[data]
source = "csv"
path = "{}"
label_column = "y"
partition = "iid"
"#,
            data_path.display()
        ),
    )
    .unwrap();

    let dir = tmp.path().join("csvout");
    let out = pofmkl(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"normalization\""), "{summary}");
    assert!(summary.contains("\"mse_label_units_mean\""), "{summary}");

    // insufficient samples: clients * rounds exceeds the file -> exit 3
    let out = pofmkl(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        tmp.path().join("csvfail").to_str().unwrap(),
        "--seeds",
        "1",
        "--override",
        "experiment.rounds=200",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error: data:"), "{stderr}");
}

#[test]
fn malformed_csv_cell_reports_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let data_path = tmp.path().join("broken.csv");
    fs::write(&data_path, "f1,y\n0.5,1\noops,2\n").unwrap();
    let config_path = tmp.path().join("csv.toml");
    fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1

[experiment]
clients = 1
rounds = 1
rf_features = 2
seed = 1

[kernels]
count = 2

[data]
source = "csv"
path = "{}"
label_column = "y"
"#,
            data_path.display()
        ),
    )
    .unwrap();
    let out = pofmkl(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}
