use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gpps");

/// Small sizes keep each invocation well under a second.
const SMALL: &[&str] = &[
    "--set",
    "n=1500",
    "--set",
    "m=600",
    "--set",
    "target_test=600",
    "--set",
    "m_grid=[200,800]",
    "--set",
    "prevalence_grid.points=3",
];

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn small(cmd: &str, extra: &[&str]) -> Vec<String> {
    let mut v = vec![cmd.to_string()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn run_small(cmd: &str, extra: &[&str], out: &Path) -> Output {
    let args = small(cmd, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs, out)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_are_byte_identical() {
    for cmd in ["drift-curves", "table", "learning-curves", "tap-gpps", "gen-data", "check"] {
        // same --out both times, since the resolved config records it
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut seen = Vec::new();
        for _ in 0..2 {
            let o = run_small(cmd, &["--seed-list", "0,1"], &out);
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            seen.push(files(&out));
            fs::remove_dir_all(&out).unwrap();
        }
        assert!(!seen[0].is_empty(), "{cmd} wrote nothing");
        assert!(seen[0] == seen[1], "{cmd} output differs between runs");
    }
}

#[test]
fn every_csv_has_a_header_and_a_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["drift-curves", "table", "learning-curves", "tap-gpps", "gen-data"] {
        let o = run_small(cmd, &["--seed-list", "3"], dir.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let mut csvs = 0;
    for (name, bytes) in files(dir.path()) {
        if !name.ends_with(".csv") {
            continue;
        }
        csvs += 1;
        let text = String::from_utf8(bytes).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.chars().next().unwrap().is_ascii_alphabetic(), "{name}: {header}");
        let side = dir.path().join(format!("{name}.config.json"));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&side).unwrap()).unwrap();
        assert_eq!(v["config"]["n"], 1500, "{name}");
        assert_eq!(v["seeds"], serde_json::json!([3]), "{name}");
    }
    assert!(csvs >= 9, "only {csvs} csv files");
}

#[test]
fn table_has_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small("table", &["--seed-list", "0"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for col in ["accuracy_mean", "gap_dp_mean", "gap_eo_mean", "gap_ppv_mean"] {
        assert!(header.contains(col), "{header}");
    }
    let methods: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        methods,
        ["Source-only", "No-correction DP", "TAP-GPPS (EM)", "TAP-GPPS (BBSE)", "Oracle"]
    );
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["table", "--set", "target_prevalence=[0.5,1.2]"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("target_prevalence"));
    let o = run(&["table", "--set", "no_such_field=1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["table", "--config", "/definitely/missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_passes_on_defaults_and_fails_on_zero_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("check_report.json")).unwrap()).unwrap();
    assert_eq!(report["hard_failures"], 0);

    let o = run(&["check", "--set", "check.bound_kappa=0", "--set", "check.bound_trials=2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let text = fs::read_to_string(dir.path().join("check.csv")).unwrap();
    assert!(text.contains("tapgpps.bound_inputs,hard,false"), "{text}");
}

#[test]
fn csv_source_round_trips_through_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small("gen-data", &[], dir.path());
    assert!(o.status.success());
    let source = dir.path().join("source.csv");
    let config = dir.path().join("config.json");
    let schema = serde_json::json!({
        "data": { "kind": "csv", "path": source, "schema": { "features": ["x0", "x1"], "label": "label", "group": "group" } },
        "n": 300, "m": 200, "target_test": 200, "m_grid": [100]
    });
    fs::write(&config, schema.to_string()).unwrap();
    let out = dir.path().join("run");
    let o = run(&["tap-gpps", "--config", config.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("tap_gpps_model.json").exists());
}
