use std::path::Path;
use std::process::{Command, Output};

use ttmfg::benchmarks::BenchmarkKind;
use ttmfg_cli::report::columns;

const TINY: &str = r#"
benchmark = "nonlocal-mfg"
name = "tiny"
dim = 2
viscosity = 0.0
rule = "sl1"
steps = [2, 4]
validation_points = 128
"#;

fn ttmfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttmfg")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn csv_headers_are_stable() {
    let golden = [
        (BenchmarkKind::AdvDiff, "dt,steps,e2,einf,order,seconds,fit_warnings"),
        (BenchmarkKind::Positivity, "dt,steps,probe_min,probe_order,e2,seconds,fit_warnings"),
        (
            BenchmarkKind::LocalMfg,
            "dt,steps,e2_u,einf_u,order_u,e2_m,einf_m,order_m,grid_e2_u,grid_einf_u,grid_seconds,iterations,converged,seconds,fit_warnings",
        ),
        (
            BenchmarkKind::NonlocalMfg,
            "dt,steps,e2_u,order_u,e2_m,order_m,mass_defect,mean_defect,iterations,converged,seconds,solver_seconds,fit_warnings",
        ),
    ];
    for (kind, header) in golden {
        assert_eq!(columns(kind).join(","), header, "{}", kind.name());
    }
}

#[test]
fn bad_configs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = out_dir.to_str().unwrap();

    let empty = write(dir.path(), "empty.toml", "benchmark = \"advdiff\"\ndim = 2\nsteps = []\n");
    let r = ttmfg(&["run", &empty, "--output", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("empty"));

    let unknown = write(dir.path(), "unknown.toml", "benchmark = \"heat\"\nsteps = [2]\n");
    let r = ttmfg(&["run", &unknown, "--output", out]);
    assert_eq!(r.status.code(), Some(2));
    for name in ["advdiff", "positivity", "local-mfg", "nonlocal-mfg"] {
        assert!(stderr(&r).contains(name), "missing {name} in {}", stderr(&r));
    }

    let typo = write(dir.path(), "typo.toml", "benchmark = \"advdiff\"\nstep = [2]\n");
    assert_eq!(ttmfg(&["run", &typo, "--output", out]).status.code(), Some(2));

    let long = write(dir.path(), "long.toml", "benchmark = \"local-mfg\"\nlong = true\nsteps = [2]\n");
    let r = ttmfg(&["run", &long, "--output", out]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("--long"));
    assert!(!out_dir.exists());

    assert_eq!(ttmfg(&["run"]).status.code(), Some(2));
    assert_eq!(ttmfg(&["--threads", "0", "verify"]).status.code(), Some(2));
}

#[test]
fn run_writes_outputs_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "tiny.toml", TINY);
    let mut tables = Vec::new();
    for attempt in ["a", "b"] {
        let out = dir.path().join(attempt);
        let r = ttmfg(&["run", &config, "--output", out.to_str().unwrap(), "--quiet"]);
        assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
        for file in ["tiny_d2.csv", "tiny_d2.json", "manifest.json"] {
            assert!(out.join(file).exists(), "{file} missing");
        }
        let mut reader = csv::Reader::from_path(out.join("tiny_d2.csv")).unwrap();
        let headers = reader.headers().unwrap().clone();
        let keep: Vec<usize> = ["e2_u", "order_u", "e2_m", "order_m", "iterations"]
            .iter()
            .map(|c| headers.iter().position(|h| h == *c).unwrap())
            .collect();
        let rows: Vec<Vec<String>> = reader
            .records()
            .map(|r| {
                let r = r.unwrap();
                keep.iter().map(|&i| r[i].to_string()).collect()
            })
            .collect();
        assert_eq!(rows.len(), 2);
        tables.push(rows);
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn report_fit_recovers_a_quadratic_law() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "tiny.toml", TINY);
    let base = dir.path().join("base");
    let r = ttmfg(&["run", &config, "--output", base.to_str().unwrap(), "--quiet"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));

    let r = ttmfg(&["report-fit", base.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(stderr(&r).contains("at least three"));

    let template: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.join("tiny_d2.json")).unwrap()).unwrap();
    let synthetic = dir.path().join("synthetic");
    std::fs::create_dir(&synthetic).unwrap();
    for d in [2usize, 4, 8, 16] {
        let mut report = template.clone();
        report["dim"] = d.into();
        let rows = report["rows"].as_array_mut().unwrap();
        let share = (d * d) as f64 / rows.len() as f64;
        for row in rows.iter_mut() {
            row["solver_seconds"] = share.into();
        }
        std::fs::write(synthetic.join(format!("tiny_d{d}.json")), report.to_string()).unwrap();
    }
    let r = ttmfg(&["report-fit", synthetic.to_str().unwrap(), "--json"]);
    assert_eq!(r.status.code(), Some(0), "{}", stderr(&r));
    let table: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let b = table["fit"]["power_law"]["b"].as_f64().unwrap();
    let a = table["fit"]["power_law"]["a"].as_f64().unwrap();
    assert!((b - 2.0).abs() < 1e-9, "exponent {b}");
    assert!((a - 1.0).abs() < 1e-9, "prefactor {a}");
}

#[test]
fn verify_and_rules_succeed() {
    let r = ttmfg(&["verify"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stdout));

    let r = ttmfg(&["rules", "print", "--kind", "sl2p", "--dim", "3", "--json"]);
    assert_eq!(r.status.code(), Some(0));
    let rule: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    let weights = rule["rule"]["weights"].as_array().unwrap();
    let total: f64 = weights.iter().map(|w| w.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-13);

    assert_eq!(ttmfg(&["rules", "print", "--kind", "sl7", "--dim", "3"]).status.code(), Some(2));
}
