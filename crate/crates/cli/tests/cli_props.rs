use std::process::Command;

use distlap_cli::golden::{lookup, Golden};
use distlap_cli::registry::{registry_get, registry_golden, registry_list};
use distlap_cli::{run, CliError, JobConfig, EXIT_ANALYSIS, EXIT_CONFIG, EXIT_GOLDEN};
use distlap_core::Exec;
use proptest::prelude::*;
use serde_json::Value;

const GRUSHIN_DERHAM: &str = r#"
label = "grushin_derham"
analyses = ["fibers", "derham", "symbol"]
[chart]
names = ["x", "y"]
bounds = [[-1, 1], [-1, 1]]
[[distribution]]
label = "grushin"
generators = [["1", "0"], ["0", "x"]]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distlap"))
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("distlap-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn derham_on_grushin_is_an_error_object() {
    let cfg = JobConfig::from_toml(GRUSHIN_DERHAM).unwrap();
    let r = run(&cfg, Exec::default()).unwrap().report;
    assert_eq!(r.analyses["derham"]["error"]["kind"], "NotInvolutive");
    assert!(r.analyses["derham"]["error"]["message"].as_str().unwrap().contains("[0, 1]"));
    assert_eq!(r.analyses["symbol"]["pass"], true);
    assert_eq!(r.analyses["fibers"]["points"][0]["dim_fiber"], 2);

    let dir = tmp("derham");
    let path = dir.join("job.toml");
    std::fs::write(&path, GRUSHIN_DERHAM).unwrap();
    let out = bin().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_ANALYSIS));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["analyses"]["symbol"].get("error").is_none());
}

#[test]
fn empty_analysis_list_gives_provenance_only() {
    let src = GRUSHIN_DERHAM.replace(r#"["fibers", "derham", "symbol"]"#, "[]");
    let r = run(&JobConfig::from_toml(&src).unwrap(), Exec::default()).unwrap().report;
    assert!(r.analyses.is_empty() && r.summary.is_empty());
    assert_eq!(r.provenance.config_hash.len(), 64);
}

#[test]
fn failed_products_become_skip_markers() {
    // a density that vanishes inside the box is rejected, so everything built on it is skipped
    let src = GRUSHIN_DERHAM.replace(r#"["fibers", "derham", "symbol"]"#, r#"["fibers", "laplacian", "symbol", "spectrum"]"#)
        + "[density]\nweight = \"x\"\n";
    let r = run(&JobConfig::from_toml(&src).unwrap(), Exec::default()).unwrap().report;
    for a in ["laplacian", "symbol", "spectrum"] {
        assert_eq!(r.analyses[a]["skipped"]["upstream"], "density", "{a}: {}", r.analyses[a]);
    }
    assert!(r.analyses["fibers"].get("points").is_some());
    assert!(!r.has_errors());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tmp("cfg");
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, GRUSHIN_DERHAM.replace("\"derham\"", "\"deRham\"")).unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown analysis"));
    let out = bin().args(["run", "--example", "nowhere"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let out = bin().args(["laplacian", "--example", "grushin", "--tol-override", "bogus=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert!(matches!(registry_get("nowhere"), Err(CliError::UnknownLabel(_))));
}

#[test]
fn registry_contents() {
    assert_eq!(registry_list().len(), 7);
    let g = registry_get("grushin").unwrap();
    assert_eq!(g.primary().generators, vec![vec!["1", "0"], vec!["0", "x"]]);
    let m = registry_get("martinet").unwrap();
    assert_eq!(m.primary().generators[1], vec!["0", "1", "1/2*x^2"]);
    let out = bin().arg("registry").output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
}

#[test]
fn heisenberg_operator_in_report() {
    let mut cfg = registry_get("heisenberg").unwrap();
    cfg.analyses = vec!["laplacian".into(), "hull".into(), "symbol".into()];
    let r = run(&cfg, Exec::default()).unwrap().report.to_value();
    let g = Golden::parse(registry_golden("heisenberg").unwrap()).unwrap();
    let only_ops = Golden { expected: g.expected.into_iter().filter(|(k, _)| k.starts_with("analyses.laplacian.operator")).collect(), ..g };
    assert!(only_ops.compare(&r, None).is_empty());
    assert_eq!(lookup(&r, "analyses.hull.bracket_generating"), Some(&Value::Bool(true)));
}

#[test]
fn golden_negative_control() {
    let src = registry_golden("heisenberg").unwrap().replace("\"-1/4*x^2 - 1/4*y^2\"", "\"-1/4*x^2\"");
    let g = Golden::parse(&src).unwrap();
    let mut cfg = registry_get("heisenberg").unwrap();
    cfg.analyses = vec!["laplacian".into()];
    let r = run(&cfg, Exec::default()).unwrap().report.to_value();
    let diffs = g.compare(&r, None);
    assert!(diffs.iter().any(|d| d.starts_with("analyses.laplacian.operator.dzdz")), "{diffs:?}");

    let dir = tmp("golden");
    let path = dir.join("perturbed.json");
    std::fs::write(&path, src).unwrap();
    let out = bin().args(["golden", "--example", "heisenberg", "--golden"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_GOLDEN));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dzdz"));
    let out = bin().args(["golden", "--example", "gl2_vanishing_origin"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn artifacts_and_formats() {
    let dir = tmp("out");
    let out = bin().args(["discretize", "--example", "grushin", "--out"]).arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let triplets = std::fs::read_to_string(dir.join("grushin.triplets.txt")).unwrap();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("grushin.report.json")).unwrap()).unwrap();
    let nnz = report["analyses"]["discretize"]["nnz"].as_u64().unwrap() as usize;
    let rows: Vec<&str> = triplets.lines().filter(|l| !l.starts_with('%') && !l.is_empty()).collect();
    assert!(rows.len() >= nnz.min(1));
    let first: Vec<&str> = rows[0].split_whitespace().collect();
    assert_eq!(first.len(), 3);
    assert!(first[0].parse::<usize>().unwrap() >= 1);

    let csv = bin().args(["symbol", "--example", "grushin", "--format", "csv"]).output().unwrap();
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert!(csv.starts_with("path,value\n"));
    assert!(csv.contains("analyses.symbol.equals_cometric,true"));
    let text = bin().args(["symbol", "--example", "grushin", "--format", "text"]).output().unwrap();
    assert!(String::from_utf8(text.stdout).unwrap().contains("symbol: pass"));
}

#[test]
fn overrides_change_the_hash() {
    let base = registry_get("grushin").unwrap();
    let h = |c: &JobConfig| distlap_cli::report::config_hash(c);
    let mut seeded = base.clone();
    seeded.seed += 1;
    let mut tol = base.clone();
    tol.set_tolerance("quadrature=1e-6").unwrap();
    assert_ne!(h(&base), h(&seeded));
    assert_ne!(h(&base), h(&tol));
    assert_eq!(h(&base), h(&registry_get("grushin").unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn same_seed_same_bytes(seed in 0u64..1_000_000) {
        let mut cfg = registry_get("grushin").unwrap();
        cfg.seed = seed;
        cfg.analyses = vec!["laplacian".into(), "discretize".into(), "symbol".into()];
        cfg.options.trials = 3;
        cfg.options.grid_n = Some(16);
        let a = run(&cfg, Exec::Parallel).unwrap().report.render(distlap_cli::Format::Json);
        let b = run(&cfg, Exec::Sequential).unwrap().report.render(distlap_cli::Format::Json);
        prop_assert_eq!(a, b);
    }
}
