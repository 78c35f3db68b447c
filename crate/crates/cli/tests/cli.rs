use std::path::Path;
use std::process::{Command, Output};

use parapack::montecarlo::CampaignSpec;
use parapack::params::SolverSettings;

fn parapack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parapack"))
        .args(args)
        .env_remove("PARAPACK_WORKERS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_module(dir: &Path, cycles: usize) -> std::path::PathBuf {
    let mut cfg = CampaignSpec::fast(3).module_config(0).unwrap();
    cfg.n_cycles = cycles;
    cfg.solver = SolverSettings::fast();
    let path = dir.join("module.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

#[test]
fn unknown_flag_prints_usage_and_exits_2() {
    let o = parapack(&["simulate", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn zero_cycles_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_module(dir.path(), 1);
    let out = dir.path().join("out");
    let o = parapack(&["simulate", "--config", p(&cfg), "--cycles", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycles"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n_p = 4\nr_int = \"lots\"\n").unwrap();
    let out = dir.path().join("out");
    let o = parapack(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let missing = parapack(&["simulate", "--config", p(&dir.path().join("none.toml")), "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn simulate_writes_documented_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_module(dir.path(), 2);
    let out = dir.path().join("sim");
    let o = parapack(&["simulate", "--config", p(&cfg), "--out", p(&out), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,cycle,phase,v_mod,i_mod,i_1,"));
    let cycles = std::fs::read_to_string(out.join("cycles.csv")).unwrap();
    assert!(cycles.starts_with("cycle,q_mod_ah,e_mod_wh,"));
    assert_eq!(cycles.lines().count(), 3);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["master_seed"], 5);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_module(dir.path(), 1);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = parapack(&["simulate", "--config", p(&cfg), "--out", p(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

fn pareto_sum(path: &Path) -> f64 {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap())
        .sum()
}

fn summary_r2(path: &Path) -> f64 {
    let s = std::fs::read_to_string(path).unwrap();
    let line = s.lines().find(|l| l.starts_with("R^2:")).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn sweep_analyze_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let camp = dir.path().join("camp");
    let o = parapack(&[
        "sweep", "--fast", "--modules", "16", "--cycles", "1", "--seed", "11", "--workers", "1", "--out", p(&camp),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let results = camp.join("results.csv");
    assert!(camp.join("manifest.json").exists());

    for (resp, ext) in [("sigma_i", false), ("dq", true)] {
        let rep = dir.path().join(format!("rep_{resp}"));
        let mut args = vec!["analyze", "--results", p(&results), "--response", resp, "--out", p(&rep)];
        if ext {
            args.push("--extended-predictors");
        }
        let o = parapack(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let r2 = summary_r2(&rep.join("summary.txt"));
        assert!((pareto_sum(&rep.join("pareto.csv")) - r2).abs() < 2e-6, "{resp}");
        assert!(std::fs::read_to_string(rep.join("residuals.csv")).unwrap().starts_with("row,observed,fitted,residual"));
    }

    let bad = parapack(&["analyze", "--results", p(&results), "--response", "voltage", "--out", p(&dir.path().join("x"))]);
    assert_eq!(bad.status.code(), Some(2));

    let bin = dir.path().join("results.bin");
    let back = dir.path().join("results_back.csv");
    assert_eq!(parapack(&["export", "--input", p(&results), "--out", p(&bin)]).status.code(), Some(0));
    assert_eq!(parapack(&["export", "--input", p(&bin), "--out", p(&back)]).status.code(), Some(0));
    assert_eq!(std::fs::read(&results).unwrap(), std::fs::read(&back).unwrap());
    assert!(std::fs::metadata(&bin).unwrap().len() < std::fs::metadata(&results).unwrap().len());
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = parapack(&[
            "sweep", "--fast", "--modules", "4", "--cycles", "1", "--seed", "2", "--workers", workers, "--out", p(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(out.join("results.csv")).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "2"));
}

#[test]
fn arrange_writes_comparison_and_exhaustive_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_module(dir.path(), 1);
    let out = dir.path().join("arr");
    let o = parapack(&["arrange", "--config", p(&cfg), "--cycles", "1", "--exhaustive", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("arrangement.csv")).unwrap();
    assert!(csv.starts_with("label,order,sigma_i,delta_t_max,e_lost,sigma_r_sei,q_mod"));
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(std::fs::read_to_string(out.join("exhaustive.csv")).unwrap().lines().count(), 25);
    assert!(std::fs::read_to_string(out.join("summary.txt")).unwrap().contains("descending"));
}
