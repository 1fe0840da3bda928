use std::path::Path;
use std::process::{Command, Output};

use cmc_tubes_cli::{load_model, run, CliError, Command as Cmd, Format, RunConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmc-tubes")).args(args).env_remove("CMC_TUBES_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn models_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models"))
}

#[test]
fn gaps_csv_has_a_header_and_one_row_per_window() {
    let o = bin(&["gaps", "--kmin", "3", "--kmax", "6"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,rho_lo,rho_hi,midpoint"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2][0], 5.0);
    assert!((rows[2][3] - 11.0 / 60.0).abs() < 1e-15);
}

#[test]
fn sweep_is_byte_identical_across_worker_counts() {
    let args = ["sweep", "--kmin", "4", "--kmax", "5", "--samples", "2", "--c1", "0.14", "--ns", "32", "--nt", "16", "--tol", "1e-7"];
    let one = Command::new(env!("CARGO_BIN_EXE_cmc-tubes")).args(args).env("CMC_TUBES_WORKERS", "1").output().unwrap();
    let four = Command::new(env!("CARGO_BIN_EXE_cmc-tubes")).args(args).env("CMC_TUBES_WORKERS", "4").output().unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert!(stdout(&one).starts_with("k,rho,converged,"));
    assert_eq!(stdout(&one).lines().count(), 5);
}

#[test]
fn solve_json_embeds_the_config_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let o = bin(&["solve", "--rho", "0.18", "--ns", "32", "--nt", "16", "--tol", "1e-8", "--seed", "7", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(first["config"]["command"], "solve");
    assert_eq!(first["config"]["rho"], 0.18);
    assert_eq!(first["config"]["seed"], 7);
    assert_eq!(first["result"]["converged"], true);
    assert!(first["result"]["oracle_residual_sup"].as_f64().unwrap() < 1e-7);

    let o = bin(&["--config", a.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    let mut second: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&b).unwrap()).unwrap();
    second["config"]["output"] = first["config"]["output"].clone();
    assert_eq!(first, second);
}

#[test]
fn errors_exit_nonzero_with_their_name() {
    let o = bin(&["solve", "--rho", "0.2", "--ns", "32", "--nt", "16"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: Resonant:"));

    let o = bin(&["gaps", "--kmin", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: ConfigParse:"));

    let o = bin(&["index", "--model", "no_such_model"]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: ConfigParse:"));

    let o = Command::new(env!("CARGO_BIN_EXE_cmc-tubes")).args(["gaps"]).env("CMC_TUBES_WORKERS", "0").output().unwrap();
    assert!(!o.status.success());

    let o = bin(&["--config", "/nonexistent/run.json"]);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: Io:"));
}

#[test]
fn check_passes_on_shipped_models() {
    for m in ["curved.toy", "unstable1.model", "flat_torus.model"] {
        let path = models_dir().join(m);
        let o = bin(&["check", "--model", path.to_str().unwrap()]);
        let text = stdout(&o);
        assert!(o.status.success(), "{m}: {text}");
        assert_eq!(text.lines().next(), Some("check,value,tolerance,passed"));
        assert!(text.lines().skip(1).all(|l| l.ends_with(",true")));
    }
}

#[test]
fn shipped_model_files_match_the_builtins() {
    for (file, name) in [("curved.toy", "curved_toy"), ("unstable1.model", "unstable1"), ("unstable2.model", "unstable2"), ("flat_torus.model", "flat_torus")] {
        let from_file = load_model(models_dir().join(file).to_str().unwrap()).unwrap();
        assert_eq!(from_file.to_text(), load_model(name).unwrap().to_text(), "{file}");
    }
}

#[test]
fn index_reports_the_formula_comparison() {
    let mut cfg = RunConfig::new(Cmd::Index);
    cfg.model = "unstable2".into();
    cfg.rho = Some(11.0 / 60.0);
    let art = run(&cfg).unwrap();
    assert_eq!(art.format, Format::Json);
    let v: serde_json::Value = serde_json::from_str(&art.body).unwrap();
    assert_eq!(v["comparison"]["expected"], 13);
    assert_eq!(v["comparison"]["matches"], true);
    assert_eq!(v["spectrum"]["nullity"], 0);
}

#[test]
fn bifurcation_lists_degenerate_radii() {
    let mut cfg = RunConfig::new(Cmd::Bifurcation);
    cfg.model = "flat_torus".into();
    cfg.k_max = 3;
    let body = run(&cfg).unwrap().body;
    let rows: Vec<&str> = body.lines().collect();
    assert_eq!(rows[0], "k,rho_k,symbol,nullity,min_abs_eigenvalue");
    assert!(rows[1].starts_with("1,1,0,4,"));
    assert!(rows[3].starts_with("3,0.3333333333333333,0,4,"));
}

#[test]
fn limits_approach_the_limit_columns() {
    let mut cfg = RunConfig::new(Cmd::Limits);
    cfg.samples = 3;
    let body = run(&cfg).unwrap().body;
    let rows: Vec<Vec<f64>> = body.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    let gap = |r: &Vec<f64>| (r[1] - r[4]).abs();
    assert!(gap(&rows[2]) < gap(&rows[1]) && gap(&rows[1]) < gap(&rows[0]));
    assert!(rows[2][7].abs() < rows[0][7].abs());
}

#[test]
fn config_validation() {
    let mut cfg = RunConfig::new(Cmd::Solve);
    assert!(matches!(run(&cfg), Err(CliError::ConfigParse(_))));
    cfg.rho = Some(0.18);
    cfg.ns = 48;
    assert!(matches!(run(&cfg), Err(CliError::ConfigParse(_))));
    cfg.ns = 64;
    cfg.format = Format::Csv;
    assert!(matches!(run(&cfg), Err(CliError::ConfigParse(_))));
    cfg.format = Format::Json;
    cfg.tol = -1.0;
    assert_eq!(run(&cfg).unwrap_err().name(), "ConfigParse");
}

#[test]
fn run_config_round_trips_through_json() {
    let mut cfg = RunConfig::new(Cmd::Sweep);
    cfg.rho = Some(0.3);
    cfg.seed = 99;
    let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
