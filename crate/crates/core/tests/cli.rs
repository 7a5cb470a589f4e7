use std::path::Path;
use std::process::{Command, Output};

use tailscope::cli::report::parse_csv;
use tailscope::cli::svg::svg_from_csv;

fn tailscope(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tailscope"))
        .args(args)
        .current_dir(dir)
        .env_remove("TAILSCOPE_TOL")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn tail_index_at_the_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.cfg",
        "[model]\nbatch = 1\ndim = 1\n[schedule]\neta_hat = 0.6666666666666666\n[compute]\nseed = 1\nn_samples = 20000\n",
    );
    let out = tailscope(&["tail-index", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].alpha.unwrap() - 2.0).abs() < 1e-3);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "[model]\nbatch = 1\n");
    let out = tailscope(&["tail-index", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    let cfg = write(dir.path(), "d.cfg", "[compute]\nseed = 1\n[model]\nbatch = x\n");
    let out = tailscope(&["tail-index", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
    // --seed satisfies the mandatory seed
    let cfg = write(dir.path(), "e.cfg", "[schedule]\neta_hat = 0.1\n[compute]\nn_samples = 20000\n");
    assert_eq!(tailscope(&["tail-index", "--config", &cfg, "--seed", "3"], dir.path()).status.code(), Some(0));
}

#[test]
fn refusals_exit_3_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "[schedule]\neta_hat = 0\n[compute]\nseed = 1\nn_samples = 20000\n");
    let out = tailscope(&["tail-index", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains(",rho_nonnegative,"));
    let out = tailscope(&["tail-index", "--config", &cfg, "--allow-refusals"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn sweep_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.cfg",
        "[schedule]\nvariant = constant, cyclic\nrange = 0.05\nk = 4\n[sweep]\nparameter = b\nvalues = 5, 10, 15\n\
         [compute]\nseed = 2\nn_samples = 50000\n[output]\ncsv = out.csv\nsvg = out.svg\n",
    );
    let out = tailscope(&["sweep", "--config", &cfg, "--workers", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let rows = parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 6);
    for sched in ["constant", "cyclic"] {
        let a: Vec<f64> = rows.iter().filter(|r| r.schedule == sched).map(|r| r.alpha.unwrap()).collect();
        assert!(a[0] < a[1] && a[1] < a[2], "{sched}: {a:?}");
    }
    let svg = std::fs::read_to_string(dir.path().join("out.svg")).unwrap();
    assert_eq!(svg, svg_from_csv(&csv, "swept value").unwrap());
}

#[test]
fn tolerance_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "[schedule]\neta_hat = 0.1\n[compute]\nseed = 1\nn_samples = 20000\n");
    let out = Command::new(env!("CARGO_BIN_EXE_tailscope"))
        .args(["tail-index", "--config", &cfg])
        .env("TAILSCOPE_TOL", "0.0005")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("# TAILSCOPE_TOL=0.0005\n"));
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.cfg",
        "[model]\nsigma = 1\nsigma_y = 1\nbatch = 2\ndim = 3\n[schedule]\neta_hat = 0.3\n\
         [compute]\nseed = 4\nn_runs = 400\nn_iters = 200\ntail_window = 100\n\
         [output]\nbinary = ens.tsem\nensemble_csv = ens.csv\n[input]\nensemble = ens.tsem\n",
    );
    let out = tailscope(&["simulate", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sim = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(sim[0].route, "simulation");
    assert_eq!(sim[0].censored, Some(0));
    let est = tailscope(&["estimate", "--config", &cfg], dir.path());
    assert_eq!(est.status.code(), Some(0));
    let est = parse_csv(&String::from_utf8(est.stdout).unwrap()).unwrap();
    assert_eq!(est[0].alpha, sim[0].alpha);
    let from_csv = tailscope::cli::commands::load_ensemble(&dir.path().join("ens.csv")).unwrap();
    let from_bin = tailscope::cli::commands::load_ensemble(&dir.path().join("ens.tsem")).unwrap();
    assert_eq!(from_csv, from_bin);
}

#[test]
fn strict_turns_censoring_into_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.cfg",
        "[model]\nbatch = 1\ndim = 1\n[schedule]\neta_hat = 5\n\
         [compute]\nseed = 1\nn_runs = 200\nn_iters = 2000\ntail_window = 100\n",
    );
    let out = tailscope(&["simulate", "--config", &cfg, "--allow-refusals"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("censored"));
    let out = tailscope(&["simulate", "--config", &cfg, "--allow-refusals", "--strict"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn validate_lists_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = tailscope(&["validate", "--list"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.starts_with("1\tboundary calibration"));
}

#[test]
fn validate_runs_selected_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out = tailscope(&["validate", "--criteria", "3,8", "--seed", "5"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# tailscope validate seed=5\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("criterion")).count(), 2);
    assert_eq!(out.status.code(), Some(0), "{text}");
}
