use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lsvcal_cli::RunConfig;
use lsvcal_core::QuotePricer;

fn small(mut cfg: RunConfig) -> RunConfig {
    cfg.grid.n_z = 31;
    cfg.grid.n_v = 21;
    cfg.grid.n_steps = 40;
    cfg.data.log_strikes = vec![90f64.ln(), 100f64.ln(), 110f64.ln()];
    cfg.data.maturities = vec![0.5, 1.0];
    cfg.report.slice_times = vec![0.0, 0.5];
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn lsvcal(config: Option<&Path>, out: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lsvcal"));
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.arg("--output").arg(out).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate_and_calibrate(dir: &Path, cfg: &RunConfig, bundle: &str) -> Output {
    let config = write_config(dir, cfg);
    let data = dir.join("data");
    let o = lsvcal(Some(&config), &data, &["generate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let quotes = data.join("quotes.csv");
    lsvcal(Some(&config), &dir.join(bundle), &["calibrate", "--quotes", quotes.to_str().unwrap()])
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(RunConfig::example2());
    let o = generate_and_calibrate(dir.path(), &cfg, "bundle");
    assert!(o.status.success(), "{}", stderr(&o));
    let bundle = dir.path().join("bundle");
    for f in ["config.toml", "quotes.csv", "sigma2.field", "eta.field", "repricing.csv", "trace.csv", "lambda.csv", "summary.toml"] {
        assert!(bundle.join(f).is_file(), "{f} missing");
    }
    let summary = fs::read_to_string(bundle.join("summary.toml")).unwrap();
    assert!(summary.contains("converged = true"), "{summary}");

    let report = dir.path().join("report");
    let o = lsvcal(None, &report, &["report", "--bundle", bundle.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for t in ["0.5", "1"] {
        let smile = fs::read_to_string(report.join(format!("smile_T{t}.csv"))).unwrap();
        assert_eq!(smile.lines().count(), 4, "{smile}");
    }
    for tag in ["sigma2", "eta"] {
        for t in ["0", "0.5"] {
            let slice = fs::read_to_string(report.join(format!("{tag}_t{t}.csv"))).unwrap();
            assert_eq!(slice.lines().count(), 1 + 31 * 21);
        }
    }

    let config = dir.path().join("run.toml");
    let priced = dir.path().join("priced");
    let quotes = dir.path().join("data/quotes.csv");
    let o = lsvcal(
        Some(&config),
        &priced,
        &["price", "--surfaces", bundle.to_str().unwrap(), "--quotes", quotes.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(priced.join("prices.csv")).unwrap();
    let header = rd.headers().unwrap().clone();
    let gap = header.iter().position(|h| h == "gap").unwrap();
    let error = header.iter().position(|h| h == "error").unwrap();
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        assert!(rec[gap].parse::<f64>().unwrap() < 1e-10);
        assert!(rec[error].parse::<f64>().unwrap() <= cfg.solver.epsilon * (1.0 + 1e-9));
        rows += 1;
    }
    assert_eq!(rows, 6);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(RunConfig::example2());
    for b in ["a", "b"] {
        let o = generate_and_calibrate(dir.path(), &cfg, b);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["sigma2.field", "eta.field", "repricing.csv", "trace.csv", "lambda.csv", "summary.toml"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn iteration_limit_leaves_partial_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(RunConfig::example2());
    cfg.optimizer.max_iterations = 1;
    let o = generate_and_calibrate(dir.path(), &cfg, "bundle");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("bundle/summary.toml")).unwrap();
    assert!(summary.contains("converged = false"));
    assert!(dir.path().join("bundle/sigma2.field").is_file());
}

#[test]
fn matching_models_keep_the_reference_surface() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(RunConfig::example1());
    cfg.data.pricer = QuotePricer::Pde;
    let o = generate_and_calibrate(dir.path(), &cfg, "bundle");
    assert!(o.status.success(), "{}", stderr(&o));
    let report = dir.path().join("report");
    let bundle = dir.path().join("bundle");
    let o = lsvcal(None, &report, &["report", "--bundle", bundle.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(report.join("eta_t0.5.csv")).unwrap();
    for rec in rd.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[2].parse::<f64>().unwrap(), cfg.model.eta_bar);
    }
}

#[test]
fn corrupt_quotes_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small(RunConfig::example2()));
    let quotes = dir.path().join("quotes.csv");
    fs::write(&quotes, "kind,strike,maturity,price\ncall,100,0.5,8.1\ncall,100,one,8.1\n").unwrap();
    let o = lsvcal(Some(&config), &dir.path().join("out"), &["calibrate", "--quotes", quotes.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn empty_maturity_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(RunConfig::example2());
    cfg.data.maturities.clear();
    let config = write_config(dir.path(), &cfg);
    let o = lsvcal(Some(&config), &dir.path().join("out"), &["generate"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no maturities"), "{}", stderr(&o));
}

#[test]
fn report_lists_missing_members() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = lsvcal(None, &dir.path().join("out"), &["report", "--bundle", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("sigma2.field") && err.contains("summary.toml"), "{err}");
}

#[test]
fn printed_config_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["1", "2"] {
        let o = lsvcal(None, &dir.path().join("out"), &["config", "--example", n]);
        assert!(o.status.success());
        let cfg = RunConfig::from_toml(&String::from_utf8(o.stdout).unwrap()).unwrap();
        let expected = if n == "1" { RunConfig::example1() } else { RunConfig::example2() };
        assert_eq!(cfg, expected);
    }
}

#[test]
fn default_grid_generates_sixty_five_quotes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = lsvcal(None, &out, &["generate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(out.join("quotes.csv")).unwrap();
    assert_eq!(rd.records().count(), 65);
}

#[test]
fn surface_from_another_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(RunConfig::example2());
    let o = generate_and_calibrate(dir.path(), &cfg, "bundle");
    assert!(o.status.success(), "{}", stderr(&o));
    let mut other = cfg.clone();
    other.grid.n_z = 41;
    let config = dir.path().join("other.toml");
    fs::write(&config, other.to_toml()).unwrap();
    let bundle = dir.path().join("bundle");
    let quotes = dir.path().join("data/quotes.csv");
    let o = lsvcal(
        Some(&config),
        &dir.path().join("priced"),
        &["price", "--surfaces", bundle.to_str().unwrap(), "--quotes", quotes.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(3));
}
