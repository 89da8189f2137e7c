use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seqweight(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqweight"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SEQWEIGHT_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "\
reps = 60
seed = 5
mu = 0.5
alpha = 0.05

[plain]
J = 30
m = 3

[tilted]
group = tilted
J = 30
m = 3
eta = 20
r = 5
";

#[test]
fn calibrate_prints_unweighted_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqweight(dir.path(), &["calibrate", "--alpha", "0.05", "--m", "20", "--J", "200", "--weights", "ones"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("c = 11.18442"), "{text}");
    assert!(text.contains("C_W = 3600"), "{text}");
}

#[test]
fn calibrate_csv_and_weight_sources() {
    let dir = tempfile::tempdir().unwrap();
    let wfile = dir.path().join("w.csv");
    fs::write(&wfile, "stream_index,weight\n0,1\n1,2\n2,3\n3,4\n").unwrap();
    let from_file = seqweight(dir.path(), &["calibrate", "--m", "2", "--weights", wfile.to_str().unwrap(), "--csv"]);
    let from_list = seqweight(dir.path(), &["calibrate", "--m", "2", "--weights", "4,3,2,1", "--csv"]);
    assert!(from_file.status.success(), "{}", stderr(&from_file));
    assert_eq!(stdout(&from_file), stdout(&from_list));
    let text = stdout(&from_file);
    assert!(text.starts_with("alpha,m,c,c_w\n"), "{text}");

    let gi = seqweight(dir.path(), &["calibrate", "--l", "1", "--u", "3", "--weights", "1,2,3,4", "--csv"]);
    assert!(stdout(&gi).starts_with("alpha,beta,l,u,a,b,c,d,c_w_l,c_w_u\n"), "{}", stdout(&gi));
}

#[test]
fn no_args_prints_help() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_seqweight")).current_dir(dir.path()).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage: seqweight"));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["--unknown-flag"],
        vec!["calibrate", "--m", "0", "--J", "5"],
        vec!["calibrate", "--m", "2", "--weights", "1,-2,3"],
        vec!["gap", "--J", "20", "--alpha", "1.5"],
        vec!["gi", "--J", "20", "--m", "2", "--l", "3", "--u", "5"],
        vec!["gap", "--config", "/nonexistent/config.txt"],
    ];
    for args in cases {
        let o = seqweight(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert!(!err.trim().is_empty(), "{args:?}");
    }
    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "# nothing\n").unwrap();
    let o = seqweight(dir.path(), &["sweep", "--config", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no scenarios"), "{}", stderr(&o));
}

#[test]
fn validate_writes_stamp_and_sweep_reports_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");

    let before = seqweight(&out, &["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(before.status.success(), "{}", stderr(&before));
    assert!(stderr(&before).contains("validation.stamp"), "{}", stderr(&before));
    assert!(fs::read_to_string(out.join("manifest.txt")).unwrap().contains("validated = false"));

    let v = seqweight(&out, &["validate"]);
    assert_eq!(v.status.code(), Some(0), "{}", stderr(&v));
    assert!(stdout(&v).contains("PASS c_w_closed_form"));
    assert!(out.join("validation.stamp").exists());
    assert!(fs::read_to_string(out.join("validation.csv")).unwrap().lines().count() > 8);

    let after = seqweight(&out, &["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(after.status.success());
    assert!(!stderr(&after).contains("validation.stamp"), "{}", stderr(&after));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("validated = true"));
    assert!(manifest.contains("seed_derivation = "));
    assert!(manifest.contains("code_version = "));
}

#[test]
fn sweep_outputs_are_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.txt");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = cfg.to_str().unwrap();
    assert!(seqweight(&a, &["--workers", "1", "sweep", "--config", cfg, "--results"]).status.success());
    assert!(seqweight(&b, &["--workers", "3", "sweep", "--config", cfg, "--results"]).status.success());
    for file in ["summary.csv", "results.csv", "plot.csv", "manifest.txt"] {
        let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        assert_eq!(x, y, "{file} differs");
        assert_eq!(x.last(), Some(&b'\n'), "{file} not newline-terminated");
    }
    let plot = fs::read_to_string(a.join("plot.csv")).unwrap();
    let lines: Vec<&str> = plot.lines().collect();
    assert_eq!(lines[0], "J,scenario,ess,ess_se");
    assert_eq!(lines.len(), 3);
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 60);
}

#[test]
fn manifest_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let o = seqweight(&first, &["--reps", "40", "--seed", "11", "gap", "--J", "20", "--m", "2", "--mu", "0.6", "--eta", "20", "--r", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second = dir.path().join("second");
    let manifest = first.join("manifest.txt");
    let o = seqweight(&second, &["gap", "--config", manifest.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(first.join("summary.csv")).unwrap(), fs::read(second.join("summary.csv")).unwrap());
}

#[test]
fn gi_run_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = seqweight(
        dir.path(),
        &["--reps", "30", "gi", "--J", "20", "--m", "2", "--l", "1", "--u", "4", "--mu", "0.7", "--trace", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("gi-J20"));
    let trace = fs::read_to_string(dir.path().join("trace-gi-J20-rep2.csv")).unwrap();
    assert!(trace.starts_with("n,stream,llr,wllr\n"));
    assert_eq!((trace.lines().count() - 1) % 20, 0);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn out_dir_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_seqweight"))
        .args(["--reps", "10", "gap", "--J", "10", "--m", "1", "--mu", "1"])
        .env("SEQWEIGHT_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("summary.csv").exists());
}
