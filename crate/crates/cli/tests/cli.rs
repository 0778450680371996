use std::path::Path;
use std::process::{Command, Output};

use infeas_core::pep::{build_pep, read_sdpa};

fn infeas(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infeas"))
        .args(args)
        .env("INFEAS_OUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn rotation_shift_residual_distance_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = infeas(dir.path(), &["iterate", "--op", "rotation-shift", "--schedule", "picard", "--k", "1000"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let col = column(&read(dir.path(), "trajectory.csv"), "fpr_dist_v_sq");
    assert_eq!(col.len(), 1001);
    assert!(col.iter().all(|v| v.parse::<f64>().unwrap() == 2.0));
}

#[test]
fn worst_case_audit_is_tight_and_passes_strict() {
    let dir = tempfile::tempdir().unwrap();
    let o = infeas(
        dir.path(),
        &["--strict", "iterate", "--op", "worst-case:k=10", "--schedule", "picard", "--k", "10", "--audit", "km-norm-iter"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let audit = read(dir.path(), "audit-km-norm-iter.csv");
    let last = audit.lines().filter(|l| !l.starts_with('#')).last().unwrap();
    let slack: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!(slack.abs() < 1e-12, "slack {slack}");
}

#[test]
fn translation_under_ohm_has_zero_residual_distance() {
    let dir = tempfile::tempdir().unwrap();
    let o = infeas(dir.path(), &["iterate", "--op", "translation:v=0,0,1", "--schedule", "ohm", "--k", "100"]);
    assert_eq!(code(&o), 0);
    let col = column(&read(dir.path(), "trajectory.csv"), "fpr_dist_v_sq");
    assert!(col.iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&infeas(dir.path(), &["lowerbound", "--k", "0"])), 2);
    assert_eq!(code(&infeas(dir.path(), &["iterate", "--op", "worst-case:k=3", "--schedule", "km:1.5"])), 2);
    assert_eq!(code(&infeas(dir.path(), &["iterate", "--op", "nope"])), 2);
    assert_eq!(code(&infeas(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&infeas(dir.path(), &["pep", "gen", "--k", "1..3", "--out", "x.dat-s"])), 2);
}

#[test]
fn output_directory_is_validated_first() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let o = infeas(&file.join("sub"), &["demo"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn lower_bound_audits_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = infeas(dir.path(), &["--strict", "lowerbound", "--k", "8", "--draws", "100", "--resist-k", "6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let rows = column(&read(dir.path(), "lowerbound.csv"), "passed");
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|p| p == "true"));
    let resisting = column(&read(dir.path(), "resisting.csv"), "passed");
    assert_eq!(resisting, vec!["true"; 3]);
}

#[test]
fn pep_gen_writes_a_file_that_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pep5.dat-s");
    let o = infeas(dir.path(), &["pep", "gen", "--k", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let file = std::io::BufReader::new(std::fs::File::open(&out).unwrap());
    assert_eq!(read_sdpa(file).unwrap(), build_pep(5).unwrap());
}

#[test]
fn pep_solve_reports_and_strict_turns_failures_into_status_one() {
    let dir = tempfile::tempdir().unwrap();
    // far too few iterations to converge
    let args = ["pep", "solve", "--k", "2", "--max-iter", "200"];
    let o = infeas(dir.path(), &args);
    assert_eq!(code(&o), 0);
    assert_eq!(column(&read(dir.path(), "pep-values.csv"), "converged"), vec!["false"]);
    let mut strict = vec!["--strict"];
    strict.extend(args);
    assert_eq!(code(&infeas(dir.path(), &strict)), 1);
}

#[test]
fn config_file_drives_an_affine_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "strict = true\n[iterate]\nschedule = \"ohm\"\nhorizon = 50\nx0 = [1.0, 2.0]\n\
         [iterate.affine]\na = [[0.0, -1.0], [1.0, 0.0]]\nb = [0.0, 0.0]\nv = [0.0, 0.0]\nx_star = [0.0, 0.0]\n",
    )
    .unwrap();
    let o = infeas(dir.path(), &["--config", cfg.to_str().unwrap(), "iterate"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(dir.path(), "trajectory.csv").lines().count(), 52);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[iterate]\nhorizn = 5\n").unwrap();
    let o = infeas(dir.path(), &["--config", cfg.to_str().unwrap(), "iterate", "--op", "rotation-shift"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));
}

#[test]
fn short_pgextra_run_fails_strict_checks() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--strict", "pgextra", "--horizon", "200", "--reference-factor", "2"];
    assert_eq!(code(&infeas(dir.path(), &args)), 1);
}

#[test]
fn reruns_are_byte_identical() {
    let runs: Vec<(&[&str], &[&str])> = vec![
        (&["--seed", "3", "iterate", "--op", "zoo:seed=3,index=2", "--schedule", "ohm", "--k", "200"], &["trajectory.csv", "audit-ohm-fpr.csv"]),
        (&["--seed", "5", "lowerbound", "--k", "4,8", "--draws", "20"], &["lowerbound.csv", "resisting.csv"]),
        (&["--seed", "1", "pgextra", "--horizon", "300", "--reference-factor", "2"], &["pgextra-picard.csv", "pgextra-ohm.csv"]),
        (&["pep", "gen", "--k", "1..4"], &["pep-k1.dat-s", "pep-k4.dat-s"]),
    ];
    for (args, files) in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(code(&infeas(a.path(), args)), 0, "{args:?}");
        assert_eq!(code(&infeas(b.path(), args)), 0, "{args:?}");
        for f in files {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn seed_changes_pgextra_objective() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let base = ["pgextra", "--horizon", "50", "--reference-factor", "1", "--variant", "picard"];
    let mut with_a = vec!["--seed", "1"];
    with_a.extend(base);
    let mut with_b = vec!["--seed", "2"];
    with_b.extend(base);
    infeas(a.path(), &with_a);
    infeas(b.path(), &with_b);
    assert_ne!(read(a.path(), "pgextra-picard.csv"), read(b.path(), "pgextra-picard.csv"));
}

#[test]
fn demo_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = infeas(dir.path(), &["--strict", "demo"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("pep-k3.dat-s").exists());
}
