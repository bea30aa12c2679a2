use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtaffect(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtaffect"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> Vec<(String, String)> {
    fs::read_to_string(dir.join("summary"))
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn value(s: &[(String, String)], key: &str) -> String {
    s.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("no `{key}` in summary")).1.clone()
}

#[test]
fn unknown_config_key_fails_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n[student]\nlearning_rat = 0.1\n").unwrap();
    let out = mtaffect(&["--config", "bad.toml", "gen-synthetic"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("learning_rat"), "{err}");
    assert!(err.contains("error[config]"), "{err}");
}

#[test]
fn evaluating_labels_against_themselves_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mtaffect(&["--out", "syn", "gen-synthetic", "--n", "21"], p).status.success());
    // A prediction file that restates the ground truth.
    let manifest = fs::read_to_string(p.join("syn/manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let au0 = col("au_0");
    let mut preds = String::from("id,valence,arousal,expr");
    for k in 0..12 {
        preds.push_str(&format!(",au_{k}"));
    }
    preds.push('\n');
    for line in lines {
        let c: Vec<&str> = line.split(',').collect();
        let mut row = vec![c[col("id")], c[col("valence")], c[col("arousal")], c[col("expr")]];
        row.extend(&c[au0..au0 + 12]);
        preds.push_str(&row.join(","));
        preds.push('\n');
    }
    fs::write(p.join("preds.csv"), preds).unwrap();

    let out = mtaffect(&["--out", "ev", "evaluate", "--predictions", "preds.csv", "--labels", "syn/manifest.csv"], p);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&p.join("ev"));
    for key in ["va.score", "expr.score", "au.score", "mean_score"] {
        let v: f64 = value(&s, key).parse().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{key}={v}");
    }
}

#[test]
fn alignment_failure_is_reported_by_category() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mtaffect(&["--out", "syn", "gen-synthetic", "--n", "7"], p).status.success());
    fs::write(p.join("preds.csv"), "id,valence,arousal,expr\nnobody,0,0,0\n").unwrap();
    let out = mtaffect(&["--out", "ev", "evaluate", "--predictions", "preds.csv", "--labels", "syn/manifest.csv"], p);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[") && !err.contains("error[error]"), "{err}");
}

#[test]
fn seed_flag_overrides_config_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("c.toml"), "seed = 5\nout = \"from_config\"\n").unwrap();
    let out = mtaffect(&["--config", "c.toml", "--seed", "11", "gen-synthetic", "--n", "7"], p);
    assert!(out.status.success());
    let resolved = fs::read_to_string(p.join("from_config/resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 11"), "{resolved}");
    assert_eq!(value(&summary(&p.join("from_config")), "seed"), "11");
}

#[test]
fn tiny_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.toml"),
        "seed = 3\n\
         [model]\nbackbone_variant = \"tiny\"\npyramid_channels = 8\ninput_size = [32, 32]\n\
         [teacher]\nlearning_rate = 0.003\nbatch_size = 8\nepochs = 2\nepoch_fraction = 1.0\n\
         [student]\nlearning_rate = 0.003\nbatch_size = 8\nepochs = 2\n\
         [synthetic]\nmask_rate = 0.5\n",
    )
    .unwrap();
    let ok = |args: &[&str]| {
        let mut full = vec!["--config", "run.toml"];
        full.extend(args);
        let out = mtaffect(&full, p);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["--out", "syn", "gen-synthetic", "--n", "28"]);
    assert_eq!(value(&summary(&p.join("syn")), "coverage"), "14,14,14");
    for t in ["va", "expr", "au"] {
        ok(&["--out", &format!("t_{t}"), "train-teacher", "--task", t, "--train", "syn/manifest.csv"]);
    }
    ok(&[
        "--out", "comp", "complete-labels", "--train", "syn/manifest.csv",
        "--teacher", "t_va/teacher-va", "--teacher", "t_expr/teacher-expr", "--teacher", "t_au/teacher-au",
    ]);
    assert_eq!(value(&summary(&p.join("comp")), "filled"), "42");
    ok(&["--out", "multi", "build-multi", "--train", "syn/manifest.csv", "--completed", "comp/completed.csv"]);
    assert_eq!(value(&summary(&p.join("multi")), "coverage"), "28,28,28");
    ok(&["--out", "stu", "train-student", "--train", "multi/d_multi.csv", "--val", "syn/manifest.csv"]);
    assert!(p.join("stu/checkpoints/best.ckpt").exists());
    ok(&["--out", "ev", "evaluate", "--checkpoint", "stu/student.ckpt", "--labels", "syn/manifest.csv"]);
    ok(&["--out", "an", "analyze", "--checkpoint", "stu/student.ckpt"]);
    assert!(p.join("an/contribution.png").exists());
    let table = fs::read_to_string(p.join("an/contribution.csv")).unwrap();
    assert_eq!(table.lines().count(), 2 + 12);
}

#[test]
fn student_refuses_incomplete_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(mtaffect(&["--out", "syn", "gen-synthetic", "--n", "14", "--mask-rate", "0.5"], p).status.success());
    let out = mtaffect(&["--out", "stu", "train-student", "--train", "syn/manifest.csv"], p);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[completeness]"));
}
