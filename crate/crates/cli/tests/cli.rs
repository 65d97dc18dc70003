use std::process::Command;

fn eqsim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eqsim")).args(args).output().unwrap()
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn conditions_list_has_18_rows() {
    let out = eqsim(&["conditions", "list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 19);
    assert!(text.contains("8,MTO biased,mto-biased"));
}

#[test]
fn oracle_prints_expected_rates() {
    let out = eqsim(&["oracle", "--condition", "LS biased"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "condition,base,refl,symm,trans\nLS biased,1.0000,0.8889,0.8667,0.8667\n");
}

#[test]
fn trials_and_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("t.jsonl");
    let j = jsonl.to_str().unwrap();
    assert!(eqsim(&["trials", "gen", "--condition", "ls-biased", "--seed", "3", "--out", j]).status.success());
    assert_eq!(std::fs::read_to_string(&jsonl).unwrap().lines().count(), 9180);

    let m = dir.path().join("m.csv");
    let svg = dir.path().join("m.svg");
    let out = eqsim(&[
        "matrix",
        "--condition",
        "OTM",
        "--out",
        m.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&m).unwrap().lines().count(), 25);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn run_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let p = dir.path().join("p.csv");
    let out = eqsim(&[
        "run",
        "--condition",
        "MTO biased",
        "--agent",
        "probabilistic",
        "--seed",
        "2",
        "--out",
        json.to_str().unwrap(),
        "--export-p",
        p.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = stdout(&out);
    assert!(row.lines().nth(1).unwrap().starts_with("32,MTO,Sel-Rej,B(S-),Prob,2,1.00,"));
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 49);

    let report = eqsim(&["report", "--in", json.to_str().unwrap(), "--format", "csv"]);
    assert!(report.status.success());
    assert_eq!(stdout(&report), row);
}

#[test]
fn run_all_writes_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "agents = [\"probabilistic\"]\nconditions = [\"LS\", \"OTM biased\"]\nseeds = [1]\n").unwrap();
    let out = eqsim(&[
        "run-all",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn bad_input_fails() {
    assert!(!eqsim(&["run", "--condition", "nope", "--agent", "ffn"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "near_mastery_threshold = 0.99\n").unwrap();
    let out = eqsim(&["run-all", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("near-mastery"));
}
