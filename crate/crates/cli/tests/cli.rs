use std::path::Path;
use std::process::Command;

use xilrl_cli::{run, EXIT_CONFIG, EXIT_OK, EXIT_USAGE};
use xilrl_runtime::RunLedger;

fn xil(args: &[&str]) -> i32 {
    run(std::iter::once("xil").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn local_train_two_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(xil(&["local", "train", "--algo", "ppo", "--cycles", "2", "--out", p(&out)]), EXIT_OK);
    let ledger = RunLedger::load(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.len(), 2);
    assert!(out.join("cycle_00002.pol").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(xil(&["local", "train", "--bogus"]), EXIT_USAGE);
    assert_eq!(xil(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(xil(&["--help"]), EXIT_OK);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_xil");
    let status = Command::new(bin).arg("--no-such-flag").output().unwrap().status;
    assert_eq!(status.code(), Some(EXIT_USAGE));
    let status = Command::new(bin).args(["report", "--compare", "/nonexistent/a.csv", "--baseline", "/nonexistent/b.csv"]).output().unwrap().status;
    assert_eq!(status.code(), Some(xilrl_cli::EXIT_IO));
}

#[test]
fn bad_configuration_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.cfg");
    std::fs::write(&plan, "total_cycles = 0\n").unwrap();
    assert_eq!(xil(&["local", "train", "--plan", p(&plan)]), EXIT_CONFIG);
    std::fs::write(&plan, "this line has no equals sign\n").unwrap();
    assert_eq!(xil(&["local", "train", "--plan", p(&plan)]), EXIT_CONFIG);
}

#[test]
fn baseline_report_against_itself_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base.csv");
    assert_eq!(xil(&["baseline", "--output", p(&base)]), EXIT_OK);
    let table = dir.path().join("table.csv");
    assert_eq!(xil(&["report", "--compare", p(&base), "--baseline", p(&base), "--csv", p(&table)]), EXIT_OK);
    let text = std::fs::read_to_string(&table).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // rel_nox_pct .. rel_speed_error_pct
    assert_eq!(&row[5..9], &["0.0", "0.0", "0.0", "0.0"]);
}

#[test]
fn plan_file_transfer_and_ledger_summary() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.cfg");
    std::fs::write(&plan, "algorithm = ppo\ntotal_cycles = 2\nexperiences_per_cycle = 400\nvalidation_every = 1\nppo.sgd_steps = 2\n").unwrap();
    let mil = dir.path().join("runs/mil");
    assert_eq!(xil(&["--seed", "3", "local", "train", "--plan", p(&plan), "--out", p(&mil)]), EXIT_OK);
    let hil = dir.path().join("runs/hil");
    let ckpt = mil.join("cycle_00002.pol");
    assert_eq!(xil(&["local", "transfer", "--from", p(&ckpt), "--plan", p(&plan), "--tier", "hil", "--cycles", "1", "--out", p(&hil)]), EXIT_OK);
    let ledger = RunLedger::load(hil.join("ledger.csv")).unwrap();
    assert_eq!(ledger.len(), 2);
    assert_eq!(ledger.rows[0].policy_cycle, 2);

    assert_eq!(xil(&["master", "report", "--ledger", p(&dir.path().join("runs"))]), EXIT_OK);
    let summary = std::fs::read_to_string(dir.path().join("runs/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let base = dir.path().join("base.csv");
    assert_eq!(xil(&["baseline", "--output", p(&base)]), EXIT_OK);
    assert_eq!(xil(&["report", "--compare", p(&mil), p(&hil), "--baseline", p(&base)]), EXIT_OK);
}
