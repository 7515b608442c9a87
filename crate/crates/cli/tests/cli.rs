use std::fs;
use std::process::{Command, Output};

fn scsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scsa")).args(args).env_remove("SCSA_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"{
  "train": {"epochs": 2, "batch_size": 16},
  "dataset": {"samples_per_class": 10, "image_size": [3, 16, 16], "blob_scales": [1.0, 2.0, 3.0, 4.0]}
}"#;

#[test]
fn print_defaults_round_trips() {
    let o = scsa(&["--print-defaults"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("defaults.json");
    fs::write(&path, stdout(&o)).unwrap();
    let again = scsa(&["--config", path.to_str().unwrap(), "--print-defaults"]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&o), stdout(&again));
}

#[test]
fn unknown_key_is_a_validation_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"scsa": {"pcsa": {"headz": 2}}}"#).unwrap();
    let o = scsa(&["--config", path.to_str().unwrap(), "--print-defaults"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("scsa.pcsa"), "{}", stderr(&o));
    assert!(stderr(&o).contains("headz"));
}

#[test]
fn semantic_error_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"scsa": {"smsa": {"kernel_sizes": [3, 4, 5, 7]}}}"#).unwrap();
    let o = scsa(&["--config", path.to_str().unwrap(), "ablate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("scsa.smsa.kernel_sizes"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_io_error() {
    let o = scsa(&["--config", "/nonexistent/scsa.json", "gradcheck"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gradcheck_filtered_passes() {
    let o = scsa(&["gradcheck", "--filter", "smsa/"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.starts_with("check,max_rel_error,tol,status"));
    assert_eq!(out.lines().filter(|l| l.ends_with(",pass")).count(), 6);
}

#[test]
fn impossible_tolerance_fails_numerically() {
    let o = scsa(&["gradcheck", "--tol", "1e-12", "--filter", "op/dw_conv1d"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn ablate_all_has_a_row_per_preset() {
    let o = scsa(&["ablate", "--all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().all(|r| r.contains(",2x8x12x12,") && r.contains(",pass,")));
}

#[test]
fn unknown_preset_lists_valid_names() {
    let o = scsa(&["ablate", "--preset", "wo-everything"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for name in ["baseline", "g2-3-7", "scale-sqrt-hw"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn train_then_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    let ck = dir.path().join("model.scst");
    fs::write(&cfg, TINY).unwrap();
    let o = scsa(&["--config", cfg.to_str().unwrap(), "train", "--seed", "1", "--checkpoint", ck.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stdout(&o);
    assert_eq!(log.lines().next(), Some("epoch,lr,train_loss,val_acc"));
    assert_eq!(log.lines().count(), 3);

    let d = scsa(&["dump", "--checkpoint", ck.to_str().unwrap()]);
    assert!(d.status.success(), "{}", stderr(&d));
    let dump = stdout(&d);
    assert!(dump.lines().any(|l| l.starts_with("stage0.block0.scsa.smsa.") && l.contains(",param,")));
    assert!(dump.lines().any(|l| l.starts_with("head.weight,param,4x32,")));
}

#[test]
fn seed_env_matches_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    let flag = scsa(&["--config", c, "train", "--attention", "off", "--seed", "7"]);
    let env = Command::new(env!("CARGO_BIN_EXE_scsa"))
        .args(["--config", c, "train", "--attention", "off"])
        .env("SCSA_SEED", "7")
        .output()
        .unwrap();
    assert!(flag.status.success() && env.status.success());
    assert_eq!(stdout(&flag), stdout(&env));
    let other = scsa(&["--config", c, "train", "--attention", "off", "--seed", "8"]);
    assert_ne!(stdout(&flag), stdout(&other));
}

#[test]
fn dump_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk");
    fs::write(&path, b"not a tensor file").unwrap();
    assert_eq!(scsa(&["dump", "--checkpoint", path.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn bench_prints_one_row_per_point() {
    let o = scsa(&["bench", "--sweep", "C=8;HW=8,12", "--reps", "1", "--warmups", "0", "--batch", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("preset,C,H,W,median_ms,flops"));
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn no_subcommand_is_usage_error() {
    assert_eq!(scsa(&[]).status.code(), Some(1));
}
