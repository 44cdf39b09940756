use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{"seed": 3,
 "model": {"d": 16, "d_hat": 4, "l_low": 1, "l_high": 1, "heads": 2},
 "data": {"generator": {"n_domains": 2, "n_users": 40, "n_items": 12, "n_records": 300, "pool_size": 60, "vocab_size": 64}},
 "train": {"pretrain": {"epochs": 1}},
 "cost": {"ks": [2, 4], "ms": [3, 6]},
 "paths": {"reports": "reports", "checkpoints": "ckpt"}}"#;

fn bahe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bahe"))
        .current_dir(dir)
        .env("BAHE_THREADS", "1")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bahe(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout.lines().find_map(|l| l.strip_prefix(key)).unwrap_or_else(|| panic!("{key} missing in {stdout}")).trim()
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["gen-data", "--config", "cfg.json", "--out", "data"]);
    let path = dir.path().to_path_buf();
    (dir, path)
}

#[test]
fn gen_data_is_deterministic() {
    let (_a, a) = workspace();
    let (_b, b) = workspace();
    for f in ["users.jsonl", "items.jsonl", "train.jsonl", "test.jsonl", "vocab.txt"] {
        assert_eq!(fs::read(a.join("data").join(f)).unwrap(), fs::read(b.join("data").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn encode_runs_one_low_pass_per_behavior() {
    let (_d, dir) = workspace();
    let out = ok(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "table.bin"]);
    assert_eq!(field(&out, "distinct behaviors |H|:"), field(&out, "low-layer passes:"));
    let again = ok(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "table2.bin"]);
    assert_eq!(fs::read(dir.join("table.bin")).unwrap(), fs::read(dir.join("table2.bin")).unwrap());
    assert_eq!(field(&out, "fingerprint:"), field(&again, "fingerprint:"));
}

#[test]
fn train_then_eval_reproduces_auc() {
    let (_d, dir) = workspace();
    ok(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "table.bin"]);
    let trained = ok(
        &dir,
        &["train", "--config", "cfg.json", "--data", "data", "--mode", "bahe", "--table", "table.bin", "--checkpoint-out", "m.ckpt"],
    );
    let eval = ok(&dir, &["eval", "--config", "cfg.json", "--data", "data", "--checkpoint", "m.ckpt", "--table", "table.bin"]);
    assert_eq!(field(&trained, "test auc:"), field(&eval, "test auc:"));
    assert_eq!(field(&trained, "training low-layer passes:"), "0");
}

#[test]
fn bahe_without_table_is_a_config_error() {
    let (_d, dir) = workspace();
    let out = bahe(&dir, &["train", "--config", "cfg.json", "--data", "data", "--mode", "bahe"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_table_is_rejected_with_hint() {
    let (_d, dir) = workspace();
    ok(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "table.bin", "--seed", "99"]);
    let out = bahe(&dir, &["train", "--config", "cfg.json", "--data", "data", "--mode", "bahe", "--table", "table.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("re-run encode"));
}

#[test]
fn corrupted_table_fails() {
    let (_d, dir) = workspace();
    ok(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "table.bin"]);
    let mut bytes = fs::read(dir.join("table.bin")).unwrap();
    let at = bytes.len() - 6;
    bytes[at] ^= 0x10;
    fs::write(dir.join("table.bin"), bytes).unwrap();
    let out = bahe(&dir, &["train", "--config", "cfg.json", "--data", "data", "--mode", "bahe", "--table", "table.bin"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"model": {"d": 15, "heads": 2}, "bogus": 1}"#).unwrap();
    let out = bahe(dir.path(), &["gen-data", "--config", "bad.json", "--out", "data"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bahe(dir.path(), &["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
}

#[cfg(unix)]
#[test]
fn unwritable_output_exits_one() {
    use std::os::unix::fs::PermissionsExt;
    let (_d, dir) = workspace();
    let locked = dir.join("locked");
    fs::create_dir(&locked).unwrap();
    fs::set_permissions(&locked, fs::Permissions::from_mode(0o555)).unwrap();
    if fs::write(locked.join("probe"), b"x").is_ok() {
        // Running as root; permissions are not enforced.
        return;
    }
    let out = bahe(&dir, &["encode", "--config", "cfg.json", "--data", "data", "--table-out", "locked/table.bin"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_reports_every_mode() {
    let (_d, dir) = workspace();
    ok(&dir, &["bench", "--config", "cfg.json", "--data", "data", "--report-out", "out"]);
    let csv = fs::read_to_string(dir.join("out/ablation.csv")).unwrap();
    for mode in ["baseline", "fp", "fp_abe", "bahe"] {
        assert!(csv.lines().skip(1).any(|l| l.starts_with(&format!("{mode},"))), "{mode} missing:\n{csv}");
    }
    assert!(dir.join("out/sweep.csv").exists());
    let speedup: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("out/speedup.json")).unwrap()).unwrap();
    assert!(speedup.is_object());
}
