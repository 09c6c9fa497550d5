//! Runs the built binary inside a scratch directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cactus(dir: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_cactus-kit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Like [`cactus`] but panics with the captured output unless it exits 0.
pub fn ok(dir: &Path, args: &[&str]) -> Run {
    let r = cactus(dir, args);
    assert_eq!(
        r.code, 0,
        "{args:?} failed\nstdout:\n{}\nstderr:\n{}",
        r.stdout, r.stderr
    );
    r
}

pub fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

/// Small model flags that keep training to a fraction of a second per epoch.
pub const TINY: &[&str] = &["--d-model", "16", "--heads", "2", "--ffn-dim", "24", "--vocab", "512"];

/// Synthetic data with 24 train, 8 valid and 8 test sets.
pub fn small_dataset(dir: &Path, name: &str) {
    ok(
        dir,
        &[
            "gen",
            "--synthetic",
            "--sets",
            "40",
            "--test-sets",
            "8",
            "--valid-sets",
            "8",
            "--out",
            name,
            "--seed",
            "1",
        ],
    );
}

pub fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) {
    let mut args = vec![
        "train", "--data", data, "--out", out, "--epochs", "2", "--lr", "3e-3", "--seed", "2",
    ];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(dir, &args);
}

/// Every rerun line reports `identical` and the command exits 0.
pub fn rerun_identical(dir: &Path, manifest: &str) -> Result<usize, String> {
    let r = cactus(dir, &["rerun", manifest]);
    let lines: Vec<&str> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("identical") || l.starts_with("DIFFERS"))
        .collect();
    if r.code != 0 || lines.is_empty() || lines.iter().any(|l| !l.starts_with("identical")) {
        return Err(format!("{manifest}: exit {}\n{}\n{}", r.code, r.stdout, r.stderr));
    }
    Ok(lines.len())
}
