#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reelcrowd"))
        .current_dir(cwd)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes the synthetic clip and persona file into `dir/fx` and returns
/// (video, personas) relative to `dir`.
pub fn fixture(dir: &Path, seconds: u32) -> (PathBuf, PathBuf) {
    let out = run(
        dir,
        &["fixture", "--out", "fx", "--seconds", &seconds.to_string()],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    (
        PathBuf::from("fx/clip.y4m"),
        PathBuf::from("fx/personas.txt"),
    )
}

/// `pipeline run --mock --seed <seed>` with the fixture personas.
pub fn pipeline_run(dir: &Path, seed: u64, out_dir: &str, extra: &[&str]) -> Output {
    let seed = seed.to_string();
    let mut args = vec![
        "--mock",
        "--seed",
        &seed,
        "pipeline",
        "run",
        "--video",
        "fx/clip.y4m",
        "--title",
        "Garlic bread in a vacuum",
        "--description",
        "We bake bread with no air",
        "--author",
        "Orbit Kitchen",
        "--out",
        out_dir,
    ];
    args.extend_from_slice(extra);
    run(dir, &args)
}
