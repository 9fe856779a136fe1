#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Runs the binary with `dir` as working directory.
pub fn grade(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grade"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> String {
    let out = grade(dir, args);
    assert!(
        out.status.success(),
        "grade {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Copies the bundled mock fixtures to `<dir>/fx`.
pub fn copy_fixtures(dir: &Path) {
    let fx = dir.join("fx");
    std::fs::create_dir_all(&fx).unwrap();
    for name in ["llm.jsonl", "vqa.jsonl", "t2i.jsonl"] {
        std::fs::copy(repo_root().join("fixtures/mock").join(name), fx.join(name)).unwrap();
    }
}

pub const LLM: &str = "mock:fx/llm.jsonl";
pub const T2I: &str = "mock:fx/t2i.jsonl";
pub const VQA: &str = "mock:fx/vqa.jsonl";

/// schema -> generate -> extract -> score -> report, all with relative paths.
pub fn pipeline(dir: &Path, images_per_prompt: usize) {
    copy_fixtures(dir);
    ok(dir, &["schema", "--llm", LLM, "--concepts", "2"]);
    ok(
        dir,
        &[
            "generate",
            "--t2i",
            T2I,
            "--images-per-prompt",
            &images_per_prompt.to_string(),
        ],
    );
    ok(dir, &["extract", "--vqa", VQA]);
    ok(dir, &["score"]);
    ok(dir, &["report", "--format", "csv", "--out", "report.csv"]);
}

pub fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect()
}

pub fn stats(stdout: &str) -> serde_json::Value {
    let line = stdout.lines().find(|l| l.starts_with('{')).expect("stats line");
    serde_json::from_str(line).unwrap()
}
