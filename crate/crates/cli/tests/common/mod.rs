#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn manifests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("manifests")
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn probe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probe"))
        .args(args)
        .env("PROBE_LOG", "error")
        .output()
        .expect("spawn probe")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small two-moons manifest; `train_extra` lines are appended to `[train]`.
pub fn moons_manifest(epochs: usize, optimizer: &str) -> String {
    format!(
        r#"id = "moons_small"

[network]
input_shape = [2]
seed = 4
layers = [
  {{ kind = "dense", input = 2, output = 16 }},
  {{ kind = "relu" }},
  {{ kind = "dense", input = 16, output = 16 }},
  {{ kind = "relu" }},
  {{ kind = "dense", input = 16, output = 2 }},
  {{ kind = "softmax_cross_entropy" }},
]

[train]
epochs = {epochs}
batch_size = 32
optimizer = {optimizer}
dataset = {{ kind = "two_moons", n = 400, noise = 0.15 }}
"#
    )
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}
