#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_SYNTH: &str = r#"
seed = 11
ood_slot_prob = 0.5

[sizes]
train = 120
dev = 40
test_ind = 40
test_ood = 40

[[slots]]
name = "genre"
ind = ["jazz", "rock", "hip hop", "blues", "soul"]
ood = ["zydeco", "sea shanty", "gamelan"]

[[slots]]
name = "city"
ind = ["paris", "new york", "tokyo", "berlin", "los angeles"]
ood = ["nuuk", "port moresby", "tbilisi"]

[[templates]]
text = "play some {genre} music"

[[templates]]
text = "what is the weather in {city}"
root = 1

[[templates]]
text = "play {genre} in {city}"
"#;

pub const SMALL_RUN: &str = r#"
[tagger]
embed_dim = 8
hidden_dim = 12

[train]
learning_rate = 0.01
epochs = 4
seed = 3
lambda_cal = 0.0
"#;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slotunc"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes the small corpus and run config into `dir`; returns the data dir
/// and the run-config path.
pub fn small_setup(dir: &Path) -> (PathBuf, PathBuf) {
    let synth = dir.join("synth.toml");
    std::fs::write(&synth, SMALL_SYNTH).unwrap();
    let data = dir.join("data");
    slotunc_cli::cmd_synth(Some(&synth), &data, None).unwrap();
    let run = dir.join("run.toml");
    std::fs::write(&run, SMALL_RUN).unwrap();
    (data, run)
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
