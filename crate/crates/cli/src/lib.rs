//! Batch experiment commands behind the `slotunc` binary.
//!
//! Each command reads its inputs, writes its outputs into a directory and
//! returns a typed summary, so tests can drive the same code paths as the
//! binary.

mod config;
mod eval;
mod synth;
mod sweep;
mod threshold;
mod train;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use slotunc::Error;

pub use config::{RunConfig, SweepConfig, TaggerSection, Variant, Comparison};
pub use eval::{cmd_eval, EvalArgs, EvalMode, EvalOutcome};
pub use synth::{cmd_synth, SynthManifest};
pub use sweep::{cmd_sweep, ComparisonResult, SweepReport, VariantResult};
pub use threshold::cmd_threshold;
pub use train::{cmd_train, train_run, TrainManifest, TrainOverrides};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Toml(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::Iob(_)
        | Error::Tree(_)
        | Error::Data(_)
        | Error::Shape(_)
        | Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::Corrupt(_) => EXIT_DATA,
        Error::Divergence { .. } | Error::NonFinite(_) | Error::Overflow(_) => EXIT_DIVERGENCE,
        _ => EXIT_OTHER,
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn hash_file(path: &Path) -> slotunc::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

pub(crate) fn read_text(path: &Path) -> slotunc::Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> slotunc::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}
