//! Library side of the `gestrec` binary: subcommand implementations, the
//! flat key=value config machinery, and the on-disk dataset layout. The
//! binary in `main.rs` only parses arguments and dispatches here.

pub mod commands;
pub mod config;
pub mod dataset;

use std::path::PathBuf;

/// Values shared by every subcommand.
pub struct Ctx {
    pub file: config::FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Ctx {
    /// The output directory, created. Missing `--out` is a usage error.
    pub fn out_dir(&self) -> anyhow::Result<PathBuf> {
        let out = self
            .out
            .clone()
            .ok_or_else(|| anyhow::anyhow!("usage: --out <dir> is required"))?;
        std::fs::create_dir_all(&out)?;
        Ok(out)
    }
}
