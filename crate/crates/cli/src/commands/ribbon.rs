//! `gestrec ribbon`: ribbon plot from two label files (ground truth on top,
//! prediction below).

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use gestrec_core::data::{emit_ribbon, RIBBON_PALETTE};

use crate::config::ResolvedConfig;
use crate::dataset::read_labels;
use crate::Ctx;

#[derive(Args)]
pub struct RibbonArgs {
    /// Ground-truth label file (one class index per line).
    #[arg(long)]
    truth: PathBuf,
    /// Predicted label file.
    #[arg(long)]
    pred: PathBuf,
    /// Output file name within --out (default ribbon.svg).
    #[arg(long, default_value = "ribbon.svg")]
    name: String,
}

pub fn run(ctx: &Ctx, args: RibbonArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    audit.set("truth", args.truth.display());
    audit.set("pred", args.pred.display());
    let y_true = read_labels(&args.truth)?;
    let y_pred = read_labels(&args.pred)?;
    let svg = emit_ribbon(&y_true, &y_pred, &RIBBON_PALETTE)?;
    let out = ctx.out_dir()?;
    let path = out.join(&args.name);
    std::fs::write(&path, svg)?;
    audit.write(&out)?;
    println!("ribbon: {} frames -> {}", y_true.len(), path.display());
    Ok(())
}
