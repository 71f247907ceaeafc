//! `gestrec extract-features`: run the extractor over every frame of every
//! trial, writing per-trial feature files row-aligned with the frames.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::cnn::{extract_features, ConvNetModel};
use gestrec_core::io::Checkpoint;
use gestrec_core::tensor::Tensor;

use crate::config::ResolvedConfig;
use crate::dataset::{
    frame_image, load_trial_frames, save_trial_features, transcript_path, Manifest,
};
use crate::Ctx;

#[derive(Args)]
pub struct ExtractArgs {
    /// Dataset directory holding `.frames` stacks and transcripts.
    #[arg(long)]
    data: PathBuf,
    /// Extractor checkpoint from `train-cnn`.
    #[arg(long)]
    model: PathBuf,
    /// Restrict to these trials (comma-separated ids).
    #[arg(long)]
    include_trials: Option<String>,
}

pub fn run(ctx: &Ctx, args: ExtractArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    audit.set("data", args.data.display());
    audit.set("model", args.model.display());
    let manifest = Manifest::load(&args.data)?;
    if manifest.kind != "images" {
        return Err(anyhow!(
            "extract-features needs an image dataset, manifest says kind={}",
            manifest.kind
        ));
    }
    let model = ConvNetModel::from_checkpoint(&Checkpoint::load(&args.model)?)?;
    let trials = manifest.filtered_trials(args.include_trials.as_deref(), None)?;
    audit.set("trials", trials.join(","));

    let out = ctx.out_dir()?;
    let mut out_manifest = Manifest::new("features");
    out_manifest
        .meta
        .push(("feature_dim".into(), model.feature_dim().to_string()));
    for (k, v) in &manifest.meta {
        if k == "classes" || k == "frames" {
            out_manifest.meta.push((k.clone(), v.clone()));
        }
    }
    for trial in &trials {
        let frames = load_trial_frames(&args.data, trial)?;
        let t_len = frames.shape()[0];
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let feature = extract_features(&model, &frame_image(&frames, t))?;
            rows.push(feature.data().to_vec());
        }
        save_trial_features(&out, trial, &Tensor::from_rows(&rows)?)?;
        std::fs::copy(
            transcript_path(&args.data, trial),
            transcript_path(&out, trial),
        )?;
        out_manifest.trials.push(trial.clone());
    }
    out_manifest.save(&out)?;
    audit.write(&out)?;
    println!(
        "extract-features: {} trial(s), {}-d features, into {}",
        trials.len(),
        model.feature_dim(),
        out.display()
    );
    Ok(())
}
