//! `gestrec train-cnn`: fine-tune the spatial extractor on frame images.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::cnn::{fine_tune, BlockSpec, CnnConfig, ConvNetModel, ImageSample};
use gestrec_core::data::{downsample_and_label, PreprocessConfig};
use gestrec_core::rng::Rng;
use gestrec_core::train::TrainConfig;

use crate::config::{resolve, FileConfig, ResolvedConfig};
use crate::dataset::{frame_image, load_trial_frames, load_trial_transcript, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct TrainCnnArgs {
    /// Dataset directory from `synth --kind images`.
    #[arg(long)]
    data: PathBuf,
    /// Train only on these trials (comma-separated ids).
    #[arg(long)]
    include_trials: Option<String>,
    /// Exclude these trials (comma-separated ids).
    #[arg(long)]
    exclude_trials: Option<String>,
    /// Freeze the first k conv blocks.
    #[arg(long)]
    freeze_prefix: Option<usize>,
    /// Freeze the feature layer as well.
    #[arg(long)]
    freeze_fc1: bool,
    /// Conv block channels, e.g. "8,16,32".
    #[arg(long)]
    blocks: Option<String>,
    /// Convolutions per block.
    #[arg(long)]
    convs: Option<usize>,
    /// Feature vector width.
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Temporal downsample factor.
    #[arg(long)]
    downsample_r: Option<usize>,
    /// Downsample phase (frames with index % r == phase survive).
    #[arg(long)]
    phase: Option<usize>,
}

pub fn parse_usize_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|f| {
            f.trim()
                .parse()
                .map_err(|_| anyhow!("bad list entry {f:?} in {raw:?}"))
        })
        .collect()
}

pub fn preprocess_from(
    file: &FileConfig,
    audit: &mut ResolvedConfig,
    downsample_r: Option<usize>,
    phase: Option<usize>,
) -> Result<PreprocessConfig> {
    let cfg = PreprocessConfig {
        downsample_r: resolve(audit, "pre.downsample_r", downsample_r, file, 1)?,
        phase: resolve(audit, "pre.phase", phase, file, 0)?,
        ..PreprocessConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Frame images + labels for the listed trials, downsampled and labeled from
/// their transcripts.
pub fn load_image_samples(
    data: &std::path::Path,
    trials: &[String],
    pre: &PreprocessConfig,
) -> Result<Vec<ImageSample>> {
    let mut images = Vec::new();
    for trial in trials {
        let frames = load_trial_frames(data, trial)?;
        let transcript = load_trial_transcript(data, trial)?;
        let ds = downsample_and_label(&transcript, frames.shape()[0], pre);
        for (&frame, &label) in ds.kept.iter().zip(&ds.labels) {
            images.push(ImageSample {
                pixels: frame_image(&frames, frame),
                label,
            });
        }
    }
    Ok(images)
}

pub fn run(ctx: &Ctx, args: TrainCnnArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    let file = &ctx.file;
    audit.set("data", args.data.display());
    let manifest = Manifest::load(&args.data)?;
    if manifest.kind != "images" {
        return Err(anyhow!(
            "train-cnn needs an image dataset, manifest says kind={}",
            manifest.kind
        ));
    }
    let trials = manifest.filtered_trials(
        args.include_trials.as_deref(),
        args.exclude_trials.as_deref(),
    )?;
    audit.set("trials", trials.join(","));
    let classes: usize = manifest
        .meta
        .iter()
        .find(|(k, _)| k == "classes")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| anyhow!("manifest missing classes"))?;
    let image_size: usize = manifest
        .meta
        .iter()
        .find(|(k, _)| k == "image_size")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| anyhow!("manifest missing image_size"))?;

    let blocks_raw = resolve(
        &mut audit,
        "cnn.blocks",
        args.blocks.clone(),
        file,
        "8,16,32".to_string(),
    )?;
    let convs = resolve(&mut audit, "cnn.convs", args.convs, file, 1)?;
    let feature_dim = resolve(&mut audit, "cnn.feature_dim", args.feature_dim, file, 64)?;
    let freeze_prefix = resolve(&mut audit, "cnn.freeze_prefix", args.freeze_prefix, file, 0)?;
    let freeze_fc1 = resolve(
        &mut audit,
        "cnn.freeze_fc1",
        args.freeze_fc1.then_some(true),
        file,
        false,
    )?;
    let train_cfg = TrainConfig {
        lr0: resolve(&mut audit, "cnn.lr0", args.lr0, file, 0.05)?,
        decay: resolve(&mut audit, "cnn.decay", args.decay, file, 0.95)?,
        batch_size: resolve(&mut audit, "cnn.batch", args.batch, file, 10)?,
        epochs: resolve(&mut audit, "cnn.epochs", args.epochs, file, 3)?,
        seed: resolve(&mut audit, "seed", ctx.seed, file, 0)?,
        ..TrainConfig::default()
    };
    let pre = preprocess_from(file, &mut audit, args.downsample_r, args.phase)?;

    let cnn_cfg = CnnConfig {
        input_height: image_size,
        input_width: image_size,
        input_channels: 1,
        blocks: parse_usize_list(&blocks_raw)?
            .into_iter()
            .map(|channels| BlockSpec { channels, convs })
            .collect(),
        feature_dim,
        num_classes: classes,
    };
    let mut model = ConvNetModel::init(&cnn_cfg, &mut Rng::new(train_cfg.seed))?;
    model.fc1_frozen = freeze_fc1;
    let images = load_image_samples(&args.data, &trials, &pre)?;
    if images.is_empty() {
        return Err(anyhow!("no labeled frames found in {}", args.data.display()));
    }
    let log = fine_tune(&mut model, &images, freeze_prefix, &train_cfg)?;

    let out = ctx.out_dir()?;
    model.to_checkpoint().save(out.join("cnn.ckpt"))?;
    log.write_csv(out.join("train_log.csv"))?;
    audit.write(&out)?;
    println!(
        "train-cnn: {} images, final accuracy {:.4}, checkpoint {}",
        images.len(),
        log.last_accuracy().unwrap_or(0.0),
        out.join("cnn.ckpt").display()
    );
    Ok(())
}
