//! `gestrec gradcam`: class activation heatmap and overlay for one image,
//! taken from a PGM/PPM file or from a frame of a synthetic dataset.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::cnn::ConvNetModel;
use gestrec_core::gradcam::{grad_cam, image_to_svg, render_overlay};
use gestrec_core::image::{load_pnm, save_pnm};
use gestrec_core::io::Checkpoint;
use gestrec_core::tensor::Tensor;

use crate::config::{resolve, ResolvedConfig};
use crate::dataset::{frame_image, load_trial_frames};
use crate::Ctx;

#[derive(Args)]
pub struct GradcamArgs {
    /// Extractor checkpoint from `train-cnn`.
    #[arg(long)]
    model: PathBuf,
    /// Input image (PGM/PPM, ASCII or binary).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Alternative input: a dataset directory plus --trial/--frame.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    trial: Option<String>,
    #[arg(long)]
    frame: Option<usize>,
    /// Target class index.
    #[arg(long)]
    class: Option<usize>,
    /// Overlay blend weight in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Also dump the raw conv-resolution map as CSV.
    #[arg(long)]
    raw_csv: bool,
}

fn load_input(args: &GradcamArgs, audit: &mut ResolvedConfig) -> Result<Tensor> {
    match (&args.image, &args.data) {
        (Some(path), None) => {
            audit.set("image", path.display());
            Ok(load_pnm(path)?)
        }
        (None, Some(data)) => {
            let trial = args
                .trial
                .as_deref()
                .ok_or_else(|| anyhow!("usage: --trial is required with --data"))?;
            let frame = args
                .frame
                .ok_or_else(|| anyhow!("usage: --frame is required with --data"))?;
            audit.set("data", data.display());
            audit.set("trial", trial);
            audit.set("frame", frame);
            let frames = load_trial_frames(data, trial)?;
            if frame >= frames.shape()[0] {
                return Err(anyhow!(
                    "frame {frame} out of range for trial {trial} ({} frames)",
                    frames.shape()[0]
                ));
            }
            Ok(frame_image(&frames, frame))
        }
        _ => Err(anyhow!(
            "usage: exactly one of --image or --data is required"
        )),
    }
}

pub fn run(ctx: &Ctx, args: GradcamArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    audit.set("model", args.model.display());
    let model = ConvNetModel::from_checkpoint(&Checkpoint::load(&args.model)?)?;
    let image = load_input(&args, &mut audit)?;
    let class = resolve(&mut audit, "gradcam.class", args.class, &ctx.file, 0)?;
    let alpha = resolve(&mut audit, "gradcam.alpha", args.alpha, &ctx.file, 0.5)?;
    let raw_csv = resolve(
        &mut audit,
        "gradcam.raw_csv",
        args.raw_csv.then_some(true),
        &ctx.file,
        false,
    )?;

    let map = grad_cam(&model, &image, class)?;
    let overlay = render_overlay(&map, &image, alpha)?;
    let out = ctx.out_dir()?;
    // Heatmap as grayscale PGM, overlay as PPM plus an SVG raster.
    let (h, w) = (map.values.rows(), map.values.cols());
    save_pnm(out.join("heatmap.pgm"), &map.values.reshape(vec![h, w, 1])?)?;
    save_pnm(out.join("overlay.ppm"), &overlay)?;
    std::fs::write(out.join("overlay.svg"), image_to_svg(&overlay)?)?;
    if raw_csv {
        std::fs::write(out.join("heatmap_raw.csv"), map.raw_csv())?;
    }
    audit.write(&out)?;
    let peak = map.values.max_abs();
    println!(
        "gradcam: class {class}, map peak {peak}, outputs in {}",
        out.display()
    );
    Ok(())
}
