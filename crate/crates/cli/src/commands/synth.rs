//! `gestrec synth`: write a synthetic dataset to disk.

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::data::{
    generate_image_trial, generate_synthetic_sequences, SyntheticTaskSpec,
};
use gestrec_core::io::save_tensor;
use gestrec_core::rng::Rng;

use crate::config::{resolve, ResolvedConfig};
use crate::dataset::{frames_path, labels_to_transcript, transcript_path, write_boxes, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct SynthArgs {
    /// Dataset kind: "features" (anchor emissions) or "images" (blob frames).
    #[arg(long)]
    kind: Option<String>,
    /// Number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Frames per trial.
    #[arg(long)]
    frames: Option<usize>,
    /// Number of gesture classes (1..=10).
    #[arg(long)]
    classes: Option<usize>,
    /// Feature dimension (features kind).
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Mean segment duration, frames.
    #[arg(long)]
    duration_mean: Option<f64>,
    /// Emission noise sigma (features kind).
    #[arg(long)]
    noise: Option<f64>,
    /// Future-dependency offset k: frame t is labeled by the class at t+k.
    #[arg(long)]
    offset: Option<usize>,
    /// Background noise sigma (images kind).
    #[arg(long)]
    image_noise: Option<f64>,
    /// Blob radius in pixels (images kind).
    #[arg(long)]
    blob_radius: Option<usize>,
}

pub fn spec_from(
    ctx: &Ctx,
    args: &SynthArgs,
    audit: &mut ResolvedConfig,
) -> Result<(SyntheticTaskSpec, String, usize, u64)> {
    let file = &ctx.file;
    let kind = resolve(audit, "synth.kind", args.kind.clone(), file, "features".to_string())?;
    if kind != "features" && kind != "images" {
        return Err(anyhow!("usage: --kind must be \"features\" or \"images\""));
    }
    let trials = resolve(audit, "synth.trials", args.trials, file, 12)?;
    let classes = resolve(audit, "synth.classes", args.classes, file, 10)?;
    let mut spec = SyntheticTaskSpec::with_classes(classes);
    spec.frames_per_trial = resolve(audit, "synth.frames", args.frames, file, 120)?;
    spec.feature_dim = resolve(audit, "synth.feature_dim", args.feature_dim, file, 16)?;
    let duration = resolve(audit, "synth.duration_mean", args.duration_mean, file, 5.0)?;
    spec.duration_mean = vec![duration; classes];
    spec.emission_noise_sigma = resolve(audit, "synth.noise", args.noise, file, 0.1)?;
    spec.future_dependency_offset = resolve(audit, "synth.offset", args.offset, file, 0)?;
    spec.image_noise_sigma = resolve(audit, "synth.image_noise", args.image_noise, file, 0.05)?;
    spec.blob_radius = resolve(audit, "synth.blob_radius", args.blob_radius, file, 3)?;
    let seed = resolve(audit, "seed", ctx.seed, file, 0)?;
    spec.validate()?;
    Ok((spec, kind, trials, seed))
}

pub fn run(ctx: &Ctx, args: SynthArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    let (spec, kind, trials, seed) = spec_from(ctx, &args, &mut audit)?;
    let out = ctx.out_dir()?;
    let mut rng = Rng::new(seed);
    let mut manifest = Manifest::new(&kind);
    manifest.meta.push(("classes".into(), spec.num_classes.to_string()));
    manifest.meta.push(("frames".into(), spec.frames_per_trial.to_string()));
    match kind.as_str() {
        "features" => {
            manifest
                .meta
                .push(("feature_dim".into(), spec.feature_dim.to_string()));
            let samples = generate_synthetic_sequences(&spec, trials, &mut rng)?;
            for sample in &samples {
                save_tensor(
                    crate::dataset::features_path(&out, &sample.trial_id),
                    &sample.features,
                )?;
                std::fs::write(
                    transcript_path(&out, &sample.trial_id),
                    labels_to_transcript(&sample.labels)?,
                )?;
                manifest.trials.push(sample.trial_id.clone());
            }
        }
        "images" => {
            manifest
                .meta
                .push(("image_size".into(), spec.image_size.to_string()));
            for i in 0..trials {
                let trial_id = format!("trial{i:03}");
                let (frames, _classes, labels, boxes) = generate_image_trial(&spec, &mut rng);
                save_tensor(frames_path(&out, &trial_id), &frames)?;
                std::fs::write(
                    transcript_path(&out, &trial_id),
                    labels_to_transcript(&labels)?,
                )?;
                write_boxes(&out, &trial_id, &boxes)?;
                manifest.trials.push(trial_id);
            }
        }
        _ => unreachable!("validated above"),
    }
    manifest.save(&out)?;
    audit.write(&out)?;
    println!(
        "synth: wrote {} {} trial(s) to {}",
        manifest.trials.len(),
        kind,
        out.display()
    );
    Ok(())
}
