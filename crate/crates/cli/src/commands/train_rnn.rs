//! `gestrec train-rnn`: train the sequence labeling model on per-trial
//! feature files, either on one split or across leave-one-trial-out folds.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::data::{
    loto_split_ids, sample_from_features, PreprocessConfig, SequenceSample,
};
use gestrec_core::indrnn::{BmlIndRnnModel, Fusion, ModelConfig};
use gestrec_core::rng::Rng;
use gestrec_core::tensor::Activation;
use gestrec_core::train::{train, TrainConfig};

use crate::config::{resolve, FileConfig, ResolvedConfig};
use crate::dataset::{load_trial_features, load_trial_transcript, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct TrainRnnArgs {
    /// Dataset directory holding `.features` files and transcripts.
    #[arg(long)]
    pub data: PathBuf,
    /// Train one model per leave-one-trial-out fold.
    #[arg(long)]
    pub loto: bool,
    /// Restrict to these trials (comma-separated ids).
    #[arg(long)]
    pub include_trials: Option<String>,
    /// Exclude these trials (comma-separated ids).
    #[arg(long)]
    pub exclude_trials: Option<String>,
    /// Hidden units per layer per direction, e.g. "64,64,64".
    #[arg(long)]
    pub layers: Option<String>,
    /// Activation: relu or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    /// Direction fusion: concat or sum.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Drop the reverse-time direction (ablation).
    #[arg(long)]
    pub forward_only: bool,
    /// Recurrent weight clamp bound.
    #[arg(long)]
    pub u_max: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Global-norm gradient clip (0 disables).
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Temporal downsample factor.
    #[arg(long)]
    pub downsample_r: Option<usize>,
    /// Downsample phase.
    #[arg(long)]
    pub phase: Option<usize>,
}

pub struct RnnRunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pre: PreprocessConfig,
}

pub fn rnn_config_from(
    file: &FileConfig,
    audit: &mut ResolvedConfig,
    args: &TrainRnnArgs,
    seed_override: Option<u64>,
    input_dim: usize,
    num_classes: usize,
) -> Result<RnnRunConfig> {
    let layers_raw = resolve(
        audit,
        "rnn.layers",
        args.layers.clone(),
        file,
        "64,64,64".to_string(),
    )?;
    let activation = Activation::from_name(&resolve(
        audit,
        "rnn.activation",
        args.activation.clone(),
        file,
        "relu".to_string(),
    )?)?;
    let fusion = Fusion::from_name(&resolve(
        audit,
        "rnn.fusion",
        args.fusion.clone(),
        file,
        "concat".to_string(),
    )?)?;
    let bidirectional = !resolve(
        audit,
        "rnn.forward_only",
        args.forward_only.then_some(true),
        file,
        false,
    )?;
    let u_max = resolve(audit, "rnn.u_max", args.u_max, file, 1.0)?;
    let clip = resolve(audit, "rnn.clip_norm", args.clip_norm, file, 0.0)?;
    let model = ModelConfig {
        layer_widths: super::train_cnn::parse_usize_list(&layers_raw)?,
        activation,
        fusion,
        bidirectional,
        u_max,
        ..ModelConfig::new(input_dim, num_classes)
    };
    let train = TrainConfig {
        lr0: resolve(audit, "rnn.lr0", args.lr0, file, 0.1)?,
        decay: resolve(audit, "rnn.decay", args.decay, file, 0.95)?,
        batch_size: resolve(audit, "rnn.batch", args.batch, file, 10)?,
        epochs: resolve(audit, "rnn.epochs", args.epochs, file, 30)?,
        seed: resolve(audit, "seed", seed_override, file, 0)?,
        u_max,
        shuffle: true,
        clip_norm: (clip > 0.0).then_some(clip),
    };
    let pre = super::train_cnn::preprocess_from(file, audit, args.downsample_r, args.phase)?;
    Ok(RnnRunConfig { model, train, pre })
}

/// Load every listed trial as a sequence sample.
pub fn load_sequences(
    data: &Path,
    trials: &[String],
    pre: &PreprocessConfig,
) -> Result<Vec<SequenceSample>> {
    trials
        .iter()
        .map(|trial| {
            let features = load_trial_features(data, trial)?;
            let transcript = load_trial_transcript(data, trial)?;
            Ok(sample_from_features(trial, &features, &transcript, pre)?)
        })
        .collect()
}

pub fn manifest_classes(manifest: &Manifest) -> Result<usize> {
    manifest
        .meta
        .iter()
        .find(|(k, _)| k == "classes")
        .and_then(|(_, v)| v.parse().ok())
        .ok_or_else(|| anyhow!("manifest missing classes"))
}

fn train_one(
    samples: &[SequenceSample],
    cfg: &RnnRunConfig,
    out: &Path,
) -> Result<BmlIndRnnModel> {
    let mut model = BmlIndRnnModel::init(&cfg.model, &mut Rng::new(cfg.train.seed));
    let log = train(&mut model, samples, &cfg.train)?;
    std::fs::create_dir_all(out)?;
    model.to_checkpoint().save(out.join("model.ckpt"))?;
    log.write_csv(out.join("train_log.csv"))?;
    if let Some(last) = log.epochs.last() {
        println!(
            "  {}: {} epochs, final loss {:.4}, frame accuracy {:.4}",
            out.display(),
            log.epochs.len(),
            last.mean_loss,
            last.frame_accuracy
        );
    } else {
        println!("  {}: 0 epochs (checkpoint equals initialization)", out.display());
    }
    Ok(model)
}

pub fn run(ctx: &Ctx, args: TrainRnnArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    audit.set("data", args.data.display());
    let manifest = Manifest::load(&args.data)?;
    if manifest.kind != "features" {
        return Err(anyhow!(
            "train-rnn needs a feature dataset, manifest says kind={}",
            manifest.kind
        ));
    }
    let trials = manifest.filtered_trials(
        args.include_trials.as_deref(),
        args.exclude_trials.as_deref(),
    )?;
    audit.set("trials", trials.join(","));
    audit.set("loto", args.loto);
    let num_classes = manifest_classes(&manifest)?;
    if trials.is_empty() {
        return Err(anyhow!("no trials selected"));
    }
    // Input dimension comes from the first trial's feature file.
    let probe = load_trial_features(&args.data, &trials[0])?;
    let cfg = rnn_config_from(
        &ctx.file,
        &mut audit,
        &args,
        ctx.seed,
        probe.cols(),
        num_classes,
    )?;
    let samples = load_sequences(&args.data, &trials, &cfg.pre)?;
    let out = ctx.out_dir()?;

    if args.loto {
        let folds = loto_split_ids(&trials, cfg.train.seed)?;
        println!("train-rnn: {} leave-one-trial-out folds", folds.len());
        for fold in &folds {
            let train_set: Vec<SequenceSample> = samples
                .iter()
                .filter(|s| fold.train_trials.contains(&s.trial_id))
                .cloned()
                .collect();
            train_one(&train_set, &cfg, &out.join(format!("fold_{}", fold.test_trial)))?;
        }
    } else {
        println!("train-rnn: single split over {} trial(s)", samples.len());
        train_one(&samples, &cfg, &out)?;
    }
    audit.write(&out)?;
    Ok(())
}
