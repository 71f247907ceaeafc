//! `gestrec eval`: score checkpoints on a feature dataset, emitting the
//! confusion matrix CSV, a key-value summary, predicted/true label files, and
//! one ribbon SVG per trial. With `--loto-dir` every fold model is scored on
//! its own held-out trial and an aggregate report is written.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::Args;
use gestrec_core::data::{emit_ribbon, SequenceSample, RIBBON_PALETTE};
use gestrec_core::indrnn::{predict_labels, BmlIndRnnModel};
use gestrec_core::io::Checkpoint;
use gestrec_core::metrics::{ConfusionMatrix, EvaluationReport};

use crate::config::{resolve, ResolvedConfig};
use crate::dataset::{write_labels, Manifest};
use crate::Ctx;

#[derive(Args)]
pub struct EvalArgs {
    /// Feature dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Single model checkpoint to score on every selected trial.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory of `fold_<trial>/model.ckpt` checkpoints from
    /// `train-rnn --loto`; each is scored on its held-out trial.
    #[arg(long)]
    loto_dir: Option<PathBuf>,
    /// Restrict to these trials (comma-separated ids).
    #[arg(long)]
    include_trials: Option<String>,
    /// Also write the row-normalized confusion matrix.
    #[arg(long)]
    normalized: bool,
    #[arg(long)]
    downsample_r: Option<usize>,
    #[arg(long)]
    phase: Option<usize>,
}

fn score_trial(
    model: &BmlIndRnnModel,
    sample: &SequenceSample,
    n: usize,
    out: &Path,
) -> Result<ConfusionMatrix> {
    let predicted = predict_labels(model, &sample.features)?;
    let cm = ConfusionMatrix::from_labels(&sample.labels, &predicted, n)?;
    write_labels(
        &out.join(format!("{}.true.labels", sample.trial_id)),
        &sample.labels,
    )?;
    write_labels(
        &out.join(format!("{}.pred.labels", sample.trial_id)),
        &predicted,
    )?;
    let svg = emit_ribbon(&sample.labels, &predicted, &RIBBON_PALETTE)?;
    std::fs::write(out.join(format!("{}.ribbon.svg", sample.trial_id)), svg)?;
    Ok(cm)
}

fn write_report(cm: ConfusionMatrix, normalized: bool, out: &Path, stem: &str) -> Result<f64> {
    std::fs::write(out.join(format!("{stem}.confusion.csv")), cm.to_csv())?;
    if normalized {
        std::fs::write(
            out.join(format!("{stem}.confusion.normalized.csv")),
            cm.to_normalized_csv(),
        )?;
    }
    let report = EvaluationReport::from_confusion(cm)?;
    report.write_summary(&out.join(format!("{stem}.summary.txt")))?;
    Ok(report.micro)
}

pub fn run(ctx: &Ctx, args: EvalArgs) -> Result<()> {
    let mut audit = ResolvedConfig::default();
    audit.set("data", args.data.display());
    let manifest = Manifest::load(&args.data)?;
    if manifest.kind != "features" {
        return Err(anyhow!(
            "eval needs a feature dataset, manifest says kind={}",
            manifest.kind
        ));
    }
    let trials = manifest.filtered_trials(args.include_trials.as_deref(), None)?;
    let n = super::train_rnn::manifest_classes(&manifest)?;
    let normalized = resolve(
        &mut audit,
        "eval.normalized",
        args.normalized.then_some(true),
        &ctx.file,
        false,
    )?;
    let pre = super::train_cnn::preprocess_from(
        &ctx.file,
        &mut audit,
        args.downsample_r,
        args.phase,
    )?;
    let samples = super::train_rnn::load_sequences(&args.data, &trials, &pre)?;
    let out = ctx.out_dir()?;

    let micro = match (&args.model, &args.loto_dir) {
        (Some(model_path), None) => {
            audit.set("model", model_path.display());
            let model = BmlIndRnnModel::from_checkpoint(&Checkpoint::load(model_path)?)?;
            let mut total = ConfusionMatrix::zeros(n);
            for sample in &samples {
                let cm = score_trial(&model, sample, n, &out).map_err(|e| {
                    e.context(format!(
                        "scoring trial {} with {}",
                        sample.trial_id,
                        model_path.display()
                    ))
                })?;
                total.merge(&cm)?;
            }
            write_report(total, normalized, &out, "aggregate")?
        }
        (None, Some(loto_dir)) => {
            audit.set("loto_dir", loto_dir.display());
            let mut total = ConfusionMatrix::zeros(n);
            for sample in &samples {
                let ckpt = loto_dir
                    .join(format!("fold_{}", sample.trial_id))
                    .join("model.ckpt");
                if !ckpt.exists() {
                    return Err(anyhow!(
                        "no fold checkpoint for trial {} at {}",
                        sample.trial_id,
                        ckpt.display()
                    ));
                }
                let model = BmlIndRnnModel::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                let cm = score_trial(&model, sample, n, &out).map_err(|e| {
                    e.context(format!(
                        "scoring trial {} with {}",
                        sample.trial_id,
                        ckpt.display()
                    ))
                })?;
                write_report(cm.clone(), normalized, &out, &format!("fold_{}", sample.trial_id))?;
                total.merge(&cm)?;
            }
            write_report(total, normalized, &out, "aggregate")?
        }
        _ => {
            return Err(anyhow!(
                "usage: exactly one of --model or --loto-dir is required"
            ))
        }
    };
    audit.write(&out)?;
    println!("eval: micro={micro} over {} trial(s), reports in {}", samples.len(), out.display());
    Ok(())
}
