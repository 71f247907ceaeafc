//! Data ingestion and generation: transcript parsing, frame downsampling,
//! leave-one-trial-out splits, synthetic sequence/image generators, and the
//! ribbon visualization.

pub mod loto;
pub mod ribbon;
pub mod synth;
pub mod transcript;

pub use loto::{loto_split, loto_split_ids, LotoFold};
pub use ribbon::{emit_ribbon, rle, RIBBON_PALETTE};
pub use synth::{
    generate_image_trial, generate_synthetic_images, generate_synthetic_sequences, render_frames,
    sample_duration, BlobBox, SyntheticTaskSpec,
};
pub use transcript::{
    downsample_and_label, parse_transcript, serialize_transcript, DownsampleResult, GestureLabel,
    PreprocessConfig, TranscriptEntry,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One trial: a per-frame feature matrix with aligned gesture labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub trial_id: String,
    /// `T x D` features.
    pub features: Tensor,
    /// Class index per frame, length T.
    pub labels: Vec<usize>,
    /// Original frame numbers retained after downsampling, length T.
    pub frame_indices: Vec<usize>,
}

impl SequenceSample {
    pub fn new(
        trial_id: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        frame_indices: Vec<usize>,
    ) -> Result<Self> {
        let t = features.rows();
        if labels.len() != t || frame_indices.len() != t {
            return Err(Error::Dimension {
                what: "sequence sample".into(),
                expected: format!("{t} labels and frame indices"),
                got: format!("{} labels, {} indices", labels.len(), frame_indices.len()),
            });
        }
        Ok(SequenceSample {
            trial_id: trial_id.into(),
            features,
            labels,
            frame_indices,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

/// Pair a full-rate feature matrix (one row per original frame) with its
/// transcript: keep downsampled labeled frames and select their feature rows.
pub fn sample_from_features(
    trial_id: &str,
    features: &Tensor,
    transcript: &[TranscriptEntry],
    cfg: &PreprocessConfig,
) -> Result<SequenceSample> {
    let total_frames = features.rows();
    let ds = downsample_and_label(transcript, total_frames, cfg);
    if ds.kept.is_empty() {
        return Err(Error::Dimension {
            what: format!("trial {trial_id}"),
            expected: "at least one labeled kept frame".into(),
            got: "none".into(),
        });
    }
    let rows: Vec<Vec<f64>> = ds.kept.iter().map(|&f| features.row(f).to_vec()).collect();
    SequenceSample::new(trial_id, Tensor::from_rows(&rows)?, ds.labels, ds.kept)
}
