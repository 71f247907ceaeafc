//! On-disk dataset layout shared by the pipeline stages.
//!
//! A dataset directory holds a `manifest.txt` (key=value header, then one
//! trial id per line after a `trials:` marker) plus per-trial files:
//!
//! - `<trial>.txt`       transcript (`start end G<k>` lines)
//! - `<trial>.frames`    tensor file, `T x H x W` grayscale frames
//! - `<trial>.features`  tensor file, `T x D` per-frame features
//! - `<trial>.boxes`     CSV `y0,x0,y1,x1` per frame (image datasets)
//!
//! Label files (`*.labels`) are one class index per line.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use gestrec_core::data::{parse_transcript, BlobBox, TranscriptEntry};
use gestrec_core::io::{load_tensor, save_tensor};
use gestrec_core::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub trials: Vec<String>,
}

impl Manifest {
    pub fn new(kind: &str) -> Self {
        Manifest {
            kind: kind.to_string(),
            meta: Vec::new(),
            trials: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("kind={}\n", self.kind);
        for (k, v) in &self.meta {
            s.push_str(&format!("{k}={v}\n"));
        }
        s.push_str("trials:\n");
        for t in &self.trials {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut meta = Vec::new();
        let mut trials = Vec::new();
        let mut in_trials = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "trials:" {
                in_trials = true;
                continue;
            }
            if in_trials {
                trials.push(line.to_string());
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("manifest: bad header line {line:?}"))?;
                if k == "kind" {
                    kind = Some(v.to_string());
                } else {
                    meta.push((k.to_string(), v.to_string()));
                }
            }
        }
        Ok(Manifest {
            kind: kind.ok_or_else(|| anyhow!("manifest: missing kind"))?,
            meta,
            trials,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.to_text())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    /// Trials after optional include/exclude filtering (comma-separated id
    /// lists).
    pub fn filtered_trials(
        &self,
        include: Option<&str>,
        exclude: Option<&str>,
    ) -> Result<Vec<String>> {
        let mut trials = self.trials.clone();
        if let Some(include) = include {
            let wanted: Vec<&str> = include.split(',').map(str::trim).collect();
            for id in &wanted {
                if !trials.iter().any(|t| t == id) {
                    return Err(anyhow!("trial {id:?} not in manifest"));
                }
            }
            trials.retain(|t| wanted.contains(&t.as_str()));
        }
        if let Some(exclude) = exclude {
            let dropped: Vec<&str> = exclude.split(',').map(str::trim).collect();
            trials.retain(|t| !dropped.contains(&t.as_str()));
        }
        Ok(trials)
    }
}

pub fn transcript_path(dir: &Path, trial: &str) -> PathBuf {
    dir.join(format!("{trial}.txt"))
}

pub fn frames_path(dir: &Path, trial: &str) -> PathBuf {
    dir.join(format!("{trial}.frames"))
}

pub fn features_path(dir: &Path, trial: &str) -> PathBuf {
    dir.join(format!("{trial}.features"))
}

pub fn boxes_path(dir: &Path, trial: &str) -> PathBuf {
    dir.join(format!("{trial}.boxes"))
}

pub fn load_trial_transcript(dir: &Path, trial: &str) -> Result<Vec<TranscriptEntry>> {
    let path = transcript_path(dir, trial);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    parse_transcript(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Load a `T x H x W` frame stack.
pub fn load_trial_frames(dir: &Path, trial: &str) -> Result<Tensor> {
    let path = frames_path(dir, trial);
    let frames = load_tensor(&path)?;
    if frames.rank() != 3 {
        return Err(anyhow!(
            "{}: expected T x H x W frames, got shape {:?}",
            path.display(),
            frames.shape()
        ));
    }
    Ok(frames)
}

/// One frame of a stack as an `H x W x 1` image.
pub fn frame_image(frames: &Tensor, t: usize) -> Tensor {
    let (h, w) = (frames.shape()[1], frames.shape()[2]);
    let start = t * h * w;
    Tensor::new(vec![h, w, 1], frames.data()[start..start + h * w].to_vec())
        .expect("slice length matches")
}

pub fn load_trial_features(dir: &Path, trial: &str) -> Result<Tensor> {
    let path = features_path(dir, trial);
    let features = load_tensor(&path)?;
    if features.rank() != 2 {
        return Err(anyhow!(
            "{}: expected T x D features, got shape {:?}",
            path.display(),
            features.shape()
        ));
    }
    Ok(features)
}

pub fn save_trial_features(dir: &Path, trial: &str, features: &Tensor) -> Result<()> {
    save_tensor(features_path(dir, trial), features)?;
    Ok(())
}

pub fn write_boxes(dir: &Path, trial: &str, boxes: &[BlobBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format!("{},{},{},{}\n", b.y0, b.x0, b.y1, b.x1));
    }
    let path = boxes_path(dir, trial);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_boxes(dir: &Path, trial: &str) -> Result<Vec<BlobBox>> {
    let path = boxes_path(dir, trial);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<usize> = line
            .split(',')
            .map(|f| f.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("{}:{}: bad box line", path.display(), i + 1))?;
        if fields.len() != 4 {
            return Err(anyhow!("{}:{}: expected 4 fields", path.display(), i + 1));
        }
        boxes.push(BlobBox {
            y0: fields[0],
            x0: fields[1],
            y1: fields[2],
            x1: fields[3],
        });
    }
    Ok(boxes)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::new();
    for l in labels {
        text.push_str(&format!("{l}\n"));
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .with_context(|| format!("{}:{}: bad label {l:?}", path.display(), i + 1))
        })
        .collect()
}

/// Serialize per-frame labels into transcript segments (`G<k>` with
/// `k = label + 1`), one segment per maximal run.
pub fn labels_to_transcript(labels: &[usize]) -> Result<String> {
    use gestrec_core::data::rle;
    let mut text = String::new();
    for (start, len, label) in rle(labels) {
        if label >= 10 {
            return Err(anyhow!("label {label} has no gesture id (max 10 classes)"));
        }
        text.push_str(&format!("{} {} G{}\n", start, start + len - 1, label + 1));
    }
    Ok(text)
}
