//! Gesture vocabulary, transcript parsing, and frame downsampling.
//!
//! Transcripts are plain text, one segment per line: `start end G<k>` with
//! whitespace separation, frame ranges inclusive, gesture ids 1 through 10.
//! Gaps between segments are permitted (those frames are unlabeled).

use crate::error::{Error, Result};

/// The ten suturing gestures, ids 1-10 mapped to class indices 0-9.
const GESTURE_NAMES: [&str; 10] = [
    "Reaching for needle with right hand",
    "Positioning needle",
    "Pushing needle through tissue",
    "Transferring needle from left to right",
    "Moving to center with needle in grip",
    "Pulling suture with left hand",
    "Orienting needle",
    "Using right hand to help tighten suture",
    "Loosening more suture",
    "Dropping suture at end and moving to end points",
];

pub const NUM_GESTURES: usize = 10;

/// One gesture of the vocabulary: id `k` (1-10), written `G<k>` in
/// transcripts, classified as index `k-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GestureLabel {
    id: u8,
}

impl GestureLabel {
    pub fn from_id(id: usize) -> Result<Self> {
        if (1..=NUM_GESTURES).contains(&id) {
            Ok(GestureLabel { id: id as u8 })
        } else {
            Err(Error::Config(format!(
                "gesture id {id} outside 1..={NUM_GESTURES}"
            )))
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::from_id(index + 1)
    }

    pub fn id(self) -> usize {
        self.id as usize
    }

    /// Zero-based class index.
    pub fn index(self) -> usize {
        self.id as usize - 1
    }

    pub fn name(self) -> &'static str {
        GESTURE_NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = GestureLabel> {
        (1..=NUM_GESTURES).map(|id| GestureLabel { id: id as u8 })
    }
}

/// One annotated segment: frames `start_frame..=end_frame` carry `gesture`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub start_frame: usize,
    pub end_frame: usize,
    pub gesture: GestureLabel,
}

/// Parse a transcript. Returns entries sorted by start frame; rejects
/// malformed lines, reversed ranges, unknown gesture ids, and overlaps, each
/// with the offending 1-based line number.
pub fn parse_transcript(text: &str) -> Result<Vec<TranscriptEntry>> {
    let mut entries: Vec<(usize, TranscriptEntry)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected \"start end G<k>\", got {line:?}"),
            });
        }
        let start_frame: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad start frame {:?}", fields[0]),
        })?;
        let end_frame: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad end frame {:?}", fields[1]),
        })?;
        if start_frame > end_frame {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("reversed range {start_frame}..{end_frame}"),
            });
        }
        let gesture = fields[2]
            .strip_prefix('G')
            .and_then(|id| id.parse::<usize>().ok())
            .map(GestureLabel::from_id)
            .transpose()
            .ok()
            .flatten()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("unknown gesture {:?}", fields[2]),
            })?;
        entries.push((
            line_no,
            TranscriptEntry {
                start_frame,
                end_frame,
                gesture,
            },
        ));
    }
    entries.sort_by_key(|(_, e)| (e.start_frame, e.end_frame));
    for pair in entries.windows(2) {
        let (_, a) = pair[0];
        let (line, b) = pair[1];
        if b.start_frame <= a.end_frame {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "segment {}..{} overlaps previous segment {}..{}",
                    b.start_frame, b.end_frame, a.start_frame, a.end_frame
                ),
            });
        }
    }
    Ok(entries.into_iter().map(|(_, e)| e).collect())
}

/// Canonical text form: sorted, single-space separated, one segment per line.
pub fn serialize_transcript(entries: &[TranscriptEntry]) -> String {
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|e| (e.start_frame, e.end_frame));
    let mut out = String::new();
    for e in &sorted {
        out.push_str(&format!(
            "{} {} G{}\n",
            e.start_frame,
            e.end_frame,
            e.gesture.id()
        ));
    }
    out
}

/// Preprocessing knobs: temporal downsampling plus the crop/resize bookkeeping
/// for the real-image path (synthetic images are already model-sized).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreprocessConfig {
    /// Keep every `r`-th frame.
    pub downsample_r: usize,
    /// Which residue class to keep: frames with `index % r == phase`.
    pub phase: usize,
    /// Center-crop target (width, height).
    pub crop: (usize, usize),
    /// Resize target (width, height) applied after the crop.
    pub resize: (usize, usize),
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            downsample_r: 5,
            phase: 0,
            crop: (448, 448),
            resize: (224, 224),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_r == 0 {
            return Err(Error::Config("downsample factor must be >= 1".into()));
        }
        if self.phase >= self.downsample_r {
            return Err(Error::Config(format!(
                "downsample phase {} must be < factor {}",
                self.phase, self.downsample_r
            )));
        }
        if self.resize.0 > self.crop.0 || self.resize.1 > self.crop.1 {
            return Err(Error::Config(format!(
                "resize {:?} exceeds crop {:?}",
                self.resize, self.crop
            )));
        }
        Ok(())
    }
}

/// Result of downsampling a trial against its transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownsampleResult {
    /// Kept frame indices (labeled only), ascending.
    pub kept: Vec<usize>,
    /// Class index per kept frame.
    pub labels: Vec<usize>,
    /// Frames that survived the modulus but had no enclosing segment.
    pub dropped_unlabeled: Vec<usize>,
}

/// Keep frames with `index % r == phase`, label each kept frame from its
/// enclosing transcript segment, and report kept-but-unlabeled frames
/// separately (they are excluded from `kept`).
pub fn downsample_and_label(
    transcript: &[TranscriptEntry],
    total_frames: usize,
    cfg: &PreprocessConfig,
) -> DownsampleResult {
    let r = cfg.downsample_r.max(1);
    let mut kept = Vec::new();
    let mut labels = Vec::new();
    let mut dropped_unlabeled = Vec::new();
    let mut seg = 0usize;
    let mut frame = cfg.phase.min(r - 1);
    while frame < total_frames {
        while seg < transcript.len() && transcript[seg].end_frame < frame {
            seg += 1;
        }
        let label = transcript
            .get(seg)
            .filter(|e| e.start_frame <= frame && frame <= e.end_frame)
            .map(|e| e.gesture.index());
        match label {
            Some(class) => {
                kept.push(frame);
                labels.push(class);
            }
            None => dropped_unlabeled.push(frame),
        }
        frame += r;
    }
    DownsampleResult {
        kept,
        labels,
        dropped_unlabeled,
    }
}
