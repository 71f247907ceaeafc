//! Leave-one-trial-out cross-validation splits.

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One fold: a held-out test trial and a 70/30 train/validation partition of
/// the remaining trials (by trial, never by frame, so no temporal leakage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LotoFold {
    pub test_trial: String,
    pub train_trials: Vec<String>,
    pub val_trials: Vec<String>,
}

impl LotoFold {
    pub fn select<'a>(&self, samples: &'a [SequenceSample], ids: &[String]) -> Vec<&'a SequenceSample> {
        ids.iter()
            .filter_map(|id| samples.iter().find(|s| &s.trial_id == id))
            .collect()
    }

    pub fn train_samples<'a>(&self, samples: &'a [SequenceSample]) -> Vec<&'a SequenceSample> {
        self.select(samples, &self.train_trials)
    }

    pub fn val_samples<'a>(&self, samples: &'a [SequenceSample]) -> Vec<&'a SequenceSample> {
        self.select(samples, &self.val_trials)
    }

    pub fn test_sample<'a>(&self, samples: &'a [SequenceSample]) -> Option<&'a SequenceSample> {
        samples.iter().find(|s| s.trial_id == self.test_trial)
    }
}

/// Split over explicit trial ids. One fold per trial, deduplicated and sorted
/// so load order never matters; the remaining trials of each fold are shuffled
/// by a generator derived from `(seed, fold index)` and split 70/30.
pub fn loto_split_ids(trial_ids: &[String], seed: u64) -> Result<Vec<LotoFold>> {
    let mut ids: Vec<String> = trial_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 distinct trials, got {}",
            ids.len()
        )));
    }
    let mut folds = Vec::with_capacity(ids.len());
    for (fold_idx, test_trial) in ids.iter().enumerate() {
        let mut rest: Vec<String> = ids.iter().filter(|t| *t != test_trial).cloned().collect();
        let mut rng = Rng::substream(seed, fold_idx as u64);
        rng.shuffle(&mut rest);
        let n = rest.len();
        let n_train = ((0.7 * n as f64).round() as usize).clamp(1, n);
        let val_trials = rest.split_off(n_train);
        folds.push(LotoFold {
            test_trial: test_trial.clone(),
            train_trials: rest,
            val_trials,
        });
    }
    Ok(folds)
}

/// Split a dataset by its trial ids.
pub fn loto_split(samples: &[SequenceSample], seed: u64) -> Result<Vec<LotoFold>> {
    let ids: Vec<String> = samples.iter().map(|s| s.trial_id.clone()).collect();
    loto_split_ids(&ids, seed)
}
