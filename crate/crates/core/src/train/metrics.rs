//! Per-epoch metrics and forward/backward pass accounting.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::head::ModelClass;

/// Sample-level pass counts: one forward per sample per model evaluated,
/// one backward per sample per model the gradient travels through.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PassCounts {
    pub forward: u64,
    pub backward: u64,
}

impl PassCounts {
    pub fn total(&self) -> u64 {
        self.forward + self.backward
    }
}

impl Add for PassCounts {
    type Output = PassCounts;

    fn add(self, o: PassCounts) -> PassCounts {
        PassCounts {
            forward: self.forward + o.forward,
            backward: self.backward + o.backward,
        }
    }
}

impl AddAssign for PassCounts {
    fn add_assign(&mut self, o: PassCounts) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub role: ModelClass,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

/// Scores after one epoch. `passes` is cumulative over the run so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub stage: String,
    pub epoch: usize,
    pub scores: Vec<Score>,
    pub passes: PassCounts,
}

impl EpochSummary {
    pub fn score(&self, role: ModelClass, split: Split) -> Option<&Score> {
        self.scores.iter().find(|s| s.role == role && s.split == split)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochSummary>,
    pub passes: PassCounts,
    /// Seconds spent in training steps; evaluation is excluded.
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    /// Append a later stage: its epochs are renumbered after ours and its
    /// cumulative pass counts are offset by ours.
    pub fn chain(mut self, next: RunMetrics) -> RunMetrics {
        let offset = self.epochs.len();
        let base = self.passes;
        for mut e in next.epochs {
            e.epoch += offset;
            e.passes += base;
            self.epochs.push(e);
        }
        self.passes += next.passes;
        self.wall_clock_secs += next.wall_clock_secs;
        self
    }

    pub fn last_score(&self, role: ModelClass, split: Split) -> Option<&Score> {
        self.epochs.iter().rev().find_map(|e| e.score(role, split))
    }
}

/// Hook called after every epoch, e.g. to persist metrics or checkpoints.
pub trait TrainObserver {
    fn on_epoch(&mut self, _summary: &EpochSummary) -> crate::Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

impl<F: FnMut(&EpochSummary) -> crate::Result<()>> TrainObserver for F {
    fn on_epoch(&mut self, summary: &EpochSummary) -> crate::Result<()> {
        self(summary)
    }
}
