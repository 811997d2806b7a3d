use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TruthRecord;
use crate::units::PS_PER_S;

/// Detection times of one channel, in integer picoseconds from the start of
/// the acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTagStream {
    channel: u8,
    timestamps: Vec<u64>,
    duration_ps: u64,
    truth: Option<TruthRecord>,
}

impl TimeTagStream {
    /// Fails with [`Error::UnsortedInput`] unless `timestamps` is
    /// non-decreasing, and if any tag lies beyond `duration_ps`.
    pub fn new(channel: u8, timestamps: Vec<u64>, duration_ps: u64) -> Result<Self> {
        if let Some(i) = first_unsorted(&timestamps) {
            return Err(Error::UnsortedInput { channel, index: i });
        }
        if let Some(&last) = timestamps.last() {
            if last > duration_ps {
                return Err(Error::invalid(
                    "timestamps",
                    format!("tag at {last} ps beyond duration {duration_ps} ps"),
                ));
            }
        }
        Ok(Self {
            channel,
            timestamps,
            duration_ps,
            truth: None,
        })
    }

    /// Sorts first; tags beyond the duration are still an error.
    pub fn from_unsorted(channel: u8, mut timestamps: Vec<u64>, duration_ps: u64) -> Result<Self> {
        timestamps.sort_unstable();
        Self::new(channel, timestamps, duration_ps)
    }

    pub(crate) fn from_sorted_unchecked(channel: u8, timestamps: Vec<u64>, duration_ps: u64) -> Self {
        debug_assert!(first_unsorted(&timestamps).is_none());
        Self {
            channel,
            timestamps,
            duration_ps,
            truth: None,
        }
    }

    pub fn with_truth(mut self, truth: TruthRecord) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn channel(&self) -> u8 {
        self.channel
    }
    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }
    pub fn into_timestamps(self) -> Vec<u64> {
        self.timestamps
    }
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }
    /// Acquisition time in seconds.
    pub fn duration(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }
    pub fn truth(&self) -> Option<&TruthRecord> {
        self.truth.as_ref()
    }
    /// Mean count rate over the acquisition, s^-1.
    pub fn rate(&self) -> f64 {
        self.len() as f64 / self.duration()
    }
    pub fn is_strictly_increasing(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[0] < w[1])
    }
}

pub(crate) fn first_unsorted(ts: &[u64]) -> Option<usize> {
    ts.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
}
