//! Coverage progression: sampling a target's counter map while it runs,
//! identifying per-object loop heads, and attributing new branches to the
//! object that was being processed when they first fired.

mod region;
mod sampler;

pub use region::{CounterRegion, Transport, AFL_SHM_ENV};
pub use sampler::{snapshot, SampleMode, SampleReport, Sampler};

use std::fmt;
use std::str::FromStr;

/// Upper bound on a single object's score.
pub const MAX_SCORE: u8 = 10;

/// Batch sizes used to identify loop heads.
pub const DEFAULT_IF_SIZES: [usize; 4] = [20, 100, 200, 400];

/// 64-bit logical counts reconstructed from 8-bit raw snapshots.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WideCounters {
    pub last: Vec<u8>,
    pub wraps: Vec<u64>,
}

impl WideCounters {
    pub fn new(len: usize) -> Self {
        WideCounters { last: vec![0; len], wraps: vec![0; len] }
    }

    pub fn logical(&self, i: usize) -> u64 {
        u64::from(self.last[i]) + 256 * self.wraps[i]
    }

    pub fn logical_all(&self) -> Vec<u64> {
        (0..self.last.len()).map(|i| self.logical(i)).collect()
    }
}

/// Counts a wrap wherever a raw counter went down between two snapshots.
/// Assumes at most one wrap per interval.
pub fn accumulate_wraps(prev: &[u8], cur: &[u8], state: &mut WideCounters) {
    for (i, (&p, &c)) in prev.iter().zip(cur).enumerate() {
        if c < p {
            state.wraps[i] += 1;
        }
        state.last[i] = c;
    }
}

/// Object position from loop-head values in phase order: the largest value
/// strictly between 0 and `batch_size`. With none, 1 if all are 0, else B.
pub fn select_position(if_values: &[u64], batch_size: usize) -> usize {
    let b = batch_size as u64;
    match if_values.iter().copied().filter(|&v| v != 0 && v < b).max() {
        Some(v) => v as usize,
        None if if_values.iter().all(|&v| v == 0) => 1,
        None => batch_size,
    }
}

/// Position estimate from timing alone, assuming objects are spread evenly
/// over the run.
pub fn timing_position(timestamp_ns: u64, start_ns: u64, end_ns: u64, batch_size: usize) -> usize {
    if end_ns <= start_ns {
        return 1;
    }
    let frac = timestamp_ns.saturating_sub(start_ns) as f64 / (end_ns - start_ns) as f64;
    ((frac * batch_size as f64).ceil() as usize).clamp(1, batch_size.max(1))
}

/// A newly covered counter and the object it was credited to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributionRecord {
    pub counter: usize,
    pub timestamp_ns: u64,
    pub if_values: Vec<u64>,
    /// 1-based position in the batch.
    pub object_index: usize,
}

impl fmt::Display for AttributionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ifs: Vec<String> = self.if_values.iter().map(u64::to_string).collect();
        write!(f, "{}\t{}\t{}\t{}", self.timestamp_ns, self.counter, ifs.join(","), self.object_index)
    }
}

impl FromStr for AttributionRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let f: Vec<&str> = s.split('\t').collect();
        let [ts, counter, ifs, obj] = f[..] else {
            return Err(format!("expected 4 fields, got {}", f.len()));
        };
        let num = |x: &str| x.parse::<u64>().map_err(|e| format!("{x:?}: {e}"));
        let if_values =
            if ifs.is_empty() { Vec::new() } else { ifs.split(',').map(num).collect::<Result<_, _>>()? };
        Ok(AttributionRecord {
            timestamp_ns: num(ts)?,
            counter: num(counter)? as usize,
            if_values,
            object_index: num(obj)? as usize,
        })
    }
}

/// Per-object scores (index 0 is object 1): new branches credited, capped.
pub fn score_objects(records: &[AttributionRecord], batch_size: usize) -> Vec<u8> {
    let mut counts = vec![0usize; batch_size];
    for r in records {
        if (1..=batch_size).contains(&r.object_index) {
            counts[r.object_index - 1] += 1;
        }
    }
    counts.into_iter().map(|c| c.min(usize::from(MAX_SCORE)) as u8).collect()
}

/// Counter indices already credited to some object. Stored as one byte mask
/// per counter so the sampler can skip whole 8-counter words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnownSet {
    masks: Vec<u64>,
    count: usize,
}

impl KnownSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn bit(i: usize) -> u64 {
        let mut b = [0u8; 8];
        b[i % 8] = 0xFF;
        u64::from_ne_bytes(b)
    }

    pub fn contains(&self, i: usize) -> bool {
        self.masks.get(i / 8).is_some_and(|m| m & Self::bit(i) != 0)
    }

    /// Returns true if `i` was not yet known.
    pub fn insert(&mut self, i: usize) -> bool {
        if self.masks.len() <= i / 8 {
            self.masks.resize(i / 8 + 1, 0);
        }
        let fresh = self.masks[i / 8] & Self::bit(i) == 0;
        self.masks[i / 8] |= Self::bit(i);
        self.count += usize::from(fresh);
        fresh
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Mask of known counters within word `w` (counters 8w..8w+8).
    #[inline]
    pub fn word_mask(&self, w: usize) -> u64 {
        self.masks.get(w).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.masks.iter().enumerate().flat_map(|(w, &m)| {
            m.to_ne_bytes().into_iter().enumerate().filter(|&(_, b)| b != 0).map(move |(j, _)| w * 8 + j)
        })
    }
}

impl FromIterator<usize> for KnownSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        let mut k = KnownSet::new();
        for i in iter {
            k.insert(i);
        }
        k
    }
}

/// Loop-head counters in execution-phase order.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IfSet {
    pub indices: Vec<usize>,
}

/// Final counts of one complete target run.
#[derive(Clone, Debug, Default)]
pub struct RunCounts {
    pub logical: Vec<u64>,
    /// Nanoseconds from sampler start to first nonzero observation.
    pub first_seen: Vec<Option<u64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum IdentifyError {
    #[error("no identification functions found")]
    NoneFound,
    #[error("no batch sizes given")]
    NoSizes,
    #[error("identification run with {size} objects failed: {message}")]
    Run { size: usize, message: String },
}

/// Indices whose final count equals the batch size in every run. `run(n)`
/// must build a repository of `n` manipulated objects, run the target to
/// completion and return its counts. The result is ordered by first
/// activation in the last run.
pub fn identify_ifs<F>(sizes: &[usize], mut run: F) -> Result<IfSet, IdentifyError>
where
    F: FnMut(usize) -> Result<RunCounts, String>,
{
    if sizes.is_empty() {
        return Err(IdentifyError::NoSizes);
    }
    let mut candidates: Option<Vec<usize>> = None;
    let mut last = RunCounts::default();
    for &n in sizes {
        let counts = run(n).map_err(|message| IdentifyError::Run { size: n, message })?;
        let hits = |i: usize| counts.logical.get(i).copied() == Some(n as u64);
        candidates = Some(match candidates {
            None => (0..counts.logical.len()).filter(|&i| hits(i)).collect(),
            Some(c) => c.into_iter().filter(|&i| hits(i)).collect(),
        });
        log::debug!("size {n}: {} candidate loop heads", candidates.as_ref().map_or(0, Vec::len));
        last = counts;
    }
    let mut indices = candidates.unwrap_or_default();
    if indices.is_empty() {
        return Err(IdentifyError::NoneFound);
    }
    indices.sort_by_key(|&i| (last.first_seen.get(i).copied().flatten().unwrap_or(u64::MAX), i));
    Ok(IfSet { indices })
}
