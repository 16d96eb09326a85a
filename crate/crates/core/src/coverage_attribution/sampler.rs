//! The sampling loop. One thread per target process spins over the shared
//! region until told to stop, then takes a final snapshot.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use super::{select_position, AttributionRecord, CounterRegion, KnownSet, RunCounts, WideCounters};

#[derive(Clone, Debug)]
pub enum SampleMode {
    /// Track every counter: wraps and first activation per index.
    Full,
    /// Track loop heads only and credit new counters to objects.
    Attribute { ifs: Vec<usize>, batch_size: usize },
}

#[derive(Clone, Debug, Default)]
pub struct SampleReport {
    pub samples: u64,
    pub elapsed_ns: u64,
    /// Full mode only.
    pub wide: WideCounters,
    /// Full mode only.
    pub first_seen: Vec<Option<u64>>,
    /// Final logical loop-head values (attribute mode).
    pub if_values: Vec<u64>,
    pub records: Vec<AttributionRecord>,
    pub known: KnownSet,
    pub max_used: Option<usize>,
    pub diagnostics: Vec<String>,
}

impl SampleReport {
    pub fn mean_period_ns(&self) -> f64 {
        if self.samples == 0 {
            return f64::NAN;
        }
        self.elapsed_ns as f64 / self.samples as f64
    }

    pub fn run_counts(&self) -> RunCounts {
        RunCounts { logical: self.wide.logical_all(), first_seen: self.first_seen.clone() }
    }
}

/// Copies counters `0..limit` into `out`.
pub fn snapshot(region: &CounterRegion, limit: usize, out: &mut Vec<u8>) {
    out.resize(limit.min(region.len()), 0);
    region.read_into(out);
}

pub struct Sampler {
    stop: Arc<AtomicBool>,
    origin: Instant,
    handle: JoinHandle<SampleReport>,
}

impl Sampler {
    /// Starts sampling counters `0..limit`. Indices in `known` are skipped;
    /// in attribute mode the loop heads are added to it.
    pub fn spawn(region: Arc<CounterRegion>, limit: usize, mode: SampleMode, known: KnownSet) -> Sampler {
        let stop = Arc::new(AtomicBool::new(false));
        let origin = Instant::now();
        let flag = stop.clone();
        let limit = limit.min(region.len());
        let handle = std::thread::Builder::new()
            .name("sampler".into())
            .spawn(move || match mode {
                SampleMode::Full => run_full(&region, limit, &flag, origin, known),
                SampleMode::Attribute { ifs, batch_size } => {
                    run_attribute(&region, limit, &flag, origin, known, &ifs, batch_size)
                }
            })
            .expect("spawn sampler thread");
        Sampler { stop, origin, handle }
    }

    /// Clock origin of all timestamps in the report.
    pub fn origin(&self) -> Instant {
        self.origin
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    /// Stops sampling after one final snapshot.
    pub fn finish(self) -> SampleReport {
        self.stop.store(true, Ordering::Release);
        self.handle.join().expect("sampler thread panicked")
    }
}

fn now_ns(origin: Instant) -> u64 {
    origin.elapsed().as_nanos() as u64
}

fn early_exit(report: &mut SampleReport) {
    if report.samples <= 1 {
        report.diagnostics.push("target exited before first snapshot".into());
    }
}

fn run_full(region: &CounterRegion, limit: usize, stop: &AtomicBool, origin: Instant, known: KnownSet) -> SampleReport {
    let words = &region.words()[..limit.div_ceil(8)];
    let mut prev = vec![0u64; words.len()];
    let mut wraps = vec![0u64; limit];
    let mut first_seen: Vec<Option<u64>> = vec![None; limit];
    let mut max_used: Option<usize> = None;
    let mut samples = 0u64;
    let mut sample = |samples: &mut u64| {
        let ts = now_ns(origin);
        for (w, (word, p)) in words.iter().zip(prev.iter_mut()).enumerate() {
            let v = word.load(Ordering::Relaxed);
            if v == *p {
                continue;
            }
            let (pb, vb) = (p.to_ne_bytes(), v.to_ne_bytes());
            for j in 0..8 {
                let idx = w * 8 + j;
                if idx >= limit || pb[j] == vb[j] {
                    continue;
                }
                if vb[j] < pb[j] {
                    wraps[idx] += 1;
                }
                if first_seen[idx].is_none() {
                    first_seen[idx] = Some(ts);
                    max_used = max_used.max(Some(idx));
                }
            }
            *p = v;
        }
        *samples += 1;
    };
    while !stop.load(Ordering::Acquire) {
        sample(&mut samples);
        std::hint::spin_loop();
    }
    sample(&mut samples);
    let elapsed_ns = now_ns(origin);
    let last: Vec<u8> = prev.iter().flat_map(|w| w.to_ne_bytes()).take(limit).collect();
    let mut report = SampleReport {
        samples,
        elapsed_ns,
        wide: WideCounters { last, wraps },
        first_seen,
        known,
        max_used,
        ..Default::default()
    };
    early_exit(&mut report);
    report
}

fn run_attribute(
    region: &CounterRegion,
    limit: usize,
    stop: &AtomicBool,
    origin: Instant,
    mut known: KnownSet,
    ifs: &[usize],
    batch_size: usize,
) -> SampleReport {
    let words = &region.words()[..limit.div_ceil(8)];
    let counters = region.counters();
    for &i in ifs {
        known.insert(i);
    }
    let mut if_last = vec![0u8; ifs.len()];
    let mut if_wraps = vec![0u64; ifs.len()];
    let mut if_values = vec![0u64; ifs.len()];
    let mut fresh: Vec<usize> = Vec::new();
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut max_used: Option<usize> = None;
    let mut samples = 0u64;
    let mut overlap_reported = false;
    let mut sample = |samples: &mut u64, known: &mut KnownSet| {
        let ts = now_ns(origin);
        // Scan before reading loop heads: a counter seen here fired no later
        // than the loop-head values read below.
        fresh.clear();
        for (w, word) in words.iter().enumerate() {
            let v = word.load(Ordering::Relaxed) & !known.word_mask(w);
            if v == 0 {
                continue;
            }
            for (j, b) in v.to_ne_bytes().into_iter().enumerate() {
                let idx = w * 8 + j;
                if b != 0 && idx < limit {
                    fresh.push(idx);
                }
            }
        }
        for (k, &i) in ifs.iter().enumerate() {
            let raw = counters[i].load(Ordering::Relaxed);
            if raw < if_last[k] {
                if_wraps[k] += 1;
            }
            if_last[k] = raw;
            if_values[k] = u64::from(raw) + 256 * if_wraps[k];
        }
        if !fresh.is_empty() {
            let object_index = select_position(&if_values, batch_size);
            let b = batch_size as u64;
            if !overlap_reported && if_values.iter().filter(|&&v| v != 0 && v < b).count() > 1 {
                overlap_reported = true;
                diagnostics.push(format!("loop heads overlap in time (values {if_values:?}); target is not phase-sequential"));
            }
            for &idx in &fresh {
                known.insert(idx);
                max_used = max_used.max(Some(idx));
                records.push(AttributionRecord { counter: idx, timestamp_ns: ts, if_values: if_values.clone(), object_index });
            }
        }
        *samples += 1;
    };
    while !stop.load(Ordering::Acquire) {
        sample(&mut samples, &mut known);
        std::hint::spin_loop();
    }
    sample(&mut samples, &mut known);
    let elapsed_ns = now_ns(origin);
    let mut report =
        SampleReport { samples, elapsed_ns, if_values, records, known, max_used, diagnostics, ..Default::default() };
    early_exit(&mut report);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn idle_snapshots_identical() {
        let r = CounterRegion::anonymous(8192).unwrap();
        r.hit(3);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        snapshot(&r, 8192, &mut a);
        snapshot(&r, 8192, &mut b);
        assert_eq!(a, b);
        assert_eq!(a[3], 1);
    }

    #[test]
    fn full_mode_tracks_wraps_and_first_seen() {
        let r = Arc::new(CounterRegion::anonymous(4096).unwrap());
        let s = Sampler::spawn(r.clone(), 4096, SampleMode::Full, KnownSet::new());
        for k in 0..1000 {
            r.hit(17);
            if k < 300 {
                r.hit(4000);
            }
            if k % 50 == 0 {
                std::thread::sleep(Duration::from_micros(200));
            }
        }
        std::thread::sleep(Duration::from_millis(2));
        let rep = s.finish();
        assert_eq!(rep.wide.logical(17), 1000);
        assert_eq!(rep.wide.logical(4000), 300);
        assert_eq!(rep.max_used, Some(4000));
        assert!(rep.first_seen[17].is_some() && rep.first_seen[18].is_none());
        assert!(rep.samples > 2);
    }

    #[test]
    fn attribute_mode_credits_current_object() {
        let r = Arc::new(CounterRegion::anonymous(1024).unwrap());
        let known: KnownSet = [5usize].into_iter().collect();
        let s = Sampler::spawn(r.clone(), 1024, SampleMode::Attribute { ifs: vec![1], batch_size: 20 }, known);
        for obj in 1..=20 {
            r.hit(1);
            if obj == 13 {
                r.hit(700);
                r.hit(5);
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        let rep = s.finish();
        assert_eq!(rep.records.len(), 1);
        assert_eq!((rep.records[0].counter, rep.records[0].object_index), (700, 13));
        assert_eq!(rep.if_values, vec![20]);
        assert!(rep.known.contains(700) && rep.known.contains(1));
    }

    #[test]
    fn exit_before_sampling_is_diagnosed() {
        let r = Arc::new(CounterRegion::anonymous(64).unwrap());
        let stop = AtomicBool::new(true);
        let rep = run_full(&r, 64, &stop, Instant::now(), KnownSet::new());
        assert_eq!(rep.samples, 1);
        assert_eq!(rep.diagnostics, vec!["target exited before first snapshot".to_string()]);
    }
}
