//! In-process campaigns against the simulated validator's object logic.
//!
//! No repository is built and nothing is signed. Counter attribution comes
//! straight from the simulator's per-counter first-object record, so
//! scoring is exact. This is for long comparative runs where spawning a
//! process per batch would dominate.

use std::collections::HashSet;

use crate::mutation_engine::{Batch, MutationConfig, MutationError};
use crate::sim_target::{Engine, SimConfig};

use super::guidance::Guidance;
use super::queue::seed_queue;
use crate::coverage_attribution::MAX_SCORE;
use crate::ObjectKind;

/// The simulated validator with campaign-wide known coverage.
pub struct InProcessTarget {
    pub config: SimConfig,
    pub known: HashSet<usize>,
}

impl InProcessTarget {
    pub fn new(config: SimConfig) -> Self {
        InProcessTarget { config, known: HashSet::new() }
    }

    /// Scores each batch object by the counters it reached first.
    pub fn execute(&mut self, batch: &Batch) -> Vec<u8> {
        let mut engine = Engine::new(&self.config, None);
        for (i, e) in batch.entries.iter().enumerate() {
            engine.evaluate_tree(&e.tree, e.kind, i as u32 + 1);
        }
        let mut scores = vec![0u8; batch.entries.len()];
        for (c, &n) in engine.cov.counts.iter().enumerate() {
            if n == 0 || !self.known.insert(c) {
                continue;
            }
            let pos = engine.cov.first_object[c] as usize;
            if let Some(s) = pos.checked_sub(1).and_then(|i| scores.get_mut(i)) {
                *s = (*s + 1).min(MAX_SCORE);
            }
        }
        scores
    }
}

#[derive(Clone, Debug)]
pub struct InProcessOptions {
    pub kind: ObjectKind,
    pub batch_size: usize,
    pub iterations: u64,
    pub seed: u64,
    pub guided: bool,
    pub mutation: MutationConfig,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InProcessOutcome {
    /// Iterations executed, including the seed evaluation.
    pub iterations: u64,
    /// First iteration after which `goal` held.
    pub reached_at: Option<u64>,
    pub known: usize,
    pub queue_len: usize,
}

/// Runs until `goal` holds for the known counters or the iteration budget
/// is spent. Iteration 0 evaluates the seeds.
pub fn run_in_process(
    sim: SimConfig,
    opts: &InProcessOptions,
    goal: impl Fn(&HashSet<usize>) -> bool,
) -> Result<InProcessOutcome, MutationError> {
    let queue = seed_queue(None, opts.kind, opts.batch_size, opts.seed);
    let mut g = Guidance::new(queue, opts.kind, opts.batch_size, opts.seed, opts.mutation.clone(), opts.guided);
    let mut target = InProcessTarget::new(sim);
    let mut out = InProcessOutcome { iterations: 0, reached_at: None, known: 0, queue_len: 0 };
    for it in 0..=opts.iterations {
        let batch = g.next_batch(it)?;
        let scores = target.execute(&batch);
        g.feedback(&batch, Some(&scores));
        out.iterations = it + 1;
        if goal(&target.known) {
            out.reached_at = Some(it);
            break;
        }
    }
    out.known = target.known.len();
    out.queue_len = g.queue.len();
    Ok(out)
}
