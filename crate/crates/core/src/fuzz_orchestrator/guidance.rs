//! Turning scores into the next batch.
//!
//! Iteration 0 evaluates the seeds unchanged. Afterwards a guided campaign
//! draws parents from the queue weighted by score and keeps children that
//! scored; an unguided one mutates the original seeds every time.

use std::collections::HashMap;

use crate::asn1_tree::TlvNode;
use crate::mutation_engine::{mutate_batch, Batch, BatchEntry, MutationConfig, MutationError, Parent};
use crate::util::derive_seed;
use crate::ObjectKind;

use super::queue::{Origin, Queue};

#[derive(Clone, Debug)]
pub struct Guidance {
    pub queue: Queue,
    pub kind: ObjectKind,
    pub batch_size: usize,
    pub seed: u64,
    pub mutation: MutationConfig,
    pub guided: bool,
    seeds: Vec<Parent>,
    seeds_pending: bool,
}

impl Guidance {
    pub fn new(queue: Queue, kind: ObjectKind, batch_size: usize, seed: u64, mutation: MutationConfig, guided: bool) -> Self {
        let seeds = queue.parents().into_iter().map(|p| Parent { score: 1, ..p }).collect();
        Guidance { queue, kind, batch_size, seed, mutation, guided, seeds, seeds_pending: true }
    }

    /// Seed of the batch for `iteration`.
    pub fn batch_seed(&self, iteration: u64) -> u64 {
        derive_seed(self.seed, 0xba7c_0000_0000 + iteration)
    }

    pub fn next_batch(&mut self, iteration: u64) -> Result<Batch, MutationError> {
        let seed = self.batch_seed(iteration);
        if std::mem::take(&mut self.seeds_pending) && !self.seeds.is_empty() {
            let entries = self
                .seeds
                .iter()
                .cycle()
                .take(self.batch_size)
                .map(|p| BatchEntry { parent_id: Some(p.id), kind: p.kind, parent: p.tree.clone(), tree: TlvNode::clone(&p.tree), log: Vec::new() })
                .collect();
            return Ok(Batch { seed, entries });
        }
        let parents = if self.guided { self.queue.parents() } else { self.seeds.clone() };
        mutate_batch(&parents, self.batch_size, self.kind, &self.mutation, seed)
    }

    /// Applies per-object scores. Without scores (no coverage-capable
    /// target) nothing is learned and the queue stays as it is.
    pub fn feedback(&mut self, batch: &Batch, scores: Option<&[u8]>) {
        let (Some(scores), true) = (scores, self.guided) else { return };
        let mut seed_scores: HashMap<u64, u8> = HashMap::new();
        for (entry, &score) in batch.entries.iter().zip(scores) {
            match (entry.parent_id, entry.log.is_empty()) {
                (Some(id), true) => {
                    let s = seed_scores.entry(id).or_default();
                    *s = (*s).max(score);
                }
                _ if score > 0 => {
                    self.queue.push(entry.tree.clone(), entry.kind, score, Origin::MutatedChild, entry.parent_id, entry.log.clone());
                }
                _ => {}
            }
        }
        if !seed_scores.is_empty() {
            let mut v: Vec<(u64, u8)> = seed_scores.into_iter().collect();
            v.sort_unstable();
            self.queue.rescore(&v);
        }
    }
}
