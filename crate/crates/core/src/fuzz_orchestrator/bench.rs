//! Throughput of the mutate, repair and encode pipeline.

use std::time::Instant;

use serde::Serialize;

use super::campaign::{valid_batch, CampaignError};
use crate::mutation_engine::{mutate_batch, MutationConfig, Parent};
use crate::repo_builder::{publish_trees_parallel, RepoSnapshot};
use crate::ObjectKind;

#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub objects: usize,
    pub seconds: f64,
    pub objects_per_sec: f64,
    pub bytes: usize,
}

/// Mutates `count` objects drawn from `parents` generated seeds, then
/// repairs, signs and encodes them. Seed generation is not timed.
pub fn bench_pipeline(
    snapshot: &RepoSnapshot,
    kind: ObjectKind,
    count: usize,
    parents: usize,
    seed: u64,
    workers: usize,
) -> Result<BenchResult, CampaignError> {
    let parents: Vec<Parent> = valid_batch(kind, parents.max(1), seed)
        .into_iter()
        .enumerate()
        .map(|(i, (kind, tree))| Parent { id: i as u64, kind, tree: tree.into(), score: 1 })
        .collect();
    let start = Instant::now();
    let batch = mutate_batch(&parents, count, kind, &MutationConfig::default(), seed)?;
    let mut trees: Vec<_> = batch.entries.into_iter().map(|e| (e.kind, e.tree)).collect();
    let objects = publish_trees_parallel(snapshot, &mut trees, 1, workers)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchResult {
        objects: objects.len(),
        seconds,
        objects_per_sec: objects.len() as f64 / seconds,
        bytes: objects.iter().map(|o| o.der.len()).sum(),
    })
}
