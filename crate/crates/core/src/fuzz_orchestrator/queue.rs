//! The fuzzing queue and its initial seeding.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asn1_tree::{parse_labeled, TlvNode};
use crate::coverage_attribution::MAX_SCORE;
use crate::mutation_engine::{MutationRecord, Parent};
use crate::objects::generate;
use crate::util::derive_seed;
use crate::ObjectKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    RealCorpus,
    Generated,
    MutatedChild,
}

#[derive(Clone, Debug)]
pub struct QueueEntry {
    pub id: u64,
    pub tree: Arc<TlvNode>,
    pub kind: ObjectKind,
    pub score: u8,
    pub origin: Origin,
    pub parent: Option<u64>,
    pub log: Vec<MutationRecord>,
}

/// Live entries in insertion order. Discarded entries are removed for good.
#[derive(Clone, Debug, Default)]
pub struct Queue {
    entries: Vec<QueueEntry>,
    next_id: u64,
    discarded: u64,
}

impl Queue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry, clamping its score, and returns its id.
    pub fn push(
        &mut self,
        tree: TlvNode,
        kind: ObjectKind,
        score: u8,
        origin: Origin,
        parent: Option<u64>,
        log: Vec<MutationRecord>,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.entries.push(QueueEntry { id, tree: Arc::new(tree), kind, score: score.min(MAX_SCORE), origin, parent, log });
        id
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// Sets scores by id and drops every entry left at zero.
    pub fn rescore(&mut self, scores: &[(u64, u8)]) {
        for &(id, s) in scores {
            if let Some(e) = self.entries.iter_mut().find(|e| e.id == id) {
                e.score = s.min(MAX_SCORE);
            }
        }
        let before = self.entries.len();
        self.entries.retain(|e| e.score > 0);
        self.discarded += (before - self.entries.len()) as u64;
    }

    /// Parents offered to the batch generator.
    pub fn parents(&self) -> Vec<Parent> {
        self.entries
            .iter()
            .map(|e| Parent { id: e.id, kind: e.kind, tree: Arc::clone(&e.tree), score: u32::from(e.score) })
            .collect()
    }
}

/// Seeds `batch_size` entries: half drawn with repetition from a random
/// subset of the corpus, the rest generated. Corpus files that cannot be
/// read are skipped with a warning; files of another kind are ignored.
/// Seeds start at score 1 until first evaluated.
pub fn seed_queue(corpus_dir: Option<&Path>, kind: ObjectKind, batch_size: usize, seed: u64) -> Queue {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5eed));
    let corpus = corpus_dir.map(|d| read_corpus(d, kind)).unwrap_or_default();
    let mut q = Queue::new();
    let from_corpus = if corpus.is_empty() { 0 } else { batch_size / 2 };
    if from_corpus > 0 {
        let subset_len = corpus.len().min(from_corpus);
        let subset: Vec<&TlvNode> = corpus.choose_multiple(&mut rng, subset_len).collect();
        for i in 0..from_corpus {
            q.push(subset[i % subset.len()].clone(), kind, 1, Origin::RealCorpus, None, Vec::new());
        }
    }
    for i in from_corpus..batch_size {
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6e00_0000 + i as u64));
        match generate(kind, &mut r) {
            Ok(tree) => {
                q.push(tree, kind, 1, Origin::Generated, None, Vec::new());
            }
            Err(e) => log::warn!("generator failed for {}: {e}", kind.name()),
        }
    }
    q
}

/// Parses and labels every file of `kind` in `dir`, sorted by name.
pub fn read_corpus(dir: &Path, kind: ObjectKind) -> Vec<TlvNode> {
    let mut paths: Vec<_> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(e) => {
            log::warn!("corpus {}: {e}", dir.display());
            return Vec::new();
        }
    };
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ObjectKind::from_extension(ext) != Some(kind) {
            continue;
        }
        match std::fs::read(&p) {
            Ok(bytes) => out.push(parse_labeled(&bytes, kind).root),
            Err(e) => log::warn!("skipping corpus file {}: {e}", p.display()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::encode_der;

    #[test]
    fn empty_corpus_is_all_generated() {
        let q = seed_queue(None, ObjectKind::Roa, 10, 1);
        assert_eq!(q.len(), 10);
        assert!(q.entries().iter().all(|e| e.origin == Origin::Generated));
    }

    #[test]
    fn half_from_corpus_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let der = encode_der(&generate(ObjectKind::Roa, &mut rng).unwrap()).unwrap();
            std::fs::write(dir.path().join(format!("r{i}.roa")), der).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let q = seed_queue(Some(dir.path()), ObjectKind::Roa, 1000, 7);
        let census = |o| q.entries().iter().filter(|e| e.origin == o).count();
        assert_eq!((census(Origin::RealCorpus), census(Origin::Generated)), (500, 500));
        let again = seed_queue(Some(dir.path()), ObjectKind::Roa, 1000, 7);
        assert!(q.entries().iter().zip(again.entries()).all(|(a, b)| a.tree == b.tree));
    }

    #[test]
    fn zero_scores_are_discarded() {
        let mut q = seed_queue(None, ObjectKind::Roa, 4, 2);
        let ids: Vec<u64> = q.entries().iter().map(|e| e.id).collect();
        q.rescore(&[(ids[0], 0), (ids[1], 25), (ids[2], 3), (ids[3], 0)]);
        assert_eq!(q.entries().iter().map(|e| (e.id, e.score)).collect::<Vec<_>>(), [(ids[1], 10), (ids[2], 3)]);
        assert_eq!(q.discarded(), 2);
        assert!(q.parents().iter().all(|p| p.id != ids[0] && p.id != ids[3]));
    }
}
