//! Structure-aware mutation of labeled DER trees.
//!
//! Four categories act on one node at a time: header overrides (structure),
//! type-aware content changes, raw byte changes, and cross-tree splicing.
//! Every application is logged as a [`MutationRecord`] that replays exactly.

pub mod bytes;
pub mod structure;
pub mod typed;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asn1_tree::{encode_content, NodeForm, NodePath, TlvNode};
use crate::kind::ObjectKind;
use crate::objects;
use crate::util::derive_seed;
use bytes::ByteOp;
use structure::HeaderChange;
use typed::{TypedOp, ValueKind};

/// The catalog must offer at least this many operators.
pub const MIN_CATALOG_SIZE: usize = 59;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationCategory {
    Structure,
    Type,
    Byte,
    Splice,
}

impl fmt::Display for MutationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MutationCategory::Structure => "structure",
            MutationCategory::Type => "type",
            MutationCategory::Byte => "byte",
            MutationCategory::Splice => "splice",
        })
    }
}

impl FromStr for MutationCategory {
    type Err = MutationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "structure" => MutationCategory::Structure,
            "type" => MutationCategory::Type,
            "byte" => MutationCategory::Byte,
            "splice" => MutationCategory::Splice,
            _ => return Err(MutationError::BadLogLine(s.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperatorInfo {
    pub id: &'static str,
    pub category: MutationCategory,
}

const STRUCTURE_OPS: [&str; 8] = [
    "tag_interesting",
    "tag_high_form",
    "tag_class_flip",
    "len_zero",
    "len_overlong",
    "len_underlong",
    "len_indefinite",
    "len_nonminimal",
];

pub const SPLICE_OP: &str = "splice_subtree";

/// Every operator the engine can apply.
pub fn catalog() -> &'static [OperatorInfo] {
    static CATALOG: OnceLock<Vec<OperatorInfo>> = OnceLock::new();
    CATALOG.get_or_init(|| {
        let mut v: Vec<OperatorInfo> =
            STRUCTURE_OPS.iter().map(|&id| OperatorInfo { id, category: MutationCategory::Structure }).collect();
        v.extend(TypedOp::ALL.iter().map(|op| OperatorInfo { id: op.id(), category: MutationCategory::Type }));
        v.extend(ByteOp::ALL.iter().map(|op| OperatorInfo { id: op.id(), category: MutationCategory::Byte }));
        v.push(OperatorInfo { id: SPLICE_OP, category: MutationCategory::Splice });
        v
    })
}

/// Startup check: catalog size and identifier uniqueness.
pub fn check_catalog() -> Result<usize, MutationError> {
    let c = catalog();
    let unique: HashSet<&str> = c.iter().map(|o| o.id).collect();
    if c.len() < MIN_CATALOG_SIZE || unique.len() != c.len() {
        return Err(MutationError::Catalog(c.len()));
    }
    Ok(c.len())
}

fn operator(id: &str) -> Option<&'static OperatorInfo> {
    catalog().iter().find(|o| o.id == id)
}

#[derive(Debug, thiserror::Error)]
pub enum MutationError {
    #[error("no node at {0}")]
    PositionNotFound(NodePath),
    #[error("{0} mutation not applicable at {1}")]
    NotApplicable(MutationCategory, NodePath),
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("bad parameters for {0}")]
    BadParameters(String),
    #[error("malformed log line {0:?}")]
    BadLogLine(String),
    #[error("operator catalog has {0} entries or duplicate ids")]
    Catalog(usize),
    #[error(transparent)]
    Encode(#[from] crate::asn1_tree::EncodeError),
    #[error(transparent)]
    Generate(#[from] objects::GenerateError),
}

/// One applied mutation. `parameters` holds what replay needs: the new
/// content for type and byte operators, the override for structure
/// operators, and the serialized resulting subtree for collection and splice
/// operators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub position: NodePath,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub category: MutationCategory,
    pub operator: String,
    #[serde(with = "crate::util::hex_bytes")]
    pub parameters: Vec<u8>,
    pub sets_protected: bool,
    pub sets_breaking: bool,
}

impl fmt::Display for MutationRecord {
    /// One tab-separated log line: position, label, category, operator,
    /// parameter hex.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.position,
            self.label.as_deref().unwrap_or("-"),
            self.category,
            self.operator,
            hex::encode(&self.parameters)
        )
    }
}

impl FromStr for MutationRecord {
    type Err = MutationError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || MutationError::BadLogLine(line.to_string());
        let f: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        let [pos, label, cat, op, params] = f[..] else { return Err(bad()) };
        let category: MutationCategory = cat.parse()?;
        operator(op).ok_or_else(|| MutationError::UnknownOperator(op.to_string()))?;
        Ok(MutationRecord {
            position: pos.parse().map_err(|_| bad())?,
            label: (label != "-").then(|| label.to_string()),
            category,
            operator: op.to_string(),
            parameters: hex::decode(params).map_err(|_| bad())?,
            sets_protected: true,
            sets_breaking: category == MutationCategory::Structure,
        })
    }
}

fn node_at<'a>(tree: &'a mut TlvNode, at: &NodePath) -> Result<&'a mut TlvNode, MutationError> {
    tree.get_mut(at).ok_or_else(|| MutationError::PositionNotFound(at.clone()))
}

fn mark(node: &mut TlvNode, breaking: bool) {
    node.protected = true;
    node.tainted = true;
    node.breaking |= breaking;
}

fn content_of(node: &TlvNode) -> Result<Vec<u8>, MutationError> {
    Ok(if node.form == NodeForm::Encapsulating { encode_content(node)? } else { node.value.clone() })
}

fn record(
    tree: &TlvNode,
    at: &NodePath,
    category: MutationCategory,
    op: &str,
    parameters: Vec<u8>,
) -> MutationRecord {
    MutationRecord {
        position: at.clone(),
        label: tree.get(at).and_then(|n| n.label.as_deref().map(str::to_string)),
        category,
        operator: op.to_string(),
        parameters,
        sets_protected: true,
        sets_breaking: category == MutationCategory::Structure,
    }
}

/// Uniformly random node position.
pub fn select_node(tree: &TlvNode, rng: &mut dyn rand::RngCore) -> NodePath {
    let n = tree.node_count();
    tree.nth_path(rng.gen_range(0..n)).expect("index within node count")
}

/// Replaces one header field of the node at `at`.
pub fn mutate_structure(
    tree: &mut TlvNode,
    at: &NodePath,
    rng: &mut dyn rand::RngCore,
) -> Result<MutationRecord, MutationError> {
    let node = tree.get(at).ok_or_else(|| MutationError::PositionNotFound(at.clone()))?;
    if node.is_opaque() {
        return Err(MutationError::NotApplicable(MutationCategory::Structure, at.clone()));
    }
    let content_len = crate::asn1_tree::encode_content(node)?.len();
    let idx = rng.gen_range(0..STRUCTURE_OPS.len());
    let change = match idx {
        0 => structure::tag_interesting(rng),
        1 => structure::tag_high_form(node),
        2 => structure::tag_class_flip(node, rng),
        3 => structure::len_zero(),
        4 => structure::len_overlong(content_len, rng),
        5 => structure::len_underlong(content_len, rng),
        6 => structure::len_indefinite(),
        _ => structure::len_nonminimal(content_len, rng.gen_range(1..=3)),
    };
    let rec = record(tree, at, MutationCategory::Structure, STRUCTURE_OPS[idx], change.to_parameters());
    let node = node_at(tree, at)?;
    change.apply(node);
    mark(node, true);
    Ok(rec)
}

/// Applies a type-aware operator; falls back to byte mutation when the
/// node's type has none.
pub fn mutate_typed(
    tree: &mut TlvNode,
    at: &NodePath,
    rng: &mut dyn rand::RngCore,
) -> Result<MutationRecord, MutationError> {
    let node = tree.get(at).ok_or_else(|| MutationError::PositionNotFound(at.clone()))?;
    let Some(kind) = ValueKind::of(node) else {
        return mutate_bytes(tree, at, rng);
    };
    let mut ops = TypedOp::for_kind(kind);
    if kind == ValueKind::Collection {
        ops.retain(|op| typed::collection_op_applies(*op, node.children.len()));
    }
    let Some(&op) = ops.choose(rng) else {
        return mutate_bytes(tree, at, rng);
    };
    if kind == ValueKind::Collection {
        let node = node_at(tree, at)?;
        typed::apply_collection_op(op, node, rng);
        mark(node, false);
        let params = serde_json::to_vec(node).expect("node serializes");
        return Ok(record(tree, at, MutationCategory::Type, op.id(), params));
    }
    let value = typed::apply_value_op(op, &content_of(node)?, rng);
    let rec = record(tree, at, MutationCategory::Type, op.id(), value.clone());
    let node = node_at(tree, at)?;
    node.set_value(value);
    mark(node, false);
    Ok(rec)
}

/// Applies a byte operator to a primitive node. For constructed nodes a
/// random primitive descendant is mutated instead; without one the node
/// gets a structure mutation.
pub fn mutate_bytes(
    tree: &mut TlvNode,
    at: &NodePath,
    rng: &mut dyn rand::RngCore,
) -> Result<MutationRecord, MutationError> {
    let node = tree.get(at).ok_or_else(|| MutationError::PositionNotFound(at.clone()))?;
    let at = if node.constructed && !node.is_opaque() {
        let mut leaves = Vec::new();
        node.walk(&mut |p, n| {
            if !n.constructed || n.is_opaque() {
                leaves.push(p.clone());
            }
        });
        match leaves.choose(rng) {
            Some(rel) => NodePath::new([at.indices(), rel.indices()].concat()),
            None => return mutate_structure(tree, at, rng),
        }
    } else {
        at.clone()
    };
    let node = tree.get(&at).expect("descendant exists");
    let op = *ByteOp::ALL.choose(rng).expect("non-empty");
    let value = bytes::apply_byte_op(op, &content_of(node)?, rng);
    let rec = record(tree, &at, MutationCategory::Byte, op.id(), value.clone());
    let node = node_at(tree, &at)?;
    node.set_value(value);
    mark(node, false);
    Ok(rec)
}

/// Replaces the subtree at `at` with a copy of a random subtree of `donor`.
/// Donor labels that already exist elsewhere in the destination are dropped.
pub fn splice(
    tree: &mut TlvNode,
    at: &NodePath,
    donor: &TlvNode,
    rng: &mut dyn rand::RngCore,
) -> Result<MutationRecord, MutationError> {
    tree.get(at).ok_or_else(|| MutationError::PositionNotFound(at.clone()))?;
    let src = select_node(donor, rng);
    let mut copy = donor.get(&src).expect("selected path exists").clone();
    copy.walk_mut(&mut |_, n| {
        n.tainted = false;
        n.protected = false;
    });
    let mut existing = HashSet::new();
    tree.walk(&mut |p, n| {
        if !p.starts_with(at) {
            if let Some(l) = &n.label {
                existing.insert(l.clone());
            }
        }
    });
    copy.walk_mut(&mut |_, n| {
        if n.label.as_ref().is_some_and(|l| existing.contains(l)) {
            n.label = None;
        }
    });
    mark(&mut copy, false);
    let params = serde_json::to_vec(&copy).expect("node serializes");
    let rec = record(tree, at, MutationCategory::Splice, SPLICE_OP, params);
    *node_at(tree, at)? = copy;
    Ok(rec)
}

/// Re-applies a logged mutation.
pub fn apply_record(tree: &mut TlvNode, rec: &MutationRecord) -> Result<(), MutationError> {
    let info = operator(&rec.operator).ok_or_else(|| MutationError::UnknownOperator(rec.operator.clone()))?;
    let bad = || MutationError::BadParameters(rec.operator.clone());
    let node = node_at(tree, &rec.position)?;
    match info.category {
        MutationCategory::Structure => {
            HeaderChange::from_parameters(&rec.parameters).ok_or_else(bad)?.apply(node);
        }
        MutationCategory::Splice => {
            *node = serde_json::from_slice(&rec.parameters).map_err(|_| bad())?;
        }
        MutationCategory::Type if rec.operator.starts_with("seq_") => {
            *node = serde_json::from_slice(&rec.parameters).map_err(|_| bad())?;
        }
        MutationCategory::Type | MutationCategory::Byte => node.set_value(rec.parameters.clone()),
    }
    if rec.sets_protected {
        node.protected = true;
    }
    node.tainted = true;
    node.breaking |= rec.sets_breaking;
    Ok(())
}

/// Relative category weights; zero disables a category.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CategoryWeights {
    pub structure: u32,
    pub typed: u32,
    pub bytes: u32,
    pub splice: u32,
}

impl Default for CategoryWeights {
    fn default() -> Self {
        CategoryWeights { structure: 1, typed: 2, bytes: 2, splice: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Mean of the geometric number of mutations per object.
    pub mean_mutations: f64,
    pub max_mutations: usize,
    pub weights: CategoryWeights,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig { mean_mutations: 4.0, max_mutations: 16, weights: CategoryWeights::default() }
    }
}

impl MutationConfig {
    /// 1 + geometric failures, capped.
    pub fn sample_count(&self, rng: &mut dyn rand::RngCore) -> usize {
        let p = (1.0 / self.mean_mutations.max(1.0)).clamp(1e-6, 1.0);
        let mut k = 1;
        while k < self.max_mutations && !rng.gen_bool(p) {
            k += 1;
        }
        k
    }
}

/// Applies a random number of mutations to `tree`.
pub fn mutate_tree(
    tree: &mut TlvNode,
    donors: &[&TlvNode],
    cfg: &MutationConfig,
    rng: &mut dyn rand::RngCore,
) -> Vec<MutationRecord> {
    let w = cfg.weights;
    let splice_w = if donors.is_empty() { 0 } else { w.splice };
    let weights = [w.structure, w.typed, w.bytes, splice_w];
    let Ok(dist) = WeightedIndex::new(weights) else {
        return Vec::new();
    };
    let count = cfg.sample_count(rng);
    let mut log = Vec::with_capacity(count);
    for _ in 0..count {
        for _attempt in 0..4 {
            let at = if tree.node_count() > 1 && rng.gen_bool(0.95) {
                loop {
                    let p = select_node(tree, rng);
                    if !p.is_root() {
                        break p;
                    }
                }
            } else {
                select_node(tree, rng)
            };
            let result = match dist.sample(rng) {
                0 => mutate_structure(tree, &at, rng),
                1 => mutate_typed(tree, &at, rng),
                2 => mutate_bytes(tree, &at, rng),
                _ => {
                    let donor = donors.choose(rng).expect("donors non-empty");
                    splice(tree, &at, donor, rng)
                }
            };
            if let Ok(rec) = result {
                log.push(rec);
                break;
            }
        }
    }
    log
}

/// A queue entry offered to the batch generator.
#[derive(Clone, Debug)]
pub struct Parent {
    pub id: u64,
    pub kind: ObjectKind,
    pub tree: Arc<TlvNode>,
    pub score: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchEntry {
    pub parent_id: Option<u64>,
    pub kind: ObjectKind,
    pub parent: Arc<TlvNode>,
    pub tree: TlvNode,
    pub log: Vec<MutationRecord>,
}

impl BatchEntry {
    /// Rebuilds the entry's tree from its parent and log.
    pub fn replay(&self) -> Result<TlvNode, MutationError> {
        let mut t = TlvNode::clone(&self.parent);
        for r in &self.log {
            apply_record(&mut t, r)?;
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Batch {
    pub seed: u64,
    pub entries: Vec<BatchEntry>,
}

/// Produces `size` mutated objects. Parents are drawn proportionally to
/// score; without parents, fresh objects of `kind` are generated. Entry `i`
/// depends only on `seed` and `i`.
pub fn mutate_batch(
    parents: &[Parent],
    size: usize,
    kind: ObjectKind,
    cfg: &MutationConfig,
    seed: u64,
) -> Result<Batch, MutationError> {
    check_catalog()?;
    let live: Vec<&Parent> = parents.iter().filter(|p| p.score > 0).collect();
    let dist = WeightedIndex::new(live.iter().map(|p| p.score)).ok();
    let mut entries = Vec::with_capacity(size);
    for i in 0..size {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let (parent_id, pkind, parent) = match &dist {
            Some(d) => {
                let p = live[d.sample(&mut rng)];
                (Some(p.id), p.kind, Arc::clone(&p.tree))
            }
            None => (None, kind, Arc::new(objects::generate(kind, &mut rng)?)),
        };
        let donor = match &dist {
            Some(d) => &live[d.sample(&mut rng)].tree,
            None => &parent,
        };
        let mut tree = TlvNode::clone(&parent);
        let mut log = mutate_tree(&mut tree, &[donor], cfg, &mut rng);
        if log.is_empty() {
            let at = select_node(&tree, &mut rng);
            log.push(mutate_bytes(&mut tree, &at, &mut rng)?);
        }
        entries.push(BatchEntry { parent_id, kind: pkind, parent, tree, log });
    }
    Ok(Batch { seed, entries })
}
