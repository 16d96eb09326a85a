//! Repairs mutated objects: length taint, dependent fields, and signatures.
//!
//! Repair never touches bytes a mutation produced. A plan rule is skipped
//! when its target, an ancestor of it, or a descendant of it is protected.

pub mod keys;
pub mod plan;
pub mod taint;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Duration, Utc};

use crate::asn1_tree::build::{generalized_time, unsigned_bytes, utc_time};
use crate::asn1_tree::{encode_content, encode_der, find_by_label, tags, NodePath, TagClass, TlvNode};
use crate::kind::ObjectKind;
use crate::objects::{default_clock, octet_string_der};
use crate::util::sha256;
pub use keys::{verify, KeyError, KeyMaterial, KeyPair, KeyPool};
pub use plan::{plan_for, KeyRole, RepairPlan, Rule, TimeField};
pub use taint::{propagate_taint, taint_path};

/// Repository facts the repaired fields point at.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepairContext {
    pub clock: DateTime<Utc>,
    /// Certificate serial / manifest number, big-endian magnitude.
    pub serial: Vec<u8>,
    /// URI by role: `object`, `crl`, `issuer_cert`, `manifest`,
    /// `ca_repository`.
    pub uris: BTreeMap<String, String>,
}

impl Default for RepairContext {
    fn default() -> Self {
        RepairContext { clock: default_clock(), serial: vec![1], uris: BTreeMap::new() }
    }
}

impl RepairContext {
    pub fn with_uri(mut self, role: &str, uri: impl Into<String>) -> Self {
        self.uris.insert(role.to_string(), uri.into());
        self
    }

    fn time(&self, field: TimeField) -> DateTime<Utc> {
        match field {
            TimeField::NotBefore => self.clock - Duration::days(1),
            TimeField::NotAfter => self.clock + Duration::days(365),
            TimeField::ThisUpdate | TimeField::SigningTime => self.clock,
            TimeField::NextUpdate => self.clock + Duration::days(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    TargetMissing,
    SourceMissing(String),
    Protected,
    NoUri(String),
    NotATime,
    Encode(String),
    Sign(String),
}

/// A plan rule that was not applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub target: String,
    pub rule: &'static str,
    pub reason: SkipReason,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "skipped {} on {}: {:?}", self.rule, self.target, self.reason)
    }
}

/// True when rewriting the node at `path` would alter a protected node.
pub fn is_guarded(root: &TlvNode, path: &NodePath) -> bool {
    let mut node = root;
    if node.protected {
        return true;
    }
    for &i in path.indices() {
        match node.children.get(i) {
            Some(c) => node = c,
            None => return false,
        }
        if node.protected {
            return true;
        }
    }
    let mut below = false;
    node.walk(&mut |_, n| below |= n.protected);
    below
}

fn key<'a>(keys: &KeyMaterial<'a>, role: KeyRole) -> &'a KeyPair {
    match role {
        KeyRole::Subject => keys.one_off,
        KeyRole::Issuer => keys.ca,
    }
}

fn source<'a>(root: &'a TlvNode, label: &str) -> Result<&'a TlvNode, SkipReason> {
    find_by_label(root, label)
        .and_then(|p| root.get(&p))
        .ok_or_else(|| SkipReason::SourceMissing(label.to_string()))
}

fn enc(r: Result<Vec<u8>, crate::asn1_tree::EncodeError>) -> Result<Vec<u8>, SkipReason> {
    r.map_err(|e| SkipReason::Encode(e.to_string()))
}

/// The new content for a rule's target.
fn compute(
    root: &TlvNode,
    target: &TlvNode,
    rule: &Rule,
    keys: &KeyMaterial<'_>,
    ctx: &RepairContext,
) -> Result<Vec<u8>, SkipReason> {
    Ok(match rule {
        Rule::ContentDigest { source: s } => sha256(&enc(encode_content(source(root, s)?))?).to_vec(),
        Rule::SignatureOver { source: s, key: role, as_set } => {
            let src = source(root, s)?;
            let msg = if *as_set {
                let mut n = src.clone();
                n.tag_override = None;
                n.tag_class = TagClass::Universal;
                n.tag_number = tags::SET;
                n.constructed = true;
                enc(encode_der(&n))?
            } else {
                enc(encode_der(src))?
            };
            let sig = key(keys, *role).sign(&msg).map_err(|e| SkipReason::Sign(e.to_string()))?;
            if target.is_universal(tags::BIT_STRING) {
                [&[0u8][..], &sig].concat()
            } else {
                sig
            }
        }
        Rule::KeyId { key: role, octet } => {
            let id = key(keys, *role).key_id();
            if *octet {
                octet_string_der(&id)
            } else {
                id.to_vec()
            }
        }
        Rule::ParentKeyId => keys.ca.key_id().to_vec(),
        Rule::PublicKey { key: role } => [&[0u8][..], &key(keys, *role).rsa_public_key_der()].concat(),
        Rule::Uri { role } => ctx.uris.get(role).ok_or_else(|| SkipReason::NoUri(role.clone()))?.as_bytes().to_vec(),
        Rule::Serial => unsigned_bytes(&ctx.serial),
        Rule::ValidityWindow(field) => {
            let t = ctx.time(*field);
            if target.is_universal(tags::UTC_TIME) {
                utc_time(t).value
            } else if target.is_universal(tags::GENERALIZED_TIME) {
                generalized_time(t).value
            } else {
                return Err(SkipReason::NotATime);
            }
        }
        Rule::CopyFrom { source: s } => enc(encode_content(source(root, s)?))?,
    })
}

fn apply_steps<'p>(
    root: &mut TlvNode,
    steps: impl Iterator<Item = &'p plan::PlanStep>,
    keys: &KeyMaterial<'_>,
    ctx: &RepairContext,
) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for step in steps {
        let skip = |reason| Diagnostic { target: step.target.clone(), rule: step.rule.name(), reason };
        let Some(path) = find_by_label(root, &step.target) else {
            diags.push(skip(SkipReason::TargetMissing));
            continue;
        };
        if is_guarded(root, &path) {
            diags.push(skip(SkipReason::Protected));
            continue;
        }
        let target = root.get(&path).expect("labeled path exists");
        match compute(root, target, &step.rule, keys, ctx) {
            Ok(value) => {
                let node = root.get_mut(&path).expect("labeled path exists");
                if node.value != value || !node.children.is_empty() {
                    node.set_value(value);
                    taint_path(root, &path);
                }
            }
            Err(reason) => diags.push(skip(reason)),
        }
    }
    diags
}

/// Recomputes every dependent field named by `plan` from the current tree,
/// then re-signs. Rules whose targets are missing or guarded are reported,
/// not applied.
pub fn repair_fields(
    root: &mut TlvNode,
    plan: &RepairPlan,
    keys: &KeyMaterial<'_>,
    ctx: &RepairContext,
) -> Vec<Diagnostic> {
    propagate_taint(root);
    apply_steps(root, plan.steps.iter(), keys, ctx)
}

/// Recomputes only digests and signatures: the payload signature first, then
/// the EE certificate signature.
pub fn sign_object(root: &mut TlvNode, kind: ObjectKind, keys: &KeyMaterial<'_>) -> Vec<Diagnostic> {
    propagate_taint(root);
    let plan = plan_for(kind);
    let mut diags = apply_steps(root, plan.steps.iter().filter(|s| s.rule.is_signing()), keys, &RepairContext::default());
    if !plan.steps.iter().any(|s| matches!(s.rule, Rule::SignatureOver { .. })) {
        diags.push(Diagnostic { target: kind.label_prefix().to_string(), rule: "signature_over", reason: SkipReason::TargetMissing });
    }
    diags
}

/// Full repair with the built-in plan for `kind`.
pub fn repair(root: &mut TlvNode, kind: ObjectKind, keys: &KeyMaterial<'_>, ctx: &RepairContext) -> Vec<Diagnostic> {
    repair_fields(root, plan_for(kind), keys, ctx)
}
