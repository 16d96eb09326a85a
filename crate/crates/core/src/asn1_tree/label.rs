//! Schema-driven field labels.
//!
//! A schema is a list of `pattern label` lines. A pattern is a `/`-separated
//! list of steps from the root. The first step constrains the root (`@30` or
//! `*`); each further step selects children by index (`3`) or any index
//! (`*`), optionally constrained by first identifier octet (`@a0`), by the
//! identifier octet of one of its own children (`[0@a0]`) and by the OID in
//! its first child (`{2.5.29.14}`). An unconstrained `*`
//! labels every matching child with an `[i]` suffix; with an OID constraint
//! the first match is used.
//!
//! `%include name prefix label` splices another schema in at `prefix`,
//! substituting `label` for `$` in its labels.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use super::node::{tags, TlvNode};
use super::oid;
use super::path::NodePath;
use crate::kind::ObjectKind;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Index {
    At(usize),
    Any,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Step {
    index: Index,
    tag: Option<u8>,
    child: Option<(usize, u8)>,
    oid: Option<Vec<u8>>,
}

#[derive(Clone, Debug)]
struct Rule {
    root_tag: Option<u8>,
    steps: Vec<Step>,
    label: String,
}

#[derive(Clone, Debug, Default)]
pub struct LabelSchema {
    pub kind: String,
    rules: Vec<Rule>,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown schema {0:?}")]
    UnknownInclude(String),
}

fn syntax(line: usize, msg: impl Into<String>) -> SchemaError {
    SchemaError::Syntax { line, msg: msg.into() }
}

fn parse_tag(s: &str, line: usize) -> Result<Option<u8>, SchemaError> {
    match s {
        "" => Ok(None),
        _ => u8::from_str_radix(s, 16).map(Some).map_err(|_| syntax(line, format!("bad tag {s:?}"))),
    }
}

fn parse_step(s: &str, line: usize) -> Result<Step, SchemaError> {
    let (s, oid) = match s.find('{') {
        Some(i) => {
            let inner = s[i + 1..].strip_suffix('}').ok_or_else(|| syntax(line, "unclosed {"))?;
            let enc = oid::try_encode(inner).ok_or_else(|| syntax(line, format!("bad oid {inner}")))?;
            (&s[..i], Some(enc))
        }
        None => (s, None),
    };
    let (s, child) = match s.find('[') {
        Some(i) => {
            let inner = s[i + 1..].strip_suffix(']').ok_or_else(|| syntax(line, "unclosed ["))?;
            let (ci, ct) = inner.split_once('@').ok_or_else(|| syntax(line, "expected [index@tag]"))?;
            let ci = ci.parse().map_err(|_| syntax(line, format!("bad index {ci:?}")))?;
            let ct = parse_tag(ct, line)?.ok_or_else(|| syntax(line, "empty tag"))?;
            (&s[..i], Some((ci, ct)))
        }
        None => (s, None),
    };
    let (idx, tag) = match s.split_once('@') {
        Some((i, t)) => (i, parse_tag(t, line)?),
        None => (s, None),
    };
    let index = match idx {
        "*" => Index::Any,
        n => Index::At(n.parse().map_err(|_| syntax(line, format!("bad index {n:?}")))?),
    };
    Ok(Step { index, tag, child, oid })
}

fn parse_pattern(s: &str, line: usize) -> Result<(Option<u8>, Vec<Step>), SchemaError> {
    let mut parts = s.split('/');
    let root = parts.next().unwrap_or("");
    let root_tag = match root {
        "*" => None,
        r => parse_tag(r.strip_prefix('@').ok_or_else(|| syntax(line, "root step must be @xx or *"))?, line)?,
    };
    let steps = parts.map(|p| parse_step(p, line)).collect::<Result<_, _>>()?;
    Ok((root_tag, steps))
}

impl LabelSchema {
    /// Parses schema text. `resolve` supplies the text of included schemas.
    pub fn parse(text: &str, resolve: &dyn Fn(&str) -> Option<&'static str>) -> Result<Self, SchemaError> {
        let mut schema = LabelSchema::default();
        schema.extend(text, None, "", resolve)?;
        Ok(schema)
    }

    fn extend(
        &mut self,
        text: &str,
        prefix: Option<&(Option<u8>, Vec<Step>)>,
        label_prefix: &str,
        resolve: &dyn Fn(&str) -> Option<&'static str>,
    ) -> Result<(), SchemaError> {
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields[0] == "kind" {
                if prefix.is_none() {
                    self.kind = fields.get(1).copied().unwrap_or_default().to_string();
                }
                continue;
            }
            if fields[0] == "%include" {
                let [_, name, at, lp] = fields[..] else {
                    return Err(syntax(line, "usage: %include name prefix label"));
                };
                let included = resolve(name).ok_or_else(|| SchemaError::UnknownInclude(name.to_string()))?;
                let (root_tag, steps) = parse_pattern(at, line)?;
                let full = join(prefix, root_tag, steps);
                let lp = lp.replace('$', label_prefix);
                self.extend(included, Some(&full), &lp, resolve)?;
                continue;
            }
            let [pattern, label] = fields[..] else {
                return Err(syntax(line, "expected: pattern label"));
            };
            let (root_tag, steps) = parse_pattern(pattern, line)?;
            let (root_tag, steps) = join(prefix, root_tag, steps);
            self.rules.push(Rule { root_tag, steps, label: label.replace('$', label_prefix) });
        }
        Ok(())
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.label.as_str())
    }
}

/// Places a pattern under an include prefix. The prefix's final step stands
/// for the included pattern's root.
fn join(prefix: Option<&(Option<u8>, Vec<Step>)>, root_tag: Option<u8>, steps: Vec<Step>) -> (Option<u8>, Vec<Step>) {
    match prefix {
        None => (root_tag, steps),
        Some((p_root, p_steps)) if p_steps.is_empty() => (p_root.or(root_tag), steps),
        Some((p_root, p_steps)) => {
            let mut all = p_steps.clone();
            if let Some(last) = all.last_mut() {
                last.tag = last.tag.or(root_tag);
            }
            all.extend(steps);
            (*p_root, all)
        }
    }
}

fn step_matches(step: &Step, node: &TlvNode) -> bool {
    if node.is_opaque() {
        return false;
    }
    if let Some(t) = step.tag {
        if node.tag_override.is_some() || node.identifier_byte() != t {
            return false;
        }
    }
    if let Some((i, t)) = step.child {
        match node.children.get(i) {
            Some(c) if !c.is_opaque() && c.tag_override.is_none() && c.identifier_byte() == t => {}
            _ => return false,
        }
    }
    if let Some(want) = &step.oid {
        match node.children.first() {
            Some(c) if c.is_universal(tags::OID) && !c.constructed && &c.value == want => {}
            _ => return false,
        }
    }
    true
}

fn collect(node: &TlvNode, steps: &[Step], path: &mut NodePath, label: &str, out: &mut Vec<(NodePath, String)>) {
    let Some((step, rest)) = steps.split_first() else {
        out.push((path.clone(), label.to_string()));
        return;
    };
    match step.index {
        Index::At(i) => {
            if let Some(c) = node.children.get(i).filter(|c| step_matches(step, c)) {
                path.push(i);
                collect(c, rest, path, label, out);
                path.pop();
            }
        }
        Index::Any => {
            for (i, c) in node.children.iter().enumerate() {
                if !step_matches(step, c) {
                    continue;
                }
                path.push(i);
                if step.oid.is_some() {
                    let before = out.len();
                    collect(c, rest, path, label, out);
                    path.pop();
                    if out.len() > before {
                        break;
                    }
                } else {
                    collect(c, rest, path, &format!("{label}[{i}]"), out);
                    path.pop();
                }
            }
        }
    }
}

/// Applies a schema. Matched nodes receive their label (first matching rule
/// wins per node and per label); the label is moved off any other node that
/// carried it. Labels whose patterns no longer match stay where they are.
pub fn label_tree(root: &mut TlvNode, schema: &LabelSchema) {
    let mut carriers: HashMap<String, Vec<NodePath>> = HashMap::new();
    root.walk(&mut |p, n| {
        if let Some(l) = &n.label {
            carriers.entry(l.to_string()).or_default().push(p.clone());
        }
    });
    let mut assigned_nodes: HashSet<NodePath> = HashSet::new();
    let mut assigned_labels: HashSet<String> = HashSet::new();
    let mut found = Vec::new();
    for rule in &schema.rules {
        if rule.root_tag.is_some_and(|t| root.is_opaque() || root.tag_override.is_some() || root.identifier_byte() != t) {
            continue;
        }
        found.clear();
        collect(root, &rule.steps, &mut NodePath::root(), &rule.label, &mut found);
        for (path, label) in found.drain(..) {
            if assigned_nodes.contains(&path) || assigned_labels.contains(&label) {
                continue;
            }
            if let Some(others) = carriers.remove(&label) {
                for other in others.into_iter().filter(|o| *o != path) {
                    if let Some(n) = root.get_mut(&other) {
                        n.label = None;
                    }
                }
            }
            let node = root.get_mut(&path).expect("matched path exists");
            if let Some(old) = node.label.replace(std::sync::Arc::from(label.as_str())) {
                if let Some(v) = carriers.get_mut(&*old) {
                    v.retain(|p| *p != path);
                }
            }
            assigned_nodes.insert(path);
            assigned_labels.insert(label);
        }
    }
}

/// Path of the first node (pre-order) carrying `label`.
pub fn find_by_label(root: &TlvNode, label: &str) -> Option<NodePath> {
    fn go(n: &TlvNode, label: &str, path: &mut NodePath) -> bool {
        if n.label.as_deref() == Some(label) {
            return true;
        }
        for (i, c) in n.children.iter().enumerate() {
            path.push(i);
            if go(c, label, path) {
                return true;
            }
            path.pop();
        }
        false
    }
    let mut path = NodePath::root();
    go(root, label, &mut path).then_some(path)
}

/// Every label in the tree with its path.
pub fn label_index(root: &TlvNode) -> HashMap<String, NodePath> {
    let mut out = HashMap::new();
    root.walk(&mut |p, n| {
        if let Some(l) = &n.label {
            out.entry(l.to_string()).or_insert_with(|| p.clone());
        }
    });
    out
}

fn schema_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "certificate" => include_str!("../../schemas/certificate.labels"),
        "signed_object" => include_str!("../../schemas/signed_object.labels"),
        "roa" => include_str!("../../schemas/roa.labels"),
        "manifest" => include_str!("../../schemas/manifest.labels"),
        "crl" => include_str!("../../schemas/crl.labels"),
        "ca_certificate" => include_str!("../../schemas/ca_certificate.labels"),
        "ee_certificate" => include_str!("../../schemas/ee_certificate.labels"),
        "aspa" => include_str!("../../schemas/aspa.labels"),
        "gbr" => include_str!("../../schemas/gbr.labels"),
        "tal" | "generic" => "",
        _ => return None,
    })
}

/// The built-in schema for an object kind.
pub fn schema_for(kind: ObjectKind) -> &'static LabelSchema {
    static CACHE: OnceLock<HashMap<ObjectKind, LabelSchema>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        ObjectKind::ALL
            .into_iter()
            .map(|k| {
                let text = schema_text(k.name()).expect("schema for every kind");
                let mut s = LabelSchema::parse(text, &schema_text)
                    .unwrap_or_else(|e| panic!("built-in schema {k}: {e}"));
                s.kind = k.name().to_string();
                (k, s)
            })
            .collect()
    });
    &all[&kind]
}
