//! A simulated instrumented validator with known control flow.
//!
//! Objects are processed in sequential phase loops (parse, optional middle
//! loops, validate). Every loop head, parser feature and rejection reason
//! increments an 8-bit counter in an AFL-style shared map, and the exact
//! counts are kept alongside as ground truth. Planted bugs fire on
//! configurable object predicates.

pub mod validate;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::asn1_tree::{find_by_label, parse_labeled, Anomaly, TlvNode};
use crate::coverage_attribution::CounterRegion;
use crate::objects::Vrp;
use crate::util::{mix64, sha256};
use crate::ObjectKind;
use validate::{Reject, RsaKey};

/// Header line of the accepted-VRP CSV output.
pub const CSV_HEADER: &str = "ASN,IP Prefix,Max Length";

/// Log keyword printed before a planted crash aborts the process.
pub const CRASH_KEYWORD: &str = "panic";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopSpec {
    /// Counter incremented once per object at the top of the loop.
    pub head: usize,
    /// Time spent per object in this loop.
    #[serde(default)]
    pub work_us: u64,
}

/// Object property a branch or bug is gated on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Predicate {
    Always,
    /// A ROA payload with this origin AS.
    Asn { asn: u32 },
    /// A ROA entry with an odd maxLength.
    OddMaxLength,
    /// The labeled node's first content byte has its high bit set.
    Negative { label: String },
    FirstByte { label: String, byte: u8 },
    LastByte { label: String, byte: u8 },
    All { of: Vec<Predicate> },
    Any { of: Vec<Predicate> },
    Not { of: Box<Predicate> },
}

/// What the validator knows about an object while evaluating predicates.
pub struct ObjectView<'a> {
    pub tree: Option<&'a TlvNode>,
    pub vrps: Option<&'a [Vrp]>,
}

impl Predicate {
    pub fn eval(&self, obj: &ObjectView<'_>) -> bool {
        let value = |label: &str| {
            obj.tree.and_then(|t| find_by_label(t, label).and_then(|p| t.get(&p))).map(|n| n.value.as_slice())
        };
        match self {
            Predicate::Always => true,
            Predicate::Asn { asn } => obj.vrps.is_some_and(|v| v.first().is_some_and(|r| r.asn == *asn)),
            Predicate::OddMaxLength => obj.vrps.is_some_and(|v| v.iter().any(|r| r.max_len % 2 == 1)),
            Predicate::Negative { label } => value(label).and_then(|v| v.first()).is_some_and(|b| b & 0x80 != 0),
            Predicate::FirstByte { label, byte } => value(label).and_then(|v| v.first()) == Some(byte),
            Predicate::LastByte { label, byte } => value(label).and_then(|v| v.last()) == Some(byte),
            Predicate::All { of } => of.iter().all(|p| p.eval(obj)),
            Predicate::Any { of } => of.iter().any(|p| p.eval(obj)),
            Predicate::Not { of } => !of.eval(obj),
        }
    }
}

/// Counters touched when `when` holds in loop `phase`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRule {
    #[serde(default)]
    pub phase: usize,
    pub when: Predicate,
    pub counters: Vec<usize>,
}

/// One gate of a nested branch chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub when: Predicate,
    pub counters: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Effect {
    Crash,
    Stall { ms: u64 },
    /// Poisons shared state so the integrity CA's objects are rejected.
    DropTestRoa,
    /// Stage k runs only if stages 0..k all held.
    DeepBranch { stages: Vec<Stage> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedBug {
    #[serde(default)]
    pub phase: usize,
    pub when: Predicate,
    pub effect: Effect,
}

/// Counters that look almost like loop heads.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decoy {
    /// Once per object, plus `extra` hits after the loop (or, if negative,
    /// skipping the first |extra| objects).
    PerObject { counter: usize, extra: i64 },
    /// Once for each of the first `count` objects.
    Fixed { counter: usize, count: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub map_size: usize,
    pub loops: Vec<LoopSpec>,
    /// Parser-feature counters occupy `feature_base..feature_base+feature_space`.
    pub feature_base: usize,
    pub feature_space: usize,
    /// One counter per rejection reason starting here.
    pub reject_base: usize,
    pub branches: Vec<BranchRule>,
    pub bugs: Vec<PlantedBug>,
    pub decoys: Vec<Decoy>,
    pub setup_ms: u64,
    pub reject_odd_max_length: bool,
    pub verify_signatures: bool,
}

/// Loop heads of the default configuration.
pub const DEFAULT_LOOP_HEADS: [usize; 2] = [1001, 2002];

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            map_size: 1 << 16,
            loops: DEFAULT_LOOP_HEADS.iter().map(|&head| LoopSpec { head, work_us: 0 }).collect(),
            feature_base: 8192,
            feature_space: 1024,
            reject_base: 3000,
            branches: Vec::new(),
            bugs: Vec::new(),
            decoys: vec![
                Decoy::PerObject { counter: 1500, extra: 1 },
                Decoy::PerObject { counter: 1501, extra: -1 },
                Decoy::Fixed { counter: 1502, count: 20 },
            ],
            setup_ms: 0,
            reject_odd_max_length: false,
            verify_signatures: true,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn loop_heads(&self) -> Vec<usize> {
        self.loops.iter().map(|l| l.head).collect()
    }

    /// Three-stage chain gated on negative version, signer version and
    /// origin AS values of a ROA, `per_stage` counters per stage from `base`.
    pub fn deep_roa_chain(base: usize, per_stage: usize) -> PlantedBug {
        let stage = |k: usize, label: &str| Stage {
            when: Predicate::Negative { label: label.into() },
            counters: (base + k * per_stage..base + (k + 1) * per_stage).collect(),
        };
        PlantedBug {
            phase: 0,
            when: Predicate::Always,
            effect: Effect::DeepBranch {
                stages: vec![stage(0, "roa.version"), stage(1, "roa.signerVersion"), stage(2, "roa.asID")],
            },
        }
    }
}

/// Counter writes with exact ground truth on the side.
pub struct Coverage {
    region: Option<Arc<CounterRegion>>,
    pub counts: Vec<u64>,
    /// 1-based position of the first object that touched each counter; 0
    /// for setup code.
    pub first_object: Vec<u32>,
    pub current_object: u32,
    /// Counters touched since the last `take_touched`.
    pub touched: Vec<usize>,
}

impl Coverage {
    pub fn new(map_size: usize, region: Option<Arc<CounterRegion>>) -> Self {
        Coverage {
            region,
            counts: vec![0; map_size],
            first_object: vec![0; map_size],
            current_object: 0,
            touched: Vec::new(),
        }
    }

    #[inline]
    pub fn hit(&mut self, i: usize) {
        if i >= self.counts.len() {
            return;
        }
        if let Some(r) = &self.region {
            if i < r.len() {
                r.hit(i);
            }
        }
        if self.counts[i] == 0 {
            self.first_object[i] = self.current_object;
        }
        self.counts[i] += 1;
        self.touched.push(i);
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let nz = |i: &usize| self.counts[*i] > 0;
        GroundTruth {
            counts: (0..self.counts.len()).filter(nz).map(|i| (i, self.counts[i])).collect(),
            first_object: (0..self.counts.len()).filter(nz).map(|i| (i, self.first_object[i])).collect(),
        }
    }
}

/// Exact counter values and first-touching object per nonzero counter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub counts: BTreeMap<usize, u64>,
    pub first_object: BTreeMap<usize, u32>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts.get(&i).copied().unwrap_or(0)
    }
}

fn feature_counter(cfg: &SimConfig, depth: usize, n: &TlvNode) -> usize {
    let len = if n.constructed { n.children.len() } else { n.value.len() };
    let len_class = u64::from(usize::BITS - len.leading_zeros());
    let id = if n.is_opaque() { 0 } else { n.tag_override.as_ref().and_then(|t| t.first().copied()).unwrap_or(n.identifier_byte()) };
    let key = (depth.min(7) as u64) << 16 | u64::from(id) << 8 | len_class << 1 | u64::from(n.is_opaque());
    cfg.feature_base + (mix64(key) % cfg.feature_space.max(1) as u64) as usize
}

/// Side effects requested by the object logic, executed by the caller.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Crash(String),
    Stall(u64),
    DropTestRoa,
}

/// The per-object logic, independent of where objects come from.
pub struct Engine<'c> {
    pub cfg: &'c SimConfig,
    pub cov: Coverage,
    /// Objects seen by the first loop so far (for decoys).
    seen: u64,
}

impl<'c> Engine<'c> {
    pub fn new(cfg: &'c SimConfig, region: Option<Arc<CounterRegion>>) -> Self {
        Engine { cfg, cov: Coverage::new(cfg.map_size, region), seen: 0 }
    }

    pub fn reject(&mut self, r: Reject) {
        self.cov.hit(self.cfg.reject_base + r.ordinal());
    }

    /// Parser coverage and decoys; first loop only.
    pub fn inspect(&mut self, tree: &TlvNode, anomalies: &[Anomaly]) {
        let cfg = self.cfg;
        // The root is the object itself, already counted by the loop head;
        // a feature for it would behave as a third loop head.
        let mut stack: Vec<(usize, &TlvNode)> = tree.children.iter().rev().map(|c| (1, c)).collect();
        while let Some((d, n)) = stack.pop() {
            self.cov.hit(feature_counter(cfg, d, n));
            stack.extend(n.children.iter().rev().map(|c| (d + 1, c)));
        }
        for a in anomalies {
            let h = sha256(a.kind.to_string().as_bytes());
            let k = u64::from_be_bytes(h[..8].try_into().expect("8 bytes"));
            self.cov.hit(cfg.feature_base + (k % cfg.feature_space.max(1) as u64) as usize);
        }
    }

    pub fn decoys(&mut self) {
        self.seen += 1;
        for d in &self.cfg.decoys {
            match *d {
                Decoy::PerObject { counter, extra } if extra >= 0 || self.seen > extra.unsigned_abs() => self.cov.hit(counter),
                Decoy::Fixed { counter, count } if self.seen <= count => self.cov.hit(counter),
                _ => {}
            }
        }
    }

    pub fn finish_decoys(&mut self) {
        for d in &self.cfg.decoys {
            if let Decoy::PerObject { counter, extra } = *d {
                for _ in 0..extra.max(0) {
                    self.cov.hit(counter);
                }
            }
        }
    }

    /// Branch rules and planted bugs of loop `phase`.
    pub fn rules(&mut self, phase: usize, view: &ObjectView<'_>, name: &str) -> Vec<Event> {
        let cfg = self.cfg;
        for b in cfg.branches.iter().filter(|b| b.phase == phase) {
            if b.when.eval(view) {
                for &c in &b.counters {
                    self.cov.hit(c);
                }
            }
        }
        let mut events = Vec::new();
        for bug in cfg.bugs.iter().filter(|b| b.phase == phase) {
            if !bug.when.eval(view) {
                continue;
            }
            match &bug.effect {
                Effect::Crash => events.push(Event::Crash(format!("planted fault while processing {name}"))),
                Effect::Stall { ms } => events.push(Event::Stall(*ms)),
                Effect::DropTestRoa => events.push(Event::DropTestRoa),
                Effect::DeepBranch { stages } => {
                    for s in stages {
                        if !s.when.eval(view) {
                            break;
                        }
                        for &c in &s.counters {
                            self.cov.hit(c);
                        }
                    }
                }
            }
        }
        events
    }

    /// Counters an in-memory object touches in every loop but without
    /// signature checks or delays. Used by in-process campaigns.
    pub fn evaluate_tree(&mut self, tree: &TlvNode, kind: ObjectKind, position: u32) -> Vec<Event> {
        self.cov.current_object = position;
        let vrps = if kind == ObjectKind::Roa {
            find_by_label(tree, "roa.eContent")
                .and_then(|p| tree.get(&p))
                .and_then(|n| crate::asn1_tree::encode_content(n).ok())
                .and_then(|c| validate::roa_vrps(&c).ok())
        } else {
            None
        };
        let view = ObjectView { tree: Some(tree), vrps: vrps.as_deref() };
        let mut events = Vec::new();
        for (phase, l) in self.cfg.loops.iter().enumerate() {
            self.cov.hit(l.head);
            if phase == 0 {
                self.inspect(tree, &[]);
                self.decoys();
            }
            events.extend(self.rules(phase, &view, "object"));
        }
        events
    }
}

/// Inputs of one validator run.
pub struct RunOptions {
    pub repo: PathBuf,
    pub tal: PathBuf,
    pub output: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub config: SimConfig,
    pub region: Option<Arc<CounterRegion>>,
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub accepted: Vec<Vrp>,
    pub crashed: Option<String>,
    pub log: Vec<String>,
    pub objects: usize,
    pub rejected: BTreeMap<String, usize>,
    pub truth: GroundTruth,
}

struct CaInfo {
    name: String,
    key: RsaKey,
    repo_uri: String,
    integrity: bool,
}

struct Item {
    ca: usize,
    name: String,
    uri: String,
    hash: Vec<u8>,
    kind: Option<ObjectKind>,
    tree: Option<TlvNode>,
    anomalies: Vec<Anomaly>,
    vrps: Option<Vec<Vrp>>,
    rejected: Option<Reject>,
}

fn load_signed(
    view: &validate::RepoView,
    uri: &str,
    kind: ObjectKind,
    key: &RsaKey,
) -> Result<TlvNode, String> {
    let bytes = view.files.get(uri).ok_or_else(|| format!("{uri} missing"))?;
    let tree = parse_labeled(bytes, kind).root;
    validate::check_signed_object(&tree, kind, key).map_err(|r| format!("{uri}: {r:?}"))?;
    Ok(tree)
}

/// Validates a repository: top-down discovery of the TA's child CAs, then
/// the configured phase loops over every listed object in manifest order.
pub fn run_validator(opts: &RunOptions) -> Result<RunOutcome, String> {
    let cfg = &opts.config;
    if cfg.loops.is_empty() {
        return Err("configuration needs at least one loop".into());
    }
    let mut out = RunOutcome::default();
    let mut engine = Engine::new(cfg, opts.region.clone());
    std::thread::sleep(Duration::from_millis(cfg.setup_ms));

    let ta = validate::read_tal(&opts.tal)?;
    let ta_key = RsaKey::from_spki_der(&ta.spki).ok_or("tal key is not RSA")?;
    let view = validate::load_repository(&opts.repo, &ta)?;
    out.log.push(format!("loaded {} files via {}", view.files.len(), view.source));

    let ta_bytes = view.files.get(&ta.uri).ok_or("trust anchor certificate missing")?;
    let ta_cert = parse_labeled(ta_bytes, ObjectKind::CaCertificate).root;
    validate::check_certificate(&ta_cert, "cer", &ta_key).map_err(|r| format!("trust anchor: {r:?}"))?;
    let ta_mft_uri = validate::sia_uri(&ta_cert, "cer", "rpkiManifest").ok_or("trust anchor lacks manifest uri")?;
    let ta_repo = validate::sia_uri(&ta_cert, "cer", "caRepository").ok_or("trust anchor lacks repository uri")?;
    let ta_mft = load_signed(&view, &ta_mft_uri, ObjectKind::Manifest, &ta_key)?;

    let mut cas = Vec::new();
    for (name, hash) in validate::manifest_entries(&ta_mft).map_err(|r| format!("ta manifest: {r:?}"))? {
        let Some(stem) = name.strip_suffix(".cer") else { continue };
        let uri = format!("{ta_repo}{name}");
        let Some(bytes) = view.files.get(&uri).filter(|b| sha256(b).as_slice() == hash) else {
            out.log.push(format!("WARN {uri}: missing or hash mismatch"));
            continue;
        };
        let cert = parse_labeled(bytes, ObjectKind::CaCertificate).root;
        match validate::check_certificate(&cert, "cer", &ta_key) {
            Ok(key) => {
                let Some(repo_uri) = validate::sia_uri(&cert, "cer", "caRepository") else { continue };
                let integrity = stem == crate::repo_builder::INTEGRITY_CA;
                cas.push(CaInfo { name: stem.to_string(), key, repo_uri, integrity });
            }
            Err(r) => out.log.push(format!("WARN {uri}: {r:?}")),
        }
    }

    let mut items: Vec<Item> = Vec::new();
    for (ci, ca) in cas.iter().enumerate() {
        let mft_uri = format!("{}{}.mft", ca.repo_uri, ca.name);
        let mft = match load_signed(&view, &mft_uri, ObjectKind::Manifest, &ca.key) {
            Ok(m) => m,
            Err(e) => {
                out.log.push(format!("WARN skipping {}: {e}", ca.name));
                continue;
            }
        };
        let entries = match validate::manifest_entries(&mft) {
            Ok(e) => e,
            Err(r) => {
                out.log.push(format!("WARN skipping {}: manifest {r:?}", ca.name));
                continue;
            }
        };
        let own_crl = format!("{}.crl", ca.name);
        for (name, hash) in entries {
            let uri = format!("{}{name}", ca.repo_uri);
            if name == own_crl {
                let ok = view
                    .files
                    .get(&uri)
                    .map(|b| validate::check_crl(&parse_labeled(b, ObjectKind::Crl).root, &ca.key).is_ok())
                    .unwrap_or(false);
                if !ok {
                    out.log.push(format!("WARN {uri}: invalid CRL"));
                }
                continue;
            }
            let kind = name.rsplit_once('.').and_then(|(_, ext)| ObjectKind::from_extension(ext));
            items.push(Item { ca: ci, name, uri, hash, kind, tree: None, anomalies: Vec::new(), vrps: None, rejected: None });
        }
    }
    out.objects = items.len();

    let last = cfg.loops.len() - 1;
    let mut poisoned = false;
    for (phase, spec) in cfg.loops.iter().enumerate() {
        for (pos, item) in items.iter_mut().enumerate() {
            engine.cov.current_object = pos as u32 + 1;
            engine.cov.hit(spec.head);
            if phase == 0 {
                parse_item(&mut engine, &view, item);
                engine.decoys();
            }
            if phase == last && item.rejected.is_none() {
                let ca = &cas[item.ca];
                if ca.integrity && poisoned {
                    item.rejected = Some(Reject::Poisoned);
                } else if let Err(r) = validate_item(cfg, &ca.key, item) {
                    item.rejected = Some(r);
                }
                match item.rejected {
                    Some(r) => engine.reject(r),
                    None => out.accepted.extend(item.vrps.iter().flatten().cloned()),
                }
            }
            let view = ObjectView { tree: item.tree.as_ref(), vrps: item.vrps.as_deref() };
            for ev in engine.rules(phase, &view, &item.name) {
                match ev {
                    Event::Crash(msg) => {
                        out.log.push(format!("{CRASH_KEYWORD}: {msg}"));
                        out.crashed = Some(msg);
                        out.truth = engine.cov.ground_truth();
                        write_files(opts, &out)?;
                        return Ok(out);
                    }
                    Event::Stall(ms) => std::thread::sleep(Duration::from_millis(ms)),
                    Event::DropTestRoa => poisoned = true,
                }
            }
            if spec.work_us > 0 {
                std::thread::sleep(Duration::from_micros(spec.work_us));
            }
        }
        if phase == 0 {
            engine.finish_decoys();
        }
    }
    for item in &items {
        if let Some(r) = item.rejected {
            *out.rejected.entry(format!("{r:?}")).or_default() += 1;
            out.log.push(format!("INFO rejected {}: {r:?}", item.uri));
        }
    }
    out.accepted.sort();
    out.accepted.dedup();
    out.truth = engine.cov.ground_truth();
    write_files(opts, &out)?;
    Ok(out)
}

/// Writes the ground truth, and the VRP output unless the run crashed.
fn write_files(opts: &RunOptions, out: &RunOutcome) -> Result<(), String> {
    if let Some(p) = &opts.ground_truth {
        let json = serde_json::to_string(&out.truth).map_err(|e| e.to_string())?;
        std::fs::write(p, json).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    if let (Some(p), None) = (&opts.output, &out.crashed) {
        std::fs::write(p, render_csv(&out.accepted)).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    Ok(())
}

fn parse_item(engine: &mut Engine<'_>, view: &validate::RepoView, item: &mut Item) {
    let Some(bytes) = view.files.get(&item.uri) else {
        item.rejected = Some(Reject::Missing);
        return;
    };
    if sha256(bytes).as_slice() != item.hash.as_slice() {
        item.rejected = Some(Reject::HashMismatch);
    }
    let Some(kind) = item.kind else {
        item.rejected.get_or_insert(Reject::UnknownType);
        return;
    };
    let parsed = parse_labeled(bytes, kind);
    engine.inspect(&parsed.root, &parsed.anomalies);
    if kind == ObjectKind::Roa {
        let content = find_by_label(&parsed.root, "roa.eContent")
            .and_then(|p| parsed.root.get(&p))
            .and_then(|n| crate::asn1_tree::encode_content(n).ok());
        match content.as_deref().map(validate::roa_vrps) {
            Some(Ok(v)) => item.vrps = Some(v),
            Some(Err(r)) => {
                item.rejected.get_or_insert(r);
            }
            None => {
                item.rejected.get_or_insert(Reject::Malformed);
            }
        }
    }
    if !parsed.anomalies.is_empty() {
        item.rejected.get_or_insert(Reject::Malformed);
    }
    item.tree = Some(parsed.root);
    item.anomalies = parsed.anomalies;
}

fn validate_item(cfg: &SimConfig, ca: &RsaKey, item: &Item) -> Result<(), Reject> {
    let (Some(tree), Some(kind)) = (&item.tree, item.kind) else { return Err(Reject::Malformed) };
    if cfg.verify_signatures {
        match kind {
            k if k.is_signed_object() => {
                validate::check_signed_object(tree, k, ca)?;
            }
            ObjectKind::CaCertificate | ObjectKind::EeCertificate => {
                validate::check_certificate(tree, kind.label_prefix(), ca)?;
            }
            ObjectKind::Crl => validate::check_crl(tree, ca)?,
            _ => return Err(Reject::UnknownType),
        }
    }
    if cfg.reject_odd_max_length && item.vrps.iter().flatten().any(|v| v.max_len % 2 == 1) {
        return Err(Reject::Policy);
    }
    Ok(())
}

/// Accepted VRPs as CSV with a header line.
pub fn render_csv(vrps: &[Vrp]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for v in vrps {
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}
