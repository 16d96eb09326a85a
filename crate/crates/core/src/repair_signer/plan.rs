//! Repair plans: ordered (label, rule) pairs loaded from text files.
//!
//! ```text
//! kind roa
//! %include signed_object roa
//! $.messageDigest   content_digest $.eContent
//! ```
//! `$` in an included file is replaced by the prefix given to `%include`.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use crate::kind::ObjectKind;

/// Whose key a rule refers to: the object's own key or its issuer's.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyRole {
    Subject,
    Issuer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeField {
    NotBefore,
    NotAfter,
    ThisUpdate,
    NextUpdate,
    SigningTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Rule {
    /// SHA-256 of the content octets of `source`.
    ContentDigest { source: String },
    /// Signature over the DER of `source`; `as_set` re-tags it as SET OF
    /// first, as CMS does for signed attributes.
    SignatureOver { source: String, key: KeyRole, as_set: bool },
    /// Key identifier, optionally wrapped in an OCTET STRING.
    KeyId { key: KeyRole, octet: bool },
    ParentKeyId,
    PublicKey { key: KeyRole },
    Uri { role: String },
    Serial,
    ValidityWindow(TimeField),
    CopyFrom { source: String },
}

impl Rule {
    pub fn name(&self) -> &'static str {
        match self {
            Rule::ContentDigest { .. } => "content_digest",
            Rule::SignatureOver { .. } => "signature_over",
            Rule::KeyId { .. } => "key_id",
            Rule::ParentKeyId => "parent_key_id",
            Rule::PublicKey { .. } => "public_key",
            Rule::Uri { .. } => "uri",
            Rule::Serial => "serial",
            Rule::ValidityWindow(_) => "validity_window",
            Rule::CopyFrom { .. } => "copy_from",
        }
    }

    pub fn is_signing(&self) -> bool {
        matches!(self, Rule::ContentDigest { .. } | Rule::SignatureOver { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanStep {
    pub target: String,
    pub rule: Rule,
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.target, self.rule.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RepairPlan {
    pub kind: String,
    pub steps: Vec<PlanStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown plan {0:?}")]
    UnknownInclude(String),
    #[error("include depth exceeded")]
    TooDeep,
}

fn syntax(line: usize, msg: impl Into<String>) -> PlanError {
    PlanError::Syntax { line, msg: msg.into() }
}

fn key_role(s: Option<&str>, line: usize) -> Result<KeyRole, PlanError> {
    match s {
        Some("subject") => Ok(KeyRole::Subject),
        Some("issuer") => Ok(KeyRole::Issuer),
        other => Err(syntax(line, format!("bad key role {other:?}"))),
    }
}

fn parse_rule(words: &[&str], line: usize) -> Result<Rule, PlanError> {
    let arg = |i: usize| words.get(i).copied();
    let need = |i: usize| arg(i).map(str::to_string).ok_or_else(|| syntax(line, "missing argument"));
    Ok(match words[0] {
        "content_digest" => Rule::ContentDigest { source: need(1)? },
        "signature_over" => Rule::SignatureOver {
            source: need(1)?,
            key: key_role(arg(2), line)?,
            as_set: arg(3) == Some("as_set"),
        },
        "key_id" => Rule::KeyId { key: key_role(arg(1), line)?, octet: arg(2) == Some("octet") },
        "parent_key_id" => Rule::ParentKeyId,
        "public_key" => Rule::PublicKey { key: key_role(arg(1), line)? },
        "uri" => Rule::Uri { role: need(1)? },
        "serial" => Rule::Serial,
        "validity_window" => Rule::ValidityWindow(match arg(1) {
            Some("not_before") => TimeField::NotBefore,
            Some("not_after") => TimeField::NotAfter,
            Some("this_update") => TimeField::ThisUpdate,
            Some("next_update") => TimeField::NextUpdate,
            Some("signing_time") => TimeField::SigningTime,
            other => return Err(syntax(line, format!("bad time field {other:?}"))),
        }),
        "copy_from" => Rule::CopyFrom { source: need(1)? },
        other => return Err(syntax(line, format!("unknown rule {other:?}"))),
    })
}

impl RepairPlan {
    pub fn parse(text: &str, resolve: &dyn Fn(&str) -> Option<&'static str>) -> Result<Self, PlanError> {
        let mut plan = RepairPlan::default();
        plan.extend(text, "$", resolve, 0)?;
        Ok(plan)
    }

    fn extend(
        &mut self,
        text: &str,
        prefix: &str,
        resolve: &dyn Fn(&str) -> Option<&'static str>,
        depth: usize,
    ) -> Result<(), PlanError> {
        if depth > 8 {
            return Err(PlanError::TooDeep);
        }
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let substituted = content.replace('$', prefix);
            let words: Vec<&str> = substituted.split_whitespace().collect();
            match words[0] {
                "kind" if depth == 0 => self.kind = words.get(1).copied().unwrap_or_default().to_string(),
                "kind" => {}
                "%include" => {
                    let [_, name, pfx] = words[..] else {
                        return Err(syntax(line, "expected %include <plan> <prefix>"));
                    };
                    let sub = resolve(name).ok_or_else(|| PlanError::UnknownInclude(name.to_string()))?;
                    self.extend(sub, pfx, resolve, depth + 1)?;
                }
                target => {
                    if words.len() < 2 {
                        return Err(syntax(line, "expected <label> <rule> [args]"));
                    }
                    let rule = parse_rule(&words[1..], line)?;
                    self.steps.push(PlanStep { target: target.to_string(), rule });
                }
            }
        }
        Ok(())
    }
}

fn plan_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "certificate" => include_str!("../../plans/certificate.plan"),
        "signed_object" => include_str!("../../plans/signed_object.plan"),
        "roa" => include_str!("../../plans/roa.plan"),
        "manifest" => include_str!("../../plans/manifest.plan"),
        "aspa" => include_str!("../../plans/aspa.plan"),
        "gbr" => include_str!("../../plans/gbr.plan"),
        "crl" => include_str!("../../plans/crl.plan"),
        "ca_certificate" => include_str!("../../plans/ca_certificate.plan"),
        "ee_certificate" => include_str!("../../plans/ee_certificate.plan"),
        "generic" => include_str!("../../plans/generic.plan"),
        _ => return None,
    })
}

fn plan_name(kind: ObjectKind) -> &'static str {
    match kind {
        ObjectKind::Roa => "roa",
        ObjectKind::Manifest => "manifest",
        ObjectKind::Crl => "crl",
        ObjectKind::CaCertificate => "ca_certificate",
        ObjectKind::EeCertificate => "ee_certificate",
        ObjectKind::Aspa => "aspa",
        ObjectKind::Gbr => "gbr",
        ObjectKind::Tal | ObjectKind::Generic => "generic",
    }
}

/// The built-in plan for an object kind. Kinds without dependent fields get
/// the empty plan (taint repair only).
pub fn plan_for(kind: ObjectKind) -> &'static RepairPlan {
    static PLANS: OnceLock<HashMap<&'static str, RepairPlan>> = OnceLock::new();
    let plans = PLANS.get_or_init(|| {
        ObjectKind::ALL
            .iter()
            .map(|&k| {
                let name = plan_name(k);
                let text = plan_text(name).expect("built-in plan");
                (name, RepairPlan::parse(text, &plan_text).expect("built-in plan parses"))
            })
            .collect()
    });
    &plans[plan_name(kind)]
}
