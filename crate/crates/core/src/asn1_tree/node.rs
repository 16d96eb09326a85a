use std::fmt;

use serde::{Deserialize, Serialize};

use super::path::NodePath;

/// Identifier class bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagClass {
    Universal,
    Application,
    Context,
    Private,
}

impl TagClass {
    pub fn from_bits(bits: u8) -> Self {
        match bits & 0x03 {
            0 => TagClass::Universal,
            1 => TagClass::Application,
            2 => TagClass::Context,
            _ => TagClass::Private,
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            TagClass::Universal => 0,
            TagClass::Application => 1,
            TagClass::Context => 2,
            TagClass::Private => 3,
        }
    }
}

/// Replacement for the encoded length field.
///
/// `Value` is written in minimal definite form; `Raw` is written verbatim and
/// is how indefinite and non-minimal length forms survive a round trip.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthOverride {
    Value(u64),
    Raw(#[serde(with = "crate::util::hex_bytes")] Vec<u8>),
}

/// How a node's content is represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NodeForm {
    /// Primitive nodes hold `value`; constructed nodes hold `children`.
    #[default]
    Plain,
    /// A primitive OCTET STRING or BIT STRING whose content is itself one DER
    /// element. `value` holds any prefix (the unused-bits octet of a BIT
    /// STRING) and `children` holds the embedded element.
    Encapsulating,
    /// Bytes that did not parse as an element. `value` is emitted verbatim
    /// with no header of its own.
    Opaque,
}

/// One element of a schema-free DER tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlvNode {
    pub tag_class: TagClass,
    pub constructed: bool,
    pub tag_number: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_override: Option<LengthOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::util::hex_bytes_opt")]
    pub tag_override: Option<Vec<u8>>,
    #[serde(default, with = "crate::util::hex_bytes")]
    pub value: Vec<u8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TlvNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<std::sync::Arc<str>>,
    #[serde(default)]
    pub tainted: bool,
    #[serde(default)]
    pub protected: bool,
    #[serde(default)]
    pub breaking: bool,
    #[serde(default)]
    pub form: NodeForm,
}

pub mod tags {
    pub const BOOLEAN: u64 = 1;
    pub const INTEGER: u64 = 2;
    pub const BIT_STRING: u64 = 3;
    pub const OCTET_STRING: u64 = 4;
    pub const NULL: u64 = 5;
    pub const OID: u64 = 6;
    pub const UTF8_STRING: u64 = 12;
    pub const SEQUENCE: u64 = 16;
    pub const SET: u64 = 17;
    pub const PRINTABLE_STRING: u64 = 19;
    pub const IA5_STRING: u64 = 22;
    pub const UTC_TIME: u64 = 23;
    pub const GENERALIZED_TIME: u64 = 24;
}

impl TlvNode {
    pub fn primitive(class: TagClass, number: u64, value: Vec<u8>) -> Self {
        TlvNode {
            tag_class: class,
            constructed: false,
            tag_number: number,
            length_override: None,
            tag_override: None,
            value,
            children: Vec::new(),
            label: None,
            tainted: false,
            protected: false,
            breaking: false,
            form: NodeForm::Plain,
        }
    }

    pub fn constructed(class: TagClass, number: u64, children: Vec<TlvNode>) -> Self {
        TlvNode {
            constructed: true,
            children,
            ..TlvNode::primitive(class, number, Vec::new())
        }
    }

    pub fn opaque(bytes: Vec<u8>) -> Self {
        TlvNode {
            form: NodeForm::Opaque,
            ..TlvNode::primitive(TagClass::Universal, 0, bytes)
        }
    }

    pub fn is_opaque(&self) -> bool {
        self.form == NodeForm::Opaque
    }

    pub fn is_universal(&self, number: u64) -> bool {
        self.form != NodeForm::Opaque && self.tag_class == TagClass::Universal && self.tag_number == number
    }

    /// True for universal SEQUENCE and SET nodes with children.
    pub fn is_collection(&self) -> bool {
        self.constructed && (self.is_universal(tags::SEQUENCE) || self.is_universal(tags::SET))
    }

    /// The first identifier octet as a canonical encoder writes it.
    pub fn identifier_byte(&self) -> u8 {
        let low = if self.tag_number < 0x1F { self.tag_number as u8 } else { 0x1F };
        (self.tag_class.bits() << 6) | if self.constructed { 0x20 } else { 0 } | low
    }

    /// Replaces the content of a primitive node, dropping any embedded element.
    pub fn set_value(&mut self, value: Vec<u8>) {
        self.value = value;
        self.children.clear();
        if self.form == NodeForm::Encapsulating {
            self.form = NodeForm::Plain;
        }
    }

    /// Nodes with a value of their own (primitive content or an encapsulation
    /// prefix) as opposed to pure containers.
    pub fn has_content_bytes(&self) -> bool {
        !self.constructed || self.form == NodeForm::Opaque
    }

    pub fn get(&self, path: &NodePath) -> Option<&TlvNode> {
        let mut node = self;
        for &i in path.indices() {
            node = node.children.get(i)?;
        }
        Some(node)
    }

    pub fn get_mut(&mut self, path: &NodePath) -> Option<&mut TlvNode> {
        let mut node = self;
        for &i in path.indices() {
            node = node.children.get_mut(i)?;
        }
        Some(node)
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(TlvNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TlvNode::depth).max().unwrap_or(0)
    }

    /// Pre-order visit of every node with its path.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&NodePath, &'a TlvNode)) {
        fn go<'a>(n: &'a TlvNode, path: &mut NodePath, f: &mut dyn FnMut(&NodePath, &'a TlvNode)) {
            f(path, n);
            for (i, c) in n.children.iter().enumerate() {
                path.push(i);
                go(c, path, f);
                path.pop();
            }
        }
        go(self, &mut NodePath::root(), f)
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&NodePath, &mut TlvNode)) {
        fn go(n: &mut TlvNode, path: &mut NodePath, f: &mut dyn FnMut(&NodePath, &mut TlvNode)) {
            f(path, n);
            for (i, c) in n.children.iter_mut().enumerate() {
                path.push(i);
                go(c, path, f);
                path.pop();
            }
        }
        go(self, &mut NodePath::root(), f)
    }

    /// All paths in pre-order.
    pub fn paths(&self) -> Vec<NodePath> {
        let mut out = Vec::with_capacity(self.node_count());
        self.walk(&mut |p, _| out.push(p.clone()));
        out
    }

    /// Path of the `n`-th node in pre-order.
    pub fn nth_path(&self, n: usize) -> Option<NodePath> {
        fn go(node: &TlvNode, remaining: &mut usize, path: &mut NodePath) -> bool {
            if *remaining == 0 {
                return true;
            }
            *remaining -= 1;
            for (i, c) in node.children.iter().enumerate() {
                path.push(i);
                if go(c, remaining, path) {
                    return true;
                }
                path.pop();
            }
            false
        }
        let mut remaining = n;
        let mut path = NodePath::root();
        go(self, &mut remaining, &mut path).then_some(path)
    }

    pub fn clear_labels(&mut self) {
        self.walk_mut(&mut |_, n| n.label = None);
    }

    /// Structural equality: tags, forms, overrides and content, ignoring
    /// labels and flags. An encapsulating node equals a plain node whose
    /// value is the same content bytes.
    pub fn structurally_eq(&self, other: &TlvNode) -> bool {
        if self.form == NodeForm::Opaque || other.form == NodeForm::Opaque {
            return self.form == other.form && self.value == other.value;
        }
        if self.tag_class != other.tag_class
            || self.constructed != other.constructed
            || self.tag_number != other.tag_number
            || self.length_override != other.length_override
            || self.tag_override != other.tag_override
        {
            return false;
        }
        if self.form != other.form {
            return match (super::encode::encode_content(self), super::encode::encode_content(other)) {
                (Ok(a), Ok(b)) => a == b,
                _ => false,
            };
        }
        self.value == other.value
            && self.children.len() == other.children.len()
            && self.children.iter().zip(&other.children).all(|(a, b)| a.structurally_eq(b))
    }
}

impl fmt::Display for TlvNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(n: &TlvNode, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let indent = "  ".repeat(depth);
            let label = n.label.as_deref().map(|l| format!(" <{l}>")).unwrap_or_default();
            if n.form == NodeForm::Opaque {
                return writeln!(f, "{indent}opaque {}{label}", hex::encode(&n.value));
            }
            let class = match n.tag_class {
                TagClass::Universal => "",
                TagClass::Application => "app ",
                TagClass::Context => "ctx ",
                TagClass::Private => "priv ",
            };
            if n.children.is_empty() {
                writeln!(f, "{indent}[{class}{}] {}{label}", n.tag_number, hex::encode(&n.value))?;
            } else {
                writeln!(f, "{indent}[{class}{}]{label}", n.tag_number)?;
            }
            for c in &n.children {
                go(c, depth + 1, f)?;
            }
            Ok(())
        }
        go(self, 0, f)
    }
}
