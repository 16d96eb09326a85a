//! Schema-free DER trees: lossless parsing of arbitrary bytes, encoding with
//! per-node header overrides, and schema-driven field labels.

pub mod build;
pub mod encode;
pub mod label;
pub mod node;
pub mod oid;
pub mod parse;
pub mod path;

pub use encode::{encode_content, encode_der, encoded_len, EncodeError};
pub use label::{find_by_label, label_index, label_tree, schema_for, LabelSchema};
pub use node::{tags, LengthOverride, NodeForm, TagClass, TlvNode};
pub use parse::{parse_der, parse_der_strict, Anomaly, AnomalyKind, Parsed};
pub use path::NodePath;

/// Parses and labels an object of a known kind.
pub fn parse_labeled(bytes: &[u8], kind: crate::kind::ObjectKind) -> Parsed {
    let mut parsed = parse_der(bytes);
    label_tree(&mut parsed.root, schema_for(kind));
    parsed
}
