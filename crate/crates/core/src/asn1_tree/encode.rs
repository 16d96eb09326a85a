use super::node::{LengthOverride, NodeForm, TlvNode};
use super::path::NodePath;

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("empty tag override at {position}{}", label_suffix(.label))]
    EmptyTagOverride { position: NodePath, label: Option<String> },
    #[error("empty length override at {position}{}", label_suffix(.label))]
    EmptyLengthOverride { position: NodePath, label: Option<String> },
}

fn label_suffix(label: &Option<String>) -> String {
    label.as_deref().map(|l| format!(" ({l})")).unwrap_or_default()
}

/// Serializes a tree. Every node is emitted as header + content, where the
/// content is `value` followed by the encodings of `children`. Headers are
/// canonical unless a tag or length override is present, in which case the
/// override bytes are written instead. Length fields of enclosing nodes count
/// the bytes actually emitted, so an override misstates only its own node.
pub fn encode_der(node: &TlvNode) -> Result<Vec<u8>, EncodeError> {
    let mut sizes = Vec::with_capacity(node.node_count());
    let total = measure(node, &mut NodePath::root(), &mut sizes)?;
    let mut out = Vec::with_capacity(total);
    let mut cursor = 0;
    emit(node, &sizes, &mut cursor, &mut out);
    debug_assert_eq!(out.len(), total);
    Ok(out)
}

/// The content octets of a node as they appear inside its encoding.
pub fn encode_content(node: &TlvNode) -> Result<Vec<u8>, EncodeError> {
    if node.form == NodeForm::Opaque {
        return Ok(node.value.clone());
    }
    let mut out = node.value.clone();
    for c in &node.children {
        out.extend(encode_der(c)?);
    }
    Ok(out)
}

/// Encoded size of a node, including its header.
pub fn encoded_len(node: &TlvNode) -> Result<usize, EncodeError> {
    let mut sizes = Vec::new();
    measure(node, &mut NodePath::root(), &mut sizes)
}

fn measure(node: &TlvNode, path: &mut NodePath, sizes: &mut Vec<usize>) -> Result<usize, EncodeError> {
    let slot = sizes.len();
    sizes.push(0);
    if node.form == NodeForm::Opaque {
        sizes[slot] = node.value.len();
        return Ok(node.value.len());
    }
    let mut content = node.value.len();
    for (i, c) in node.children.iter().enumerate() {
        path.push(i);
        content += measure(c, path, sizes)?;
        path.pop();
    }
    sizes[slot] = content;
    let tag_len = match &node.tag_override {
        Some(t) if t.is_empty() => {
            return Err(EncodeError::EmptyTagOverride { position: path.clone(), label: node.label.as_deref().map(str::to_string) })
        }
        Some(t) => t.len(),
        None => tag_len(node.tag_number),
    };
    let len_len = match &node.length_override {
        Some(LengthOverride::Raw(r)) if r.is_empty() => {
            return Err(EncodeError::EmptyLengthOverride { position: path.clone(), label: node.label.as_deref().map(str::to_string) })
        }
        Some(LengthOverride::Raw(r)) => r.len(),
        Some(LengthOverride::Value(v)) => length_len(*v),
        None => length_len(content as u64),
    };
    Ok(tag_len + len_len + content)
}

fn emit(node: &TlvNode, sizes: &[usize], cursor: &mut usize, out: &mut Vec<u8>) {
    let content = sizes[*cursor];
    *cursor += 1;
    if node.form == NodeForm::Opaque {
        out.extend_from_slice(&node.value);
        return;
    }
    match &node.tag_override {
        Some(t) => out.extend_from_slice(t),
        None => push_tag(out, node),
    }
    match &node.length_override {
        Some(LengthOverride::Raw(r)) => out.extend_from_slice(r),
        Some(LengthOverride::Value(v)) => push_length(out, *v),
        None => push_length(out, content as u64),
    }
    out.extend_from_slice(&node.value);
    for c in &node.children {
        emit(c, sizes, cursor, out);
    }
}

fn tag_len(number: u64) -> usize {
    if number < 0x1F {
        1
    } else {
        1 + base128_len(number)
    }
}

fn base128_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

pub fn push_base128(out: &mut Vec<u8>, v: u64) {
    let n = base128_len(v);
    for i in (0..n).rev() {
        let byte = ((v >> (7 * i)) & 0x7F) as u8;
        out.push(if i == 0 { byte } else { byte | 0x80 });
    }
}

pub fn push_tag(out: &mut Vec<u8>, node: &TlvNode) {
    out.push(node.identifier_byte());
    if node.tag_number >= 0x1F {
        push_base128(out, node.tag_number);
    }
}

pub fn length_len(v: u64) -> usize {
    if v < 0x80 {
        1
    } else {
        1 + (8 - v.leading_zeros() as usize / 8)
    }
}

/// Minimal definite length encoding.
pub fn push_length(out: &mut Vec<u8>, v: u64) {
    if v < 0x80 {
        out.push(v as u8);
    } else {
        let bytes = v.to_be_bytes();
        let skip = v.leading_zeros() as usize / 8;
        out.push(0x80 | (8 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

pub fn length_bytes(v: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(9);
    push_length(&mut out, v);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asn1_tree::node::TagClass;

    fn int(v: u8) -> TlvNode {
        TlvNode::primitive(TagClass::Universal, 2, vec![v])
    }

    #[test]
    fn canonical_sequence() {
        let t = TlvNode::constructed(TagClass::Universal, 16, vec![int(5)]);
        assert_eq!(encode_der(&t).unwrap(), [0x30, 0x03, 0x02, 0x01, 0x05]);
    }

    #[test]
    fn child_length_override() {
        let mut child = int(5);
        child.length_override = Some(LengthOverride::Value(9));
        let t = TlvNode::constructed(TagClass::Universal, 16, vec![child]);
        assert_eq!(encode_der(&t).unwrap(), [0x30, 0x03, 0x02, 0x09, 0x05]);
    }

    #[test]
    fn tag_override() {
        let mut n = int(0x2A);
        n.tag_override = Some(vec![0x1F, 0x02]);
        assert_eq!(encode_der(&n).unwrap(), [0x1F, 0x02, 0x01, 0x2A]);
    }

    #[test]
    fn parent_counts_emitted_override_bytes() {
        let mut child = int(5);
        child.length_override = Some(LengthOverride::Value(65536));
        let t = TlvNode::constructed(TagClass::Universal, 16, vec![child]);
        assert_eq!(encode_der(&t).unwrap(), [0x30, 0x06, 0x02, 0x83, 0x01, 0x00, 0x00, 0x05]);
    }

    #[test]
    fn empty_override_names_position() {
        let mut child = int(5);
        child.tag_override = Some(vec![]);
        child.label = Some("x.serial".into());
        let t = TlvNode::constructed(TagClass::Universal, 16, vec![int(1), child]);
        let err = encode_der(&t).unwrap_err().to_string();
        assert!(err.contains("/1") && err.contains("x.serial"), "{err}");
    }

    #[test]
    fn long_lengths() {
        assert_eq!(length_bytes(0x7F), [0x7F]);
        assert_eq!(length_bytes(0x80), [0x81, 0x80]);
        assert_eq!(length_bytes(0x100), [0x82, 0x01, 0x00]);
        assert_eq!(length_bytes(65536), [0x83, 0x01, 0x00, 0x00]);
        for v in [0u64, 1, 127, 128, 255, 256, 65535, 1 << 24, u64::MAX] {
            assert_eq!(length_bytes(v).len(), length_len(v));
        }
    }

    #[test]
    fn high_tag_numbers() {
        let n = TlvNode::primitive(TagClass::Context, 200, vec![]);
        assert_eq!(encode_der(&n).unwrap(), [0x9F, 0x81, 0x48, 0x00]);
    }
}
