//! Length taint: a changed node invalidates the length of every ancestor.

use crate::asn1_tree::{NodePath, TlvNode};

/// A length override survives repair only when a structure mutation put it
/// there on purpose.
pub fn has_protected_length(node: &TlvNode) -> bool {
    node.length_override.is_some() && node.protected && node.breaking
}

/// Marks every ancestor of a tainted node as tainted and drops stale length
/// overrides on tainted nodes, deepest first, so their lengths are
/// recomputed from the current content. Returns the number of overrides
/// dropped.
pub fn propagate_taint(root: &mut TlvNode) -> usize {
    fn go(n: &mut TlvNode, cleared: &mut usize) -> bool {
        let mut any = false;
        for c in &mut n.children {
            any |= go(c, cleared);
        }
        n.tainted |= any;
        if n.tainted && n.length_override.is_some() && !has_protected_length(n) {
            n.length_override = None;
            *cleared += 1;
        }
        n.tainted
    }
    let mut cleared = 0;
    go(root, &mut cleared);
    cleared
}

/// Taints the node at `path` and its ancestors, dropping their stale length
/// overrides.
pub fn taint_path(root: &mut TlvNode, path: &NodePath) {
    let mut node = root;
    let visit = |n: &mut TlvNode| {
        n.tainted = true;
        if n.length_override.is_some() && !has_protected_length(n) {
            n.length_override = None;
        }
    };
    visit(node);
    for &i in path.indices() {
        let Some(next) = node.children.get_mut(i) else { return };
        node = next;
        visit(node);
    }
}
