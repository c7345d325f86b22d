//! K-ary domain-labeled trees and augmented trees.
//!
//! Nodes live in an arena and are numbered in creation order; every
//! traversal that must be deterministic (leaf scans in particular) walks
//! nodes by id.

use serde_json::{json, Map, Value};

use crate::class::{Domain, Label, RestrictionSet};
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
struct Node {
    point: Option<usize>,
    children: Vec<NodeId>,
    parent: Option<(NodeId, Label)>,
    depth: usize,
}

/// Partial K-ary tree: every internal node carries a domain point and has
/// exactly K children, reached by edges labeled `1..=K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KaryTree {
    k: Label,
    nodes: Vec<Node>,
}

impl KaryTree {
    /// The tree consisting of a single unlabeled leaf.
    pub fn leaf(k: Label) -> Self {
        KaryTree {
            k,
            nodes: vec![Node { point: None, children: Vec::new(), parent: None, depth: 0 }],
        }
    }

    pub fn k(&self) -> Label {
        self.k
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.nodes[v].children.is_empty()
    }

    pub fn point(&self, v: NodeId) -> Option<usize> {
        self.nodes[v].point
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.nodes[v].children
    }

    /// Child of `v` along the edge labeled `label`.
    pub fn child(&self, v: NodeId, label: Label) -> Option<NodeId> {
        self.nodes[v].children.get(usize::from(label).checked_sub(1)?).copied()
    }

    pub fn node_depth(&self, v: NodeId) -> usize {
        self.nodes[v].depth
    }

    /// Maximum depth over all nodes.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaves in creation order.
    pub fn leaves(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&v| self.is_leaf(v)).collect()
    }

    /// The `(point, edge label)` pairs on the path from the root to `v`,
    /// ordered from the root down.
    pub fn path(&self, v: NodeId) -> Vec<(usize, Label)> {
        let mut out = Vec::with_capacity(self.nodes[v].depth);
        let mut cur = v;
        while let Some((parent, label)) = self.nodes[cur].parent {
            out.push((self.nodes[parent].point.expect("internal node has a point"), label));
            cur = parent;
        }
        out.reverse();
        out
    }

    /// Ancestor set of `v`.
    pub fn ancestors(&self, v: NodeId) -> RestrictionSet {
        self.path(v).into_iter().collect()
    }

    /// Turns leaf `v` into an internal node labeled `point` with K fresh leaves.
    pub fn split(&mut self, v: NodeId, point: usize) -> Result<Vec<NodeId>> {
        if !self.is_leaf(v) {
            return Err(Error::Precondition(format!("node {v} is not a leaf")));
        }
        let depth = self.nodes[v].depth + 1;
        let first = self.nodes.len();
        for label in 1..=self.k {
            self.nodes.push(Node { point: None, children: Vec::new(), parent: Some((v, label)), depth });
        }
        let ids: Vec<NodeId> = (first..self.nodes.len()).collect();
        self.nodes[v].point = Some(point);
        self.nodes[v].children = ids.clone();
        Ok(ids)
    }

    /// Replaces leaf `v` by a copy of `sub`, in place.
    pub fn graft(&mut self, v: NodeId, sub: &KaryTree) -> Result<()> {
        if !self.is_leaf(v) {
            return Err(Error::Precondition(format!("node {v} is not a leaf")));
        }
        if sub.k != self.k {
            return Err(Error::Precondition("trees have different label counts".into()));
        }
        // Replay the splits of `sub` in the order they happened so node ids
        // below `v` follow the same creation order as in `sub`.
        let mut target = vec![usize::MAX; sub.nodes.len()];
        target[sub.root()] = v;
        let mut internal: Vec<NodeId> = (0..sub.nodes.len()).filter(|&s| !sub.is_leaf(s)).collect();
        internal.sort_by_key(|&s| sub.nodes[s].children[0]);
        for s in internal {
            let point = sub.nodes[s].point.expect("internal node has a point");
            let kids = self.split(target[s], point)?;
            for (&c, t) in sub.nodes[s].children.iter().zip(kids) {
                target[c] = t;
            }
        }
        Ok(())
    }

    /// Copy of `self` with `sub` attached at leaf `v`.
    pub fn attach(&self, v: NodeId, sub: &KaryTree) -> Result<KaryTree> {
        let mut out = self.clone();
        out.graft(v, sub)?;
        Ok(out)
    }

    /// Nested JSON `{point, children: {label: subtree}}`; leaves have a null
    /// point and no children.
    pub fn to_json(&self, domain: &Domain) -> Value {
        self.node_json(self.root(), domain)
    }

    fn node_json(&self, v: NodeId, domain: &Domain) -> Value {
        let mut children = Map::new();
        for (i, &c) in self.nodes[v].children.iter().enumerate() {
            children.insert((i + 1).to_string(), self.node_json(c, domain));
        }
        json!({
            "point": self.nodes[v].point.map(|p| domain.point(p).to_string()),
            "children": children,
        })
    }

    /// Parses the format written by [`KaryTree::to_json`].
    pub fn from_json(value: &Value, domain: &Domain, k: Label) -> Result<KaryTree> {
        let mut tree = KaryTree::leaf(k);
        let mut stack = vec![(value, tree.root())];
        while let Some((node, id)) = stack.pop() {
            let point = node.get("point").ok_or_else(|| Error::Format("tree node without \"point\"".into()))?;
            let children = node.get("children").and_then(Value::as_object);
            match point {
                Value::Null => {
                    if children.is_some_and(|c| !c.is_empty()) {
                        return Err(Error::Format("leaf node with children".into()));
                    }
                }
                Value::String(name) => {
                    let x = domain
                        .index_of(name)
                        .ok_or_else(|| Error::Format(format!("unknown point {name:?}")))?;
                    let children = children.ok_or_else(|| Error::Format("internal node without children".into()))?;
                    if children.len() != usize::from(k) {
                        return Err(Error::Format(format!("internal node needs {k} children")));
                    }
                    let kids = tree.split(id, x)?;
                    for (label, kid) in (1..=k).zip(kids) {
                        let sub = children
                            .get(&label.to_string())
                            .ok_or_else(|| Error::Format(format!("missing child {label}")))?;
                        stack.push((sub, kid));
                    }
                }
                _ => return Err(Error::Format("tree point must be a string or null".into())),
            }
        }
        Ok(tree)
    }
}

/// A tree whose root, labeled `pair.0`, has the single child reached by
/// `pair.1`; below that child the structure is an ordinary [`KaryTree`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedTree {
    pub pair: (usize, Label),
    pub below: KaryTree,
}

impl AugmentedTree {
    pub fn new(pair: (usize, Label), k: Label) -> Self {
        AugmentedTree { pair, below: KaryTree::leaf(k) }
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.below.leaves()
    }

    /// Ancestor set of a node of `below`, including the root pair.
    pub fn ancestors(&self, v: NodeId) -> RestrictionSet {
        let mut a = self.below.ancestors(v);
        a.insert(self.pair.0, self.pair.1);
        a
    }

    pub fn path(&self, v: NodeId) -> Vec<(usize, Label)> {
        let mut p = vec![self.pair];
        p.extend(self.below.path(v));
        p
    }

    /// Depth counted from the augmented root.
    pub fn node_depth(&self, v: NodeId) -> usize {
        1 + self.below.node_depth(v)
    }

    pub fn depth(&self) -> usize {
        1 + self.below.depth()
    }

    /// Parent of a node of `below`, or `None` for the child of the root.
    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.below.nodes[v].parent.map(|(p, _)| p)
    }

    pub fn to_json(&self, domain: &Domain) -> Value {
        let mut children = Map::new();
        children.insert(self.pair.1.to_string(), self.below.to_json(domain));
        json!({ "point": domain.point(self.pair.0), "children": children })
    }
}
