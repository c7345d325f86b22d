//! l-irreducibility, SOA hypotheses, reduction witness trees and reducing
//! trees.

use crate::class::{DiscreteClass, Hypothesis, Label};
use crate::error::{Error, Result};
use crate::members::Members;
use crate::tree::{AugmentedTree, KaryTree};
use crate::universe::{Level, Universe};

pub fn is_l_irreducible(f: &DiscreteClass, l: u64) -> bool {
    let u = Universe::new(f.clone());
    u.is_irreducible(&u.full(), l)
}

/// The exact level, reported as `Finite(cap)` when it is finite but larger
/// than `cap`.
pub fn irreducibility_level(f: &DiscreteClass, cap: u64) -> Level {
    let u = Universe::new(f.clone());
    match u.level(&u.full()) {
        Level::Finite(l) => Level::Finite(l.min(cap)),
        Level::Infinite => Level::Infinite,
    }
}

pub fn soa(g: &DiscreteClass) -> Result<Hypothesis> {
    let u = Universe::new(g.clone());
    u.soa(&u.full())
}

pub fn reduction_witness_tree(f: &DiscreteClass, l: u64) -> Option<KaryTree> {
    let u = Universe::new(f.clone());
    u.witness_tree(&u.full(), l)
}

pub fn build_reducing_tree(h: &DiscreteClass, pair: (usize, Label), ell_seq: &[u64]) -> Result<AugmentedTree> {
    let u = Universe::new(h.clone());
    u.reducing_tree(&u.full(), pair, ell_seq)
}

/// `sum_{t' < t} ell_seq[t']`, saturating.
fn budget(ell_seq: &[u64], t: usize) -> u64 {
    ell_seq[..t].iter().fold(0u64, |acc, &l| acc.saturating_add(l))
}

impl Universe {
    /// A tree of depth at most `l` all of whose leaves strictly lower the
    /// sfat2 of `m`, or `None` when `m` is l-irreducible.
    pub fn witness_tree(&self, m: &Members, l: u64) -> Option<KaryTree> {
        if self.is_irreducible(m, l) {
            return None;
        }
        let mut tree = KaryTree::leaf(self.k());
        let root = tree.root();
        self.grow_witness(m, l, &mut tree, root);
        Some(tree)
    }

    fn grow_witness(&self, m: &Members, l: u64, tree: &mut KaryTree, at: usize) {
        let d = self.sfat(m);
        let fails = |x: usize| {
            (1..=self.k()).all(|v| {
                let sub = self.restrict_one(m, x, v);
                self.sfat(&sub) < d || !self.is_irreducible(&sub, l - 1)
            })
        };
        // A failing point where m is not constant always exists; a constant
        // point would only reproduce m one level down.
        let x = (0..self.points())
            .find(|&x| self.labels_at(m, x).len() > 1 && fails(x))
            .expect("a class that is not l-irreducible has a failing point");
        let kids = tree.split(at, x).expect("growing at a leaf");
        for (v, kid) in (1..=self.k()).zip(kids) {
            let sub = self.restrict_one(m, x, v);
            if self.sfat(&sub) == d {
                self.grow_witness(&sub, l - 1, tree, kid);
            }
        }
    }

    /// Augmented tree rooted at `pair` whose leaves are empty or suitably
    /// irreducible, grown by repeatedly attaching minimal witness trees.
    pub fn reducing_tree(&self, h: &Members, pair: (usize, Label), ell_seq: &[u64]) -> Result<AugmentedTree> {
        if h.is_empty() {
            return Err(Error::Precondition("reducing tree of the empty class".into()));
        }
        let d = self.sfat(h);
        let (x, y) = pair;
        if x >= self.points() || y == 0 || y > self.k() {
            return Err(Error::Precondition(format!("pair ({x}, {y}) outside domain or labels")));
        }
        if self.sfat(&self.restrict_one(h, x, y)) >= d {
            return Err(Error::Precondition("the root pair must lower sfat2".into()));
        }
        let mut tree = AugmentedTree::new(pair, self.k());
        let mut frontier = tree.leaves();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for v in frontier {
                let g = self.restrict(h, &tree.ancestors(v));
                if g.is_empty() {
                    continue;
                }
                let t = (d - self.sfat(&g)) as usize;
                let need = *ell_seq
                    .get(t)
                    .ok_or_else(|| Error::Precondition(format!("level sequence has no entry for t = {t}")))?;
                if let Level::Finite(level) = self.level(&g) {
                    if level < need {
                        let witness = self.witness_tree(&g, level + 1).expect("level below need");
                        let before = tree.below.node_count();
                        tree.below.graft(v, &witness)?;
                        next.extend((before..tree.below.node_count()).filter(|&w| tree.below.is_leaf(w)));
                    }
                }
            }
            frontier = next;
        }
        Ok(tree)
    }

    /// Checks the reducing-tree conditions directly on every leaf.
    pub fn validate_reducing_tree(&self, h: &Members, tree: &AugmentedTree, ell_seq: &[u64]) -> Result<(), String> {
        let d = self.sfat(h);
        let (x, y) = tree.pair;
        if self.sfat(&self.restrict_one(h, x, y)) >= d {
            return Err("root pair does not lower sfat2".into());
        }
        for v in 0..tree.below.node_count() {
            if !tree.below.is_leaf(v) && tree.below.children(v).len() != usize::from(self.k()) {
                return Err(format!("node {v} does not have K children"));
            }
        }
        for v in tree.leaves() {
            let g = self.restrict(h, &tree.ancestors(v));
            let t = (d - self.sfat(&g)) as usize;
            if !g.is_empty() {
                let need = *ell_seq.get(t).ok_or(format!("no level for t = {t}"))?;
                if !self.is_irreducible(&g, need) {
                    return Err(format!("leaf {v} is not {need}-irreducible"));
                }
            }
            if t > ell_seq.len() {
                return Err(format!("no depth budget for t = {t}"));
            }
            let depth = tree.node_depth(v) as u64;
            if depth > budget(ell_seq, t) {
                return Err(format!("leaf {v} at depth {depth} exceeds budget {}", budget(ell_seq, t)));
            }
            // Walk the path from the root's child down to v.
            let mut chain = vec![v];
            while let Some(p) = tree.parent(*chain.last().unwrap()) {
                chain.push(p);
            }
            chain.reverse();
            for t_small in 1..t {
                let limit = budget(ell_seq, t_small);
                let found = chain.iter().any(|&w| {
                    let gw = self.restrict(h, &tree.ancestors(w));
                    self.sfat(&gw) <= d - t_small as i32 && tree.node_depth(w) as u64 <= limit
                });
                if !found {
                    return Err(format!("leaf {v} has no ancestor reaching sfat2 {} within depth {limit}", d - t_small as i32));
                }
            }
        }
        Ok(())
    }

    /// Number of leaves whose class has sfat2 equal to `d - t`, for t = 1..=d.
    pub fn reducing_tree_leaf_counts(&self, h: &Members, tree: &AugmentedTree) -> Vec<usize> {
        let d = self.sfat(h);
        let mut counts = vec![0; d.max(0) as usize + 1];
        for v in tree.leaves() {
            let s = self.sfat(&self.restrict(h, &tree.ancestors(v)));
            if s >= 0 && s < d {
                counts[(d - s) as usize] += 1;
            }
        }
        counts
    }
}

/// Whether `count <= base^exponent`, treating overflow as satisfied.
pub fn within_power(count: usize, base: u64, exponent: u64) -> bool {
    let Ok(e) = u32::try_from(exponent) else { return true };
    match base.checked_pow(e) {
        Some(bound) => count as u64 <= bound,
        None => true,
    }
}
