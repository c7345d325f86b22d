//! Memoized combinatorics over the subclasses of one base class.
//!
//! A [`Universe`] fixes a canonical base class F and names each subclass by
//! the bit set of its member indices. Restrictions become bitwise ANDs with
//! precomputed masks, and the two expensive recursions (sfat2 and the
//! irreducibility level) are cached per universe.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::class::{DiscreteClass, Hypothesis, Label, RestrictionSet};
use crate::error::{Error, Result};
use crate::members::Members;

/// Irreducibility level of a class: the largest l for which it is
/// l-irreducible. Nonempty classes with sfat2 >= 1 always have a finite
/// level bounded by the number of points on which they are not constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Finite(u64),
    Infinite,
}

impl Level {
    pub fn at_least(self, l: u64) -> bool {
        self >= Level::Finite(l)
    }

    fn succ(self) -> Level {
        match self {
            Level::Finite(l) => Level::Finite(l + 1),
            Level::Infinite => Level::Infinite,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Finite(l) => write!(f, "{l}"),
            Level::Infinite => f.write_str("infinite"),
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Level::Finite(l) => s.serialize_u64(*l),
            Level::Infinite => s.serialize_str("infinite"),
        }
    }
}

pub struct Universe {
    base: DiscreteClass,
    /// `eq[x][v]`: members with f(x) = v, for v in 0..=K (index 0 is empty).
    eq: Vec<Vec<Members>>,
    /// `ge[x][v]`: members with f(x) >= v, for v in 0..=K+1.
    ge: Vec<Vec<Members>>,
    /// `le[x][v]`: members with f(x) <= v, for v in 0..=K+1.
    le: Vec<Vec<Members>>,
    sfat_memo: RefCell<HashMap<Members, i32>>,
    level_memo: RefCell<HashMap<Members, Level>>,
}

impl Universe {
    pub fn new(base: DiscreteClass) -> Self {
        let n = base.len();
        let k = usize::from(base.k());
        let points = base.domain().len();
        let mut eq = vec![vec![Members::empty(n); k + 2]; points];
        for (i, h) in base.hypotheses().iter().enumerate() {
            for (x, &v) in h.iter().enumerate() {
                eq[x][usize::from(v)].insert(i);
            }
        }
        let mut ge = vec![vec![Members::empty(n); k + 2]; points];
        let mut le = vec![vec![Members::empty(n); k + 2]; points];
        for x in 0..points {
            for v in (0..=k).rev() {
                ge[x][v] = ge[x][v + 1].or(&eq[x][v]);
            }
            for v in 1..=k + 1 {
                le[x][v] = le[x][v - 1].or(&eq[x][v]);
            }
        }
        Universe {
            base,
            eq,
            ge,
            le,
            sfat_memo: RefCell::new(HashMap::new()),
            level_memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn base(&self) -> &DiscreteClass {
        &self.base
    }

    pub fn k(&self) -> Label {
        self.base.k()
    }

    pub fn points(&self) -> usize {
        self.base.domain().len()
    }

    pub fn full(&self) -> Members {
        Members::full(self.base.len())
    }

    pub fn none(&self) -> Members {
        Members::empty(self.base.len())
    }

    pub fn hypothesis(&self, i: usize) -> &Hypothesis {
        &self.base.hypotheses()[i]
    }

    /// Members of `m` with f(x) = v.
    pub fn restrict_one(&self, m: &Members, x: usize, v: Label) -> Members {
        match self.eq[x].get(usize::from(v)) {
            Some(mask) => m.and(mask),
            None => self.none(),
        }
    }

    pub fn restrict(&self, m: &Members, a: &RestrictionSet) -> Members {
        a.iter().fold(m.clone(), |acc, &(x, v)| self.restrict_one(&acc, x, v))
    }

    pub fn restrict_path(&self, m: &Members, path: &[(usize, Label)]) -> Members {
        path.iter().fold(m.clone(), |acc, &(x, v)| self.restrict_one(&acc, x, v))
    }

    /// Members of the base class lying in `class`.
    pub fn members_of(&self, class: &DiscreteClass) -> Result<Members> {
        let mut m = self.none();
        for h in class.hypotheses() {
            let i = self
                .base
                .hypotheses()
                .binary_search(h)
                .map_err(|_| Error::Precondition("class is not a subclass of the base class".into()))?;
            m.insert(i);
        }
        Ok(m)
    }

    pub fn class_of(&self, m: &Members) -> DiscreteClass {
        self.base.filter({
            let mut i = 0;
            move |_| {
                i += 1;
                m.contains(i - 1)
            }
        })
    }

    pub fn hypotheses_of(&self, m: &Members) -> Vec<Hypothesis> {
        m.iter().map(|i| self.hypothesis(i).clone()).collect()
    }

    /// Labels taken by members of `m` at point `x`, ascending.
    pub fn labels_at(&self, m: &Members, x: usize) -> Vec<Label> {
        (1..=self.k()).filter(|&v| m.intersects(&self.eq[x][usize::from(v)])).collect()
    }

    /// Sequential fat-shattering dimension at scale 2, with -1 for the empty
    /// class. Splitting at integer thresholds s in 2..K-1 is exhaustive for
    /// integer-valued classes.
    pub fn sfat(&self, m: &Members) -> i32 {
        if m.is_empty() {
            return -1;
        }
        if let Some(&d) = self.sfat_memo.borrow().get(m) {
            return d;
        }
        let k = usize::from(self.k());
        let mut best = 0;
        for x in 0..self.points() {
            for s in 2..k {
                if !m.intersects(&self.ge[x][s + 1]) || !m.intersects(&self.le[x][s - 1]) {
                    continue;
                }
                let up = m.and(&self.ge[x][s + 1]);
                let down = m.and(&self.le[x][s - 1]);
                // Each side is a proper subclass, so the answer is at most
                // one more than the smaller side.
                let lo = self.sfat(&up).min(self.sfat(&down));
                best = best.max(1 + lo);
            }
        }
        self.sfat_memo.borrow_mut().insert(m.clone(), best);
        best
    }

    /// Exact irreducibility level.
    ///
    /// Uses the recursion level(G) = 1 + min over points x where G is not
    /// constant of max { level(G|(x,k)) : sfat(G|(x,k)) = sfat(G) }, where an
    /// empty max means G is not 1-irreducible. Points where G is constant
    /// impose no constraint beyond the one being computed, and every other
    /// restriction is a proper subclass, so the recursion is well founded.
    pub fn level(&self, m: &Members) -> Level {
        let d = self.sfat(m);
        if d <= 0 {
            return Level::Infinite;
        }
        if let Some(&l) = self.level_memo.borrow().get(m) {
            return l;
        }
        let mut worst = Level::Infinite;
        for x in 0..self.points() {
            let labels = self.labels_at(m, x);
            if labels.len() < 2 {
                continue;
            }
            let best = labels
                .iter()
                .map(|&v| self.restrict_one(m, x, v))
                .filter(|sub| self.sfat(sub) == d)
                .map(|sub| self.level(&sub))
                .max();
            match best {
                None => {
                    worst = Level::Finite(0);
                    break;
                }
                Some(l) => worst = worst.min(l.succ()),
            }
        }
        self.level_memo.borrow_mut().insert(m.clone(), worst);
        worst
    }

    pub fn is_irreducible(&self, m: &Members, l: u64) -> bool {
        l == 0 || self.level(m).at_least(l)
    }

    /// Labels at `x` whose restriction keeps the sfat2 of `m`.
    pub fn sfat_keeping_labels(&self, m: &Members, x: usize) -> Vec<Label> {
        let d = self.sfat(m);
        self.labels_at(m, x)
            .into_iter()
            .filter(|&v| self.sfat(&self.restrict_one(m, x, v)) == d)
            .collect()
    }

    /// The SOA hypothesis of a nonempty 1-irreducible class.
    ///
    /// At each point the label keeping sfat2 is chosen; when two adjacent
    /// labels k, k+1 both keep it, the one whose restriction has the higher
    /// irreducibility level wins and equal levels pick k.
    pub fn soa(&self, m: &Members) -> Result<Hypothesis> {
        if m.is_empty() {
            return Err(Error::Precondition("soa of the empty class".into()));
        }
        if !self.is_irreducible(m, 1) {
            return Err(Error::Precondition("soa needs a 1-irreducible class".into()));
        }
        (0..self.points())
            .map(|x| {
                let keep = self.sfat_keeping_labels(m, x);
                match keep.as_slice() {
                    [v] => Ok(*v),
                    [a, b] if b - a == 1 => {
                        let la = self.level(&self.restrict_one(m, x, *a));
                        let lb = self.level(&self.restrict_one(m, x, *b));
                        Ok(if lb > la { *b } else { *a })
                    }
                    _ => Err(Error::Precondition(format!(
                        "labels {keep:?} keep sfat2 at point {x}; expected one label or two adjacent ones"
                    ))),
                }
            })
            .collect()
    }

    /// All nonempty restriction subclasses of the base class, in canonical
    /// order.
    pub fn restriction_subclasses(&self) -> Vec<Members> {
        let all = self.full();
        if all.is_empty() {
            return Vec::new();
        }
        let mut seen = std::collections::HashSet::new();
        let mut queue = std::collections::VecDeque::from([all.clone()]);
        seen.insert(all);
        let mut out = Vec::new();
        while let Some(m) = queue.pop_front() {
            for x in 0..self.points() {
                for v in 1..=self.k() {
                    let sub = self.restrict_one(&m, x, v);
                    if !sub.is_empty() && seen.insert(sub.clone()) {
                        queue.push_back(sub);
                    }
                }
            }
            out.push(m);
        }
        out.sort_by(|a, b| a.canonical_cmp(b));
        out
    }

    /// Points where every label strictly lowers sfat2. Nonempty exactly when
    /// `m` is not 1-irreducible.
    pub fn reducing_points(&self, m: &Members) -> Vec<usize> {
        let d = self.sfat(m);
        (0..self.points())
            .filter(|&x| {
                (1..=self.k()).all(|v| self.sfat(&self.restrict_one(m, x, v)) < d)
            })
            .collect()
    }
}
