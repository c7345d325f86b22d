//! Finite domains, hypothesis classes, restrictions, discretization and
//! absolute-error functionals.
//!
//! Classes are stored in canonical form: hypotheses sorted lexicographically
//! and deduplicated, so two classes are equal exactly when they contain the
//! same functions.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labels of a discretized class run from 1 to K.
pub type Label = u16;

/// A discrete hypothesis: one label per domain point.
pub type Hypothesis = Vec<Label>;

/// A real-valued hypothesis: one value in [-1, 1] per domain point.
pub type RealHypothesis = Vec<f64>;

/// Tolerance used when snapping `2 / eta` to an integer and when comparing
/// errors against thresholds.
pub const EPS: f64 = 1e-9;

/// Ordered list of point identifiers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Domain {
    points: Vec<String>,
}

impl Domain {
    pub fn new(points: Vec<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Domain("domain must contain at least one point".into()));
        }
        let mut seen = HashSet::new();
        for p in &points {
            if !seen.insert(p.as_str()) {
                return Err(Error::Domain(format!("duplicate point identifier {p:?}")));
            }
        }
        Ok(Domain { points })
    }

    /// Domain `x1, ..., xn`.
    pub fn indexed(n: usize) -> Self {
        assert!(n > 0, "domain must be nonempty");
        Domain {
            points: (1..=n).map(|i| format!("x{i}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &str {
        &self.points[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p == id)
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }
}

impl TryFrom<Vec<String>> for Domain {
    type Error = Error;
    fn try_from(points: Vec<String>) -> Result<Self> {
        Domain::new(points)
    }
}

impl From<Domain> for Vec<String> {
    fn from(d: Domain) -> Self {
        d.points
    }
}

fn cmp_real(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Finite class of functions from the domain into [-1, 1].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RealClass {
    domain: Domain,
    hypotheses: Vec<RealHypothesis>,
}

impl RealClass {
    pub fn new(domain: Domain, mut hypotheses: Vec<RealHypothesis>) -> Result<Self> {
        for (i, h) in hypotheses.iter().enumerate() {
            if h.len() != domain.len() {
                return Err(Error::Domain(format!(
                    "hypothesis {i} has {} values, domain has {} points",
                    h.len(),
                    domain.len()
                )));
            }
            if let Some(v) = h.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("hypothesis {i} has value {v} outside [-1, 1]")));
            }
        }
        hypotheses.sort_by(|a, b| cmp_real(a, b));
        hypotheses.dedup_by(|a, b| cmp_real(a, b) == Ordering::Equal);
        Ok(RealClass { domain, hypotheses })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn hypotheses(&self) -> &[RealHypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

/// Finite class of functions from the domain into `1..=K`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct DiscreteClass {
    domain: Domain,
    k: Label,
    hypotheses: Vec<Hypothesis>,
}

impl DiscreteClass {
    pub fn new(domain: Domain, k: Label, mut hypotheses: Vec<Hypothesis>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("label count K must be positive".into()));
        }
        for (i, h) in hypotheses.iter().enumerate() {
            if h.len() != domain.len() {
                return Err(Error::Domain(format!(
                    "hypothesis {i} has {} labels, domain has {} points",
                    h.len(),
                    domain.len()
                )));
            }
            if let Some(v) = h.iter().find(|&&v| v == 0 || v > k) {
                return Err(Error::Domain(format!("hypothesis {i} has label {v} outside 1..={k}")));
            }
        }
        hypotheses.sort();
        hypotheses.dedup();
        Ok(DiscreteClass { domain, k, hypotheses })
    }

    /// Every function from the domain into `1..=k`.
    pub fn full(domain: Domain, k: Label) -> Self {
        let n = domain.len();
        let mut hypotheses = Vec::new();
        let mut current = vec![1 as Label; n];
        loop {
            hypotheses.push(current.clone());
            let mut i = n;
            loop {
                if i == 0 {
                    return DiscreteClass { domain, k, hypotheses };
                }
                i -= 1;
                if current[i] < k {
                    current[i] += 1;
                    break;
                }
                current[i] = 1;
            }
        }
    }

    pub fn empty(domain: Domain, k: Label) -> Self {
        DiscreteClass { domain, k, hypotheses: Vec::new() }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn k(&self) -> Label {
        self.k
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn contains(&self, h: &[Label]) -> bool {
        self.hypotheses.binary_search_by(|g| g.as_slice().cmp(h)).is_ok()
    }

    /// Subclass agreeing with every constraint in `a`.
    pub fn restrict(&self, a: &RestrictionSet) -> Result<Self> {
        for &(x, y) in a.iter() {
            if x >= self.domain.len() || y == 0 || y > self.k {
                return Err(Error::Domain(format!("constraint ({x}, {y}) outside domain or label range")));
            }
        }
        Ok(self.filter(|h| a.admits(h)))
    }

    pub fn filter(&self, mut keep: impl FnMut(&[Label]) -> bool) -> Self {
        DiscreteClass {
            domain: self.domain.clone(),
            k: self.k,
            hypotheses: self.hypotheses.iter().filter(|h| keep(h)).cloned().collect(),
        }
    }

    pub fn is_subset_of(&self, other: &DiscreteClass) -> bool {
        self.hypotheses.iter().all(|h| other.contains(h))
    }
}

/// Orders classes by descending size, then lexicographically by hypothesis
/// list. Used wherever a deterministic enumeration order is needed.
pub fn canonical_class_order(a: &DiscreteClass, b: &DiscreteClass) -> Ordering {
    b.len().cmp(&a.len()).then_with(|| a.hypotheses.cmp(&b.hypotheses))
}

/// A finite set of `(point index, label)` constraints.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RestrictionSet(BTreeSet<(usize, Label)>);

impl RestrictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, point: usize, label: Label) -> bool {
        self.0.insert((point, label))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, Label)> + '_ {
        self.0.iter()
    }

    pub fn union(&self, other: &RestrictionSet) -> RestrictionSet {
        RestrictionSet(self.0.union(&other.0).copied().collect())
    }

    pub fn contains(&self, point: usize, label: Label) -> bool {
        self.0.contains(&(point, label))
    }

    /// Whether `h` satisfies every constraint.
    pub fn admits(&self, h: &[Label]) -> bool {
        self.0.iter().all(|&(x, y)| h[x] == y)
    }

    /// False when some point carries two different labels.
    pub fn is_consistent(&self) -> bool {
        self.0.iter().zip(self.0.iter().skip(1)).all(|(a, b)| a.0 != b.0)
    }
}

impl FromIterator<(usize, Label)> for RestrictionSet {
    fn from_iter<I: IntoIterator<Item = (usize, Label)>>(iter: I) -> Self {
        RestrictionSet(iter.into_iter().collect())
    }
}

/// Values that can appear as hypothesis outputs or sample labels.
pub trait Value: Copy {
    fn as_f64(self) -> f64;
}

impl Value for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}

impl Value for Label {
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom<Y> {
    pub point: usize,
    pub label: Y,
    pub weight: f64,
}

/// Weighted finite set of labeled points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution<Y> {
    atoms: Vec<Atom<Y>>,
}

impl<Y: Value> EmpiricalDistribution<Y> {
    pub fn new(atoms: Vec<Atom<Y>>) -> Result<Self> {
        if atoms.iter().any(|a| !(a.weight >= 0.0)) {
            return Err(Error::Domain("atom weights must be nonnegative".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-12 * (atoms.len().max(1) as f64) {
            return Err(Error::Domain(format!("atom weights sum to {total}, expected 1")));
        }
        Ok(EmpiricalDistribution { atoms })
    }

    /// Uniform weights over the given samples.
    pub fn from_samples(samples: &[(usize, Y)]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical distribution needs at least one sample".into()));
        }
        let w = 1.0 / samples.len() as f64;
        Ok(EmpiricalDistribution {
            atoms: samples
                .iter()
                .map(|&(point, label)| Atom { point, label, weight: w })
                .collect(),
        })
    }

    pub fn atoms(&self) -> &[Atom<Y>] {
        &self.atoms
    }

    /// Checks that every atom lies inside a domain of `n` points.
    pub fn check_domain(&self, n: usize) -> Result<()> {
        match self.atoms.iter().find(|a| a.point >= n) {
            Some(a) => Err(Error::Domain(format!("atom at point {} outside domain of size {n}", a.point))),
            None => Ok(()),
        }
    }

    /// Expected absolute error `sum weight * |f(x) - y|`.
    pub fn abs_error<V: Value>(&self, f: &[V]) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * (f[a.point].as_f64() - a.label.as_f64()).abs())
            .sum()
    }
}

/// Checked version of [`EmpiricalDistribution::abs_error`].
pub fn abs_error<V: Value, Y: Value>(f: &[V], p: &EmpiricalDistribution<Y>) -> Result<f64> {
    p.check_domain(f.len())?;
    Ok(p.abs_error(f))
}

/// K = ceil(2 / eta), snapping values within [`EPS`] of an integer so that
/// scales such as 0.4 give K = 5 despite rounding.
pub fn label_count(eta: f64) -> Result<Label> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("scale eta = {eta} outside (0, 1)")));
    }
    let ratio = 2.0 / eta;
    let k = (ratio - EPS).ceil();
    if k > f64::from(Label::MAX) {
        return Err(Error::Domain(format!("scale eta = {eta} needs more than {} labels", Label::MAX)));
    }
    Ok(k as Label)
}

pub fn discretize_value(y: f64, eta: f64) -> Result<Label> {
    let k = label_count(eta)?;
    discretize_with(y, k)
}

/// Bucket of `y` among `k` equal-width buckets of [-1, 1].
pub fn discretize_with(y: f64, k: Label) -> Result<Label> {
    if !(-1.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!("value {y} outside [-1, 1]")));
    }
    if y == 1.0 {
        return Ok(k);
    }
    let bucket = ((y + 1.0) / 2.0 * f64::from(k)).floor() as Label;
    Ok((1 + bucket).min(k))
}

pub fn discretize_class(h: &RealClass, eta: f64) -> Result<DiscreteClass> {
    let k = label_count(eta)?;
    let hyps = h
        .hypotheses()
        .iter()
        .map(|f| f.iter().map(|&y| discretize_with(y, k)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    DiscreteClass::new(h.domain().clone(), k, hyps)
}

pub fn discretize_dataset(data: &[(usize, f64)], eta: f64) -> Result<Vec<(usize, Label)>> {
    let k = label_count(eta)?;
    data.iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            discretize_with(y, k)
                .map(|label| (x, label))
                .map_err(|e| Error::Domain(format!("sample {i}: {e}")))
        })
        .collect()
}

/// Discretizes every atom label, merging nothing.
pub fn discretize_distribution(
    p: &EmpiricalDistribution<f64>,
    eta: f64,
) -> Result<EmpiricalDistribution<Label>> {
    let k = label_count(eta)?;
    let atoms = p
        .atoms()
        .iter()
        .map(|a| {
            Ok(Atom {
                point: a.point,
                label: discretize_with(a.label, k)?,
                weight: a.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalDistribution { atoms })
}

/// Maps label `k` back to `-1 + 2 (k - 1) / K`.
pub fn undisc_hypothesis(g: &[Label], k: Label) -> Result<RealHypothesis> {
    g.iter()
        .map(|&v| {
            if v == 0 || v > k {
                Err(Error::Domain(format!("label {v} outside 1..={k}")))
            } else {
                Ok(-1.0 + 2.0 * f64::from(v - 1) / f64::from(k))
            }
        })
        .collect()
}

/// All nonempty classes of the form `F|S`, in canonical order.
pub fn enumerate_restriction_subclasses(f: &DiscreteClass) -> Vec<DiscreteClass> {
    if f.is_empty() {
        return Vec::new();
    }
    let mut seen: HashSet<Vec<Hypothesis>> = HashSet::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(f.hypotheses.clone());
    queue.push_back(f.clone());
    while let Some(g) = queue.pop_front() {
        for x in 0..g.domain.len() {
            for y in 1..=g.k {
                let sub = g.filter(|h| h[x] == y);
                if !sub.is_empty() && seen.insert(sub.hypotheses.clone()) {
                    queue.push_back(sub);
                }
            }
        }
        out.push(g);
    }
    out.sort_by(canonical_class_order);
    out
}
