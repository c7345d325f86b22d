//! Exhaustive reference implementations for tiny instances.
//!
//! The dimension oracles quantify over explicit trees rather than reusing
//! the memoized recursions of [`Universe`], so agreement between the two is
//! meaningful. The stability targets enumerate their defining sets directly.

use std::collections::HashMap;

use serde::Serialize;

use crate::class::{DiscreteClass, EmpiricalDistribution, Hypothesis, Label, RestrictionSet};
use crate::error::{Error, Result};
use crate::filter::{sup_distance, LadderSchedule};
use crate::members::Members;
use crate::reduce_tree::low_error_members;
use crate::universe::Universe;

const MAX_POINTS: usize = 3;
const MAX_LABELS: Label = 4;
const MAX_SFAT_DEPTH: usize = 3;
const MAX_IRRED_DEPTH: u64 = 2;
const MAX_RESTRICTION_SETS: f64 = 1e5;

fn guard(f: &DiscreteClass) -> Result<()> {
    if f.domain().len() > MAX_POINTS || f.k() > MAX_LABELS {
        return Err(Error::TooLarge(format!(
            "oracles accept at most {MAX_POINTS} points and {MAX_LABELS} labels, got {} and {}",
            f.domain().len(),
            f.k()
        )));
    }
    Ok(())
}

/// Per-point masks over the (at most 64) hypotheses of a guarded class.
struct Masks {
    /// `at[x][v]`: hypotheses with f(x) = v.
    at: Vec<Vec<u64>>,
    /// Realizable split values at each point, doubled to stay integral.
    splits: Vec<Vec<u32>>,
    all: u64,
}

impl Masks {
    fn new(f: &DiscreteClass) -> Self {
        let k = usize::from(f.k());
        let mut at = vec![vec![0u64; k + 1]; f.domain().len()];
        for (i, h) in f.hypotheses().iter().enumerate() {
            for (x, &v) in h.iter().enumerate() {
                at[x][usize::from(v)] |= 1 << i;
            }
        }
        let splits = at
            .iter()
            .map(|row| {
                let present: Vec<u32> = (1..=k).filter(|&v| row[v] != 0).map(|v| v as u32).collect();
                let mut s: Vec<u32> = present
                    .iter()
                    .flat_map(|&a| present.iter().filter(move |&&b| b >= a + 2).map(move |&b| a + b))
                    .collect();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        let n = f.len();
        let all = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Masks { at, splits, all }
    }

    /// Hypotheses with `f(x) >= s + 1` and `f(x) <= s - 1` for `s = twice / 2`.
    fn sides(&self, x: usize, twice: u32) -> (u64, u64) {
        let mut up = 0;
        let mut down = 0;
        for (v, &m) in self.at[x].iter().enumerate().skip(1) {
            let v2 = 2 * v as u32;
            if v2 >= twice + 2 {
                up |= m;
            } else if v2 + 2 <= twice {
                down |= m;
            }
        }
        (up, down)
    }
}

/// Whether some complete binary tree of the given depth is shattered by
/// `set`. Nodes are assigned in level order; a partial assignment survives
/// only while every root path built so far is realized by some hypothesis.
fn shatters_depth(m: &Masks, set: u64, depth: usize) -> bool {
    if depth == 0 {
        return set != 0;
    }
    let internal = (1usize << depth) - 1;
    let mut node_sets = vec![0u64; 2 * internal + 1];
    node_sets[0] = set;
    let choices: Vec<(usize, u32)> =
        (0..m.at.len()).flat_map(|x| m.splits[x].iter().map(move |&s| (x, s))).collect();
    fn assign(m: &Masks, choices: &[(usize, u32)], nodes: &mut [u64], i: usize, internal: usize) -> bool {
        if i == internal {
            return true;
        }
        for &(x, s) in choices {
            let (up, down) = m.sides(x, s);
            let a = nodes[i] & up;
            let b = nodes[i] & down;
            if a == 0 || b == 0 {
                continue;
            }
            nodes[2 * i + 1] = a;
            nodes[2 * i + 2] = b;
            if assign(m, choices, nodes, i + 1, internal) {
                return true;
            }
        }
        false
    }
    assign(m, &choices, &mut node_sets, 0, internal)
}

fn sfat_of(m: &Masks, set: u64, cap: usize) -> i32 {
    if set == 0 {
        return -1;
    }
    (1..=cap).take_while(|&d| shatters_depth(m, set, d)).last().map_or(0, |d| d as i32)
}

/// sfat2 by enumerating shattered trees of depth up to `depth_cap`.
pub fn sfat2_bruteforce(f: &DiscreteClass, depth_cap: usize) -> Result<i32> {
    guard(f)?;
    if depth_cap > MAX_SFAT_DEPTH {
        return Err(Error::TooLarge(format!("depth cap {depth_cap} above {MAX_SFAT_DEPTH}")));
    }
    let m = Masks::new(f);
    Ok(sfat_of(&m, m.all, depth_cap))
}

/// A K-ary tree shape with points at internal nodes.
#[derive(Clone, Debug)]
enum Shape {
    Leaf,
    Node(usize, Vec<Shape>),
}

fn all_shapes(points: usize, k: usize, depth: u64) -> Vec<Shape> {
    let mut out = vec![Shape::Leaf];
    if depth == 0 {
        return out;
    }
    let below = all_shapes(points, k, depth - 1);
    for x in 0..points {
        // Every assignment of a sub-shape to each of the K children.
        let mut combos: Vec<Vec<Shape>> = vec![Vec::new()];
        for _ in 0..k {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    below.iter().map(move |s| {
                        let mut c = c.clone();
                        c.push(s.clone());
                        c
                    })
                })
                .collect();
        }
        out.extend(combos.into_iter().map(|c| Shape::Node(x, c)));
    }
    out
}

/// Whether some leaf of `shape` keeps sfat2 at `d`.
fn has_keeping_leaf(m: &Masks, shape: &Shape, set: u64, d: i32, memo: &mut HashMap<u64, i32>) -> bool {
    match shape {
        Shape::Leaf => *memo.entry(set).or_insert_with(|| sfat_of(m, set, MAX_SFAT_DEPTH)) == d,
        Shape::Node(x, kids) => kids
            .iter()
            .enumerate()
            .any(|(i, kid)| has_keeping_leaf(m, kid, set & m.at[*x][i + 1], d, memo)),
    }
}

/// l-irreducibility by checking every K-ary tree of depth at most `l`.
pub fn irreducible_bruteforce(f: &DiscreteClass, l: u64) -> Result<bool> {
    guard(f)?;
    if l > MAX_IRRED_DEPTH {
        return Err(Error::TooLarge(format!("tree depth {l} above {MAX_IRRED_DEPTH}")));
    }
    if f.is_empty() {
        return Ok(true);
    }
    let m = Masks::new(f);
    let d = sfat_of(&m, m.all, MAX_SFAT_DEPTH);
    let mut memo = HashMap::new();
    Ok(all_shapes(f.domain().len(), usize::from(f.k()), l)
        .iter()
        .all(|s| has_keeping_leaf(&m, s, m.all, d, &mut memo)))
}

/// Consistent restriction sets (one label per point) with at most `max_len`
/// pairs, ordered by size and then lexicographically.
fn small_restrictions(points: usize, k: Label, max_len: usize) -> Vec<RestrictionSet> {
    let mut out = vec![RestrictionSet::new()];
    let mut frontier = vec![(RestrictionSet::new(), 0usize)];
    for _ in 0..max_len.min(points) {
        let mut next = Vec::new();
        for (a, from) in &frontier {
            for x in *from..points {
                for v in 1..=k {
                    let mut b = a.clone();
                    b.insert(x, v);
                    next.push((b, x + 1));
                }
            }
        }
        let mut layer: Vec<RestrictionSet> = next.iter().map(|(a, _)| a.clone()).collect();
        layer.sort();
        out.extend(layer);
        frontier = next;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakStabilityTarget {
    pub alpha: f64,
    pub t: usize,
    /// Restriction sets meeting the irreducibility and sfat2 conditions.
    pub members: Vec<RestrictionSet>,
    pub s_star: Option<RestrictionSet>,
    pub q_star: Option<i32>,
    pub sigma_star: Option<Hypothesis>,
}

/// Enumerates the restriction sets of size at most `ell_prime * (2^t - 1)`
/// whose low-error classes at `alpha -/+ alpha_delta / 3` are nonempty,
/// irreducible and of equal sfat2, and picks the one maximizing sfat2 at
/// `alpha` (smallest, then lexicographically first, on ties).
pub fn weak_stability_target(
    f: &DiscreteClass,
    p: &EmpiricalDistribution<Label>,
    alpha: f64,
    alpha_delta: f64,
    t: usize,
    ell_prime: u64,
) -> Result<WeakStabilityTarget> {
    let sets = (f64::from(f.k()) + 1.0).powi(f.domain().len() as i32);
    if sets > MAX_RESTRICTION_SETS {
        return Err(Error::TooLarge(format!(
            "{sets} restriction sets exceed the enumeration limit {MAX_RESTRICTION_SETS}"
        )));
    }
    let u = Universe::new(f.clone());
    let errors: Vec<f64> = f.hypotheses().iter().map(|h| p.abs_error(h)).collect();
    p.check_domain(f.domain().len())?;
    let ell_t = ell_prime.saturating_mul(1u64 << t.min(62));
    let max_len = usize::try_from(ell_t - ell_prime).unwrap_or(usize::MAX);
    let lo = low_error_members(&u, &errors, alpha - alpha_delta / 3.0);
    let hi = low_error_members(&u, &errors, alpha + alpha_delta / 3.0);
    let mid = low_error_members(&u, &errors, alpha);
    let mut members = Vec::new();
    let mut best: Option<(i32, RestrictionSet)> = None;
    for s in small_restrictions(f.domain().len(), f.k(), max_len) {
        let a = u.restrict(&lo, &s);
        if a.is_empty() || !u.is_irreducible(&a, ell_t) || u.sfat(&a) != u.sfat(&u.restrict(&hi, &s)) {
            continue;
        }
        let q = u.sfat(&u.restrict(&mid, &s));
        if best.as_ref().is_none_or(|(b, _)| q > *b) {
            best = Some((q, s.clone()));
        }
        members.push(s);
    }
    let sigma_star = best.as_ref().map(|(_, s)| u.soa(&u.restrict(&mid, s))).transpose()?;
    Ok(WeakStabilityTarget {
        alpha,
        t,
        members,
        q_star: best.as_ref().map(|(q, _)| *q),
        s_star: best.map(|(_, s)| s),
        sigma_star,
    })
}

#[derive(Clone, Debug)]
pub struct StrongStabilityTarget {
    /// `mu[r][tau]` for `r` in `0..=r_max` and `tau` in `0..=tau_max + 2 + 2 chi`;
    /// -1 where no class qualifies.
    pub mu: Vec<Vec<i32>>,
    pub j_star: usize,
    pub r_star: usize,
    pub tau_star: u64,
    pub h_star: Members,
    pub l_star: Members,
}

/// Builds the table of largest sfat2 among irreducible restriction
/// subclasses close to `soa(G)`, finds the stable step of the ladder, and
/// returns the representative the filter assigns to the maximizing class.
pub fn strong_stability_target(u: &Universe, g: &Members, schedule: &LadderSchedule) -> Result<StrongStabilityTarget> {
    let d = u.sfat(&u.full());
    if g.is_empty() || d < 0 {
        return Err(Error::Precondition("target class must be nonempty".into()));
    }
    let du = d as usize;
    let need = schedule.ell(schedule.r_max, du);
    if !u.is_irreducible(g, need) {
        return Err(Error::Precondition(format!("target class is not {need}-irreducible")));
    }
    let soa_g = u.soa(g)?;
    let step = 2 + 2 * schedule.chi;
    let tau_top = schedule.tau_max.max(step * (du as u64 + 1));
    let subclasses: Vec<(Members, i32, Hypothesis)> = u
        .restriction_subclasses()
        .into_iter()
        .filter(|h| u.is_irreducible(h, 1))
        .map(|h| {
            let s = u.sfat(&h);
            let soa = u.soa(&h)?;
            Ok((h, s, soa))
        })
        .collect::<Result<_>>()?;
    let qualifies = |r: usize, tau: u64, (h, s, soa): &(Members, i32, Hypothesis)| {
        u.level(h).at_least(schedule.ell(r, (d - s) as usize)) && sup_distance(soa, &soa_g) <= tau
    };
    let mu: Vec<Vec<i32>> = (0..=schedule.r_max)
        .map(|r| {
            (0..=tau_top)
                .map(|tau| subclasses.iter().filter(|c| qualifies(r, tau, c)).map(|c| c.1).max().unwrap_or(-1))
                .collect()
        })
        .collect();
    let j_star = (0..=du)
        .find(|&j| {
            let r = schedule.r_max - j;
            let tau = step * j as u64;
            r >= 1 && mu[r][tau as usize] == mu[r - 1][(tau + step) as usize]
        })
        .ok_or_else(|| Error::Precondition("no stable step in the ladder".into()))?;
    let r_star = schedule.r_max - j_star;
    let tau_star = step * j_star as u64;
    let target = mu[r_star][tau_star as usize];
    let h_star = subclasses
        .iter()
        .filter(|c| c.1 == target && qualifies(r_star, tau_star, c))
        .map(|c| c.0.clone())
        .min_by(|a, b| a.canonical_cmp(b))
        .ok_or_else(|| Error::Precondition("no class attains the table maximum".into()))?;
    let filtered = u.filter_step(schedule)?;
    let l_star = filtered
        .rep
        .get(&h_star)
        .cloned()
        .ok_or_else(|| Error::Precondition("maximizer was not processed by the filter step".into()))?;
    Ok(StrongStabilityTarget { mu, j_star, r_star, tau_star, h_star, l_star })
}

/// One disagreement between an oracle and the library.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Disagreement {
    pub k: Label,
    pub hypotheses: Vec<Hypothesis>,
    /// `"sfat2"` or `"irreducible(l)"`.
    pub quantity: String,
    pub library: String,
    pub oracle: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AgreementReport {
    pub exhaustive_classes: usize,
    pub random_classes: usize,
    pub comparisons: usize,
    pub disagreements: Vec<Disagreement>,
}

fn compare_class(f: &DiscreteClass, report: &mut AgreementReport) -> Result<()> {
    let u = Universe::new(f.clone());
    let all = u.full();
    let mut record = |quantity: String, library: String, oracle: String| {
        report.comparisons += 1;
        if library != oracle {
            report.disagreements.push(Disagreement {
                k: f.k(),
                hypotheses: f.hypotheses().to_vec(),
                quantity,
                library,
                oracle,
            });
        }
    };
    record("sfat2".into(), u.sfat(&all).to_string(), sfat2_bruteforce(f, MAX_SFAT_DEPTH)?.to_string());
    for l in 0..=MAX_IRRED_DEPTH {
        record(
            format!("irreducible({l})"),
            u.is_irreducible(&all, l).to_string(),
            irreducible_bruteforce(f, l)?.to_string(),
        );
    }
    Ok(())
}

/// Compares the library against the oracles on every class over at most two
/// points and three labels, then on `random` classes over three points and
/// four labels whose member density is itself drawn uniformly.
pub fn agreement_grid<R: rand::Rng + ?Sized>(random: usize, rng: &mut R) -> Result<AgreementReport> {
    let mut report = AgreementReport::default();
    for n in 1..=2 {
        for k in 1..=3 {
            let full = DiscreteClass::full(crate::class::Domain::indexed(n), k);
            let total = full.len();
            for mask in 0u32..1 << total {
                let keep: Vec<Hypothesis> =
                    (0..total).filter(|i| mask >> i & 1 == 1).map(|i| full.hypotheses()[i].clone()).collect();
                compare_class(&DiscreteClass::new(full.domain().clone(), k, keep)?, &mut report)?;
                report.exhaustive_classes += 1;
            }
        }
    }
    let full = DiscreteClass::full(crate::class::Domain::indexed(3), 4);
    for _ in 0..random {
        let density: f64 = rng.gen();
        let keep: Vec<Hypothesis> = full.hypotheses().iter().filter(|_| rng.gen_bool(density)).cloned().collect();
        compare_class(&DiscreteClass::new(full.domain().clone(), 4, keep)?, &mut report)?;
        report.random_classes += 1;
    }
    Ok(report)
}
