//! Filtering of irreducible subclasses and the SOA filter that maps a
//! candidate hypothesis to a set of filtered representatives.
//!
//! [`filter_step`] groups every irreducible restriction subclass under a
//! representative whose SOA hypothesis agrees with it on a certifying set of
//! points. [`SoaFilter`] then explores restriction sets that pull the SOA
//! hypothesis towards a target, collecting the representatives it reaches.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use indexmap::{IndexMap, IndexSet};
use serde::Serialize;

use crate::class::{DiscreteClass, Hypothesis, Label, RestrictionSet};
use crate::error::{Error, Result};
use crate::members::Members;
use crate::tree::AugmentedTree;
use crate::universe::Universe;

/// Irreducibility requirements `ell(r, t) = ell_bar * (r + 2)^t` together
/// with the ranges the filter runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LadderSchedule {
    pub ell_bar: u64,
    pub r_max: usize,
    pub tau_max: u64,
    pub chi: u64,
}

impl LadderSchedule {
    /// The schedule used by the full learner for a class with sfat2 `d`.
    pub fn standard(ell_bar: u64, d: usize) -> Self {
        LadderSchedule { ell_bar, r_max: d + 1, tau_max: 12 * (d as u64 + 1), chi: 5 }
    }

    /// Saturates at `u64::MAX`.
    pub fn ell(&self, r: usize, t: usize) -> u64 {
        let base = r as u64 + 2;
        let mut acc = self.ell_bar;
        for _ in 0..t {
            acc = acc.saturating_mul(base);
        }
        acc
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.ell_bar == 0 || self.chi == 0 {
            return Err(Error::Config("ell_bar and chi must be positive".into()));
        }
        if self.r_max == 0 || self.r_max % (d + 1) != 0 || self.tau_max == 0 || self.tau_max % (d as u64 + 1) != 0 {
            return Err(Error::Config(format!(
                "r_max = {} and tau_max = {} must be positive multiples of sfat2 + 1 = {}",
                self.r_max,
                self.tau_max,
                d + 1
            )));
        }
        Ok(())
    }
}

/// Output of [`filter_step`], in terms of member sets of the base class.
#[derive(Clone, Debug)]
pub struct FilteredSets {
    /// `levels[b]`: filtered classes with sfat2 `b`, in insertion order.
    pub levels: Vec<Vec<Members>>,
    /// Representative of every processed class, in processing order.
    pub rep: IndexMap<Members, Members>,
    /// Ladder row `r` at which each processed class was handled.
    pub row: HashMap<Members, usize>,
}

impl FilteredSets {
    pub fn is_filtered(&self, m: &Members, sfat: i32) -> bool {
        usize::try_from(sfat).is_ok_and(|b| self.levels.get(b).is_some_and(|l| l.contains(m)))
    }
}

/// Pairs `(x, soa_a(x))` at points where the two hypotheses agree.
fn agreement(a: &[Label], b: &[Label]) -> Vec<(usize, Label)> {
    a.iter().zip(b).enumerate().filter(|(_, (p, q))| p == q).map(|(x, (&p, _))| (x, p)).collect()
}

/// First subset of `pool` (by size, then lexicographic position) with at
/// most `max_len` elements whose restriction of the base class has sfat2
/// exactly `target`.
fn certifying_subset(u: &Universe, pool: &[(usize, Label)], max_len: u64, target: i32) -> Option<RestrictionSet> {
    let all = u.full();
    let limit = pool.len().min(usize::try_from(max_len).unwrap_or(usize::MAX));
    for size in 0..=limit {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let a: RestrictionSet = idx.iter().map(|&i| pool[i]).collect();
            if u.sfat(&u.restrict(&all, &a)) == target {
                return Some(a);
            }
            // Advance to the next combination in lexicographic order.
            let Some(pos) = (0..size).rev().find(|&i| idx[i] != i + pool.len() - size) else { break };
            idx[pos] += 1;
            for i in pos + 1..size {
                idx[i] = idx[i - 1] + 1;
            }
        }
    }
    None
}

pub fn filter_step(f: &DiscreteClass, schedule: &LadderSchedule) -> Result<FilteredSets> {
    let u = Universe::new(f.clone());
    u.filter_step(schedule)
}

impl Universe {
    pub fn filter_step(&self, schedule: &LadderSchedule) -> Result<FilteredSets> {
        let d = self.sfat(&self.full());
        if d < 0 {
            return Ok(FilteredSets { levels: Vec::new(), rep: IndexMap::new(), row: HashMap::new() });
        }
        let du = d as usize;
        let subclasses = self.restriction_subclasses();
        let mut levels = vec![Vec::new(); du + 1];
        let mut rep = IndexMap::new();
        let mut row = HashMap::new();
        let mut soas: HashMap<Members, Hypothesis> = HashMap::new();
        for t in 0..=du {
            let b = (d - t as i32) as usize;
            let at_level: Vec<&Members> = subclasses.iter().filter(|h| self.sfat(h) == b as i32).collect();
            for r in (0..=schedule.r_max).rev() {
                let need = schedule.ell(r, t);
                let above = (r < schedule.r_max).then(|| schedule.ell(r + 1, t));
                for &h in &at_level {
                    let level = self.level(h);
                    if !level.at_least(need) || above.is_some_and(|a| level.at_least(a)) {
                        continue;
                    }
                    let soa_h = self.soa(h)?;
                    let mut chosen = None;
                    for l in &levels[b] {
                        let soa_l = &soas[l];
                        let pool = agreement(soa_l, &soa_h);
                        if certifying_subset(self, &pool, need - 1, b as i32).is_some() {
                            chosen = Some(l.clone());
                            break;
                        }
                    }
                    let target = chosen.unwrap_or_else(|| {
                        levels[b].push(h.clone());
                        h.clone()
                    });
                    soas.insert(h.clone(), soa_h);
                    rep.insert(h.clone(), target);
                    row.insert(h.clone(), r);
                }
            }
        }
        Ok(FilteredSets { levels, rep, row })
    }
}

/// Output of the SOA filter: distinct filtered classes in the order they were
/// reached.
#[derive(Clone, Debug, Default)]
pub struct RepSet {
    pub members: IndexSet<Members>,
}

impl RepSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, m: &Members) -> bool {
        self.members.contains(m)
    }

    /// Members in canonical class order.
    pub fn sorted(&self) -> Vec<Members> {
        let mut v: Vec<Members> = self.members.iter().cloned().collect();
        v.sort_by(|a, b| a.canonical_cmp(b));
        v
    }
}

/// Restriction sets visited, keyed by `(j, s)`.
#[derive(Clone, Debug, Default)]
pub struct FilterTrace {
    pub queues: Vec<(usize, usize, Vec<RestrictionSet>)>,
}

/// Reusable state for running the SOA filter against many targets on the
/// same class and schedule.
pub struct SoaFilter {
    u: Rc<Universe>,
    schedule: LadderSchedule,
    d: i32,
    filtered: FilteredSets,
    soas: HashMap<Members, Hypothesis>,
    trees: RefCell<HashMap<(Members, usize, Label, usize), AugmentedTree>>,
}

impl SoaFilter {
    pub fn new(u: Rc<Universe>, schedule: LadderSchedule) -> Result<Self> {
        let d = u.sfat(&u.full());
        if d < 0 {
            return Err(Error::Precondition("SOA filter of the empty class".into()));
        }
        schedule.check(d as usize)?;
        let filtered = u.filter_step(&schedule)?;
        let soas = filtered
            .levels
            .iter()
            .flatten()
            .map(|l| Ok((l.clone(), u.soa(l)?)))
            .collect::<Result<_>>()?;
        Ok(SoaFilter { u, schedule, d, filtered, soas, trees: RefCell::new(HashMap::new()) })
    }

    pub fn universe(&self) -> &Universe {
        &self.u
    }

    pub fn filtered(&self) -> &FilteredSets {
        &self.filtered
    }

    pub fn schedule(&self) -> &LadderSchedule {
        &self.schedule
    }

    pub fn soa_of(&self, l: &Members) -> Option<&Hypothesis> {
        self.soas.get(l)
    }

    fn reducing_tree(&self, h: &Members, pair: (usize, Label), r: usize, t_a: usize) -> Result<AugmentedTree> {
        let key = (h.clone(), pair.0, pair.1, r);
        if let Some(tree) = self.trees.borrow().get(&key) {
            return Ok(tree.clone());
        }
        let seq: Vec<u64> = (0..=(self.d as usize - t_a)).map(|t| self.schedule.ell(r, t + t_a)).collect();
        let tree = self.u.reducing_tree(h, pair, &seq)?;
        self.trees.borrow_mut().insert(key, tree.clone());
        Ok(tree)
    }

    pub fn run(&self, g_hat: &[Label]) -> Result<RepSet> {
        self.run_traced(g_hat).map(|(r, _)| r)
    }

    pub fn run_traced(&self, g_hat: &[Label]) -> Result<(RepSet, FilterTrace)> {
        let u = &*self.u;
        if g_hat.len() != u.points() || g_hat.iter().any(|&v| v == 0 || v > u.k()) {
            return Err(Error::Domain("target hypothesis outside the label range or domain".into()));
        }
        let d = self.d as usize;
        let r0 = self.schedule.r_max / (d + 1);
        let tau0 = self.schedule.tau_max / (d as u64 + 1);
        let all = u.full();
        let mut reps = IndexSet::new();
        let mut trace = FilterTrace::default();
        for j in 0..=d {
            let r = self.schedule.r_max - j * r0 - 1;
            let tau = j as u64 * tau0 + 2 + self.schedule.chi;
            let mut queue: IndexSet<RestrictionSet> = IndexSet::from([RestrictionSet::new()]);
            for s in 0..=d {
                trace.queues.push((j, s, queue.iter().cloned().collect()));
                let mut next = IndexSet::new();
                for a in &queue {
                    let h = u.restrict(&all, a);
                    if h.is_empty() {
                        continue;
                    }
                    let soa_h = if u.is_irreducible(&h, 1) { Some(u.soa(&h)?) } else { None };
                    let x_a = match &soa_h {
                        Some(soa_h) => {
                            if sup_distance(soa_h, g_hat) <= tau {
                                let t = d - u.sfat(&h) as usize;
                                if let Some(l) = self.matching_filtered(a, r, t) {
                                    reps.insert(l);
                                }
                                continue;
                            }
                            (0..u.points())
                                .find(|&x| soa_h[x].abs_diff(g_hat[x]) as u64 > tau)
                                .expect("a far coordinate exists")
                        }
                        // Only the unrestricted class can fail to be
                        // irreducible; split it at a point where every
                        // label lowers sfat2.
                        None => u.reducing_points(&h)[0],
                    };
                    let t_a = d - u.sfat(&h) as usize;
                    let k = u64::from(g_hat[x_a]);
                    let lo = (k + 1).saturating_sub(tau).max(1);
                    let hi = (k + tau - 1).min(u64::from(u.k()));
                    for y in lo..=hi {
                        let tree = self.reducing_tree(&h, (x_a, y as Label), r, t_a)?;
                        for v in tree.leaves() {
                            let av = tree.ancestors(v);
                            let merged = a.union(&av);
                            if u.restrict(&all, &merged).is_empty() {
                                continue;
                            }
                            if av.iter().all(|&(x, y)| u64::from(g_hat[x].abs_diff(y)) < tau) {
                                next.insert(merged);
                            }
                        }
                    }
                }
                queue = next;
            }
        }
        reps.retain(|l| sup_distance(&self.soas[l], g_hat) <= self.schedule.tau_max);
        Ok((RepSet { members: reps }, trace))
    }

    /// Filtered class at sfat2 level `d - t` meeting the row-`r`
    /// requirement whose SOA hypothesis satisfies every constraint of `a`;
    /// the first in canonical order when several do.
    fn matching_filtered(&self, a: &RestrictionSet, r: usize, t: usize) -> Option<Members> {
        let need = self.schedule.ell(r, t);
        let mut hits: Vec<&Members> = self.filtered.levels[self.d as usize - t]
            .iter()
            .filter(|l| self.u.level(l).at_least(need))
            .filter(|l| a.iter().all(|&(x, y)| self.soas[*l][x] == y))
            .collect();
        hits.sort_by(|p, q| p.canonical_cmp(q));
        hits.first().map(|l| (*l).clone())
    }
}

pub fn sup_distance(a: &[Label], b: &[Label]) -> u64 {
    a.iter().zip(b).map(|(p, q)| u64::from(p.abs_diff(*q))).max().unwrap_or(0)
}

pub fn soa_filter(f: &DiscreteClass, g_hat: &[Label], schedule: &LadderSchedule) -> Result<RepSet> {
    SoaFilter::new(Rc::new(Universe::new(f.clone())), *schedule)?.run(g_hat)
}
