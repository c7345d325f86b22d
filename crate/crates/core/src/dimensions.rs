//! Sequential and i.i.d. fat-shattering dimensions, plus shattering
//! certificates for discrete classes.
//!
//! Margin conventions: the sequential dimension at scale `alpha` asks for a
//! margin of `alpha / 2` on each side of the witness, while the i.i.d.
//! dimension asks for a margin of `alpha`.

use std::collections::HashMap;

use serde::Serialize;

use crate::class::{DiscreteClass, RealClass};
use crate::error::{Error, Result};
use crate::members::Members;
use crate::universe::Universe;

/// Slack for floating-point margin comparisons.
const TOL: f64 = 1e-9;

/// sfat at scale 2 of a discrete class; -1 for the empty class.
pub fn sfat2(f: &DiscreteClass) -> i32 {
    let u = Universe::new(f.clone());
    u.sfat(&u.full())
}

/// Complete binary trees stored in heap order: node `i` has children
/// `2i + 1` (edge 1, "above the witness") and `2i + 2` (edge 2, "below").
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShatteringCertificate {
    pub depth: usize,
    pub points: Vec<usize>,
    pub witnesses: Vec<f64>,
}

impl ShatteringCertificate {
    fn blank(depth: usize) -> Self {
        let nodes = (1usize << depth) - 1;
        ShatteringCertificate {
            depth,
            points: vec![0; nodes],
            witnesses: vec![0.0; nodes],
        }
    }
}

/// A certificate of depth sfat2(F) built from the recursion's choices.
pub fn extract_sfat_certificate(f: &DiscreteClass) -> Result<ShatteringCertificate> {
    let u = Universe::new(f.clone());
    let all = u.full();
    let d = u.sfat(&all);
    if d <= 0 {
        return Err(Error::NoCertificate(format!("sfat2 is {d}")));
    }
    let mut cert = ShatteringCertificate::blank(d as usize);
    fill_certificate(&u, &all, d as usize, 0, &mut cert);
    Ok(cert)
}

fn fill_certificate(u: &Universe, m: &Members, depth: usize, node: usize, cert: &mut ShatteringCertificate) {
    if depth == 0 {
        return;
    }
    let need = depth as i32 - 1;
    for x in 0..u.points() {
        for s in 2..u.k() {
            let up: Members = (s + 1..=u.k()).fold(u.none(), |acc, v| acc.or(&u.restrict_one(m, x, v)));
            let down: Members = (1..s).fold(u.none(), |acc, v| acc.or(&u.restrict_one(m, x, v)));
            if u.sfat(&up) >= need && u.sfat(&down) >= need {
                cert.points[node] = x;
                cert.witnesses[node] = f64::from(s);
                fill_certificate(u, &up, depth - 1, 2 * node + 1, cert);
                fill_certificate(u, &down, depth - 1, 2 * node + 2, cert);
                return;
            }
        }
    }
    unreachable!("sfat2 guarantees a split of the required depth");
}

/// Checks every root-to-leaf path of the certificate against the margin-1
/// condition.
pub fn verify_certificate(f: &DiscreteClass, cert: &ShatteringCertificate) -> Result<bool> {
    let nodes = 1usize
        .checked_shl(cert.depth as u32)
        .ok_or_else(|| Error::Format("certificate depth too large".into()))?
        - 1;
    if cert.points.len() != nodes || cert.witnesses.len() != nodes {
        return Err(Error::Format(format!(
            "certificate of depth {} needs {nodes} nodes in each tree",
            cert.depth
        )));
    }
    if let Some(&x) = cert.points.iter().find(|&&x| x >= f.domain().len()) {
        return Err(Error::Format(format!("certificate point {x} outside domain")));
    }
    for path in 0..(1usize << cert.depth) {
        let realized = f.hypotheses().iter().any(|h| {
            let mut node = 0;
            (0..cert.depth).all(|level| {
                let up = path >> (cert.depth - 1 - level) & 1 == 0;
                let diff = f64::from(h[cert.points[node]]) - cert.witnesses[node];
                let ok = if up { diff >= 1.0 - TOL } else { -diff >= 1.0 - TOL };
                node = 2 * node + if up { 1 } else { 2 };
                ok
            })
        });
        if !realized {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Candidate witnesses at one point: midpoints of value pairs at least
/// `gap` apart.
fn midpoints(values: impl Iterator<Item = f64>, gap: f64) -> Vec<f64> {
    let mut vals: Vec<f64> = values.collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut out = Vec::new();
    for (i, &a) in vals.iter().enumerate() {
        for &b in &vals[i + 1..] {
            if b - a >= gap - TOL {
                out.push((a + b) / 2.0);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

struct SequentialSearch<'a> {
    rows: &'a [Vec<f64>],
    half_margin: f64,
    witnesses: Vec<Vec<f64>>,
    memo: HashMap<Members, i32>,
}

impl SequentialSearch<'_> {
    fn run(&mut self, m: &Members) -> i32 {
        if m.is_empty() {
            return -1;
        }
        if let Some(&d) = self.memo.get(m) {
            return d;
        }
        let n = self.rows.len();
        let mut best = 0;
        for x in 0..self.witnesses.len() {
            for wi in 0..self.witnesses[x].len() {
                let s = self.witnesses[x][wi];
                let mut up = Members::empty(n);
                let mut down = Members::empty(n);
                for i in m.iter() {
                    let v = self.rows[i][x];
                    if v - s >= self.half_margin - TOL {
                        up.insert(i);
                    } else if s - v >= self.half_margin - TOL {
                        down.insert(i);
                    }
                }
                if up.is_empty() || down.is_empty() {
                    continue;
                }
                let lo = self.run(&up).min(self.run(&down));
                best = best.max(1 + lo);
            }
        }
        self.memo.insert(m.clone(), best);
        best
    }
}

/// Sequential fat-shattering dimension at scale `alpha` (margin `alpha/2`).
pub fn sfat_alpha(h: &RealClass, alpha: f64) -> i32 {
    sequential_dimension(h.hypotheses(), h.domain().len(), alpha)
}

pub(crate) fn sequential_dimension(rows: &[Vec<f64>], points: usize, alpha: f64) -> i32 {
    assert!(alpha > 0.0, "scale must be positive");
    let witnesses = (0..points)
        .map(|x| midpoints(rows.iter().map(|r| r[x]), alpha))
        .collect();
    let mut search = SequentialSearch {
        rows,
        half_margin: alpha / 2.0,
        witnesses,
        memo: HashMap::new(),
    };
    search.run(&Members::full(rows.len()))
}

/// Fat-shattering dimension at scale `alpha` (margin `alpha` on each side).
pub fn fat_alpha(h: &RealClass, alpha: f64) -> i32 {
    iid_dimension(h.hypotheses(), h.domain().len(), alpha)
}

/// Fat-shattering dimension of a discrete class at scale 2, treating labels
/// as reals.
pub fn fat2(f: &DiscreteClass) -> i32 {
    let rows: Vec<Vec<f64>> = f
        .hypotheses()
        .iter()
        .map(|h| h.iter().map(|&v| f64::from(v)).collect())
        .collect();
    iid_dimension(&rows, f.domain().len(), 2.0)
}

pub(crate) fn iid_dimension(rows: &[Vec<f64>], points: usize, alpha: f64) -> i32 {
    assert!(alpha > 0.0, "scale must be positive");
    if rows.is_empty() {
        return -1;
    }
    let witnesses: Vec<Vec<f64>> = (0..points)
        .map(|x| midpoints(rows.iter().map(|r| r[x]), 2.0 * alpha))
        .collect();
    let patterns = vec![Some(0u64); rows.len()];
    let mut best = 0;
    iid_extend(rows, alpha, &witnesses, 0, 0, &patterns, &mut best);
    best
}

/// Depth-first search over point sets in increasing index order. Each
/// hypothesis carries its sign pattern on the chosen points, or `None` once
/// it falls inside some margin band.
fn iid_extend(
    rows: &[Vec<f64>],
    alpha: f64,
    witnesses: &[Vec<f64>],
    next: usize,
    depth: i32,
    patterns: &[Option<u64>],
    best: &mut i32,
) {
    *best = (*best).max(depth);
    let cap = (usize::BITS - rows.len().leading_zeros() - 1) as i32;
    for x in next..witnesses.len() {
        // Remaining points or the class size cap the achievable depth.
        let remaining = (witnesses.len() - x) as i32;
        if depth + remaining.min(cap - depth) <= *best {
            return;
        }
        for &s in &witnesses[x] {
            let extended: Vec<Option<u64>> = patterns
                .iter()
                .zip(rows)
                .map(|(p, r)| {
                    let p = (*p)?;
                    let v = r[x];
                    if v - s >= alpha - TOL {
                        Some(p << 1 | 1)
                    } else if s - v >= alpha - TOL {
                        Some(p << 1)
                    } else {
                        None
                    }
                })
                .collect();
            let mut seen: Vec<u64> = extended.iter().flatten().copied().collect();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() == 1usize << (depth + 1) {
                iid_extend(rows, alpha, witnesses, x + 1, depth + 1, &extended, best);
            }
        }
    }
}
