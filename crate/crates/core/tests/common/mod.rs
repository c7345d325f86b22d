//! Random instance generators and single-instance property checks shared by
//! the lemma tests and the acceptance harness.
#![allow(dead_code)]

use std::rc::Rc;

use privreg::class::{discretize_class, discretize_distribution, discretize_with, label_count, Atom};
use privreg::dimensions::{fat2, fat_alpha, sfat2, sfat_alpha};
use privreg::filter::{sup_distance, LadderSchedule, SoaFilter};
use privreg::irreducibility::within_power;
use privreg::members::Members;
use privreg::reduce_tree::ReduceTreeParams;
use privreg::{DiscreteClass, Domain, EmpiricalDistribution, Hypothesis, Label, Level, RealClass, RestrictionSet, Universe};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub type Check = fn(&mut ChaCha20Rng) -> Result<(), String>;

/// Every single-instance check, by name.
pub const LEMMAS: &[(&str, Check)] = &[
    ("consecutive-keeping-labels", consecutive_keeping_labels),
    ("soa-stability", soa_stability),
    ("irreducible-superclass", irreducible_superclass),
    ("soa-restriction-irreducibility", soa_restriction_irreducibility),
    ("discretized-dimensions", discretized_dimensions),
    ("discretized-error", discretized_error),
    ("reducing-tree-leaves", reducing_tree_leaves),
    ("tree-learner-depth", tree_learner_depth),
    ("tree-learner-candidates", tree_learner_candidates),
    ("close-representatives", close_representatives),
    ("at-most-one-match", at_most_one_match),
    ("queue-irreducibility", queue_irreducibility),
    ("queue-restriction-size", queue_restriction_size),
    ("representative-count", representative_count),
];

pub fn random_class(rng: &mut ChaCha20Rng, max_points: usize, max_k: Label, max_size: usize) -> DiscreteClass {
    let n = rng.gen_range(1..=max_points);
    let k = rng.gen_range(2..=max_k);
    let size = rng.gen_range(1..=max_size);
    let hyps = (0..size).map(|_| (0..n).map(|_| rng.gen_range(1..=k)).collect()).collect();
    DiscreteClass::new(Domain::indexed(n), k, hyps).expect("labels in range")
}

pub fn random_real_class(rng: &mut ChaCha20Rng, max_points: usize, max_size: usize) -> RealClass {
    let n = rng.gen_range(1..=max_points);
    let size = rng.gen_range(1..=max_size);
    let hyps = (0..size).map(|_| random_real(rng, n)).collect();
    RealClass::new(Domain::indexed(n), hyps).expect("values in range")
}

/// Values on a grid of step 0.05 half the time, so that bucket boundaries
/// are hit.
fn random_real(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    let grid = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            let y: f64 = rng.gen_range(-1.0..=1.0);
            if grid {
                ((y * 20.0).round() / 20.0).clamp(-1.0, 1.0)
            } else {
                y
            }
        })
        .collect()
}

pub fn random_subset(u: &Universe, rng: &mut ChaCha20Rng) -> Members {
    let n = u.base().len();
    loop {
        let p = rng.gen_range(0.2..=1.0);
        let mut m = Members::empty(n);
        for i in 0..n {
            if rng.gen_bool(p) {
                m.insert(i);
            }
        }
        if !m.is_empty() {
            return m;
        }
    }
}

/// A random class together with a nonempty 1-irreducible subclass: half
/// the time a restriction subclass, otherwise an arbitrary subset.
pub fn irreducible_instance(rng: &mut ChaCha20Rng) -> (Universe, Members) {
    loop {
        let u = Universe::new(random_class(rng, 3, 4, 12));
        let g = if rng.gen_bool(0.5) {
            u.restriction_subclasses().choose(rng).cloned().expect("nonempty class")
        } else {
            random_subset(&u, rng)
        };
        if u.is_irreducible(&g, 1) {
            return (u, g);
        }
    }
}

/// `H` irreducible and a superclass `G` inside the base class with the same
/// sfat2.
fn nested_pair(rng: &mut ChaCha20Rng) -> (Universe, Members, Members) {
    let (u, h) = irreducible_instance(rng);
    let outside: Vec<usize> = (0..u.base().len()).filter(|&i| !h.contains(i)).collect();
    let p = rng.gen_range(0.1..=0.9);
    let mut added: Vec<usize> = outside.into_iter().filter(|_| rng.gen_bool(p)).collect();
    loop {
        let mut g = h.clone();
        for &i in &added {
            g.insert(i);
        }
        if u.sfat(&g) == u.sfat(&h) {
            return (u, h, g);
        }
        added.remove(rng.gen_range(0..added.len()));
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn describe(u: &Universe, m: &Members) -> String {
    format!("K={} class={:?}", u.k(), u.hypotheses_of(m))
}

pub fn consecutive_keeping_labels(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, g) = irreducible_instance(rng);
    for x in 0..u.points() {
        let labels = u.sfat_keeping_labels(&g, x);
        let ok = match labels.as_slice() {
            [_] => true,
            [a, b] => b - a == 1,
            _ => false,
        };
        if !ok {
            return Err(format!("{}: keeping labels {labels:?} at point {x}", describe(&u, &g)));
        }
    }
    Ok(())
}

pub fn soa_stability(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, h, g) = nested_pair(rng);
    let (sh, sg) = (u.soa(&h).map_err(err)?, u.soa(&g).map_err(err)?);
    if sup_distance(&sh, &sg) > 1 {
        return Err(format!("{} inside {}: soa {sh:?} vs {sg:?}", describe(&u, &h), describe(&u, &g)));
    }
    Ok(())
}

pub fn irreducible_superclass(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, h, g) = nested_pair(rng);
    let (lh, lg) = (u.level(&h), u.level(&g));
    if lg < lh {
        return Err(format!("{} has level {lh} but superclass {} has {lg}", describe(&u, &h), describe(&u, &g)));
    }
    Ok(())
}

pub fn soa_restriction_irreducibility(rng: &mut ChaCha20Rng) -> Result<(), String> {
    soa_restriction_irreducibility_up_to(rng, usize::MAX)
}

/// SOA-consistent restrictions of at most `max_pairs` pairs.
pub fn soa_restriction_irreducibility_up_to(rng: &mut ChaCha20Rng, max_pairs: usize) -> Result<(), String> {
    let (u, g) = irreducible_instance(rng);
    let level = u.level(&g);
    let soa = u.soa(&g).map_err(err)?;
    let cap = match level {
        Level::Finite(l) => l.min(u.points() as u64),
        Level::Infinite => u.points() as u64,
    }
    .min(max_pairs as u64);
    let size = rng.gen_range(0..=cap) as usize;
    let mut points: Vec<usize> = (0..u.points()).collect();
    points.shuffle(rng);
    let a: RestrictionSet = points[..size].iter().map(|&x| (x, soa[x])).collect();
    let ga = u.restrict(&g, &a);
    if u.sfat(&ga) != u.sfat(&g) {
        return Err(format!("{} (soa {soa:?}): restricting to {a:?} changes sfat2", describe(&u, &g)));
    }
    let ok = match level {
        Level::Finite(l) => u.is_irreducible(&ga, l - size as u64),
        Level::Infinite => u.level(&ga) == Level::Infinite,
    };
    if !ok {
        return Err(format!("{}: level {level}, restriction {a:?} has level {}", describe(&u, &g), u.level(&ga)));
    }
    Ok(())
}

const SCALES: [f64; 6] = [0.25, 0.3, 0.4, 0.5, 0.6, 0.9];

/// Dimension inequalities at a scale drawn uniformly from (0.05, 1).
pub fn discretized_dimensions(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let eta = rng.gen_range(0.05..1.0);
    discretized_dimensions_at(rng, eta)
}

/// Same inequalities restricted to scales with `2 / eta` an integer.
pub fn discretized_dimensions_on_grid(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let k: u32 = rng.gen_range(3..=8);
    discretized_dimensions_at(rng, 2.0 / f64::from(k))
}

pub fn discretized_dimensions_at(rng: &mut ChaCha20Rng, eta: f64) -> Result<(), String> {
    let h = random_real_class(rng, 3, 6);
    let f = discretize_class(&h, eta).map_err(err)?;
    let (s2, f2) = (sfat2(&f), fat2(&f));
    let (sa, fa) = (sfat_alpha(&h, eta), fat_alpha(&h, eta));
    if s2 > sa || f2 > fa {
        return Err(format!(
            "eta={eta} class={:?}: discrete sfat2/fat2 {s2}/{f2} exceed {sa}/{fa}",
            h.hypotheses()
        ));
    }
    Ok(())
}

pub fn discretized_error(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let n = rng.gen_range(1..=4);
    let eta = *SCALES.choose(rng).unwrap();
    let k = label_count(eta).map_err(err)?;
    let h = random_real(rng, n);
    let atoms = rng.gen_range(1..=8);
    let mut weights: Vec<f64> = (0..atoms).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let last = 1.0 - weights[..atoms - 1].iter().sum::<f64>();
    weights[atoms - 1] = last;
    let q = EmpiricalDistribution::new(
        weights
            .iter()
            .map(|&weight| Atom { point: rng.gen_range(0..n), label: random_real(rng, 1)[0], weight })
            .collect(),
    )
    .map_err(err)?;
    let dq = discretize_distribution(&q, eta).map_err(err)?;
    let dh: Vec<Label> = h.iter().map(|&y| discretize_with(y, k)).collect::<Result<_, _>>().map_err(err)?;
    let scaled = f64::from(k) * q.abs_error(&h) / 2.0;
    let disc = dq.abs_error(&dh);
    if disc < scaled - 1.0 - 1e-9 || disc > scaled + 1.0 + 1e-9 {
        return Err(format!("eta={eta} h={h:?}: discrete error {disc} vs scaled {scaled}"));
    }
    Ok(())
}

/// Random geometric level sequence `c * b^t` for `t = 0..=d`.
fn random_ell_seq(rng: &mut ChaCha20Rng, d: usize) -> Vec<u64> {
    let c = rng.gen_range(1..=2u64);
    let b = rng.gen_range(2..=3u64);
    (0..=d as u32).map(|t| c * b.pow(t)).collect()
}

pub fn reducing_tree_leaves(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, h) = loop {
        let u = Universe::new(random_class(rng, 3, 4, 12));
        let h = random_subset(&u, rng);
        if u.sfat(&h) >= 1 {
            break (u, h);
        }
    };
    let d = u.sfat(&h);
    let pairs: Vec<(usize, Label)> = (0..u.points())
        .flat_map(|x| (1..=u.k()).map(move |y| (x, y)))
        .filter(|&(x, y)| u.sfat(&u.restrict_one(&h, x, y)) < d)
        .collect();
    let pair = *pairs.choose(rng).ok_or("no reducing pair")?;
    let seq = random_ell_seq(rng, d as usize);
    let tree = u.reducing_tree(&h, pair, &seq).map_err(err)?;
    u.validate_reducing_tree(&h, &tree, &seq)
        .map_err(|e| format!("{} pair={pair:?} seq={seq:?}: {e}", describe(&u, &h)))?;
    let counts = u.reducing_tree_leaf_counts(&h, &tree);
    for t in 1..=d as usize {
        let exp: u64 = seq[..t].iter().sum();
        if !within_power(counts[t], u64::from(u.k()), exp) {
            return Err(format!("{} seq={seq:?}: {} leaves at t={t}", describe(&u, &h), counts[t]));
        }
    }
    Ok(())
}

/// Class, empirical errors and parameters satisfying the tree learner's
/// nonemptiness condition.
fn learner_instance(rng: &mut ChaCha20Rng) -> (Universe, Vec<f64>, ReduceTreeParams) {
    let f = random_class(rng, 3, 4, 12);
    let u = Universe::new(f.clone());
    let n = f.domain().len();
    let samples: Vec<(usize, Label)> =
        (0..rng.gen_range(5..=30)).map(|_| (rng.gen_range(0..n), rng.gen_range(1..=f.k()))).collect();
    let p = EmpiricalDistribution::from_samples(&samples).unwrap();
    let errors: Vec<f64> = f.hypotheses().iter().map(|h| p.abs_error(h)).collect();
    let min = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let d = f64::from(u.sfat(&u.full()));
    let alpha_delta = *[0.3, 0.6, 1.0, 2.0].choose(rng).unwrap();
    let ell_prime = rng.gen_range(1..=2);
    let alpha1 = min + alpha_delta / 2.0 + (d + 1.0) * alpha_delta + rng.gen_range(0.0..1.0) * alpha_delta;
    (u, errors, ReduceTreeParams::new(alpha1, alpha_delta, ell_prime).unwrap())
}

pub fn tree_learner_depth(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, errors, params) = learner_instance(rng);
    let out = u.reduce_tree_reg(&errors, &params).map_err(err)?;
    let bound = params.ell(out.t_final + 1) - params.ell_prime;
    if out.depth() as u64 > bound {
        return Err(format!("{} {params:?}: depth {} > {bound}", describe(&u, &u.full()), out.depth()));
    }
    Ok(())
}

pub fn tree_learner_candidates(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, errors, params) = learner_instance(rng);
    let out = u.reduce_tree_reg(&errors, &params).map_err(err)?;
    let d = u.sfat(&u.full()).max(0) as u32;
    let exp = params.ell_prime.saturating_mul(1u64 << (d + 1));
    if !within_power(out.candidates.len(), u64::from(u.k()), exp) {
        return Err(format!("{} {params:?}: {} candidates", describe(&u, &u.full()), out.candidates.len()));
    }
    Ok(())
}

fn filter_instance(rng: &mut ChaCha20Rng) -> (Rc<Universe>, LadderSchedule) {
    loop {
        let u = Universe::new(random_class(rng, 3, 4, 10));
        let d = u.sfat(&u.full());
        if d >= 1 {
            let schedule = LadderSchedule::standard(rng.gen_range(1..=2), d as usize);
            return (Rc::new(u), schedule);
        }
    }
}

pub fn close_representatives(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, schedule) = filter_instance(rng);
    let filtered = u.filter_step(&schedule).map_err(err)?;
    for (h, l) in &filtered.rep {
        let (sh, sl) = (u.soa(h).map_err(err)?, u.soa(l).map_err(err)?);
        if sup_distance(&sh, &sl) > 1 {
            return Err(format!("{}: representative soa {sl:?} far from {sh:?}", describe(&u, &u.full())));
        }
    }
    Ok(())
}

/// Every consistent restriction set on the universe's points.
fn consistent_sets(u: &Universe) -> Vec<RestrictionSet> {
    let mut out = vec![RestrictionSet::new()];
    for x in 0..u.points() {
        let mut next = Vec::with_capacity(out.len() * (usize::from(u.k()) + 1));
        for a in &out {
            next.push(a.clone());
            for v in 1..=u.k() {
                let mut b = a.clone();
                b.insert(x, v);
                next.push(b);
            }
        }
        out = next;
    }
    out
}

pub fn at_most_one_match(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (u, schedule) = filter_instance(rng);
    let filtered = u.filter_step(&schedule).map_err(err)?;
    let d = u.sfat(&u.full());
    let all = u.full();
    let sets = consistent_sets(&u);
    for t in 0..=d as usize {
        let b = d - t as i32;
        let soas: Vec<(&Members, Hypothesis)> = filtered.levels[b as usize]
            .iter()
            .map(|l| Ok((l, u.soa(l)?)))
            .collect::<privreg::Result<_>>()
            .map_err(err)?;
        for r in 0..=schedule.r_max {
            let need = schedule.ell(r, t);
            for a in sets.iter().filter(|a| (a.len() as u64) < need) {
                if u.sfat(&u.restrict(&all, a)) != b {
                    continue;
                }
                let hits = soas
                    .iter()
                    .filter(|(l, soa)| u.level(l).at_least(need) && a.admits(soa))
                    .count();
                if hits > 1 {
                    return Err(format!("{}: {hits} filtered classes match {a:?} at r={r} t={t}", describe(&u, &all)));
                }
            }
        }
    }
    Ok(())
}

fn traced_run(rng: &mut ChaCha20Rng) -> Result<(SoaFilter, Hypothesis, privreg::filter::RepSet, privreg::filter::FilterTrace), String> {
    let (u, schedule) = filter_instance(rng);
    let g_hat: Hypothesis = (0..u.points()).map(|_| rng.gen_range(1..=u.k())).collect();
    let filter = SoaFilter::new(u, schedule).map_err(err)?;
    let (reps, trace) = filter.run_traced(&g_hat).map_err(err)?;
    Ok((filter, g_hat, reps, trace))
}

/// Calls `check(r, t, a)` for every restriction set queued at stage
/// `s >= 1`, where `r` is the ladder row of the pass and `t` the sfat2 drop.
fn for_each_queued(
    rng: &mut ChaCha20Rng,
    mut check: impl FnMut(&SoaFilter, usize, usize, &RestrictionSet) -> Result<(), String>,
) -> Result<(), String> {
    let (filter, _, _, trace) = traced_run(rng)?;
    let u = filter.universe();
    let d = u.sfat(&u.full());
    let schedule = *filter.schedule();
    let r0 = schedule.r_max / (d as usize + 1);
    for (j, s, queue) in &trace.queues {
        if *s == 0 {
            continue;
        }
        let r = schedule.r_max - j * r0 - 1;
        for a in queue {
            let t = (d - u.sfat(&u.restrict(&u.full(), a))) as usize;
            check(&filter, r, t, a)?;
        }
    }
    Ok(())
}

pub fn queue_irreducibility(rng: &mut ChaCha20Rng) -> Result<(), String> {
    for_each_queued(rng, |filter, r, t, a| {
        let u = filter.universe();
        let need = filter.schedule().ell(r, t);
        let fa = u.restrict(&u.full(), a);
        if !u.is_irreducible(&fa, need) {
            return Err(format!("{}: F|{a:?} has level {} < {need}", describe(u, &u.full()), u.level(&fa)));
        }
        Ok(())
    })
}

pub fn queue_restriction_size(rng: &mut ChaCha20Rng) -> Result<(), String> {
    for_each_queued(rng, |filter, r, t, a| {
        let bound: u64 = (0..t).map(|tp| filter.schedule().ell(r, tp)).sum();
        if a.len() as u64 > bound {
            let u = filter.universe();
            return Err(format!("{}: |{a:?}| > {bound} at r={r} t={t}", describe(u, &u.full())));
        }
        Ok(())
    })
}

pub fn representative_count(rng: &mut ChaCha20Rng) -> Result<(), String> {
    let (filter, g_hat, reps, _) = traced_run(rng)?;
    let u = filter.universe();
    let d = u.sfat(&u.full()) as usize;
    let schedule = filter.schedule();
    let k = f64::from(u.k());
    let bound: f64 = (0..=schedule.r_max)
        .map(|r| k.powf((0..d).map(|t| schedule.ell(r, t) as f64).sum()))
        .sum();
    if reps.len() as f64 > bound {
        return Err(format!("{} g_hat={g_hat:?}: {} representatives > {bound}", describe(u, &u.full()), reps.len()));
    }
    Ok(())
}
