//! Laplace noise, the private optimal-error estimate, thresholded sparse
//! selection and an empirical privacy audit.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::class::{DiscreteClass, EmpiricalDistribution, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        if epsilon >= 1.0 {
            log::warn!("epsilon = {epsilon} is outside (0, 1)");
        }
        Ok(PrivacyParams { epsilon, delta })
    }
}

/// Generator for stream `stream` of the master seed. Distinct streams are
/// independent, so parallel consumers never share randomness.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from the centered Laplace distribution with scale `b`, by
/// inverting the CDF at a single uniform draw.
pub fn laplace_sample<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!("Laplace scale must be positive, got {b}")));
    }
    let u: f64 = Open01.sample(rng);
    let centered = u - 0.5;
    Ok(-b * centered.signum() * (1.0 - 2.0 * centered.abs()).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoisyError {
    pub value: f64,
    /// Exposed for testing; not private.
    pub min_error: f64,
    pub noise: f64,
}

/// Smallest empirical error over `f` plus Laplace noise of scale
/// `2K / (epsilon * n1)`.
pub fn noisy_opt_error<R: Rng + ?Sized>(
    f: &DiscreteClass,
    emp: &EmpiricalDistribution<Label>,
    epsilon: f64,
    n1: usize,
    rng: &mut R,
) -> Result<NoisyError> {
    if f.is_empty() {
        return Err(Error::Precondition("optimal error of the empty class".into()));
    }
    if n1 == 0 {
        return Err(Error::Precondition("n1 must be positive".into()));
    }
    emp.check_domain(f.domain().len())?;
    let min_error = f.hypotheses().iter().map(|h| emp.abs_error(h)).fold(f64::INFINITY, f64::min);
    let noise = laplace_sample(2.0 * f64::from(f.k()) / (epsilon * n1 as f64), rng)?;
    Ok(NoisyError { value: min_error + noise, min_error, noise })
}

/// Stable identifier of a discrete hypothesis: SHA-256 of its JSON array.
pub fn candidate_id(h: &[Label]) -> String {
    let json = serde_json::to_string(h).expect("label vectors serialize");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionInstance {
    pub user_sets: Vec<Vec<String>>,
    pub sparsity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionOutcome {
    /// `None` when no bin clears the threshold.
    pub choice: Option<String>,
    pub threshold: f64,
    /// Number of users whose set was cut down to the sparsity.
    pub truncated_users: usize,
    /// Exact counts after truncation, by candidate id.
    pub counts: BTreeMap<String, usize>,
}

impl SelectionOutcome {
    pub fn into_result(self) -> Result<String> {
        let threshold = self.threshold;
        self.choice.ok_or(Error::NoSelection { threshold })
    }
}

pub fn selection_threshold(sparsity: usize, priv_: &PrivacyParams) -> f64 {
    let s = sparsity as f64;
    1.0 + (2.0 * s / priv_.epsilon) * (2.0 * s / priv_.delta).ln()
}

/// Thresholded stable histogram over the union of the user sets.
///
/// Each user's set is deduplicated and cut to its first `sparsity` ids in
/// sorted order. Every bin with a nonzero count gets independent
/// `Lap(2s / epsilon)` noise, drawn in sorted id order; the noisy argmax
/// among bins above the threshold is returned, ties going to the smaller id.
pub fn sparse_select<R: Rng + ?Sized>(
    inst: &SelectionInstance,
    priv_: &PrivacyParams,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    if inst.user_sets.is_empty() {
        return Err(Error::Precondition("sparse selection needs at least one user".into()));
    }
    if inst.sparsity == 0 {
        return Err(Error::Config("sparsity must be positive".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut truncated_users = 0;
    for set in &inst.user_sets {
        let distinct: BTreeSet<&String> = set.iter().collect();
        if distinct.len() > inst.sparsity {
            truncated_users += 1;
        }
        for id in distinct.into_iter().take(inst.sparsity) {
            *counts.entry(id.clone()).or_default() += 1;
        }
    }
    let scale = 2.0 * inst.sparsity as f64 / priv_.epsilon;
    let threshold = selection_threshold(inst.sparsity, priv_);
    let mut best: Option<(f64, &String)> = None;
    for (id, &c) in &counts {
        let noisy = c as f64 + laplace_sample(scale, rng)?;
        if noisy > threshold && best.is_none_or(|(b, _)| noisy > b) {
            best = Some((noisy, id));
        }
    }
    if truncated_users > 0 {
        log::info!("{truncated_users} user sets truncated to sparsity {}", inst.sparsity);
    }
    Ok(SelectionOutcome { choice: best.map(|(_, id)| id.clone()), threshold, truncated_users, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEvent {
    pub event: String,
    /// `"D|D'"` when checking `Pr_D <= e^eps Pr_D' + delta`, `"D'|D"` for the
    /// reverse.
    pub direction: String,
    pub p: f64,
    pub q: f64,
    pub bound: f64,
    pub flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub trials: usize,
    pub events: Vec<AuditEvent>,
    pub violations: usize,
}

/// Whether two record slices differ in at most one position.
pub fn are_neighbors<T: PartialEq>(d: &[T], d_prime: &[T]) -> bool {
    d.len() == d_prime.len() && d.iter().zip(d_prime).filter(|(a, b)| a != b).count() <= 1
}

/// Runs `mechanism` `trials` times on each input and compares the empirical
/// probabilities of every observed output bucket in both directions. An
/// event is flagged when `p - e^eps q - delta` exceeds three standard
/// errors of the estimate.
///
/// Trial `i` on `d` uses stream `2i` of `seed`, on `d_prime` stream `2i+1`.
pub fn dp_audit<T, M>(
    mut mechanism: M,
    d: &[T],
    d_prime: &[T],
    priv_: &PrivacyParams,
    trials: usize,
    seed: u64,
) -> Result<AuditReport>
where
    T: PartialEq,
    M: FnMut(&[T], &mut ChaCha20Rng) -> Result<String>,
{
    if !are_neighbors(d, d_prime) {
        return Err(Error::Precondition("audit inputs are not neighboring".into()));
    }
    if trials == 0 {
        return Err(Error::Config("audit needs at least one trial".into()));
    }
    let mut hist: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for i in 0..trials as u64 {
        let a = mechanism(d, &mut stream_rng(seed, 2 * i))?;
        hist.entry(a).or_default().0 += 1;
        let b = mechanism(d_prime, &mut stream_rng(seed, 2 * i + 1))?;
        hist.entry(b).or_default().1 += 1;
    }
    let n = trials as f64;
    let e = priv_.epsilon.exp();
    let mut events = Vec::new();
    for (event, &(ca, cb)) in &hist {
        let pa = ca as f64 / n;
        let pb = cb as f64 / n;
        for (direction, p, q) in [("D|D'", pa, pb), ("D'|D", pb, pa)] {
            let bound = e * q + priv_.delta;
            let sigma = (p * (1.0 - p) / n + e * e * q * (1.0 - q) / n).sqrt();
            let flag = p - bound > 3.0 * sigma;
            events.push(AuditEvent { event: event.clone(), direction: direction.into(), p, q, bound, flag });
        }
    }
    let violations = events.iter().filter(|e| e.flag).count();
    Ok(AuditReport { trials, events, violations })
}
