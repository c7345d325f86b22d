//! The full private learner: discretize, estimate the optimal error, run the
//! tree learner and SOA filter on disjoint groups, then privately select one
//! SOA hypothesis.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::class::{
    discretize_class, discretize_dataset, label_count, undisc_hypothesis, DiscreteClass, EmpiricalDistribution,
    Hypothesis, RealClass, RealHypothesis,
};
use crate::dimensions::fat_alpha;
use crate::dp::{candidate_id, noisy_opt_error, sparse_select, stream_rng, NoisyError, PrivacyParams, SelectionInstance};
use crate::error::{Error, Result};
use crate::filter::{LadderSchedule, SoaFilter};
use crate::members::Members;
use crate::reduce_tree::{member_errors, threshold_signature, ReduceTreeParams};
use crate::universe::Universe;

/// Largest total sample count accepted from the formulas without explicit
/// overrides.
pub const DESK_SAMPLE_LIMIT: f64 = 1e7;

pub const ALPHA_DELTA: f64 = 18.0;
pub const CHI: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constants {
    #[serde(rename = "C0")]
    pub big_c0: f64,
    #[serde(rename = "c0")]
    pub small_c0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { big_c0: 4.0, small_c0: 0.25, c1: 2.0, c: 4.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub m: Option<u64>,
    pub n0: Option<u64>,
    pub n1: Option<u64>,
    pub ell_prime: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegLearnConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub eta_bar: f64,
    pub beta: f64,
    pub ell_bar: u64,
    #[serde(default)]
    pub constants: Constants,
    #[serde(default)]
    pub overrides: Overrides,
}

impl RegLearnConfig {
    fn validate(&self) -> Result<()> {
        PrivacyParams::new(self.epsilon, self.delta)?;
        for (name, v) in [("eta_bar", self.eta_bar), ("beta", self.beta)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if self.ell_bar == 0 {
            return Err(Error::Config("ell_bar must be positive".into()));
        }
        let o = &self.overrides;
        if [o.m, o.n0, o.n1, o.ell_prime].contains(&Some(0)) {
            return Err(Error::Config("overrides must be positive integers".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedParams {
    pub k: u16,
    pub d: i32,
    pub fat: i32,
    pub m: u64,
    pub n0: u64,
    pub n1: u64,
    pub n: u64,
    pub alpha_delta: f64,
    pub ell_prime: u64,
    pub tau_max: u64,
    pub r_max: usize,
    pub chi: u64,
    /// Natural log of the sparsity formula; the sparsity actually used is
    /// the measured set size, capped by this.
    pub ln_sparsity_cap: f64,
    /// Names of the parameters taken from overrides.
    pub overridden: Vec<String>,
    /// Values the formulas gave before overrides.
    pub formula: BTreeMap<String, f64>,
}

impl ResolvedParams {
    pub fn schedule(&self, ell_bar: u64) -> LadderSchedule {
        LadderSchedule { ell_bar, r_max: self.r_max, tau_max: self.tau_max, chi: self.chi }
    }
}

fn ceil_count(v: f64) -> f64 {
    v.ceil().max(1.0)
}

pub fn compute_parameters(h: &RealClass, cfg: &RegLearnConfig) -> Result<ResolvedParams> {
    let f = discretize_class(h, cfg.eta_bar)?;
    let u = Universe::new(f.clone());
    resolve(h, &f, u.sfat(&u.full()), cfg)
}

fn resolve(h: &RealClass, f: &DiscreteClass, d: i32, cfg: &RegLearnConfig) -> Result<ResolvedParams> {
    cfg.validate()?;
    if f.is_empty() {
        return Err(Error::Precondition("hypothesis class is empty".into()));
    }
    let k = label_count(cfg.eta_bar)?;
    let kf = f64::from(k);
    let df = f64::from(d.max(0));
    let c = &cfg.constants;
    let eta = cfg.eta_bar;
    let fat = fat_alpha(h, c.small_c0 * eta).max(0);
    let fatf = f64::from(fat);
    let ln_inv_eta = (1.0 / eta).ln();

    let m_formula = c.c
        * cfg.ell_bar as f64
        * (2.0 * df + 6.0).powf(df + 4.0)
        * (1.0 / (cfg.epsilon * cfg.delta * cfg.beta * eta)).ln().powi(2)
        / (cfg.epsilon * eta * eta);
    let m_formula = ceil_count(m_formula);
    let m = cfg.overrides.m.map_or(m_formula, |v| v as f64);
    let n0_formula = ceil_count(c.big_c0 * (fatf * ln_inv_eta + (4.0 * m / cfg.beta).ln()) / (eta * eta));
    let n1_formula = ceil_count((c.big_c0 * fatf * ln_inv_eta + (8.0 / cfg.beta).ln()) / (cfg.epsilon * eta * eta));
    let ell_formula = (cfg.ell_bar as f64 * (df + 3.0).powf(df)).max(c.big_c0 * kf * kf * (df * kf.ln() + 1.0)).ceil();

    let n0 = cfg.overrides.n0.map_or(n0_formula, |v| v as f64);
    let n1 = cfg.overrides.n1.map_or(n1_formula, |v| v as f64);
    let total = m * n0 + n1;
    if !(total <= DESK_SAMPLE_LIMIT) {
        let missing: Vec<&str> = [("m", cfg.overrides.m), ("n0", cfg.overrides.n0), ("n1", cfg.overrides.n1)]
            .iter()
            .filter(|(_, v)| v.is_none())
            .map(|(n, _)| *n)
            .collect();
        return Err(Error::TheoreticalScale(
            format!("sample size m*n0 + n1 = {total:.3e}"),
            if missing.is_empty() { "m, n0, n1".into() } else { missing.join(", ") },
        ));
    }
    let ell_prime = match cfg.overrides.ell_prime {
        Some(v) => v,
        None if ell_formula < u64::MAX as f64 => ell_formula as u64,
        None => return Err(Error::TheoreticalScale(format!("ell_prime = {ell_formula:.3e}"), "ell_prime".into())),
    };
    let mut overridden = Vec::new();
    for (name, v) in [
        ("m", cfg.overrides.m),
        ("n0", cfg.overrides.n0),
        ("n1", cfg.overrides.n1),
        ("ell_prime", cfg.overrides.ell_prime),
    ] {
        if v.is_some() {
            overridden.push(name.to_string());
        }
    }
    let ln_sparsity_cap =
        c.c * cfg.ell_bar as f64 * (2.0 * df + 6.0).powf(df + 2.0) * kf * kf * df * kf.ln() * kf.ln();
    let formula = BTreeMap::from([
        ("m".to_string(), m_formula),
        ("n0".to_string(), n0_formula),
        ("n1".to_string(), n1_formula),
        ("ell_prime".to_string(), ell_formula),
    ]);
    let du = d.max(0) as usize;
    Ok(ResolvedParams {
        k,
        d,
        fat,
        m: m as u64,
        n0: n0 as u64,
        n1: n1 as u64,
        n: (m * n0) as u64,
        alpha_delta: ALPHA_DELTA,
        ell_prime,
        tau_max: 12 * (du as u64 + 1),
        r_max: du + 1,
        chi: CHI,
        ln_sparsity_cap,
        overridden,
        formula,
    })
}

/// Where the learner's samples come from.
pub enum DataSource<'a> {
    /// Fixed dataset of `(point index, y)`; consumed in order.
    Dataset(&'a [(usize, f64)]),
    /// Draws one sample per call.
    Sampler(&'a dyn Fn(&mut ChaCha20Rng) -> (usize, f64)),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupRecord {
    /// `None` when the tree learner halted with an error and the group
    /// abstained.
    pub candidates: Option<usize>,
    pub represented: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transcript {
    pub eta_hat: NoisyError,
    pub alpha1: f64,
    pub groups: Vec<GroupRecord>,
    pub abstained: usize,
    pub sparsity: usize,
    pub threshold: f64,
    pub truncated_users: usize,
    /// Exact selection counts by candidate id.
    pub counts: BTreeMap<String, usize>,
    pub unused_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegLearnOutput {
    /// `None` when the selection returned no candidate.
    pub h_hat: Option<RealHypothesis>,
    pub soa: Option<Hypothesis>,
    pub l_hat: Option<Vec<Hypothesis>>,
    pub transcript: Transcript,
}

impl RegLearnOutput {
    pub fn hypothesis(&self) -> Result<&RealHypothesis> {
        self.h_hat.as_ref().ok_or(Error::NoSelection { threshold: self.transcript.threshold })
    }
}

/// A learner bound to one class and configuration. Dimension, tree-learner
/// and filter results are cached, so repeated runs (audits, Monte Carlo
/// studies) only pay for what changes between them.
pub struct RegLearner {
    cfg: RegLearnConfig,
    params: ResolvedParams,
    universe: Rc<Universe>,
    filter: SoaFilter,
    tree_memo: RefCell<HashMap<Vec<Members>, Option<Vec<Hypothesis>>>>,
    /// Target hypothesis -> (soa, class) of each representative reached.
    filter_memo: RefCell<HashMap<Hypothesis, Vec<(Hypothesis, Members)>>>,
}

impl RegLearner {
    pub fn new(h: &RealClass, cfg: RegLearnConfig) -> Result<Self> {
        let f = discretize_class(h, cfg.eta_bar)?;
        let universe = Rc::new(Universe::new(f.clone()));
        let d = universe.sfat(&universe.full());
        let params = resolve(h, &f, d, &cfg)?;
        let filter = SoaFilter::new(universe.clone(), params.schedule(cfg.ell_bar))?;
        Ok(RegLearner {
            cfg,
            params,
            universe,
            filter,
            tree_memo: RefCell::new(HashMap::new()),
            filter_memo: RefCell::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &ResolvedParams {
        &self.params
    }

    pub fn config(&self) -> &RegLearnConfig {
        &self.cfg
    }

    pub fn class(&self) -> &DiscreteClass {
        self.universe.base()
    }

    /// Samples needed for one run.
    pub fn required_samples(&self) -> usize {
        (self.params.n1 + self.params.m * self.params.n0) as usize
    }

    fn group_candidates(&self, errors: &[f64], tree: &ReduceTreeParams) -> Result<Option<Vec<Hypothesis>>> {
        let key = threshold_signature(&self.universe, errors, tree);
        if let Some(hit) = self.tree_memo.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let value = match self.universe.reduce_tree_reg(errors, tree) {
            Ok(out) => Some(out.candidates),
            Err(Error::TreeLearner { .. }) => None,
            Err(e) => return Err(e),
        };
        self.tree_memo.borrow_mut().insert(key, value.clone());
        Ok(value)
    }

    fn representatives(&self, g_hat: &Hypothesis) -> Result<Vec<(Hypothesis, Members)>> {
        if let Some(hit) = self.filter_memo.borrow().get(g_hat) {
            return Ok(hit.clone());
        }
        let reps = self.filter.run(g_hat)?;
        let value: Vec<(Hypothesis, Members)> = reps
            .sorted()
            .into_iter()
            .map(|l| (self.filter.soa_of(&l).expect("filtered classes have a cached soa").clone(), l))
            .collect();
        self.filter_memo.borrow_mut().insert(g_hat.clone(), value.clone());
        Ok(value)
    }

    /// One run of the learner. Randomness: stream 0 of `seed` draws samples
    /// from a sampler, stream 1 the error-estimate noise and stream 2 the
    /// selection noise.
    pub fn run(&self, data: &DataSource<'_>, seed: u64) -> Result<RegLearnOutput> {
        let p = &self.params;
        let need = self.required_samples();
        let owned;
        let samples: &[(usize, f64)] = match data {
            DataSource::Dataset(d) => {
                if d.len() < need {
                    return Err(Error::Precondition(format!("need {need} samples, dataset has {}", d.len())));
                }
                d
            }
            DataSource::Sampler(draw) => {
                let mut rng = stream_rng(seed, 0);
                owned = (0..need).map(|_| draw(&mut rng)).collect::<Vec<_>>();
                &owned
            }
        };
        let points = self.universe.points();
        if let Some(&(x, _)) = samples[..need].iter().find(|(x, _)| *x >= points) {
            return Err(Error::Domain(format!("sample point {x} outside domain of size {points}")));
        }
        let discrete = discretize_dataset(&samples[..need], self.cfg.eta_bar)?;
        let (head, groups) = discrete.split_at(p.n1 as usize);

        let f = self.universe.base();
        let emp = EmpiricalDistribution::from_samples(head)?;
        let eta_hat = noisy_opt_error(f, &emp, self.cfg.epsilon, p.n1 as usize, &mut stream_rng(seed, 1))?;
        let d = f64::from(p.d.max(0));
        let alpha1 = eta_hat.value + p.alpha_delta / 2.0 + (d + 1.0) * p.alpha_delta;
        let tree = ReduceTreeParams::new(alpha1, p.alpha_delta, p.ell_prime)?;

        let mut records = Vec::new();
        let mut user_sets: Vec<BTreeSet<Hypothesis>> = Vec::new();
        let mut class_of: BTreeMap<Hypothesis, Members> = BTreeMap::new();
        for chunk in groups.chunks(p.n0 as usize) {
            let p_hat = EmpiricalDistribution::from_samples(chunk)?;
            let errors = member_errors(&self.universe, &p_hat)?;
            let mut set = BTreeSet::new();
            let candidates = self.group_candidates(&errors, &tree)?;
            if let Some(cands) = &candidates {
                for g in cands {
                    for (soa, l) in self.representatives(g)? {
                        class_of.entry(soa.clone()).or_insert(l);
                        set.insert(soa);
                    }
                }
            }
            records.push(GroupRecord { candidates: candidates.map(|c| c.len()), represented: set.len() });
            user_sets.push(set);
        }

        let measured = user_sets.iter().map(BTreeSet::len).max().unwrap_or(0).max(1);
        let sparsity = if (measured as f64).ln() > p.ln_sparsity_cap {
            p.ln_sparsity_cap.exp().floor().max(1.0) as usize
        } else {
            measured
        };
        let ids: BTreeMap<String, Hypothesis> =
            class_of.keys().map(|h| (candidate_id(h), h.clone())).collect();
        let inst = SelectionInstance {
            user_sets: user_sets.iter().map(|s| s.iter().map(|h| candidate_id(h)).collect()).collect(),
            sparsity,
        };
        let privacy = PrivacyParams { epsilon: self.cfg.epsilon, delta: self.cfg.delta };
        let outcome = sparse_select(&inst, &privacy, &mut stream_rng(seed, 2))?;
        let soa = outcome.choice.as_ref().map(|id| ids[id].clone());
        let h_hat = soa.as_ref().map(|g| undisc_hypothesis(g, p.k)).transpose()?;
        let l_hat = soa.as_ref().map(|g| self.universe.hypotheses_of(&class_of[g]));
        let abstained = records.iter().filter(|r| r.candidates.is_none()).count();
        Ok(RegLearnOutput {
            h_hat,
            soa,
            l_hat,
            transcript: Transcript {
                eta_hat,
                alpha1,
                groups: records,
                abstained,
                sparsity,
                threshold: outcome.threshold,
                truncated_users: outcome.truncated_users,
                counts: outcome.counts,
                unused_samples: samples.len() - need,
                seed,
            },
        })
    }
}

pub fn reg_learn(h: &RealClass, data: &DataSource<'_>, cfg: &RegLearnConfig, seed: u64) -> Result<RegLearnOutput> {
    RegLearner::new(h, *cfg)?.run(data, seed)
}

/// `err(h_hat) - min_h err(h)` under `q`.
pub fn excess_risk(h_hat: &[f64], q: &EmpiricalDistribution<f64>, h: &RealClass) -> Result<f64> {
    q.check_domain(h_hat.len())?;
    if h.is_empty() {
        return Err(Error::Precondition("excess risk against the empty class".into()));
    }
    let best = h.hypotheses().iter().map(|g| q.abs_error(g)).fold(f64::INFINITY, f64::min);
    Ok(q.abs_error(h_hat) - best)
}

/// Empirical `1 - beta` quantile, over `runs` draws of `n0` samples, of
/// `sup_h |err_Q(h) - err_Qhat(h)| / eta_bar`, floored at 1. Used as the
/// uniform-convergence constant in the excess-risk bound.
pub fn calibrate_c1<R: Rng + ?Sized>(
    h: &RealClass,
    q: &EmpiricalDistribution<f64>,
    sampler: impl Fn(&mut R) -> (usize, f64),
    n0: usize,
    eta_bar: f64,
    beta: f64,
    runs: usize,
    rng: &mut R,
) -> Result<f64> {
    if runs == 0 || n0 == 0 {
        return Err(Error::Config("calibration needs positive runs and sample size".into()));
    }
    let truth: Vec<f64> = h.hypotheses().iter().map(|g| q.abs_error(g)).collect();
    let mut devs: Vec<f64> = (0..runs)
        .map(|_| {
            let s: Vec<(usize, f64)> = (0..n0).map(|_| sampler(rng)).collect();
            let emp = EmpiricalDistribution::from_samples(&s)?;
            Ok(h.hypotheses()
                .iter()
                .zip(&truth)
                .map(|(g, t)| (emp.abs_error(g) - t).abs())
                .fold(0.0, f64::max)
                / eta_bar)
        })
        .collect::<Result<_>>()?;
    devs.sort_by(f64::total_cmp);
    let idx = (((1.0 - beta) * runs as f64).ceil() as usize).clamp(1, runs) - 1;
    Ok(devs[idx].max(1.0))
}
