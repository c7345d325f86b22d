//! Tree learner: grows a K-ary tree over the low-error subclasses of F until
//! some leaf class is irreducible at the current error level, then emits the
//! SOA hypotheses of the surviving leaves.

use serde::Serialize;

use crate::class::{DiscreteClass, EmpiricalDistribution, Hypothesis, Label, EPS};
use crate::error::{Error, Result};
use crate::members::Members;
use crate::tree::{KaryTree, NodeId};
use crate::universe::{Level, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReduceTreeParams {
    pub alpha1: f64,
    pub alpha_delta: f64,
    pub ell_prime: u64,
}

impl ReduceTreeParams {
    pub fn new(alpha1: f64, alpha_delta: f64, ell_prime: u64) -> Result<Self> {
        if !(alpha_delta > 0.0) || !alpha1.is_finite() {
            return Err(Error::Config(format!("need finite alpha1 and alpha_delta > 0, got {alpha1}, {alpha_delta}")));
        }
        if ell_prime == 0 {
            return Err(Error::Config("ell_prime must be positive".into()));
        }
        Ok(ReduceTreeParams { alpha1, alpha_delta, ell_prime })
    }

    /// Error level used in round `t` (1-based).
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha1 - (t as f64 - 1.0) * self.alpha_delta
    }

    /// Irreducibility demanded in round `t`, saturating.
    pub fn ell(&self, t: usize) -> u64 {
        u32::try_from(t)
            .ok()
            .and_then(|t| 2u64.checked_pow(t))
            .and_then(|p| p.checked_mul(self.ell_prime))
            .unwrap_or(u64::MAX)
    }
}

#[derive(Clone, Debug)]
pub struct ReduceTreeOutput {
    /// Distinct candidate hypotheses, sorted.
    pub candidates: Vec<Hypothesis>,
    pub tree: KaryTree,
    /// Leaves attaining the maximal sfat2 in the final round, in id order.
    pub final_leaves: Vec<NodeId>,
    pub t_final: usize,
    /// sfat2 of the input class.
    pub sfat: i32,
}

impl ReduceTreeOutput {
    pub fn depth(&self) -> usize {
        self.tree.depth()
    }
}

pub fn output_tree_depth(out: &ReduceTreeOutput) -> usize {
    out.depth()
}

/// Members of the base class with empirical error at most `alpha`.
pub fn low_error_members(u: &Universe, errors: &[f64], alpha: f64) -> Members {
    let mut m = u.none();
    for (i, &e) in errors.iter().enumerate() {
        if e <= alpha + EPS {
            m.insert(i);
        }
    }
    m
}

/// Every low-error member set the learner can look at. Two error vectors
/// with the same signature produce the same output.
pub fn threshold_signature(u: &Universe, errors: &[f64], params: &ReduceTreeParams) -> Vec<Members> {
    let d = u.sfat(&u.full()).max(0) as usize;
    let mut sig = Vec::with_capacity(3 * (d + 1));
    for t in 1..=d + 1 {
        let a = params.alpha(t);
        sig.push(low_error_members(u, errors, a));
        sig.push(low_error_members(u, errors, a - params.alpha_delta));
        sig.push(low_error_members(u, errors, a - 2.0 * params.alpha_delta / 3.0));
    }
    sig
}

/// Empirical error of every hypothesis of the universe's base class.
pub fn member_errors(u: &Universe, p_hat: &EmpiricalDistribution<Label>) -> Result<Vec<f64>> {
    p_hat.check_domain(u.points())?;
    if let Some(a) = p_hat.atoms().iter().find(|a| a.label == 0 || a.label > u.k()) {
        return Err(Error::Domain(format!("sample label {} outside 1..={}", a.label, u.k())));
    }
    Ok(u.base().hypotheses().iter().map(|h| p_hat.abs_error(h)).collect())
}

pub fn reduce_tree_reg(
    f: &DiscreteClass,
    p_hat: &EmpiricalDistribution<Label>,
    params: &ReduceTreeParams,
) -> Result<ReduceTreeOutput> {
    let u = Universe::new(f.clone());
    let errors = member_errors(&u, p_hat)?;
    u.reduce_tree_reg(&errors, params)
}

impl Universe {
    /// Runs the tree learner on the base class with the given per-member
    /// empirical errors.
    pub fn reduce_tree_reg(&self, errors: &[f64], params: &ReduceTreeParams) -> Result<ReduceTreeOutput> {
        let all = self.full();
        if all.is_empty() {
            return Err(Error::Precondition("tree learner needs a nonempty class".into()));
        }
        let d = self.sfat(&all);
        let du = d as usize;
        let at = |alpha: f64, tree: &KaryTree, v: NodeId| {
            self.restrict(&low_error_members(self, errors, alpha), &tree.ancestors(v))
        };
        // Leaves of the current tree with the largest sfat2 at level alpha.
        let top_leaves = |alpha: f64, tree: &KaryTree| {
            let scored: Vec<(NodeId, i32)> =
                tree.leaves().into_iter().map(|v| (v, self.sfat(&at(alpha, tree, v)))).collect();
            let best = scored.iter().map(|&(_, s)| s).max().unwrap_or(-1);
            let leaves = scored.into_iter().filter(|&(_, s)| s == best).map(|(v, _)| v).collect::<Vec<_>>();
            (best, leaves)
        };

        let mut tree = KaryTree::leaf(self.k());
        let mut t_final = du;
        for t in 1..=du {
            let alpha = params.alpha(t);
            let lower = alpha - params.alpha_delta;
            let ell = params.ell(t);
            let (best, leaves) = top_leaves(alpha, &tree);
            if best < 0 {
                return Err(Error::TreeLearner { alpha });
            }
            let breaks = leaves.iter().any(|&v| {
                let g = at(lower, &tree, v);
                let s = self.sfat(&g);
                s >= 0 && s == self.sfat(&at(alpha, &tree, v)) && self.is_irreducible(&g, ell)
            });
            if breaks {
                t_final = t - 1;
                break;
            }
            for v in leaves {
                let g_hi = at(alpha, &tree, v);
                let g = at(lower, &tree, v);
                if g_hi.is_empty() || self.sfat(&g) < self.sfat(&g_hi) {
                    continue;
                }
                let Level::Finite(level) = self.level(&g) else {
                    unreachable!("an infinitely irreducible leaf would have triggered the break");
                };
                let witness = self.witness_tree(&g, level + 1).expect("class is not (level+1)-irreducible");
                tree.graft(v, &witness)?;
            }
        }

        let (_, final_leaves) = top_leaves(params.alpha(t_final + 1), &tree);
        let emit = params.alpha(t_final + 1) - 2.0 * params.alpha_delta / 3.0;
        let mut candidates = Vec::new();
        for &v in &final_leaves {
            let g = at(emit, &tree, v);
            if !g.is_empty() && self.is_irreducible(&g, params.ell_prime) {
                candidates.push(self.soa(&g)?);
            }
        }
        candidates.sort();
        candidates.dedup();
        Ok(ReduceTreeOutput { candidates, tree, final_leaves, t_final, sfat: d })
    }
}
