//! Differentially private regression over finite hypothesis classes.
//!
//! The crate discretizes a real-valued class, computes sequential
//! fat-shattering dimensions and irreducibility exactly, runs the
//! tree-based learner and stability filter on many data groups, and picks
//! a final hypothesis with a private sparse-selection mechanism.

pub mod class;
pub mod dimensions;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod irreducibility;
pub mod members;
pub mod oracle;
pub mod reduce_tree;
pub mod reglearn;
pub mod tree;
pub mod universe;

pub use class::{
    DiscreteClass, Domain, EmpiricalDistribution, Hypothesis, Label, RealClass, RealHypothesis, RestrictionSet,
};
pub use error::{Error, Result};
pub use universe::{Level, Universe};
