//! Value distributions and concentration functions of additive arithmetic
//! functions: the empirical law over `n <= x`, the smooth law over
//! `y`-smooth integers, its Monte Carlo twin, and the comparators and
//! experiments built on them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod additive;
pub mod bounds;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod model;
pub mod primes;
pub mod sum;

pub use additive::{AdditiveFunctionSpec, Family, PrimeFilter, ValueTable};
pub use dist::{Atom, ConcentrationBracket, ConvolutionOptions, DiscreteDistribution, ErrorTerms, Provenance};
pub use error::{Error, Result};
pub use experiments::{ExperimentReport, Thresholds, Verdict};
pub use model::McConfig;
pub use primes::{sieve, PrimeTable, SieveConfig};
