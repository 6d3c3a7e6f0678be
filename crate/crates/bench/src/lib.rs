//! Shared fixtures for the benchmarks.

use addconc_core::{sieve, AdditiveFunctionSpec, ConvolutionOptions, PrimeTable};

/// Prime table sized for every benchmark in this crate.
pub fn bench_table() -> PrimeTable {
    sieve(1_000_000).expect("sieve to 10^6")
}

pub fn log_pow(c: f64) -> AdditiveFunctionSpec {
    AdditiveFunctionSpec::log_pow(c).expect("positive exponent")
}

/// Grid options used by the scaling experiment at this target window.
pub fn grid_options(eps: f64) -> ConvolutionOptions {
    ConvolutionOptions::new(1e-6, eps / 32.0)
}
