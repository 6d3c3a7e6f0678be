//! Prime generation and reciprocal sums over prime windows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::AdditiveFunctionSpec;
use crate::error::{Error, Result};
use crate::sum::CompensatedSum;

/// Default number of odd candidates per sieve segment.
pub const DEFAULT_SEGMENT_FLAGS: usize = 1 << 20;

/// Default memory ceiling for a prime table, in bytes.
pub const DEFAULT_MEMORY_CEILING: u64 = 2 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SieveConfig {
    /// Odd candidates handled per segment.
    pub segment_flags: usize,
    /// Upper bound on bytes the finished table may occupy.
    pub memory_ceiling: u64,
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            segment_flags: DEFAULT_SEGMENT_FLAGS,
            memory_ceiling: DEFAULT_MEMORY_CEILING,
        }
    }
}

impl SieveConfig {
    /// Bytes charged against the ceiling for a table up to `limit`.
    fn footprint(&self, limit: u64) -> u64 {
        table_bytes(limit) + self.segment_flags as u64
    }

    /// Largest limit whose table fits under the memory ceiling.
    pub fn max_limit(&self) -> u64 {
        // invert table_bytes by doubling then bisecting
        let mut lo = 2u64;
        let mut hi = 4u64;
        while self.footprint(hi) <= self.memory_ceiling && hi < (1 << 40) {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.footprint(mid) <= self.memory_ceiling {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Upper estimate of the bytes used by the primes up to `limit`
/// (Rosser–Schoenfeld: pi(x) < 1.25506 x / ln x).
fn table_bytes(limit: u64) -> u64 {
    if limit < 17 {
        return 64;
    }
    let x = limit as f64;
    (1.25506 * x / x.ln() * 8.0) as u64
}

/// All primes up to `limit`, sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimeTable {
    limit: u64,
    primes: Vec<u64>,
}

impl PrimeTable {
    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn len(&self) -> usize {
        self.primes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.primes.iter().copied()
    }

    /// Primes `p` with `z < p <= w`.
    pub fn range(&self, z: f64, w: f64) -> &[u64] {
        let lo = self.primes.partition_point(|&p| (p as f64) <= z);
        let hi = self.primes.partition_point(|&p| (p as f64) <= w);
        if lo >= hi {
            &[]
        } else {
            &self.primes[lo..hi]
        }
    }

    /// Primes `p <= y`.
    pub fn up_to(&self, y: f64) -> &[u64] {
        self.range(f64::NEG_INFINITY, y)
    }

    pub fn count_up_to(&self, y: f64) -> usize {
        self.up_to(y).len()
    }

    pub fn contains(&self, n: u64) -> bool {
        self.primes.binary_search(&n).is_ok()
    }

    /// Fails unless the table covers every integer up to `x`.
    pub fn require(&self, x: f64) -> Result<()> {
        if x.is_finite() && x.floor() <= self.limit as f64 {
            Ok(())
        } else {
            Err(Error::TableTooSmall {
                need: if x.is_finite() { x.floor() as u64 } else { u64::MAX },
                have: self.limit,
            })
        }
    }
}

/// Segmented sieve of Eratosthenes over odd numbers. Segments are sieved in
/// parallel and concatenated in order, so the result is independent of the
/// worker count.
pub fn sieve(limit: u64) -> Result<PrimeTable> {
    sieve_with(limit, &SieveConfig::default())
}

pub fn sieve_with(limit: u64, cfg: &SieveConfig) -> Result<PrimeTable> {
    let need = cfg.footprint(limit);
    if need > cfg.memory_ceiling {
        return Err(Error::ResourceLimit {
            what: "prime table",
            requested: need,
            limit: cfg.memory_ceiling,
        });
    }
    if cfg.segment_flags == 0 {
        return Err(Error::invalid("segment size must be positive"));
    }
    if limit < 2 {
        return Ok(PrimeTable {
            limit,
            primes: Vec::new(),
        });
    }
    let root = isqrt(limit);
    let base = simple_sieve(root);

    // odd candidates 3, 5, ..., limit; index i <-> 2i + 3
    let odd_count = if limit >= 3 { (limit - 1) / 2 } else { 0 };
    let seg = cfg.segment_flags as u64;
    let nseg = odd_count.div_ceil(seg);
    let chunks: Vec<Vec<u64>> = (0..nseg)
        .into_par_iter()
        .map(|s| {
            let start = s * seg;
            let end = (start + seg).min(odd_count);
            sieve_segment(start, end, &base)
        })
        .collect();

    let mut primes = Vec::with_capacity(1 + chunks.iter().map(Vec::len).sum::<usize>());
    primes.push(2);
    for c in chunks {
        primes.extend(c);
    }
    Ok(PrimeTable { limit, primes })
}

fn sieve_segment(start: u64, end: u64, base: &[u64]) -> Vec<u64> {
    let lo = 2 * start + 3;
    let hi = 2 * (end - 1) + 3;
    let mut composite = vec![false; (end - start) as usize];
    for &p in base.iter().skip(1) {
        if p * p > hi {
            break;
        }
        // first odd multiple of p that is >= max(p*p, lo)
        let mut m = (p * p).max(lo.div_ceil(p) * p);
        if m % 2 == 0 {
            m += p;
        }
        let mut idx = ((m - 3) / 2 - start) as usize;
        while idx < composite.len() {
            composite[idx] = true;
            idx += p as usize;
        }
    }
    composite
        .iter()
        .enumerate()
        .filter(|(_, &c)| !c)
        .map(|(i, _)| 2 * (start + i as u64) + 3)
        .collect()
}

fn simple_sieve(n: u64) -> Vec<u64> {
    let n = n as usize;
    if n < 2 {
        return Vec::new();
    }
    let mut is_p = vec![true; n + 1];
    is_p[0] = false;
    is_p[1] = false;
    let mut i = 2;
    while i * i <= n {
        if is_p[i] {
            let mut j = i * i;
            while j <= n {
                is_p[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    (0..=n).filter(|&k| is_p[k]).map(|k| k as u64).collect()
}

pub(crate) fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1).checked_mul(r + 1).is_some_and(|s| s <= n) {
        r += 1;
    }
    r
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1u64 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `prod_{p <= y} (1 - 1/p)`.
pub fn mertens_product(y: f64, table: &PrimeTable) -> Result<f64> {
    if y < 1.0 || y.is_nan() {
        return Err(Error::invalid(format!("mertens_product needs y >= 1, got {y}")));
    }
    table.require(y)?;
    Ok(table.up_to(y).iter().fold(1.0, |acc, &p| acc * (1.0 - 1.0 / p as f64)))
}

/// Which values of `f(p)` a window sum admits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueWindow {
    /// `v < f(p) <= v + eps`.
    HalfOpen { v: f64, eps: f64 },
    /// Every value.
    Unbounded,
}

impl ValueWindow {
    pub fn half_open(v: f64, eps: f64) -> Self {
        ValueWindow::HalfOpen { v, eps }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            ValueWindow::HalfOpen { v, eps } => v < x && x <= v + eps,
            ValueWindow::Unbounded => true,
        }
    }
}

/// `sum 1/p` over primes `z < p <= w` whose value `f(p)` lies in `window`.
pub fn prime_window_sum(
    f: &AdditiveFunctionSpec,
    z: f64,
    w: f64,
    window: ValueWindow,
    table: &PrimeTable,
) -> Result<f64> {
    if !(z >= 1.0 && z <= w) {
        return Err(Error::invalid(format!("need 1 <= z <= w, got z={z}, w={w}")));
    }
    if let ValueWindow::HalfOpen { eps, .. } = window {
        if !(eps > 0.0) {
            return Err(Error::invalid("window width must be positive"));
        }
    }
    table.require(w)?;
    let mut s = CompensatedSum::new();
    for &p in table.range(z, w) {
        if window.contains(f.prime_value(p)?) {
            s.add(1.0 / p as f64);
        }
    }
    Ok(s.value())
}
