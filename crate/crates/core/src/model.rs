//! Monte Carlo draws from the smooth law and from the Bernoulli model.
//!
//! Each shard owns a ChaCha8 stream selected by its index, so the output
//! depends on `(seed, shards, samples)` and never on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::AdditiveFunctionSpec;
use crate::dist::{Atom, DiscreteDistribution, Provenance, SampleModel, MERGE_TOL};
use crate::error::{Error, Result};
use crate::primes::PrimeTable;

/// Cap on a sampled prime exponent.
pub const EXPONENT_CAP: u32 = 64;

/// Buckets per target window when values are bucketed.
pub const BUCKETS_PER_EPS: f64 = 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub seed: u64,
    pub samples: u64,
    pub shards: u32,
    pub alpha: f64,
    /// When set, values are bucketed to width `target_eps / 64`.
    pub target_eps: Option<f64>,
}

impl McConfig {
    pub fn new(seed: u64, samples: u64) -> Self {
        McConfig {
            seed,
            samples,
            shards: 16,
            alpha: 0.01,
            target_eps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("samples must be >= 1"));
        }
        if self.shards == 0 {
            return Err(Error::invalid("shards must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if let Some(e) = self.target_eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::invalid(format!("target eps must be positive, got {e}")));
            }
        }
        Ok(())
    }

    pub fn radius(&self) -> f64 {
        dkw_radius(self.samples, self.alpha)
    }
}

/// Dvoretzky–Kiefer–Wolfowitz radius: with probability `1 - alpha` the
/// empirical CDF of `samples` draws is uniformly this close to the truth.
pub fn dkw_radius(samples: u64, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * samples as f64)).sqrt()
}

/// Precomputed per-prime data for the skip sampler.
struct Sampler {
    /// Primes in increasing order, so `probs` is decreasing.
    probs: Vec<f64>,
    log_inv: Vec<f64>,
    /// `values[i][k-1] = f(p_i^k)`; one entry in the Bernoulli model.
    values: Vec<Vec<f64>>,
    model: SampleModel,
}

impl Sampler {
    fn new(f: &AdditiveFunctionSpec, primes: &[u64], model: SampleModel) -> Result<Self> {
        let mut values = Vec::with_capacity(primes.len());
        for &p in primes {
            let row = match model {
                SampleModel::Bernoulli => vec![f.value(p, 1)?],
                SampleModel::Geometric if f.strongly_additive => vec![f.prime_value(p)?],
                SampleModel::Geometric => {
                    // stop where p^k leaves u64: the remaining mass is below 2^-63
                    let kmax = (1..=EXPONENT_CAP)
                        .take_while(|&k| p.checked_pow(k).is_some())
                        .last()
                        .unwrap_or(1);
                    (1..=kmax).map(|k| f.value(p, k)).collect::<Result<_>>()?
                }
            };
            values.push(row);
        }
        Ok(Sampler {
            probs: primes.iter().map(|&p| 1.0 / p as f64).collect(),
            log_inv: primes.iter().map(|&p| (p as f64).ln()).collect(),
            values,
            model,
        })
    }

    /// One draw: skip through the decreasing hit probabilities with a
    /// geometric jump at the current bound, thinning each candidate.
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = self.probs.len();
        let mut sum = 0.0;
        let mut i = 0;
        while i < n {
            let q = self.probs[i];
            let u: f64 = 1.0 - rng.random::<f64>();
            let skip = if q >= 1.0 { 0.0 } else { (u.ln() / (-q).ln_1p()).floor() };
            if skip >= (n - i) as f64 {
                break;
            }
            let j = i + skip as usize;
            if j == i || rng.random::<f64>() * q < self.probs[j] {
                sum += self.hit_value(j, rng);
            }
            i = j + 1;
        }
        sum
    }

    fn hit_value(&self, j: usize, rng: &mut ChaCha8Rng) -> f64 {
        let row = &self.values[j];
        if row.len() == 1 || self.model == SampleModel::Bernoulli {
            return row[0];
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let extra = (-u.ln() / self.log_inv[j]).floor().min((row.len() - 1) as f64);
        row[extra as usize]
    }
}

fn shard_rng(seed: u64, shard: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    rng
}

/// Sorted `(lo, hi, count)` cells: runs of equal values, or grid buckets.
fn shard_cells(mut values: Vec<f64>, bucket: Option<f64>) -> Vec<(f64, f64, u64)> {
    values.sort_by(f64::total_cmp);
    let mut cells: Vec<(f64, f64, u64)> = Vec::new();
    let key = |v: f64| bucket.map(|h| (v / h).floor());
    let mut last_key = None;
    for v in values {
        let k = key(v);
        match cells.last_mut() {
            Some(c) if (bucket.is_some() && last_key == k) || (bucket.is_none() && c.1 == v) => {
                c.1 = v;
                c.2 += 1;
            }
            _ => cells.push((v, v, 1)),
        }
        last_key = k;
    }
    cells
}

fn sample(
    f: &AdditiveFunctionSpec,
    y: f64,
    cfg: &McConfig,
    table: &PrimeTable,
    model: SampleModel,
) -> Result<DiscreteDistribution> {
    cfg.validate()?;
    if !(y >= 1.0) {
        return Err(Error::invalid(format!("need y >= 1, got {y}")));
    }
    table.require(y)?;
    let sampler = Sampler::new(f, table.up_to(y), model)?;
    let bucket = cfg.target_eps.map(|e| e / BUCKETS_PER_EPS);
    let shards = cfg.shards as u64;
    let per = cfg.samples / shards;
    let extra = cfg.samples % shards;
    let parts: Vec<Vec<(f64, f64, u64)>> = (0..cfg.shards)
        .into_par_iter()
        .map(|s| {
            let m = per + u64::from((s as u64) < extra);
            let mut rng = shard_rng(cfg.seed, s);
            let vals: Vec<f64> = (0..m).map(|_| sampler.draw(&mut rng)).collect();
            shard_cells(vals, bucket)
        })
        .collect();
    let mut all: Vec<(f64, f64, u64)> = parts.into_iter().flatten().collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let total = cfg.samples as f64;
    let mut merged: Vec<(f64, f64, u64)> = Vec::new();
    for c in all {
        let joins = match (merged.last(), bucket) {
            (Some(m), Some(h)) => (m.0 / h).floor() == (c.0 / h).floor(),
            (Some(m), None) => c.1 <= m.0 + MERGE_TOL,
            (None, _) => false,
        };
        if joins {
            let m = merged.last_mut().unwrap();
            m.1 = m.1.max(c.1);
            m.2 += c.2;
        } else {
            merged.push(c);
        }
    }
    let atoms: Vec<Atom> = merged
        .into_iter()
        .map(|(lo, hi, n)| Atom {
            value: 0.5 * (lo + hi),
            mass: n as f64 / total,
        })
        .collect();
    let represented: f64 = crate::sum::csum(atoms.iter().map(|a| a.mass));
    DiscreteDistribution::new(
        atoms,
        (1.0 - represented).max(0.0),
        bucket.unwrap_or(0.0),
        Provenance::MonteCarlo {
            seed: cfg.seed,
            samples: cfg.samples,
            shards: cfg.shards,
            alpha: cfg.alpha,
            model,
        },
    )
}

/// Empirical law of independent draws of `sum_{p <= y} f(p^{G_p})`, an
/// estimate of the smooth distribution.
pub fn sample_smooth(
    f: &AdditiveFunctionSpec,
    y: f64,
    cfg: &McConfig,
    table: &PrimeTable,
) -> Result<DiscreteDistribution> {
    sample(f, y, cfg, table, SampleModel::Geometric)
}

/// Empirical law of `sum_{p <= y} f(p) X_p` with independent Bernoulli
/// `X_p`, `P(X_p = 1) = 1/p`.
pub fn bernoulli_sample(
    f: &AdditiveFunctionSpec,
    y: f64,
    cfg: &McConfig,
    table: &PrimeTable,
) -> Result<DiscreteDistribution> {
    sample(f, y, cfg, table, SampleModel::Bernoulli)
}
