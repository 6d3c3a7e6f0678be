//! Additive functions and the structural functionals built on their prime
//! values: the decay envelope g(t), the scale K(eps), the thresholds P_delta,
//! tail sums and spacing diagnostics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primes::{is_prime, isqrt, PrimeTable};
use crate::sum::CompensatedSum;

/// Rule for the values on prime powers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// `f(p) = (log p)^{-c}`; prime powers get `(k log p)^{-c}` unless the
    /// spec is strongly additive.
    LogPow { c: f64 },
    /// `f(p) = 1`: counts distinct prime factors when strongly additive,
    /// prime factors with multiplicity otherwise.
    Omega,
    /// `f(n) = log(phi(n)/n)`, i.e. `f(p^k) = log(1 - 1/p)`.
    LogPhiRatio,
    /// Explicit values keyed by prime power.
    Table(ValueTable),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub entries: BTreeMap<u64, f64>,
    /// Value for prime powers missing from `entries`; `None` makes a missing
    /// entry an error.
    pub default: Option<f64>,
}

/// The set of primes the envelope g(t) ranges over.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimeFilter {
    #[default]
    All,
    Exclude(BTreeSet<u64>),
}

impl PrimeFilter {
    pub fn admits(&self, p: u64) -> bool {
        match self {
            PrimeFilter::All => true,
            PrimeFilter::Exclude(s) => !s.contains(&p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFunctionSpec {
    pub family: Family,
    /// When set, `f(p^k) = f(p)` for every `k >= 1`.
    pub strongly_additive: bool,
    #[serde(default)]
    pub prime_filter: PrimeFilter,
}

impl AdditiveFunctionSpec {
    pub fn new(family: Family, strongly_additive: bool) -> Result<Self> {
        match &family {
            Family::LogPow { c } if !(c.is_finite() && *c > 0.0) => {
                return Err(Error::invalid(format!("LogPow needs c > 0, got {c}")));
            }
            Family::Table(t) => {
                if let Some((&k, v)) = t.entries.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(Error::invalid(format!("table value at {k} is {v}")));
                }
                if let Some(&k) = t.entries.keys().find(|&&k| prime_power_base(k).is_none()) {
                    return Err(Error::invalid(format!("table key {k} is not a prime power")));
                }
            }
            _ => {}
        }
        Ok(AdditiveFunctionSpec {
            family,
            strongly_additive,
            prime_filter: PrimeFilter::All,
        })
    }

    /// Strongly additive `f(p) = (log p)^{-c}`.
    pub fn log_pow(c: f64) -> Result<Self> {
        Self::new(Family::LogPow { c }, true)
    }

    /// `omega(n)`, the number of distinct prime factors.
    pub fn omega() -> Self {
        Self::new(Family::Omega, true).expect("omega is valid")
    }

    /// `Omega(n)`, prime factors counted with multiplicity.
    pub fn big_omega() -> Self {
        Self::new(Family::Omega, false).expect("Omega is valid")
    }

    pub fn log_phi_ratio() -> Self {
        Self::new(Family::LogPhiRatio, true).expect("log phi ratio is valid")
    }

    pub fn table(table: ValueTable, strongly_additive: bool) -> Result<Self> {
        Self::new(Family::Table(table), strongly_additive)
    }

    /// The function that vanishes identically.
    pub fn zero() -> Self {
        Self::table(
            ValueTable {
                entries: BTreeMap::new(),
                default: Some(0.0),
            },
            true,
        )
        .expect("zero table is valid")
    }

    /// Strongly additive table from explicit prime values.
    pub fn from_prime_values<I: IntoIterator<Item = (u64, f64)>>(values: I) -> Result<Self> {
        Self::table(
            ValueTable {
                entries: values.into_iter().collect(),
                default: None,
            },
            true,
        )
    }

    pub fn with_filter(mut self, filter: PrimeFilter) -> Self {
        self.prime_filter = filter;
        self
    }

    /// Strongly additive table holding `scale * f(p)` for the given primes.
    pub fn tabulate_scaled(&self, primes: &[u64], scale: f64) -> Result<Self> {
        let vals = primes
            .iter()
            .map(|&p| Ok((p, scale * self.prime_value(p)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_prime_values(vals)?.with_filter(self.prime_filter.clone()))
    }

    /// `f(p^k)` for `k >= 1`.
    pub fn value(&self, p: u64, k: u32) -> Result<f64> {
        debug_assert!(k >= 1);
        let k_eff = if self.strongly_additive { 1 } else { k };
        Ok(match &self.family {
            Family::LogPow { c } => (k_eff as f64 * (p as f64).ln()).powf(-*c),
            Family::Omega => k_eff as f64,
            Family::LogPhiRatio => (-1.0 / p as f64).ln_1p(),
            Family::Table(t) => {
                let key = if k_eff == 1 { Some(p) } else { p.checked_pow(k_eff) };
                match key.and_then(|q| t.entries.get(&q)) {
                    Some(&v) => v,
                    None => t.default.ok_or(Error::MissingTableEntry(key.unwrap_or(u64::MAX)))?,
                }
            }
        })
    }

    #[inline]
    pub fn prime_value(&self, p: u64) -> Result<f64> {
        self.value(p, 1)
    }

    pub fn prime_values(&self, primes: &[u64]) -> Result<Vec<f64>> {
        primes.iter().map(|&p| self.prime_value(p)).collect()
    }

    pub fn label(&self) -> String {
        let base = match &self.family {
            Family::LogPow { c } => format!("logpow(c={c})"),
            Family::Omega => "omega".to_string(),
            Family::LogPhiRatio => "logphiratio".to_string(),
            Family::Table(t) => format!("table({} entries)", t.entries.len()),
        };
        if self.strongly_additive {
            base
        } else {
            format!("{base},additive")
        }
    }
}

/// `p` if `n = p^k` for a prime `p` and `k >= 1`.
pub fn prime_power_base(n: u64) -> Option<u64> {
    if n < 2 {
        return None;
    }
    for k in (1..=63u32).rev() {
        let r = (n as f64).powf(1.0 / k as f64).round() as u64;
        for cand in [r.saturating_sub(1), r, r + 1] {
            if cand >= 2 && cand.checked_pow(k) == Some(n) && is_prime(cand) {
                return Some(cand);
            }
        }
    }
    None
}

impl ValueTable {
    /// Reads `prime_power,value` rows (header required).
    pub fn from_csv_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        };
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) => {
                    let l = l?;
                    let t = l.trim();
                    if !t.is_empty() && !t.starts_with('#') {
                        break t.to_string();
                    }
                }
                None => return Err(perr(0, "missing header".into())),
            }
        };
        let cols: Vec<_> = header.split(',').map(str::trim).collect();
        if cols != ["prime_power", "value"] {
            return Err(perr(1, format!("expected header `prime_power,value`, got `{header}`")));
        }
        let mut entries = BTreeMap::new();
        for (i, l) in lines {
            let l = l?;
            let t = l.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (a, b) = t
                .split_once(',')
                .ok_or_else(|| perr(i + 1, "expected two columns".into()))?;
            let q: u64 = a
                .trim()
                .parse()
                .map_err(|e| perr(i + 1, format!("bad prime power `{a}`: {e}")))?;
            let v: f64 = b
                .trim()
                .parse()
                .map_err(|e| perr(i + 1, format!("bad value `{b}`: {e}")))?;
            if prime_power_base(q).is_none() {
                return Err(perr(i + 1, format!("{q} is not a prime power")));
            }
            if !v.is_finite() {
                return Err(perr(i + 1, format!("value {v} is not finite")));
            }
            if entries.insert(q, v).is_some() {
                return Err(perr(i + 1, format!("duplicate prime power {q}")));
            }
        }
        Ok(ValueTable { entries, default: None })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), path)
    }
}

/// Prime factorization by trial division over the table, with a primality
/// check on whatever cofactor remains.
pub fn factorize(n: u64, table: &PrimeTable) -> Result<Vec<(u64, u32)>> {
    if n == 0 {
        return Err(Error::invalid("cannot factor 0"));
    }
    let mut out = Vec::new();
    let mut m = n;
    let root = isqrt(n);
    for &p in table.primes() {
        if p > root || p * p > m {
            break;
        }
        if m.is_multiple_of(p) {
            let mut k = 0;
            while m.is_multiple_of(p) {
                m /= p;
                k += 1;
            }
            out.push((p, k));
        }
    }
    if m > 1 {
        let covered = table.limit() >= isqrt(m);
        if covered || is_prime(m) {
            out.push((m, 1));
        } else {
            return Err(Error::FactorizationBudget { n });
        }
    }
    Ok(out)
}

/// `f(n) = sum over p^k || n of f(p^k)`; `f(1) = 0`.
pub fn eval(f: &AdditiveFunctionSpec, n: u64, table: &PrimeTable) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("additive functions are defined on n >= 1"));
    }
    let mut s = 0.0;
    for (p, k) in factorize(n, table)? {
        s += f.value(p, k)?;
    }
    Ok(s)
}

/// Value of the envelope `g(t)`, with a flag for whether the supremum over
/// primes `p >= t` is exact or truncated at a horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GValue {
    pub value: f64,
    pub exact: bool,
}

/// Precomputed envelope `g(t) = sup{|f(p)| (log p)^c : p >= t, p in P} / (log t)^c`.
#[derive(Clone, Debug)]
pub struct GProfile {
    c: f64,
    kind: GKind,
}

#[derive(Clone, Debug)]
enum GKind {
    /// The weighted sup is identically 1.
    Unit,
    /// Sup attained at the least admissible prime `>= t`: `(log p)^{power}`.
    LeastPrime { power: f64, filter: PrimeFilter },
    /// Suffix maxima over table primes up to the horizon.
    Scan { primes: Vec<u64>, suffix_max: Vec<f64> },
}

impl GProfile {
    pub fn new(f: &AdditiveFunctionSpec, c: f64, horizon: u64, table: &PrimeTable) -> Result<Self> {
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::invalid(format!("g needs c >= 0, got {c}")));
        }
        if let Family::LogPow { c: cf } = f.family {
            if (cf - c).abs() <= 1e-15 * c.max(1.0) {
                return Ok(GProfile { c, kind: GKind::Unit });
            }
            if cf > c {
                return Ok(GProfile {
                    c,
                    kind: GKind::LeastPrime {
                        power: c - cf,
                        filter: f.prime_filter.clone(),
                    },
                });
            }
        }
        table.require(horizon as f64)?;
        let primes: Vec<u64> = table
            .up_to(horizon as f64)
            .iter()
            .copied()
            .filter(|&p| f.prime_filter.admits(p))
            .collect();
        let mut suffix_max = vec![0.0f64; primes.len() + 1];
        for i in (0..primes.len()).rev() {
            let p = primes[i];
            let h = f.prime_value(p)?.abs() * (p as f64).ln().powf(c);
            suffix_max[i] = suffix_max[i + 1].max(h);
        }
        Ok(GProfile {
            c,
            kind: GKind::Scan { primes, suffix_max },
        })
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, GKind::Scan { .. })
    }

    /// The weighted supremum `sup{|f(p)|(log p)^c : p >= t}`.
    pub fn weighted_sup(&self, t: f64) -> f64 {
        match &self.kind {
            GKind::Unit => 1.0,
            GKind::LeastPrime { power, filter } => {
                let mut p = t.ceil().max(2.0) as u64;
                while !(is_prime(p) && filter.admits(p)) {
                    p += 1;
                }
                (p as f64).ln().powf(*power)
            }
            GKind::Scan { primes, suffix_max } => {
                let i = primes.partition_point(|&p| (p as f64) < t);
                suffix_max[i]
            }
        }
    }

    pub fn g(&self, t: f64) -> f64 {
        self.weighted_sup(t) / t.ln().powf(self.c)
    }
}

/// `g(t)` for `t >= 2`; the supremum is exact for closed-form families and
/// truncated at `horizon` otherwise.
pub fn g_of_t(f: &AdditiveFunctionSpec, c: f64, t: f64, horizon: u64, table: &PrimeTable) -> Result<GValue> {
    if !(t >= 2.0) {
        return Err(Error::invalid(format!("g(t) needs t >= 2, got {t}")));
    }
    let prof = GProfile::new(f, c, horizon.max(t as u64), table)?;
    Ok(GValue {
        value: prof.g(t),
        exact: prof.is_exact(),
    })
}

/// `K(eps) = min{n >= 3 : g(n) <= eps}` by exponential then binary search.
pub fn k_of_eps(f: &AdditiveFunctionSpec, c: f64, eps: f64, horizon: u64, table: &PrimeTable) -> Result<u64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("K(eps) needs 0 < eps <= 1, got {eps}")));
    }
    let prof = GProfile::new(f, c, horizon.max(3), table)?;
    k_of_eps_with(&prof, eps, horizon)
}

pub fn k_of_eps_with(prof: &GProfile, eps: f64, horizon: u64) -> Result<u64> {
    let g = |n: u64| prof.g(n as f64);
    if g(3) <= eps {
        return Ok(3);
    }
    // a truncated scan says nothing past its largest prime
    let cap = match &prof.kind {
        GKind::Scan { primes, .. } => primes.last().copied().unwrap_or(3).min(horizon).max(3),
        _ => 1u64 << 62,
    };
    let mut lo = 3u64;
    let mut hi = 6u64;
    loop {
        if hi >= cap {
            hi = cap;
            if g(hi) > eps {
                return Err(Error::UnboundedSearch {
                    horizon: cap,
                    g: g(hi),
                    eps,
                });
            }
            break;
        }
        if g(hi) <= eps {
            break;
        }
        lo = hi;
        hi *= 2;
    }
    // invariant: g(lo) > eps >= g(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if g(mid) <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `P_delta = exp(delta^{-1/c})`, the point where `(log p)^{-c}` equals `delta`.
pub fn p_delta(c: f64, delta: f64) -> f64 {
    delta.powf(-1.0 / c).exp()
}

/// `log P_delta`, finite even where `P_delta` overflows.
pub fn log_p_delta(c: f64, delta: f64) -> f64 {
    delta.powf(-1.0 / c)
}

/// Scale parameters for `f(p) = (log p)^{-c}` at a given `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProofParams {
    pub c: f64,
    pub eps: f64,
    pub delta: f64,
    /// May overflow to infinity; `log_p_delta` is always finite.
    pub p_delta: f64,
    pub log_p_delta: f64,
    /// Solves `P_eta / eta^2 = 1 / eps^2`.
    pub eta: f64,
    /// `|log(P_eta / eta^2) - log(1/eps^2)|`.
    pub eta_residual: f64,
    /// `log q_j` where `q_j = P_{2^{j+1} eps}`, `0 <= j <= J`. The ladder
    /// itself overflows `f64` already at moderate `eps`.
    pub log_q_ladder: Vec<f64>,
    /// Set when `eps > 100^{-c}`; the trivial bound `Q <= 1` covers that range.
    pub degenerate: bool,
}

const ETA_ITERATIONS: usize = 200;

pub fn proof_params(c: f64, eps: f64, delta: f64) -> Result<ProofParams> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::invalid(format!("proof parameters need c >= 1, got {c}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("need 0 < eps <= 1, got {eps}")));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid(format!("need delta > 0, got {delta}")));
    }
    let degenerate = eps > 100f64.powf(-c);
    // phi(eta) = log(P_eta/eta^2) - log(1/eps^2), strictly decreasing in eta
    let phi = |eta: f64| eta.powf(-1.0 / c) - 2.0 * eta.ln() + 2.0 * eps.ln();
    let (mut lo, mut hi) = if degenerate {
        (eps * 1e-6, 1e6)
    } else {
        (4.0 * eps, 0.5)
    };
    for _ in 0..ETA_ITERATIONS {
        // geometric midpoint keeps the relative step uniform
        let mid = (lo * hi).sqrt();
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    let eta = 0.5 * (lo + hi);
    let eta_residual = phi(eta).abs();

    let jmax = ((eta / eps).ln() / 2f64.ln()).floor() as i64 - 1;
    let log_q_ladder = (0..=jmax)
        .map(|j| log_p_delta(c, 2f64.powi(j as i32 + 1) * eps))
        .collect();
    Ok(ProofParams {
        c,
        eps,
        delta,
        p_delta: p_delta(c, delta),
        log_p_delta: log_p_delta(c, delta),
        eta,
        eta_residual,
        log_q_ladder,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSum {
    /// `sum |f(p)|/p` over `t^A < p <= cutoff`.
    pub truncated: f64,
    /// Bound on the part beyond the cutoff, when the family has one.
    pub remainder: Option<f64>,
}

impl TailSum {
    pub fn upper(&self) -> Option<f64> {
        self.remainder.map(|r| self.truncated + r)
    }
}

/// Bound on `sum_{p > x} (log p)^{-c}/p` for `c > 1`, by comparison with
/// `int_N^inf dt / (t (log t)^c)` where `N = floor(x) >= 2`.
pub fn logpow_tail_bound(c: f64, x: f64) -> Option<f64> {
    if c <= 1.0 {
        return None;
    }
    let n = x.floor();
    let mut extra = 0.0;
    let n = if n < 2.0 {
        // p = 2 sits beyond x but below the integral's start
        extra = 2f64.ln().powf(-c) / 2.0;
        2.0
    } else {
        n
    };
    Some(extra + n.ln().powf(1.0 - c) / (c - 1.0))
}

pub fn tail_sum(f: &AdditiveFunctionSpec, t: f64, a: f64, cutoff: f64, table: &PrimeTable) -> Result<TailSum> {
    if !(t >= 1.0 && a >= 1.0) {
        return Err(Error::invalid(format!(
            "tail sum needs t >= 1, A >= 1; got t={t}, A={a}"
        )));
    }
    let start = t.powf(a);
    let mut s = CompensatedSum::new();
    if start < cutoff {
        table.require(cutoff)?;
        for &p in table.range(start, cutoff) {
            s.add(f.prime_value(p)?.abs() / p as f64);
        }
    }
    let remainder = match f.family {
        Family::LogPow { c } => logpow_tail_bound(c, start.max(cutoff)),
        _ => None,
    };
    Ok(TailSum {
        truncated: s.value(),
        remainder,
    })
}

/// Witness for the spacing hypothesis on a prime range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacingWitness {
    /// Minimum of `|f(p2) - f(p1)| / min{g(p2)(p2 - p1)/(p2 log p2), g(p2^A)}`.
    pub min_ratio: f64,
    pub argmin: Option<(u64, u64)>,
    pub pairs: u64,
    /// Pairs skipped because the comparison scale vanished.
    pub skipped: u64,
    /// Two primes share a value.
    pub violation: bool,
}

pub const DEFAULT_SPACING_BUDGET: u64 = 10_000;

#[allow(clippy::too_many_arguments)]
pub fn spacing_min(
    f: &AdditiveFunctionSpec,
    c: f64,
    z: f64,
    w: f64,
    a: f64,
    budget: u64,
    table: &PrimeTable,
) -> Result<SpacingWitness> {
    if w > budget as f64 {
        return Err(Error::ResourceLimit {
            what: "spacing pair scan",
            requested: w as u64,
            limit: budget,
        });
    }
    if !(a >= 1.0) {
        return Err(Error::invalid(format!("spacing needs A >= 1, got {a}")));
    }
    table.require(w)?;
    let horizon = w.powf(a).min(table.limit() as f64) as u64;
    let prof = GProfile::new(f, c, horizon, table)?;
    let ps: Vec<u64> = table
        .range(z, w)
        .iter()
        .copied()
        .filter(|&p| f.prime_filter.admits(p))
        .collect();
    let vals = f.prime_values(&ps)?;
    let mut out = SpacingWitness {
        min_ratio: f64::INFINITY,
        argmin: None,
        pairs: 0,
        skipped: 0,
        violation: false,
    };
    for j in 1..ps.len() {
        let p2 = ps[j] as f64;
        let g2 = prof.g(p2);
        let g2a = prof.g(p2.powf(a));
        for i in 0..j {
            let p1 = ps[i] as f64;
            out.pairs += 1;
            let num = (vals[j] - vals[i]).abs();
            let scale = (g2 * (p2 - p1) / (p2 * p2.ln())).min(g2a);
            let ratio = if num == 0.0 {
                0.0
            } else if scale > 0.0 {
                num / scale
            } else {
                out.skipped += 1;
                continue;
            };
            if ratio < out.min_ratio {
                out.min_ratio = ratio;
                out.argmin = Some((ps[i], ps[j]));
            }
        }
    }
    out.violation = out.min_ratio == 0.0;
    Ok(out)
}
