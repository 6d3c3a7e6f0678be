//! Finite value distributions of additive functions and their
//! concentration functions.
//!
//! Exact constructions carry every atom as an interval `[lo, hi]` of true
//! values while folding, so the `resolution` a distribution reports is a
//! certified bound: each unit of mass sits within `resolution` of its atom.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::AdditiveFunctionSpec;
use crate::error::{Error, Result};
use crate::primes::{isqrt, PrimeTable};
use crate::sum::{csum, CompensatedSum};

/// Values closer than this are one atom.
pub const MERGE_TOL: f64 = 1e-12;

/// Allowed drift of `sum mass + tail_mass` away from 1.
pub const MASS_TOL: f64 = 1e-9;

pub const DEFAULT_ATOM_BUDGET: usize = 4_000_000;
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleModel {
    /// Exact geometric prime exponents: the law is the smooth distribution.
    Geometric,
    /// Bernoulli indicators `X_p`, ignoring prime powers.
    Bernoulli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Empirical {
        x: u64,
    },
    SmoothExact {
        y: f64,
    },
    /// Law of the squarefree `q`-smooth weights, normalized.
    SquarefreeSmooth {
        q: f64,
    },
    MonteCarlo {
        seed: u64,
        samples: u64,
        shards: u32,
        alpha: f64,
        model: SampleModel,
    },
}

impl Provenance {
    /// DKW radius of a Monte Carlo law, 0 otherwise.
    pub fn stat_radius(&self) -> f64 {
        match *self {
            Provenance::MonteCarlo { samples, alpha, .. } => crate::model::dkw_radius(samples, alpha),
            _ => 0.0,
        }
    }

    fn to_tag(&self) -> String {
        match self {
            Provenance::Empirical { x } => format!("empirical;x={x}"),
            Provenance::SmoothExact { y } => format!("smooth_exact;y={}", fmt_f64(*y)),
            Provenance::SquarefreeSmooth { q } => format!("squarefree_smooth;q={}", fmt_f64(*q)),
            Provenance::MonteCarlo {
                seed,
                samples,
                shards,
                alpha,
                model,
            } => format!(
                "monte_carlo;seed={seed};samples={samples};shards={shards};alpha={};model={}",
                fmt_f64(*alpha),
                match model {
                    SampleModel::Geometric => "geometric",
                    SampleModel::Bernoulli => "bernoulli",
                }
            ),
        }
    }

    fn from_tag(tag: &str) -> std::result::Result<Self, String> {
        let mut parts = tag.split(';');
        let kind = parts.next().unwrap_or_default();
        let mut kv = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| format!("bad provenance field `{p}`"))?;
            kv.insert(k, v);
        }
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| format!("provenance lacks `{k}`"));
        let num = |k: &str| -> std::result::Result<f64, String> {
            get(k)?.parse().map_err(|e| format!("provenance `{k}`: {e}"))
        };
        let int = |k: &str| -> std::result::Result<u64, String> {
            get(k)?.parse().map_err(|e| format!("provenance `{k}`: {e}"))
        };
        Ok(match kind {
            "empirical" => Provenance::Empirical { x: int("x")? },
            "smooth_exact" => Provenance::SmoothExact { y: num("y")? },
            "squarefree_smooth" => Provenance::SquarefreeSmooth { q: num("q")? },
            "monte_carlo" => Provenance::MonteCarlo {
                seed: int("seed")?,
                samples: int("samples")?,
                shards: int("shards")? as u32,
                alpha: num("alpha")?,
                model: match get("model")? {
                    "geometric" => SampleModel::Geometric,
                    "bernoulli" => SampleModel::Bernoulli,
                    m => return Err(format!("unknown sample model `{m}`")),
                },
            },
            k => return Err(format!("unknown provenance `{k}`")),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawDistribution {
    atoms: Vec<Atom>,
    tail_mass: f64,
    resolution: f64,
    #[serde(default)]
    slack: f64,
    provenance: Provenance,
}

/// Weighted atoms plus certified unrepresented tail mass.
///
/// Every unit of mass lies within `resolution` of its atom, except for at
/// most `slack` mass whose displacement is unbounded. Exact and sampled laws
/// have zero slack; grid convolutions carry the probability that too many
/// rounded prime values add up along one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DiscreteDistribution {
    atoms: Vec<Atom>,
    tail_mass: f64,
    resolution: f64,
    slack: f64,
    provenance: Provenance,
    /// `cumulative[i] = sum of masses of atoms[..i]`.
    cumulative: Vec<f64>,
}

impl TryFrom<RawDistribution> for DiscreteDistribution {
    type Error = Error;
    fn try_from(r: RawDistribution) -> Result<Self> {
        DiscreteDistribution::new(r.atoms, r.tail_mass, r.resolution, r.provenance)?.with_slack(r.slack)
    }
}

impl From<DiscreteDistribution> for RawDistribution {
    fn from(d: DiscreteDistribution) -> Self {
        RawDistribution {
            atoms: d.atoms,
            tail_mass: d.tail_mass,
            resolution: d.resolution,
            slack: d.slack,
            provenance: d.provenance,
        }
    }
}

impl DiscreteDistribution {
    pub fn new(atoms: Vec<Atom>, tail_mass: f64, resolution: f64, provenance: Provenance) -> Result<Self> {
        if !(tail_mass >= 0.0 && tail_mass.is_finite()) {
            return Err(Error::invalid(format!("tail mass {tail_mass} must be >= 0")));
        }
        if !(resolution >= 0.0 && resolution.is_finite()) {
            return Err(Error::invalid(format!("resolution {resolution} must be >= 0")));
        }
        for a in &atoms {
            if !(a.mass > 0.0 && a.mass.is_finite() && a.value.is_finite()) {
                return Err(Error::invalid(format!("bad atom {a:?}")));
            }
        }
        if let Some(w) = atoms.windows(2).find(|w| !(w[0].value < w[1].value)) {
            return Err(Error::invalid(format!(
                "atoms must be strictly increasing: {} then {}",
                w[0].value, w[1].value
            )));
        }
        let mut cumulative = Vec::with_capacity(atoms.len() + 1);
        let mut s = CompensatedSum::new();
        cumulative.push(0.0);
        for a in &atoms {
            s.add(a.mass);
            cumulative.push(s.value());
        }
        let total = s.value() + tail_mass;
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("total mass {total} is not 1")));
        }
        Ok(DiscreteDistribution {
            atoms,
            tail_mass,
            resolution,
            slack: 0.0,
            provenance,
            cumulative,
        })
    }

    pub fn with_slack(mut self, slack: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&slack) {
            return Err(Error::invalid(format!("slack {slack} must lie in [0, 1]")));
        }
        self.slack = slack;
        Ok(self)
    }

    pub fn point_mass(value: f64, provenance: Provenance) -> Self {
        Self::new(vec![Atom { value, mass: 1.0 }], 0.0, 0.0, provenance).expect("point mass is valid")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn total_mass(&self) -> f64 {
        self.represented_mass() + self.tail_mass
    }

    pub fn represented_mass(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn largest_atom(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).fold(0.0, f64::max)
    }

    /// Represented mass of atoms with value `<= u`.
    pub fn mass_at_most(&self, u: f64) -> f64 {
        self.cumulative[self.atoms.partition_point(|a| a.value <= u)]
    }

    /// Mass of atoms with value `<= u`, counting an atom as `<= u` when it
    /// lies within `tol` above `u`.
    pub fn mass_at_most_tol(&self, u: f64, tol: f64) -> f64 {
        self.mass_at_most(u + tol)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,mass\n");
        for a in &self.atoms {
            let _ = writeln!(s, "{},{}", fmt_f64(a.value), fmt_f64(a.mass));
        }
        let _ = writeln!(s, "#tail_mass,{}", fmt_f64(self.tail_mass));
        let _ = writeln!(s, "#resolution,{}", fmt_f64(self.resolution));
        if self.slack > 0.0 {
            let _ = writeln!(s, "#slack,{}", fmt_f64(self.slack));
        }
        let _ = writeln!(s, "#provenance,{}", self.provenance.to_tag());
        s
    }

    /// Parses the CSV form. Lines starting with `# ` are comments.
    pub fn from_csv_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        };
        let mut atoms = Vec::new();
        let mut tail = None;
        let mut resolution = None;
        let mut provenance = None;
        let mut slack = 0.0;
        let mut seen_header = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let ln = i + 1;
            if t.is_empty() || t.starts_with("# ") || t == "#" {
                continue;
            }
            if let Some(footer) = t.strip_prefix('#') {
                let (k, v) = footer
                    .split_once(',')
                    .ok_or_else(|| perr(ln, format!("bad footer `{t}`")))?;
                let fnum = |v: &str| v.trim().parse::<f64>().map_err(|e| perr(ln, format!("{k}: {e}")));
                match k {
                    "tail_mass" => tail = Some(fnum(v)?),
                    "resolution" => resolution = Some(fnum(v)?),
                    "slack" => slack = fnum(v)?,
                    "provenance" => provenance = Some(Provenance::from_tag(v.trim()).map_err(|e| perr(ln, e))?),
                    _ => return Err(perr(ln, format!("unknown footer `{k}`"))),
                }
                continue;
            }
            if !seen_header {
                if t != "value,mass" {
                    return Err(perr(ln, format!("expected header `value,mass`, got `{t}`")));
                }
                seen_header = true;
                continue;
            }
            let (a, b) = t
                .split_once(',')
                .ok_or_else(|| perr(ln, "expected two columns".into()))?;
            let value = a.trim().parse().map_err(|e| perr(ln, format!("value: {e}")))?;
            let mass = b.trim().parse().map_err(|e| perr(ln, format!("mass: {e}")))?;
            atoms.push(Atom { value, mass });
        }
        if !seen_header {
            return Err(perr(0, "missing header".into()));
        }
        let provenance = provenance.ok_or_else(|| perr(0, "missing #provenance footer".into()))?;
        Self::new(
            atoms,
            tail.ok_or_else(|| perr(0, "missing #tail_mass footer".into()))?,
            resolution.ok_or_else(|| perr(0, "missing #resolution footer".into()))?,
            provenance,
        )?
        .with_slack(slack)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(f), path)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// 17 significant digits; round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------------------
// Product-law convolution

/// One independent factor: outcomes `(value, probability)`, the zero
/// outcome first.
#[derive(Clone, Debug)]
pub(crate) struct FactorLaw {
    pub outcomes: Vec<(f64, f64)>,
}

impl FactorLaw {
    /// Probability of a nonzero-index outcome.
    fn hit_probability(&self) -> f64 {
        self.outcomes[1..].iter().map(|o| o.1).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionOptions {
    /// Mass that may be dropped, split evenly between exponent caps and
    /// pruning of the extreme atoms. The same amount bounds the slack of a
    /// grid convolution.
    pub tail_budget: f64,
    /// Certified distance from any unit of non-slack mass to its atom;
    /// 0 tracks exact values, merged at `MERGE_TOL`.
    pub resolution: f64,
    pub atom_budget: usize,
    #[serde(default)]
    pub order: FoldOrder,
}

impl ConvolutionOptions {
    pub fn new(tail_budget: f64, resolution: f64) -> Self {
        ConvolutionOptions {
            tail_budget,
            resolution,
            atom_budget: DEFAULT_ATOM_BUDGET,
            order: FoldOrder::default(),
        }
    }
}

/// Order in which prime factors are convolved, by `|f(p)|`.
///
/// Folding the small shifts first keeps the support narrow through the long
/// run of large primes; the few wide factors come last.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldOrder {
    #[default]
    SmallestFirst,
    LargestFirst,
}

/// Pruning allowance after fold `i` of `n`.
fn allowance(budget: f64, i: usize, n: usize) -> f64 {
    budget * (i + 1) as f64 / n.max(1) as f64
}

/// Exact convolution: atoms keep their float values and merge only when
/// they agree to `MERGE_TOL`.
fn fold_exact(laws: &[FactorLaw], prune_budget: f64, atom_budget: usize) -> Result<Vec<Atom>> {
    let mut cells = vec![Atom { value: 0.0, mass: 1.0 }];
    let mut next: Vec<Atom> = Vec::new();
    let mut acc: Vec<Atom> = Vec::new();
    let mut pruned = 0.0;
    for (i, law) in laws.iter().enumerate() {
        acc.clear();
        let q0 = law.outcomes[0].1;
        acc.extend(cells.iter().map(|a| Atom {
            value: a.value,
            mass: a.mass * q0,
        }));
        for &(v, q) in &law.outcomes[1..] {
            next.clear();
            merge_sorted(&acc, &cells, v, q, &mut next);
            std::mem::swap(&mut acc, &mut next);
        }
        cells.clear();
        for a in acc.drain(..) {
            match cells.last_mut() {
                Some(last) if a.value - last.value <= MERGE_TOL => last.mass += a.mass,
                _ => cells.push(a),
            }
        }
        let (l, r) = trim_ends(
            cells.len(),
            |k| cells[k].mass,
            &mut pruned,
            allowance(prune_budget, i, laws.len()),
        );
        cells.truncate(r);
        cells.drain(..l);
        if cells.len() > atom_budget {
            return Err(Error::AtomExplosion {
                atoms: cells.len(),
                budget: atom_budget,
            });
        }
    }
    Ok(cells)
}

/// Merges sorted `a` with `b` shifted by `v` and scaled by `q`.
fn merge_sorted(a: &[Atom], b: &[Atom], v: f64, q: f64, out: &mut Vec<Atom>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i].value <= b[j].value + v);
        if take_a {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(Atom {
                value: b[j].value + v,
                mass: b[j].mass * q,
            });
            j += 1;
        }
    }
}

/// Drops the lighter end cell while the running total stays within
/// `allowance`; returns the kept range `l..r`.
fn trim_ends(len: usize, mass: impl Fn(usize) -> f64, pruned: &mut f64, allowance: f64) -> (usize, usize) {
    let (mut l, mut r) = (0usize, len);
    while r - l > 1 {
        let (ml, mr) = (mass(l), mass(r - 1));
        let m = ml.min(mr);
        if *pruned + m > allowance {
            break;
        }
        *pruned += m;
        if ml <= mr {
            l += 1;
        } else {
            r -= 1;
        }
    }
    (l, r)
}

/// Least `m >= 1` with `P(H > m) <= budget`, where `H` counts independent
/// events of the given probabilities, together with that probability.
fn hit_count_quantile(probs: &[f64], budget: f64) -> Result<(usize, f64)> {
    const MAX_HITS: usize = 256;
    // dp[k] = P(H = k) for k < MAX_HITS, dp[MAX_HITS] = P(H >= MAX_HITS)
    let mut dp = vec![0.0f64; MAX_HITS + 1];
    dp[0] = 1.0;
    let mut top = 0;
    for &q in probs {
        top = (top + 1).min(MAX_HITS);
        for k in (1..=top).rev() {
            let stay = if k == MAX_HITS { dp[k] } else { dp[k] * (1.0 - q) };
            dp[k] = stay + dp[k - 1] * q;
        }
        dp[0] *= 1.0 - q;
    }
    for m in 1..MAX_HITS {
        let above = dp[m + 1..].iter().sum::<f64>();
        if above <= budget {
            return Ok((m, above));
        }
    }
    Err(Error::invalid(
        "hit count has no usable quantile; lower the prime range",
    ))
}

/// Grid convolution: each outcome value is rounded to a multiple of `h`, so
/// a path hitting `k` primes moves by at most `k h / 2`. Paths with more
/// than `m` hits form the slack, and `h = 2 resolution / m`.
fn fold_grid(
    laws: &[FactorLaw],
    prune_budget: f64,
    opts: &ConvolutionOptions,
    slack_budget: f64,
) -> Result<(Vec<Atom>, f64)> {
    let probs: Vec<f64> = laws.iter().map(FactorLaw::hit_probability).collect();
    let (m, slack) = hit_count_quantile(&probs, slack_budget)?;
    let h = 2.0 * opts.resolution / m as f64;
    let shifted: Vec<Vec<(i64, f64)>> = laws
        .iter()
        .map(|l| l.outcomes.iter().map(|&(v, q)| ((v / h).round() as i64, q)).collect())
        .collect();
    let mut offset: i64 = 0;
    let mut cells = vec![1.0f64];
    let mut next: Vec<f64> = Vec::new();
    let mut pruned = 0.0;
    for (i, law) in shifted.iter().enumerate() {
        let lo = law.iter().map(|o| o.0).min().unwrap_or(0).min(0);
        let hi = law.iter().map(|o| o.0).max().unwrap_or(0).max(0);
        let width = cells.len() + (hi - lo) as usize;
        if width > opts.atom_budget {
            return Err(Error::AtomExplosion {
                atoms: width,
                budget: opts.atom_budget,
            });
        }
        next.clear();
        next.resize(width, 0.0);
        for &(s, q) in law {
            let start = (s - lo) as usize;
            for (dst, &src) in next[start..start + cells.len()].iter_mut().zip(&cells) {
                *dst += q * src;
            }
        }
        offset += lo;
        std::mem::swap(&mut cells, &mut next);
        let (l, r) = trim_ends(
            cells.len(),
            |k| cells[k],
            &mut pruned,
            allowance(prune_budget, i, laws.len()),
        );
        cells.truncate(r);
        cells.drain(..l);
        offset += l as i64;
    }
    let atoms = cells
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w > 0.0)
        .map(|(k, &w)| Atom {
            value: (offset + k as i64) as f64 * h,
            mass: w,
        })
        .collect();
    Ok((atoms, slack))
}

fn fold_laws(
    laws: &[FactorLaw],
    prune_budget: f64,
    opts: &ConvolutionOptions,
    provenance: Provenance,
) -> Result<DiscreteDistribution> {
    let (atoms, slack) = if opts.resolution > 0.0 {
        fold_grid(laws, prune_budget, opts, opts.tail_budget)?
    } else {
        (fold_exact(laws, prune_budget, opts.atom_budget)?, 0.0)
    };
    let represented = csum(atoms.iter().map(|a| a.mass));
    let tail = (1.0 - represented).max(0.0);
    DiscreteDistribution::new(atoms, tail, opts.resolution, provenance)?.with_slack(slack)
}

/// Exponent cap per prime: the least `k >= 1` with `p^{-k} <= share`.
fn exponent_cap(p: u64, share: f64) -> u32 {
    let pf = p as f64;
    let mut k = (-share.ln() / pf.ln()).ceil().max(1.0) as i32;
    while k > 1 && pf.powi(-(k - 1)) <= share {
        k -= 1;
    }
    while pf.powi(-k) > share {
        k += 1;
    }
    k as u32
}

fn smooth_laws(f: &AdditiveFunctionSpec, primes: &[u64], cap_budget: f64) -> Result<Vec<FactorLaw>> {
    let share = cap_budget / primes.len().max(1) as f64;
    let mut laws = Vec::with_capacity(primes.len());
    for &p in primes {
        let pf = p as f64;
        let outcomes = if f.strongly_additive {
            // P(p | n) = 1/p, and every positive exponent carries f(p)
            vec![(0.0, 1.0 - 1.0 / pf), (f.prime_value(p)?, 1.0 / pf)]
        } else {
            let kmax = exponent_cap(p, share);
            let mut o = Vec::with_capacity(kmax as usize);
            o.push((0.0, 1.0 - 1.0 / pf));
            for k in 1..kmax {
                o.push((f.value(p, k)?, (1.0 - 1.0 / pf) * pf.powi(-(k as i32))));
            }
            o
        };
        laws.push(FactorLaw { outcomes });
    }
    Ok(laws)
}

/// Primes ordered by `|f(p)|`, ties by the prime.
fn fold_order(f: &AdditiveFunctionSpec, primes: &[u64], order: FoldOrder) -> Result<Vec<u64>> {
    let vals = f.prime_values(primes)?;
    let mut idx: Vec<usize> = (0..primes.len()).collect();
    idx.sort_by(|&a, &b| {
        let by_size = vals[a].abs().total_cmp(&vals[b].abs());
        let by_size = match order {
            FoldOrder::SmallestFirst => by_size,
            FoldOrder::LargestFirst => by_size.reverse(),
        };
        by_size.then(primes[a].cmp(&primes[b]))
    });
    Ok(idx.into_iter().map(|i| primes[i]).collect())
}

fn check_options(opts: &ConvolutionOptions) -> Result<()> {
    if !(opts.tail_budget > 0.0 && opts.tail_budget <= 1e-2) {
        return Err(Error::invalid(format!(
            "tail budget must lie in (0, 1e-2], got {}",
            opts.tail_budget
        )));
    }
    if !(opts.resolution >= 0.0 && opts.resolution.is_finite()) {
        return Err(Error::invalid("resolution must be >= 0"));
    }
    Ok(())
}

/// The smooth distribution: the law of `sum_{p <= y} f(p^{G_p})` with
/// independent `P(G_p = k) = (1 - 1/p) p^{-k}`.
pub fn smooth_exact(
    f: &AdditiveFunctionSpec,
    y: f64,
    opts: &ConvolutionOptions,
    table: &PrimeTable,
) -> Result<DiscreteDistribution> {
    if !(y >= 1.0) {
        return Err(Error::invalid(format!("smooth distribution needs y >= 1, got {y}")));
    }
    check_options(opts)?;
    table.require(y)?;
    let primes = fold_order(f, table.up_to(y), opts.order)?;
    let half = opts.tail_budget / 2.0;
    let laws = smooth_laws(f, &primes, half)?;
    fold_laws(&laws, half, opts, Provenance::SmoothExact { y })
}

/// Normalized law of the weights `mu^2(n)/n` over squarefree `q`-smooth `n`,
/// and the normalizer `prod_{p <= q} (1 + 1/p)`.
pub fn squarefree_smooth(
    f: &AdditiveFunctionSpec,
    q: f64,
    opts: &ConvolutionOptions,
    table: &PrimeTable,
) -> Result<(DiscreteDistribution, f64)> {
    if !(q >= 1.0) {
        return Err(Error::invalid(format!("need q >= 1, got {q}")));
    }
    check_options(opts)?;
    table.require(q)?;
    let primes = fold_order(f, table.up_to(q), opts.order)?;
    let mut laws = Vec::with_capacity(primes.len());
    let mut norm = 1.0;
    for &p in &primes {
        let pf = p as f64;
        norm *= 1.0 + 1.0 / pf;
        laws.push(FactorLaw {
            outcomes: vec![(0.0, pf / (pf + 1.0)), (f.prime_value(p)?, 1.0 / (pf + 1.0))],
        });
    }
    let d = fold_laws(&laws, opts.tail_budget, opts, Provenance::SquarefreeSmooth { q })?;
    Ok((d, norm))
}

/// Merges sorted sample values that agree to `MERGE_TOL` into atoms.
pub(crate) fn atoms_from_sorted_counts(values: &[(f64, u64)], total: u64) -> Vec<Atom> {
    let mut out: Vec<(f64, f64, u64)> = Vec::new();
    for &(v, n) in values {
        match out.last_mut() {
            Some(c) if v - c.0 <= MERGE_TOL => {
                c.1 = v;
                c.2 += n;
            }
            _ => out.push((v, v, n)),
        }
    }
    out.into_iter()
        .map(|(lo, hi, n)| Atom {
            value: 0.5 * (lo + hi),
            mass: n as f64 / total as f64,
        })
        .collect()
}

fn run_lengths(sorted: impl Iterator<Item = (f64, u64)>) -> Vec<(f64, u64)> {
    let mut out: Vec<(f64, u64)> = Vec::new();
    for (v, n) in sorted {
        match out.last_mut() {
            Some((last, m)) if *last == v => *m += n,
            _ => out.push((v, n)),
        }
    }
    out
}

/// `F_x`: the values `f(n)` for `n <= x`, each with mass `1/x`.
pub fn empirical_distribution(
    f: &AdditiveFunctionSpec,
    x: u64,
    budget: u64,
    table: &PrimeTable,
) -> Result<DiscreteDistribution> {
    if x == 0 {
        return Err(Error::invalid("x must be >= 1"));
    }
    if x > budget {
        return Err(Error::ResourceLimit {
            what: "integer enumeration",
            requested: x,
            limit: budget,
        });
    }
    let root = isqrt(x);
    table.require(root as f64)?;
    let base = table.up_to(root as f64);
    const SEG: u64 = 1 << 16;
    let nseg = x.div_ceil(SEG);
    let chunks: Vec<Result<Vec<(f64, u64)>>> = (0..nseg)
        .into_par_iter()
        .map(|s| {
            let lo = 1 + s * SEG;
            let hi = (lo + SEG - 1).min(x);
            let len = (hi - lo + 1) as usize;
            let mut rem: Vec<u64> = (lo..=hi).collect();
            let mut val = vec![0.0f64; len];
            for &p in base {
                let mut m = lo.div_ceil(p) * p;
                while m <= hi {
                    let i = (m - lo) as usize;
                    let mut k = 0;
                    while rem[i].is_multiple_of(p) {
                        rem[i] /= p;
                        k += 1;
                    }
                    val[i] += f.value(p, k)?;
                    m += p;
                }
            }
            for i in 0..len {
                if rem[i] > 1 {
                    val[i] += f.value(rem[i], 1)?;
                }
            }
            val.sort_by(f64::total_cmp);
            Ok(run_lengths(val.into_iter().map(|v| (v, 1))))
        })
        .collect();
    let mut pairs = Vec::new();
    for c in chunks {
        pairs.extend(c?);
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let counts = run_lengths(pairs.into_iter());
    let atoms = atoms_from_sorted_counts(&counts, x);
    DiscreteDistribution::new(atoms, 0.0, 0.0, Provenance::Empirical { x })
}

// ---------------------------------------------------------------------------
// Queries

/// Bracket on `G(u)`.
pub fn cdf(d: &DiscreteDistribution, u: f64) -> (f64, f64) {
    let r = d.resolution;
    let lower = (d.mass_at_most(u - r) - d.slack).clamp(0.0, 1.0);
    let upper = (d.mass_at_most(u + r) + d.tail_mass + d.slack).min(1.0);
    (lower, upper)
}

/// Bracket on the mass of `(a, b]`.
pub fn interval_mass(d: &DiscreteDistribution, a: f64, b: f64) -> (f64, f64) {
    let r = d.resolution;
    let s = d.provenance.stat_radius() + d.slack;
    let inner = if b - a > 2.0 * r {
        (d.mass_at_most(b - r) - d.mass_at_most(a + r)).max(0.0)
    } else {
        0.0
    };
    let outer = d.mass_at_most(b + r) - d.mass_at_most(a - r) + d.tail_mass;
    ((inner - 2.0 * s).clamp(0.0, 1.0), (outer + 2.0 * s).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerms {
    pub tail: f64,
    /// `2 * resolution`, the window widening that absorbs atom spans.
    pub bucketing: f64,
    /// `2 * DKW radius` for Monte Carlo laws.
    pub statistical: f64,
    /// Mass of the paths a grid convolution may have moved further than
    /// the resolution.
    #[serde(default)]
    pub slack: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationBracket {
    pub eps: f64,
    pub q_lower: f64,
    pub q_upper: f64,
    pub error_terms: ErrorTerms,
}

impl ConcentrationBracket {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.q_lower + self.q_upper)
    }
}

/// Largest mass of a window `(v_i - width, v_i]` with right endpoint at an
/// atom, by a two-pointer sweep.
pub fn max_window_mass(d: &DiscreteDistribution, width: f64) -> f64 {
    let atoms = &d.atoms;
    let cum = &d.cumulative;
    let mut best = 0.0f64;
    let mut j = 0;
    for i in 0..atoms.len() {
        while atoms[i].value - atoms[j].value >= width {
            j += 1;
        }
        best = best.max(cum[i + 1] - cum[j]);
    }
    best
}

/// `Q(eps) = sup_u G(u + eps) - G(u)` as a certified bracket.
pub fn concentration(d: &DiscreteDistribution, eps: f64) -> Result<ConcentrationBracket> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let r = d.resolution;
    let stat = 2.0 * d.provenance.stat_radius();
    let slack = d.slack;
    let lower_width = eps - 2.0 * r;
    let raw_lower = if r == 0.0 {
        max_window_mass(d, eps)
    } else if lower_width > 0.0 {
        max_window_mass(d, lower_width).max(d.largest_atom())
    } else {
        // the true values behind an atom lie within `r` of it; some window
        // of length eps holds its share over a cover of that span
        d.largest_atom() / ((2.0 * r / eps).ceil() + 1.0)
    };
    let raw_upper = max_window_mass(d, eps + 2.0 * r) + d.tail_mass + stat + slack;
    let q_upper = raw_upper.min(1.0);
    let q_lower = (raw_lower - stat - slack).clamp(0.0, q_upper);
    Ok(ConcentrationBracket {
        eps,
        q_lower,
        q_upper,
        error_terms: ErrorTerms {
            tail: d.tail_mass,
            bucketing: 2.0 * r,
            statistical: stat,
            slack,
        },
    })
}

/// `sup_u |F_a(u) - F_b(u)|` over the atoms of both laws; values within
/// `tol` are identified.
pub fn sup_cdf_distance(a: &DiscreteDistribution, b: &DiscreteDistribution, tol: f64) -> f64 {
    a.atoms
        .iter()
        .chain(b.atoms.iter())
        .map(|at| (a.mass_at_most(at.value + tol) - b.mass_at_most(at.value + tol)).abs())
        .fold(0.0, f64::max)
}
