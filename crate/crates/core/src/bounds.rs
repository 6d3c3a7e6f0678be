//! Closed-form comparators for computed concentration values: theorem
//! envelopes, Ruzsa's bound, the three series and the characteristic
//! function of the smooth law.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{logpow_tail_bound, AdditiveFunctionSpec, Family};
use crate::error::{Error, Result};
use crate::primes::PrimeTable;
use crate::sum::CompensatedSum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvelopeSource {
    /// `eps^{1/c} << Q << min{c/(c-1), log(1/eps)} eps^{1/c}` for
    /// `f(p) = (log p)^{-c}`, `c >= 1`.
    ThmEkc { c: f64 },
    /// `1/log K << Q_{F_y} << min{1/(c-1), log(1/eps)} / log K`,
    /// `c in [1, 2]`.
    ThmMain { c: f64, k_eps: u64 },
    /// The older almost-sharp bounds, valid for `eps <= 1/3`.
    EkeAlmost { c: f64 },
    /// `Q asymp eps` for `0 < c < 1`.
    CLessOne { c: f64 },
}

/// Envelope shapes without implied constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSet {
    pub eps: f64,
    pub lower_envelope: f64,
    pub upper_envelope: f64,
    pub source: EnvelopeSource,
}

/// `min{a/(c-1), log(1/eps)}` with the `c = 1` branch taken as `log(1/eps)`.
/// `log(1/eps)` drops below 1 for `eps > 1/e`; the factor is floored at 1 so
/// the upper shape never undercuts the lower one.
fn capped_factor(numer: f64, c: f64, eps: f64) -> f64 {
    let log_inv = (1.0 / eps).ln();
    let m = if c > 1.0 {
        (numer / (c - 1.0)).min(log_inv)
    } else {
        log_inv
    };
    m.max(1.0)
}

pub fn envelopes(source: EnvelopeSource, eps: f64) -> Result<EnvelopeSet> {
    let violation = |msg: String| Err(Error::HypothesisViolation(msg));
    if !(eps > 0.0 && eps <= 0.5) {
        return violation(format!("eps = {eps} outside (0, 1/2]"));
    }
    let (lower, upper) = match source {
        EnvelopeSource::ThmEkc { c } => {
            if !(c >= 1.0) {
                return violation(format!("Theorem EKC needs c >= 1, got c = {c}"));
            }
            let l = eps.powf(1.0 / c);
            (l, capped_factor(c, c, eps) * l)
        }
        EnvelopeSource::ThmMain { c, k_eps } => {
            if !(1.0..=2.0).contains(&c) {
                return violation(format!("main theorem needs c in [1, 2], got c = {c}"));
            }
            if k_eps < 3 {
                return violation(format!("K(eps) >= 3 required, got {k_eps}"));
            }
            let l = 1.0 / (k_eps as f64).ln();
            (l, capped_factor(1.0, c, eps) * l)
        }
        EnvelopeSource::EkeAlmost { c } => {
            if !(c >= 1.0) {
                return violation(format!("the almost-sharp bounds need c >= 1, got c = {c}"));
            }
            if eps > 1.0 / 3.0 {
                return violation(format!("the almost-sharp bounds need eps <= 1/3, got {eps}"));
            }
            // (log log(1/eps))^2 is below 1 near eps = 1/3; clamp so the
            // shape stays above the lower one
            let ll = (1.0 / eps).ln().ln().powi(2).max(1.0);
            if c > 1.0 {
                let l = eps.powf(1.0 / c);
                (l, l * ll)
            } else {
                (eps, eps * (1.0 / eps).ln() * ll)
            }
        }
        EnvelopeSource::CLessOne { c } => {
            if !(c > 0.0 && c < 1.0) {
                return violation(format!("the c < 1 regime needs 0 < c < 1, got c = {c}"));
            }
            (eps, eps)
        }
    };
    Ok(EnvelopeSet {
        eps,
        lower_envelope: lower,
        upper_envelope: upper,
        source,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuzsaVariant {
    /// `min{1, (f(p) - lambda log p)^2}`.
    #[default]
    SquareInside,
    /// `(min{1, f(p) - lambda log p})^2`, the printed form read literally.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuzsaBound {
    pub lambda: f64,
    pub objective: f64,
    /// `objective^{-1/2}`; infinite when the objective vanishes.
    pub raw: f64,
    /// `min{1, raw}`, since `Q <= 1` always.
    pub bound: f64,
    pub degenerate: bool,
}

pub const RUZSA_GRID: usize = 10_000;

struct RuzsaTerms {
    f: Vec<f64>,
    logp: Vec<f64>,
    inv_p: Vec<f64>,
    variant: RuzsaVariant,
}

impl RuzsaTerms {
    fn objective(&self, lambda: f64) -> f64 {
        let mut s = CompensatedSum::new();
        s.add(lambda * lambda);
        for i in 0..self.f.len() {
            let d = self.f[i] - lambda * self.logp[i];
            let t = match self.variant {
                RuzsaVariant::SquareInside => (d * d).min(1.0),
                RuzsaVariant::Literal => d.min(1.0).powi(2),
            };
            s.add(t * self.inv_p[i]);
        }
        s.value()
    }
}

/// `(min_lambda {lambda^2 + sum_{p <= x} min{1, (f(p) - lambda log p)^2}/p})^{-1/2}`,
/// minimised by a grid scan and golden-section refinement around the best
/// grid point.
pub fn ruzsa_bound(f: &AdditiveFunctionSpec, x: f64, variant: RuzsaVariant, table: &PrimeTable) -> Result<RuzsaBound> {
    table.require(x)?;
    let primes = table.up_to(x);
    let fv = f.prime_values(primes)?;
    let terms = RuzsaTerms {
        logp: primes.iter().map(|&p| (p as f64).ln()).collect(),
        inv_p: primes.iter().map(|&p| 1.0 / p as f64).collect(),
        f: fv,
        variant,
    };
    let big = terms
        .f
        .iter()
        .zip(&terms.logp)
        .map(|(v, l)| v.abs() / l)
        .fold(0.0, f64::max);
    let span = 2.0 * big + 1.0;
    // odd point count puts lambda = 0 on the grid
    let n = RUZSA_GRID + 1;
    let step = 2.0 * span / (n - 1) as f64;
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| terms.objective(-span + i as f64 * step))
        .collect();
    let (best_i, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let lo = -span + best_i.saturating_sub(1) as f64 * step;
    let hi = -span + (best_i + 1).min(n - 1) as f64 * step;
    let (lambda, mut objective) = golden_section(|l| terms.objective(l), lo, hi, 1e-12);
    let grid_best = -span + best_i as f64 * step;
    let mut lambda = lambda;
    if values[best_i] <= objective {
        objective = values[best_i];
        lambda = grid_best;
    }
    let degenerate = objective <= 0.0;
    let raw = if degenerate {
        f64::INFINITY
    } else {
        objective.powf(-0.5)
    };
    Ok(RuzsaBound {
        lambda,
        objective,
        raw,
        bound: raw.min(1.0),
        degenerate,
    })
}

/// Golden-section minimisation of `h` on `[a, b]`.
pub fn golden_section<H: Fn(f64) -> f64>(h: H, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut hc, mut hd) = (h(c), h(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if hc <= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - inv_phi * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + inv_phi * (b - a);
            hd = h(d);
        }
    }
    if hc <= hd {
        (c, hc)
    } else {
        (d, hd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicPoint {
    pub cutoff: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeSeries {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    /// Bounds on `|sum over p > cutoff|` per series (LogPow only).
    pub remainders: Option<[f64; 3]>,
    /// Partial sums at cutoffs `2^k <= cutoff`, and at `cutoff`.
    pub dyadic: Vec<DyadicPoint>,
    /// Largest absolute change across the last three dyadic steps, per series.
    pub last_increments: [f64; 3],
}

/// `sum_{|f(p)| <= 1} f(p)/p`, `sum_{|f(p)| <= 1} f(p)^2/p` and
/// `sum_{|f(p)| > 1} 1/p` over `p <= cutoff`. The boundary `|f(p)| = 1`
/// belongs to the first two series.
pub fn three_series(f: &AdditiveFunctionSpec, cutoff: f64, table: &PrimeTable) -> Result<ThreeSeries> {
    table.require(cutoff)?;
    let primes = table.up_to(cutoff);
    let mut s = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
    let mut dyadic = Vec::new();
    let mut next = 2.0f64;
    for &p in primes {
        let pf = p as f64;
        while pf > next {
            dyadic.push(DyadicPoint {
                cutoff: next,
                s1: s[0].value(),
                s2: s[1].value(),
                s3: s[2].value(),
            });
            next *= 2.0;
        }
        let v = f.prime_value(p)?;
        if v.abs() <= 1.0 {
            s[0].add(v / pf);
            s[1].add(v * v / pf);
        } else {
            s[2].add(1.0 / pf);
        }
    }
    while next <= cutoff {
        dyadic.push(DyadicPoint {
            cutoff: next,
            s1: s[0].value(),
            s2: s[1].value(),
            s3: s[2].value(),
        });
        next *= 2.0;
    }
    let (s1, s2, s3) = (s[0].value(), s[1].value(), s[2].value());
    if dyadic.last().is_none_or(|d| d.cutoff < cutoff) {
        dyadic.push(DyadicPoint { cutoff, s1, s2, s3 });
    }
    let k = dyadic.len();
    let mut last_increments = [0.0f64; 3];
    for w in dyadic[k.saturating_sub(4)..].windows(2) {
        last_increments[0] = last_increments[0].max((w[1].s1 - w[0].s1).abs());
        last_increments[1] = last_increments[1].max((w[1].s2 - w[0].s2).abs());
        last_increments[2] = last_increments[2].max((w[1].s3 - w[0].s3).abs());
    }
    let remainders = match f.family {
        // beyond p = 2 every value (log p)^{-c} is at most 1, so s3 is complete
        Family::LogPow { c } if cutoff >= 3.0 && 2.0 * c > 1.0 => Some([
            logpow_tail_bound(c, cutoff).unwrap_or(f64::INFINITY),
            logpow_tail_bound(2.0 * c, cutoff).unwrap_or(f64::INFINITY),
            0.0,
        ]),
        _ => None,
    };
    Ok(ThreeSeries {
        s1,
        s2,
        s3,
        remainders,
        dyadic,
        last_increments,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharFnValue {
    pub value: Complex64,
    /// Bound on the distance to the untruncated product over `p <= y`.
    pub radius: f64,
}

/// `prod_{p <= y} (1 - 1/p) sum_{k <= kmax} e^{i xi f(p^k)} / p^k`.
///
/// For strongly additive `f` the geometric sum over `k >= 1` is closed, so
/// the factor `1 - 1/p + e^{i xi f(p)}/p` is used exactly.
pub fn char_fn(f: &AdditiveFunctionSpec, xi: f64, y: f64, kmax: u32, table: &PrimeTable) -> Result<CharFnValue> {
    if kmax == 0 {
        return Err(Error::invalid("kmax must be >= 1"));
    }
    table.require(y)?;
    let mut value = Complex64::new(1.0, 0.0);
    let mut radius = CompensatedSum::new();
    for &p in table.up_to(y) {
        let pf = p as f64;
        let factor = if f.strongly_additive {
            Complex64::new(1.0 - 1.0 / pf, 0.0) + Complex64::from_polar(1.0 / pf, xi * f.prime_value(p)?)
        } else {
            let mut s = Complex64::new(1.0, 0.0);
            let mut w = 1.0;
            for k in 1..=kmax {
                w /= pf;
                if w == 0.0 {
                    break;
                }
                s += Complex64::from_polar(w, xi * f.value(p, k)?);
            }
            radius.add(pf.powi(-(kmax as i32)) / (1.0 - 1.0 / pf));
            s * (1.0 - 1.0 / pf)
        };
        value *= factor;
    }
    Ok(CharFnValue {
        value,
        radius: radius.value(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{smooth_exact, ConvolutionOptions};
    use crate::primes::sieve;

    fn table() -> PrimeTable {
        sieve(100_000).unwrap()
    }

    #[test]
    fn envelope_examples() {
        let e = envelopes(EnvelopeSource::ThmEkc { c: 2.0 }, 1e-4).unwrap();
        assert!((e.lower_envelope - 1e-2).abs() < 1e-15);
        assert!((e.upper_envelope - 2e-2).abs() < 1e-15);
        let e = envelopes(EnvelopeSource::ThmEkc { c: 1.0 }, 1e-2).unwrap();
        assert!((e.upper_envelope / e.lower_envelope - 100f64.ln()).abs() < 1e-12);
        let e = envelopes(EnvelopeSource::CLessOne { c: 0.5 }, 1e-3).unwrap();
        assert_eq!((e.lower_envelope, e.upper_envelope), (1e-3, 1e-3));
        let e = envelopes(EnvelopeSource::ThmMain { c: 2.0, k_eps: 100 }, 0.01).unwrap();
        assert!((e.lower_envelope - 1.0 / 100f64.ln()).abs() < 1e-15);
        assert!((e.upper_envelope - 1.0 / 100f64.ln()).abs() < 1e-15);

        assert!(matches!(
            envelopes(EnvelopeSource::ThmMain { c: 3.0, k_eps: 10 }, 0.1),
            Err(Error::HypothesisViolation(_))
        ));
        assert!(envelopes(EnvelopeSource::ThmEkc { c: 0.5 }, 0.1).is_err());
        assert!(envelopes(EnvelopeSource::CLessOne { c: 1.0 }, 0.1).is_err());
        assert!(envelopes(EnvelopeSource::ThmEkc { c: 2.0 }, 0.6).is_err());
        assert!(envelopes(EnvelopeSource::EkeAlmost { c: 2.0 }, 0.4).is_err());
    }

    proptest::proptest! {
        #[test]
        fn envelope_order(c in 1.0f64..5.0, t in 0.0f64..1.0, k in 3u64..1_000_000) {
            let eps = 0.5 * 1e-12f64.powf(t);
            let e = envelopes(EnvelopeSource::ThmEkc { c }, eps).unwrap();
            proptest::prop_assert!(e.lower_envelope > 0.0 && e.lower_envelope <= e.upper_envelope);
            let ratio = e.upper_envelope / e.lower_envelope;
            let want = if c > 1.0 { (c / (c - 1.0)).min((1.0 / eps).ln()) } else { (1.0 / eps).ln() }.max(1.0);
            proptest::prop_assert!((ratio - want).abs() <= 1e-12 * want);
            let e = envelopes(EnvelopeSource::ThmMain { c: c.min(2.0), k_eps: k }, eps).unwrap();
            proptest::prop_assert!(e.lower_envelope <= e.upper_envelope);
            if eps <= 1.0 / 3.0 {
                let e = envelopes(EnvelopeSource::EkeAlmost { c }, eps).unwrap();
                proptest::prop_assert!(e.lower_envelope <= e.upper_envelope);
            }
        }
    }

    #[test]
    fn ruzsa_log_is_capped() {
        let t = table();
        let f = AdditiveFunctionSpec::from_prime_values(t.up_to(1000.0).iter().map(|&p| (p, (p as f64).ln()))).unwrap();
        let r = ruzsa_bound(&f, 1000.0, RuzsaVariant::SquareInside, &t).unwrap();
        // the objective is exactly 1 at lambda = 1
        assert!(r.objective <= 1.0 + 1e-12);
        assert!(r.raw >= 1.0 - 1e-12);
        assert_eq!(r.bound, 1.0);
    }

    #[test]
    fn ruzsa_zero_is_degenerate() {
        let t = table();
        let r = ruzsa_bound(&AdditiveFunctionSpec::zero(), 100.0, RuzsaVariant::SquareInside, &t).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.bound, 1.0);
        assert_eq!(r.lambda, 0.0);
    }

    #[test]
    fn ruzsa_omega_matches_dense_grid() {
        let t = table();
        let f = AdditiveFunctionSpec::omega();
        let r = ruzsa_bound(&f, 100.0, RuzsaVariant::SquareInside, &t).unwrap();
        let ps = t.up_to(100.0);
        let obj = |l: f64| {
            l * l
                + ps.iter()
                    .map(|&p| ((1.0 - l * (p as f64).ln()).powi(2)).min(1.0) / p as f64)
                    .sum::<f64>()
        };
        let span = 2.0 / 2f64.ln() + 1.0;
        let n = 1_000_000;
        let dense = (0..=n)
            .map(|i| obj(-span + 2.0 * span * i as f64 / n as f64))
            .fold(f64::INFINITY, f64::min);
        assert!(r.objective <= dense + 1e-12);
        assert!(
            (r.raw - dense.powf(-0.5)).abs() < 1e-4,
            "{} vs {}",
            r.raw,
            dense.powf(-0.5)
        );
    }

    #[test]
    fn ruzsa_sign_symmetry() {
        let t = table();
        for f in [
            AdditiveFunctionSpec::omega(),
            AdditiveFunctionSpec::log_pow(1.0).unwrap(),
        ] {
            let neg = f.tabulate_scaled(t.up_to(500.0), -1.0).unwrap();
            let a = ruzsa_bound(&f, 500.0, RuzsaVariant::SquareInside, &t).unwrap();
            let b = ruzsa_bound(&neg, 500.0, RuzsaVariant::SquareInside, &t).unwrap();
            assert!((a.raw - b.raw).abs() < 1e-6);
        }
    }

    #[test]
    fn ruzsa_literal_variant_differs() {
        let t = table();
        let f = AdditiveFunctionSpec::omega();
        let a = ruzsa_bound(&f, 100.0, RuzsaVariant::SquareInside, &t).unwrap();
        let b = ruzsa_bound(&f, 100.0, RuzsaVariant::Literal, &t).unwrap();
        // the literal form never clips negative deviations, so it is larger
        assert!(b.objective >= a.objective - 1e-12);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3).powi(2) + 2.0, -1.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6 && (v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_series_examples() {
        let t = table();
        let lp2 = AdditiveFunctionSpec::log_pow(2.0).unwrap();
        for cutoff in [3.0, 100.0, 1e5] {
            assert_eq!(three_series(&lp2, cutoff, &t).unwrap().s3, 0.5);
        }
        let z = three_series(&AdditiveFunctionSpec::zero(), 1000.0, &t).unwrap();
        assert_eq!((z.s1, z.s2, z.s3), (0.0, 0.0, 0.0));

        let om = three_series(&AdditiveFunctionSpec::omega(), 100.0, &t).unwrap();
        // rational oracle: sum of 1/p over the 25 primes below 100
        let want = 1.802_817_201_048_871;
        assert!((om.s1 - want).abs() < 1e-14 && (om.s2 - want).abs() < 1e-14);
        assert_eq!(om.s3, 0.0);
        assert!(om.remainders.is_none());
        assert_eq!(om.dyadic.last().unwrap().cutoff, 100.0);

        let s = three_series(&lp2, 1e5, &t).unwrap();
        let r = s.remainders.unwrap();
        assert!((r[0] - 1.0 / 1e5f64.ln()).abs() < 1e-12);
        let far = three_series(&lp2, 1e4, &t).unwrap();
        assert!(s.s1 - far.s1 <= far.remainders.unwrap()[0]);
        assert!(s.last_increments[0] < 0.02);
    }

    #[test]
    fn char_fn_examples() {
        let t = table();
        for f in [
            AdditiveFunctionSpec::omega(),
            AdditiveFunctionSpec::big_omega(),
            AdditiveFunctionSpec::log_pow(2.0).unwrap(),
        ] {
            let v = char_fn(&f, 0.0, 1000.0, 40, &t).unwrap();
            assert!((v.value - Complex64::new(1.0, 0.0)).norm() <= v.radius + 1e-12);
        }
        let v = char_fn(&AdditiveFunctionSpec::omega(), std::f64::consts::PI, 2.0, 10, &t).unwrap();
        assert!(v.value.norm() < 1e-16);
        assert_eq!(v.radius, 0.0);
    }

    #[test]
    fn char_fn_matches_atom_transform() {
        let t = table();
        let fs = [
            AdditiveFunctionSpec::big_omega(),
            AdditiveFunctionSpec::omega(),
            AdditiveFunctionSpec::log_pow(2.0).unwrap(),
        ];
        let mut rng = 0x9e37_79b9_7f4a_7c15u64;
        for f in fs {
            for y in [3.0, 7.0, 20.0] {
                let d = smooth_exact(&f, y, &ConvolutionOptions::new(1e-10, 0.0), &t).unwrap();
                for _ in 0..20 {
                    rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    let xi = ((rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 40.0;
                    let c = char_fn(&f, xi, y, 30, &t).unwrap();
                    let s: Complex64 = d
                        .atoms()
                        .iter()
                        .map(|a| Complex64::from_polar(a.mass, xi * a.value))
                        .sum();
                    assert!((c.value - s).norm() <= d.tail_mass() + c.radius + 1e-12);
                    let conj = char_fn(&f, -xi, y, 30, &t).unwrap();
                    assert!((conj.value - c.value.conj()).norm() < 1e-12);
                    assert!(c.value.norm() <= 1.0 + c.radius);
                }
            }
        }
    }
}
