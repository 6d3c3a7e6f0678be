use std::f64::consts::PI;
use std::sync::OnceLock;

use proptest::prelude::*;

use addconc_core::bounds::{char_fn, envelopes, ruzsa_bound, three_series, EnvelopeSource, RuzsaVariant};
use addconc_core::{sieve, AdditiveFunctionSpec, Error, PrimeTable};

fn table() -> &'static PrimeTable {
    static T: OnceLock<PrimeTable> = OnceLock::new();
    T.get_or_init(|| sieve(100_000).unwrap())
}

#[test]
fn envelope_shapes() {
    let e = envelopes(EnvelopeSource::ThmEkc { c: 2.0 }, 1e-4).unwrap();
    assert!((e.lower_envelope - 1e-2).abs() < 1e-15);
    assert!((e.upper_envelope - 2e-2).abs() < 1e-15);
    let one = envelopes(EnvelopeSource::ThmEkc { c: 1.0 }, 1e-4).unwrap();
    assert!((one.upper_envelope / one.lower_envelope - 1e4f64.ln()).abs() < 1e-12);
    let small = envelopes(EnvelopeSource::CLessOne { c: 0.5 }, 0.01).unwrap();
    assert_eq!((small.lower_envelope, small.upper_envelope), (0.01, 0.01));
    for bad in [
        envelopes(EnvelopeSource::ThmEkc { c: 0.5 }, 0.1),
        envelopes(EnvelopeSource::CLessOne { c: 1.0 }, 0.1),
        envelopes(EnvelopeSource::ThmMain { c: 3.0, k_eps: 10 }, 0.1),
        envelopes(EnvelopeSource::EkeAlmost { c: 2.0 }, 0.4),
        envelopes(EnvelopeSource::ThmEkc { c: 2.0 }, 0.0),
    ] {
        assert!(matches!(bad, Err(Error::HypothesisViolation(_))));
    }
}

#[test]
fn char_fn_values() {
    let t = table();
    let omega = AdditiveFunctionSpec::omega();
    let one = char_fn(&omega, 0.0, 1000.0, 20, t).unwrap();
    assert!((one.value.re - 1.0).abs() < 1e-12 && one.value.im.abs() < 1e-15);
    // the factor at p = 2 is 1/2 + e^{i pi}/2 = 0
    assert!(char_fn(&omega, PI, 2.0, 20, t).unwrap().value.norm() < 1e-15);
    assert!(char_fn(&omega, 1.0, 100.0, 0, t).is_err());
}

#[test]
fn ruzsa_degenerate_and_log() {
    let t = table();
    let zero = ruzsa_bound(&AdditiveFunctionSpec::zero(), 1000.0, RuzsaVariant::SquareInside, t).unwrap();
    assert!(zero.degenerate && zero.bound == 1.0 && zero.objective == 0.0);
    let omega = ruzsa_bound(&AdditiveFunctionSpec::omega(), 1000.0, RuzsaVariant::SquareInside, t).unwrap();
    assert!(!omega.degenerate && omega.bound <= 1.0 && omega.bound > 0.0);
    assert!((omega.raw - omega.objective.powf(-0.5)).abs() < 1e-12);
}

#[test]
fn three_series_of_log_pow_two() {
    let s = three_series(&AdditiveFunctionSpec::log_pow(2.0).unwrap(), 1e5, table()).unwrap();
    // only f(2) = (log 2)^{-2} exceeds 1
    assert_eq!(s.s3, 0.5);
    assert_eq!(s.remainders.unwrap()[2], 0.0);
    let z = three_series(&AdditiveFunctionSpec::zero(), 1e4, table()).unwrap();
    assert_eq!((z.s1, z.s2, z.s3), (0.0, 0.0, 0.0));
    assert!(s
        .dyadic
        .windows(2)
        .all(|w| w[0].cutoff < w[1].cutoff && w[0].s2 <= w[1].s2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn envelopes_are_ordered(c in 0.05..5.0f64, eps in 1e-12..0.5f64, k in 3u64..1 << 40) {
        let sources = [
            EnvelopeSource::ThmEkc { c },
            EnvelopeSource::ThmMain { c, k_eps: k },
            EnvelopeSource::EkeAlmost { c },
            EnvelopeSource::CLessOne { c },
        ];
        for s in sources {
            if let Ok(e) = envelopes(s, eps) {
                prop_assert!(e.lower_envelope > 0.0 && e.lower_envelope <= e.upper_envelope, "{e:?}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn char_fn_is_hermitian_and_bounded(xi in -50.0..50.0f64, y in 2.0..5000.0f64, c in 0.5..3.0f64, strong in any::<bool>()) {
        let f = AdditiveFunctionSpec::new(addconc_core::Family::LogPow { c }, strong).unwrap();
        let a = char_fn(&f, xi, y, 30, table()).unwrap();
        let b = char_fn(&f, -xi, y, 30, table()).unwrap();
        prop_assert!((a.value - b.value.conj()).norm() < 1e-12);
        prop_assert!(a.value.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn ruzsa_is_odd_invariant(c in 0.5..3.0f64, x in 10.0..5000.0f64) {
        let f = AdditiveFunctionSpec::log_pow(c).unwrap();
        let vals: Vec<(u64, f64)> = table().up_to(x).iter().map(|&p| (p, -f.prime_value(p).unwrap())).collect();
        let neg = AdditiveFunctionSpec::from_prime_values(vals).unwrap();
        let a = ruzsa_bound(&f, x, RuzsaVariant::SquareInside, table()).unwrap();
        let b = ruzsa_bound(&neg, x, RuzsaVariant::SquareInside, table()).unwrap();
        prop_assert!((a.objective - b.objective).abs() <= 1e-9 * a.objective.max(1e-12));
        prop_assert!((a.lambda + b.lambda).abs() <= 1e-5);
    }
}
