//! Acceptance suite: one line per criterion, then a non-zero exit if any
//! criterion failed.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use addconc_core::additive::{log_p_delta, Family};
use addconc_core::bounds::char_fn;
use addconc_core::dist::{concentration, empirical_distribution, max_window_mass, smooth_exact, sup_cdf_distance};
use addconc_core::experiments::{
    geometric_grid, lower_bound_check, predicted_slope, scaling_experiment, window_lemma_check, LowerBoundParams,
    Method, ScalingParams, WindowParams, YRule,
};
use addconc_core::model::{dkw_radius, sample_smooth};
use addconc_core::{
    sieve, AdditiveFunctionSpec, Atom, ConvolutionOptions, DiscreteDistribution, McConfig, PrimeTable, Provenance,
    Thresholds, Verdict,
};

type Outcome = Result<String, String>;

fn check(ok: bool, summary: String) -> Outcome {
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Prime table shared by the calibrated criteria.
const TABLE_LIMIT: u64 = 10_000_000;

fn log_pow(c: f64) -> AdditiveFunctionSpec {
    AdditiveFunctionSpec::log_pow(c).unwrap()
}

fn random_family(rng: &mut ChaCha8Rng) -> (AdditiveFunctionSpec, bool) {
    let strong = rng.random_bool(0.7);
    match rng.random_range(0..4) {
        0 => {
            let c = rng.random_range(0.5..3.0);
            (AdditiveFunctionSpec::new(Family::LogPow { c }, strong).unwrap(), false)
        }
        1 => (AdditiveFunctionSpec::new(Family::Omega, strong).unwrap(), true),
        2 => (AdditiveFunctionSpec::log_phi_ratio(), false),
        _ => {
            let c = rng.random_range(1.0..2.5);
            (AdditiveFunctionSpec::new(Family::LogPow { c }, true).unwrap(), false)
        }
    }
}

// 1 -----------------------------------------------------------------------

fn mass_conservation(table: &PrimeTable) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for case in 0..50 {
        let (f, integral) = random_family(&mut rng);
        let y = 10f64.powf(rng.random_range(0.3..3.7)).floor();
        let tail = 10f64.powf(rng.random_range(-9.0..-3.0));
        let resolution = if integral || y <= 30.0 {
            0.0
        } else {
            10f64.powf(rng.random_range(-4.0..-2.0))
        };
        let opts = ConvolutionOptions::new(tail, resolution);
        match smooth_exact(&f, y, &opts, table) {
            Ok(d) => {
                let total: f64 = d.atoms().iter().map(|a| a.mass).sum::<f64>() + d.tail_mass();
                let err = (total - 1.0).abs();
                worst = worst.max(err);
                if err > 1e-9 || d.tail_mass() > tail * (1.0 + 1e-9) {
                    bad.push(format!("case {case}: {} y={y} total={total}", f.label()));
                }
            }
            Err(e) => bad.push(format!("case {case}: {} y={y}: {e}", f.label())),
        }
    }
    check(
        bad.is_empty(),
        format!("50 cases, max |total - 1| = {worst:.2e}{}", failures(&bad)),
    )
}

fn failures(bad: &[String]) -> String {
    if bad.is_empty() {
        String::new()
    } else {
        format!("; {}", bad.join("; "))
    }
}

// 2 -----------------------------------------------------------------------

/// Mass of every value of `f` over the `y`-smooth `n <= limit`, with weight
/// `prod_{p <= y} (1 - 1/p) / n`.
fn brute_smooth(f: &AdditiveFunctionSpec, primes: &[u64], limit: u64) -> Vec<(f64, f64)> {
    fn walk(f: &AdditiveFunctionSpec, primes: &[u64], n: u64, value: f64, limit: u64, out: &mut Vec<(f64, f64)>) {
        out.push((value, 1.0 / n as f64));
        for (i, &p) in primes.iter().enumerate() {
            let mut m = n;
            let mut k = 0;
            while m <= limit / p {
                m *= p;
                k += 1;
                walk(f, &primes[i + 1..], m, value + f.value(p, k).unwrap(), limit, out);
            }
        }
    }
    let mut out = Vec::new();
    walk(f, primes, 1, 0.0, limit, &mut out);
    let norm: f64 = primes.iter().map(|&p| 1.0 - 1.0 / p as f64).product();
    for o in &mut out {
        o.1 *= norm;
    }
    out
}

/// Sums masses of values that agree to `tol`.
fn merge(mut pairs: Vec<(f64, f64)>, tol: f64) -> Vec<(f64, f64)> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (v, m) in pairs {
        match out.last_mut() {
            Some(last) if v - last.0 <= tol => last.1 += m,
            _ => out.push((v, m)),
        }
    }
    out
}

fn oracle_equivalence(table: &PrimeTable) -> Outcome {
    const LIMIT: u64 = 10_000_000;
    let mut lines = Vec::new();
    let mut ok = true;
    for f in [AdditiveFunctionSpec::big_omega(), log_pow(2.0)] {
        for y in [3u64, 5, 7] {
            let primes = table.up_to(y as f64);
            let brute = merge(brute_smooth(&f, primes, LIMIT), 1e-9);
            let missing = 1.0 - brute.iter().map(|b| b.1).sum::<f64>();
            let d = smooth_exact(&f, y as f64, &ConvolutionOptions::new(1e-9, 0.0), table).unwrap();
            let exact = merge(d.atoms().iter().map(|a| (a.value, a.mass)).collect(), 1e-9);
            let allowed = d.tail_mass() + missing + 1e-12;
            let mut by_value: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
            for &(v, m) in &brute {
                by_value.entry((v * 1e8).round() as i64).or_default().0 += m;
            }
            for &(v, m) in &exact {
                by_value.entry((v * 1e8).round() as i64).or_default().1 += m;
            }
            let worst = by_value.values().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ok &= worst <= allowed;
            lines.push(format!("{} y={y}: {worst:.1e} <= {allowed:.1e}", f.label()));
        }
    }
    check(ok, lines.join(", "))
}

// 3 -----------------------------------------------------------------------

fn exact_vs_mc(table: &PrimeTable) -> Outcome {
    const SAMPLES: u64 = 1_000_000;
    const SEEDS: u64 = 100;
    let mut lines = Vec::new();
    let mut ok = true;
    for (f, y) in [(AdditiveFunctionSpec::big_omega(), 3.0), (log_pow(2.0), 20.0)] {
        let exact = smooth_exact(&f, y, &ConvolutionOptions::new(1e-9, 0.0), table).unwrap();
        let bound = dkw_radius(SAMPLES, 0.01) + exact.tail_mass();
        let mut within = 0;
        let mut worst = 0.0f64;
        for seed in 0..SEEDS {
            let mc = sample_smooth(&f, y, &McConfig::new(seed, SAMPLES), table).unwrap();
            let dist = sup_cdf_distance(&exact, &mc, 1e-9);
            worst = worst.max(dist);
            if dist <= bound {
                within += 1;
            }
        }
        ok &= within >= 99;
        lines.push(format!(
            "{} y={y}: {within}/{SEEDS} seeds within {bound:.2e} (max {worst:.2e})",
            f.label()
        ));
    }
    check(ok, lines.join(", "))
}

// 4 -----------------------------------------------------------------------

/// Smallest eps whose threshold `P_{2 eps}` fits in the table.
fn feasible_eps(c: f64) -> f64 {
    (TABLE_LIMIT as f64).ln().powf(-c) / 2.0 * (1.0 + 1e-9)
}

fn scaling_law(table: &PrimeTable) -> Outcome {
    let th = Thresholds::default();
    let mut lines = Vec::new();
    let mut ok = true;
    let runs = [
        (
            1.5,
            geometric_grid(0.1, feasible_eps(1.5).max(1e-3), 8),
            YRule::Threshold,
        ),
        (
            2.0,
            geometric_grid(0.1, feasible_eps(2.0).max(1e-3), 8),
            YRule::Threshold,
        ),
        (
            3.0,
            geometric_grid(0.1, feasible_eps(3.0).max(1e-3), 8),
            YRule::Threshold,
        ),
        (
            0.5,
            geometric_grid(1.0, 0.25, 8),
            YRule::Fixed { y: TABLE_LIMIT as f64 },
        ),
    ];
    for (c, eps_grid, y_rule) in runs {
        let lo = eps_grid[eps_grid.len() - 1];
        let p = ScalingParams {
            c,
            eps_grid,
            y_rule,
            method: Method::Exact,
            budget: Default::default(),
        };
        let r = scaling_experiment(&p, &th, table).unwrap();
        let slope = r.fit.as_ref().map_or(f64::NAN, |f| f.slope);
        let target = predicted_slope(c);
        ok &= (slope - target).abs() <= th.slope_tolerance && r.verdict == Verdict::Pass;
        lines.push(format!("c={c} eps>={lo:.2e}: slope {slope:.4} vs {target:.4}"));
    }
    check(ok, lines.join(", "))
}

// 5 -----------------------------------------------------------------------

fn within(got: f64, fixture: f64) -> bool {
    (got - fixture).abs() <= 0.2 * fixture
}

fn main_theorem_bracket(table: &PrimeTable) -> Outcome {
    let th = Thresholds::default();
    let mut lines = Vec::new();
    let mut ok = true;
    // pilot fixtures: (c, smallest eps, min lower product, max upper ratio)
    for (c, lo, lower_fixture, upper_fixture) in [
        (1.5, 0.0155, 0.5690, 0.2972),
        (2.0, 3.9e-3, 0.5199, 0.5791),
        (3.0, 2.4e-4, 0.5022, 0.5732),
    ] {
        let p = LowerBoundParams {
            c,
            eps_grid: geometric_grid(0.1, lo, 8),
            a: 1.0,
            budget: Default::default(),
        };
        let r = lower_bound_check(&p, &th, table).unwrap();
        let lower: f64 = r.params["min_lower_product"].parse().unwrap();
        let upper: f64 = r.params["max_upper_ratio"].parse().unwrap();
        let pass = r.verdict == Verdict::Pass && within(lower, lower_fixture) && within(upper, upper_fixture);
        ok &= pass;
        lines.push(format!(
            "c={c}: lower {lower:.4} >= {:.2}, upper {upper:.4} <= {:.4}",
            th.lower_bound_min, th.lower_bound_ceiling
        ));
    }
    check(ok, lines.join(", "))
}

// 6 -----------------------------------------------------------------------

/// `{2 eps, 4 eps, ...}` up to 1/2.
fn doubling_deltas(eps: f64) -> Vec<f64> {
    std::iter::successors(Some(2.0 * eps), |d| Some(2.0 * d))
        .take_while(|&d| d <= 0.5)
        .collect()
}

fn window_lemma(table: &PrimeTable) -> Outcome {
    let th = Thresholds::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for c in [1.0, 1.5, 2.0] {
        for eps in [1e-2, 1e-3] {
            let mut max = 0.0f64;
            let mut cells = 0;
            let mut skipped = 0;
            for delta in doubling_deltas(eps) {
                let z_grid = vec![
                    2.0,
                    (log_p_delta(c, delta) / 4.0).exp(),
                    log_p_delta(c, 2.0 * delta).exp(),
                ];
                let p = WindowParams {
                    c,
                    eps,
                    delta_grid: vec![delta],
                    z_grid,
                    v_step: eps / 4.0,
                };
                let r = window_lemma_check(&p, &th, table).unwrap();
                if r.rows.is_empty() {
                    skipped += 1;
                    continue;
                }
                ok &= r.verdict == Verdict::Pass;
                max = max.max(r.params["max_ratio"].parse().unwrap());
                cells += r.rows.len();
            }
            ok &= max <= 20.0 && cells > 0;
            lines.push(format!(
                "c={c} eps={eps}: max {max:.4} over {cells} cells ({skipped} infeasible delta)"
            ));
        }
    }
    check(ok, lines.join(", "))
}

// 7 -----------------------------------------------------------------------

fn random_distribution(rng: &mut ChaCha8Rng) -> DiscreteDistribution {
    let n = rng.random_range(1..=30);
    // dyadic lattice values put atoms exactly on window boundaries
    let lattice = rng.random_bool(0.5);
    let mut values: Vec<f64> = (0..n)
        .map(|_| {
            if lattice {
                rng.random_range(-16..16) as f64 / 16.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let tail = if rng.random_bool(0.3) {
        rng.random_range(0.0..0.01)
    } else {
        0.0
    };
    let w: Vec<f64> = values.iter().map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    let atoms = values
        .iter()
        .zip(&w)
        .map(|(&value, &m)| Atom {
            value,
            mass: m / s * (1.0 - tail),
        })
        .collect();
    DiscreteDistribution::new(atoms, tail, 0.0, Provenance::Empirical { x: 1 }).unwrap()
}

/// Largest mass of `(u, u + width]` over all `u`, by trying every atom as
/// either endpoint.
fn exhaustive_window(d: &DiscreteDistribution, width: f64) -> f64 {
    let a = d.atoms();
    let mass_in = |lo: f64, hi: f64| {
        a.iter()
            .filter(|x| x.value > lo && x.value <= hi)
            .map(|x| x.mass)
            .sum::<f64>()
    };
    let right = a.iter().map(|x| mass_in(x.value - width, x.value));
    let left = a.iter().map(|x| mass_in(x.value, x.value + width));
    right.chain(left).fold(0.0, f64::max)
}

/// Monotonicity and subadditivity of `eps -> Q(eps)` on a grid; the upper
/// bracket is checked for grid laws, whose lower bracket is only a bound.
fn shape_violation(d: &DiscreteDistribution) -> f64 {
    let widths = [0.01, 0.02, 0.05, 0.1, 0.15, 0.3, 0.5, 1.0, 2.0];
    let q = |e: f64| {
        let b = concentration(d, e).unwrap();
        if d.resolution() == 0.0 {
            b.q_lower
        } else {
            b.q_upper
        }
    };
    let mut worst = 0.0f64;
    for (i, &a) in widths.iter().enumerate() {
        for &b in &widths[i..] {
            worst = worst.max(q(a) - q(b));
            worst = worst.max(q(a + b) - q(a) - q(b));
        }
    }
    worst
}

fn concentration_engine(table: &PrimeTable) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_gap = 0.0f64;
    let mut worst_shape = 0.0f64;
    for _ in 0..100 {
        let d = random_distribution(&mut rng);
        for eps in [0.0625, 0.125, 0.137, 0.5, 1.0] {
            worst_gap = worst_gap.max((max_window_mass(&d, eps) - exhaustive_window(&d, eps)).abs());
            let b = concentration(&d, eps).unwrap();
            worst_gap = worst_gap.max((b.q_upper - (exhaustive_window(&d, eps) + d.tail_mass()).min(1.0)).abs());
        }
        worst_shape = worst_shape.max(shape_violation(&d));
    }
    let computed = [
        smooth_exact(
            &AdditiveFunctionSpec::omega(),
            1000.0,
            &ConvolutionOptions::new(1e-9, 0.0),
            table,
        )
        .unwrap(),
        smooth_exact(&log_pow(2.0), 1e4, &ConvolutionOptions::new(1e-6, 1e-4), table).unwrap(),
        smooth_exact(
            &AdditiveFunctionSpec::log_phi_ratio(),
            100.0,
            &ConvolutionOptions::new(1e-6, 1e-5),
            table,
        )
        .unwrap(),
        empirical_distribution(&log_pow(1.0), 100_000, 1 << 20, table).unwrap(),
    ];
    for d in &computed {
        worst_shape = worst_shape.max(shape_violation(d));
    }
    check(
        worst_gap <= 1e-12 && worst_shape <= 1e-12,
        format!("100 random laws, two-pointer vs exhaustive {worst_gap:.1e}; shape violations {worst_shape:.1e} on 104 laws"),
    )
}

// 8 -----------------------------------------------------------------------

fn char_consistency(table: &PrimeTable) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let additive = AdditiveFunctionSpec::new(Family::LogPow { c: 2.0 }, false).unwrap();
    let mut cases: Vec<(AdditiveFunctionSpec, f64)> = Vec::new();
    for y in [7.0, 13.0, 20.0] {
        cases.push((log_pow(2.0), y));
        cases.push((log_pow(0.5), y));
        cases.push((AdditiveFunctionSpec::omega(), y));
        cases.push((AdditiveFunctionSpec::big_omega(), y));
        cases.push((AdditiveFunctionSpec::log_phi_ratio(), y));
    }
    cases.push((additive, 7.0));
    let mut worst_excess = f64::NEG_INFINITY;
    for (f, y) in &cases {
        let d = smooth_exact(f, *y, &ConvolutionOptions::new(1e-8, 0.0), table).unwrap();
        for _ in 0..20 {
            let xi = rng.random_range(-50.0..50.0);
            let v = char_fn(f, xi, *y, 40, table).unwrap();
            let transform: Complex64 = d
                .atoms()
                .iter()
                .map(|a| Complex64::from_polar(a.mass, xi * a.value))
                .sum();
            // atoms merged at 1e-12 move phases by at most |xi| 1e-12
            let allowed = v.radius + d.tail_mass() + 1e-12 * (1.0 + xi.abs()) + 1e-12;
            worst_excess = worst_excess.max((v.value - transform).norm() - allowed);
        }
    }
    check(
        worst_excess <= 0.0,
        format!(
            "{} laws x 20 frequencies, max excess over radius {worst_excess:.2e}",
            cases.len()
        ),
    )
}

// 9 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let runs: [&[&str]; 5] = [
        &["verify", "window-lemma", "--c", "1", "--eps", "0.05"],
        &["verify", "lower-bound", "--c", "2", "--eps-min", "3.9e-3"],
        &["verify", "squarefree", "--c", "2", "--eps", "0.05"],
        &[
            "scaling",
            "--c",
            "3",
            "--method",
            "mc",
            "--samples",
            "200000",
            "--seed",
            "11",
        ],
        &["scaling", "--c", "2", "--eps-min", "2e-3", "--points", "6"],
    ];
    let mut bad = Vec::new();
    for args in runs {
        let outputs: Vec<Vec<u8>> = ["1", "2", "5"]
            .iter()
            .map(|t| {
                let o = Command::new(env!("CARGO_BIN_EXE_addconc"))
                    .arg("--threads")
                    .arg(t)
                    .args(args)
                    .env_remove("ADDCONC_BUDGET_MB")
                    .output()
                    .expect("binary runs");
                if o.status.code() != Some(0) {
                    bad.push(format!("`{}` exited {:?}", args.join(" "), o.status.code()));
                }
                o.stdout
            })
            .collect();
        if outputs.iter().any(|o| o != &outputs[0] || o.is_empty()) {
            bad.push(format!("`{}` differs across thread counts", args.join(" ")));
        }
    }
    check(
        bad.is_empty(),
        format!("5 runs at 1, 2 and 5 threads{}", failures(&bad)),
    )
}

fn main() {
    let start = Instant::now();
    let table = sieve(TABLE_LIMIT).expect("prime table");
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("mass conservation", Box::new(|| mass_conservation(&table))),
        ("oracle equivalence", Box::new(|| oracle_equivalence(&table))),
        ("exact vs Monte Carlo", Box::new(|| exact_vs_mc(&table))),
        ("scaling law", Box::new(|| scaling_law(&table))),
        ("main theorem bracket", Box::new(|| main_theorem_bracket(&table))),
        ("window lemma", Box::new(|| window_lemma(&table))),
        ("concentration engine", Box::new(|| concentration_engine(&table))),
        ("characteristic function", Box::new(|| char_consistency(&table))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {} {name}: PASS ({secs:.1} s) {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.1} s) {msg}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
