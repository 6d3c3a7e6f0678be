use std::fmt::Write as _;

use serde_json::{json, Value};

use addconc_core::additive::{eval, Family};
use addconc_core::bounds::{char_fn, ruzsa_bound, three_series, RuzsaVariant};
use addconc_core::dist::{
    concentration, empirical_distribution, fmt_f64, smooth_exact, FoldOrder, DEFAULT_ENUMERATION_BUDGET,
};
use addconc_core::experiments::{
    lower_bound_check, model_vs_integers, scaling_experiment, squarefree_sum_check, window_lemma_check, Budget,
    LowerBoundParams, Method, ModelVsIntegersParams, ScalingParams, SquarefreeParams, WindowParams, YRule,
};
use addconc_core::model::{bernoulli_sample, sample_smooth};
use addconc_core::primes::sieve_with;
use addconc_core::{
    AdditiveFunctionSpec, ConvolutionOptions, DiscreteDistribution, Error, ExperimentReport, McConfig, PrimeTable,
    SieveConfig, Thresholds, ValueTable, Verdict,
};

use crate::args::*;
use crate::{CliError, CliResult, Output, BUDGET_ENV};

/// Memory-derived ceilings shared by every command.
pub(crate) struct Limits {
    sieve: SieveConfig,
    atoms: usize,
    enumeration: u64,
}

/// Bytes charged per atom or enumerated integer.
const BYTES_PER_ITEM: u64 = 16;

impl Limits {
    pub(crate) fn from_env() -> CliResult<Self> {
        let Ok(raw) = std::env::var(BUDGET_ENV) else {
            return Ok(Limits {
                sieve: SieveConfig::default(),
                atoms: Budget::default().atom_budget,
                enumeration: DEFAULT_ENUMERATION_BUDGET,
            });
        };
        let mb: u64 = raw
            .trim()
            .parse()
            .ok()
            .filter(|&m| m > 0)
            .ok_or_else(|| CliError::Usage(format!("{BUDGET_ENV} must be a positive integer, got `{raw}`")))?;
        let bytes = mb.saturating_mul(1 << 20);
        let items = bytes / BYTES_PER_ITEM;
        Ok(Limits {
            sieve: SieveConfig {
                memory_ceiling: bytes,
                ..SieveConfig::default()
            },
            atoms: (Budget::default().atom_budget as u64).min(items) as usize,
            enumeration: DEFAULT_ENUMERATION_BUDGET.min(items),
        })
    }

    fn table(&self, limit: f64) -> CliResult<PrimeTable> {
        if !(limit.is_finite() && limit >= 0.0) {
            return Err(CliError::Usage(format!("cannot sieve up to {limit}")));
        }
        Ok(sieve_with((limit.ceil() as u64).max(2), &self.sieve)?)
    }

    fn budget(&self, b: &BudgetArgs) -> Budget {
        Budget {
            tail_budget: b.tail,
            resolution_divisor: b.resolution_divisor,
            atom_budget: self.atoms,
            enumeration: self.enumeration,
        }
    }
}

pub(crate) fn dispatch<'a>(cmd: &'a Command, limits: &Limits) -> CliResult<(&'a OutputArgs, Output)> {
    Ok(match cmd {
        Command::Sieve(a) => (&a.output, sieve_cmd(a, limits)?),
        Command::Eval(a) => (&a.output, eval_cmd(a, limits)?),
        Command::Dist(a) => (&a.output, dist_cmd(a, limits)?),
        Command::Conc(a) => (&a.output, conc_cmd(a, limits)?),
        Command::Char(a) => (&a.output, char_cmd(a, limits)?),
        Command::Series(a) => (&a.output, series_cmd(a, limits)?),
        Command::Ruzsa(a) => (&a.output, ruzsa_cmd(a, limits)?),
        Command::Scaling(a) => (&a.output, report(scaling_cmd(a, limits)?, false)?),
        Command::Verify(v) => match &v.check {
            Check::LowerBound(a) => (&a.output, report(lower_bound_cmd(a, limits)?, true)?),
            Check::WindowLemma(a) => (&a.output, report(window_cmd(a, limits)?, true)?),
            Check::Squarefree(a) => (&a.output, report(squarefree_cmd(a, limits)?, true)?),
            Check::ModelVsIntegers(a) => (&a.output, report(model_cmd(a, limits)?, true)?),
        },
    })
}

fn report(r: ExperimentReport, verify: bool) -> CliResult<Output> {
    let json: Value = serde_json::from_str(&r.to_json()?).map_err(Error::from)?;
    Ok(Output {
        csv: r.to_csv(),
        json,
        failed: verify && r.verdict == Verdict::Fail,
    })
}

fn spec(a: &FamilyArgs) -> CliResult<AdditiveFunctionSpec> {
    let strong = !a.additive;
    let family = match a.family {
        FamilyName::Logpow => Family::LogPow { c: a.c },
        FamilyName::Omega => Family::Omega,
        FamilyName::Bigomega => return Ok(AdditiveFunctionSpec::big_omega()),
        FamilyName::Logphiratio => Family::LogPhiRatio,
        FamilyName::Table => {
            let path = a
                .table
                .as_ref()
                .ok_or_else(|| CliError::Usage("--family table needs --table PATH".into()))?;
            Family::Table(ValueTable::from_csv_path(path)?)
        }
    };
    Ok(AdditiveFunctionSpec::new(family, strong)?)
}

fn isqrt_ceil(n: u64) -> f64 {
    (n as f64).sqrt().ceil() + 1.0
}

fn sieve_cmd(a: &SieveArgs, limits: &Limits) -> CliResult<Output> {
    let t = sieve_with(a.limit, &limits.sieve)?;
    let mut csv = String::from("prime\n");
    for p in t.iter() {
        let _ = writeln!(csv, "{p}");
    }
    Ok(Output {
        csv,
        json: json!({ "limit": t.limit(), "count": t.len(), "primes": t.primes() }),
        failed: false,
    })
}

fn eval_cmd(a: &EvalArgs, limits: &Limits) -> CliResult<Output> {
    let f = spec(&a.family)?;
    let ns: Vec<u64> = match a.upto {
        Some(m) => (1..=m).collect(),
        None => a.n.clone(),
    };
    let top = ns.iter().copied().max().unwrap_or(1);
    let t = limits.table(isqrt_ceil(top))?;
    let mut csv = String::from("n,value\n");
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let v = eval(&f, n, &t)?;
        let _ = writeln!(csv, "{n},{}", fmt_f64(v));
        rows.push(json!({ "n": n, "value": v }));
    }
    Ok(Output {
        csv,
        json: json!({ "f": f.label(), "values": rows }),
        failed: false,
    })
}

fn build_law(a: &LawArgs, limits: &Limits) -> CliResult<DiscreteDistribution> {
    let f = spec(&a.family)?;
    let mc = || McConfig {
        seed: a.seed,
        samples: a.samples,
        shards: a.shards,
        alpha: a.alpha,
        target_eps: a.target_eps,
    };
    Ok(match a.mode {
        Mode::Empirical => {
            let t = limits.table(isqrt_ceil(a.x))?;
            empirical_distribution(&f, a.x, limits.enumeration, &t)?
        }
        Mode::Smooth => {
            let t = limits.table(a.y)?;
            let opts = ConvolutionOptions {
                atom_budget: limits.atoms,
                order: match a.order {
                    Order::Smallest => FoldOrder::SmallestFirst,
                    Order::Largest => FoldOrder::LargestFirst,
                },
                ..ConvolutionOptions::new(a.tail, a.resolution)
            };
            smooth_exact(&f, a.y, &opts, &t)?
        }
        Mode::Mc => sample_smooth(&f, a.y, &mc(), &limits.table(a.y)?)?,
        Mode::Bernoulli => bernoulli_sample(&f, a.y, &mc(), &limits.table(a.y)?)?,
    })
}

fn dist_cmd(a: &DistArgs, limits: &Limits) -> CliResult<Output> {
    let d = build_law(&a.law, limits)?;
    let json: Value = serde_json::from_str(&d.to_json()?).map_err(Error::from)?;
    Ok(Output {
        csv: d.to_csv(),
        json,
        failed: false,
    })
}

fn conc_cmd(a: &ConcArgs, limits: &Limits) -> CliResult<Output> {
    let d = match &a.from {
        Some(path) => DiscreteDistribution::from_csv_path(path)?,
        None => build_law(&a.law, limits)?,
    };
    let mut csv = String::from("eps,q_lower,q_upper,tail,bucketing,statistical,slack\n");
    let mut rows = Vec::new();
    for &eps in &a.eps {
        let b = concentration(&d, eps)?;
        let e = &b.error_terms;
        let cells = [b.eps, b.q_lower, b.q_upper, e.tail, e.bucketing, e.statistical, e.slack];
        let line: Vec<String> = cells.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(csv, "{}", line.join(","));
        rows.push(serde_json::to_value(b).map_err(Error::from)?);
    }
    Ok(Output {
        csv,
        json: json!({ "provenance": d.provenance(), "brackets": rows }),
        failed: false,
    })
}

fn char_cmd(a: &CharArgs, limits: &Limits) -> CliResult<Output> {
    let f = spec(&a.family)?;
    let t = limits.table(a.y)?;
    let mut csv = String::from("xi,re,im,abs,radius\n");
    let mut rows = Vec::new();
    for &xi in &a.xi {
        let v = char_fn(&f, xi, a.y, a.kmax, &t)?;
        let cells = [xi, v.value.re, v.value.im, v.value.norm(), v.radius];
        let line: Vec<String> = cells.iter().map(|&x| fmt_f64(x)).collect();
        let _ = writeln!(csv, "{}", line.join(","));
        rows.push(json!({ "xi": xi, "re": v.value.re, "im": v.value.im, "radius": v.radius }));
    }
    Ok(Output {
        csv,
        json: json!({ "f": f.label(), "values": rows }),
        failed: false,
    })
}

fn series_cmd(a: &SeriesArgs, limits: &Limits) -> CliResult<Output> {
    let f = spec(&a.family)?;
    let t = limits.table(a.cutoff)?;
    let s = three_series(&f, a.cutoff, &t)?;
    let mut csv = String::new();
    for (name, v) in [("s1", s.s1), ("s2", s.s2), ("s3", s.s3)] {
        let _ = writeln!(csv, "# {name}={}", fmt_f64(v));
    }
    if let Some(r) = s.remainders {
        for (i, v) in r.iter().enumerate() {
            let _ = writeln!(csv, "# remainder_s{}={}", i + 1, fmt_f64(*v));
        }
    }
    for (i, v) in s.last_increments.iter().enumerate() {
        let _ = writeln!(csv, "# last_increment_s{}={}", i + 1, fmt_f64(*v));
    }
    csv.push_str("cutoff,s1,s2,s3\n");
    for d in &s.dyadic {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f64(d.cutoff),
            fmt_f64(d.s1),
            fmt_f64(d.s2),
            fmt_f64(d.s3)
        );
    }
    Ok(Output {
        csv,
        json: serde_json::to_value(&s).map_err(Error::from)?,
        failed: false,
    })
}

fn ruzsa_cmd(a: &RuzsaArgs, limits: &Limits) -> CliResult<Output> {
    let f = spec(&a.family)?;
    let t = limits.table(a.x)?;
    let variant = match a.variant {
        Variant::SquareInside => RuzsaVariant::SquareInside,
        Variant::Literal => RuzsaVariant::Literal,
    };
    let b = ruzsa_bound(&f, a.x, variant, &t)?;
    let csv = format!(
        "lambda,objective,raw,bound,degenerate\n{},{},{},{},{}\n",
        fmt_f64(b.lambda),
        fmt_f64(b.objective),
        fmt_f64(b.raw),
        fmt_f64(b.bound),
        b.degenerate
    );
    Ok(Output {
        csv,
        json: serde_json::to_value(b).map_err(Error::from)?,
        failed: false,
    })
}

fn scaling_cmd(a: &ScalingArgs, limits: &Limits) -> CliResult<ExperimentReport> {
    let y_rule = match a.y_rule {
        YRuleName::Threshold => YRule::Threshold,
        YRuleName::Fixed => YRule::Fixed { y: a.y },
    };
    let method = match a.method {
        MethodName::Exact => Method::Exact,
        MethodName::Mc => Method::Mc(McConfig {
            shards: a.shards,
            ..McConfig::new(a.seed, a.samples)
        }),
    };
    let limit = match y_rule {
        YRule::Fixed { y } => y.min(a.budget.y_max as f64),
        YRule::Threshold => a.budget.y_max as f64,
    };
    let table = limits.table(limit)?;
    let th = Thresholds {
        slope_tolerance: a.slope_tolerance,
        ..Thresholds::default()
    };
    let p = ScalingParams {
        c: a.c,
        eps_grid: a.grid.grid(),
        y_rule,
        method,
        budget: limits.budget(&a.budget),
    };
    Ok(scaling_experiment(&p, &th, &table)?)
}

fn lower_bound_cmd(a: &LowerBoundArgs, limits: &Limits) -> CliResult<ExperimentReport> {
    let d = Thresholds::default();
    let th = Thresholds {
        lower_bound_min: a.threshold.unwrap_or(d.lower_bound_min),
        lower_bound_ceiling: a.ceiling.unwrap_or(d.lower_bound_ceiling),
        ..d
    };
    let p = LowerBoundParams {
        c: a.c,
        eps_grid: a.grid.grid(),
        a: a.a,
        budget: limits.budget(&a.budget),
    };
    Ok(lower_bound_check(&p, &th, &limits.table(a.budget.y_max as f64)?)?)
}

fn window_cmd(a: &WindowArgs, limits: &Limits) -> CliResult<ExperimentReport> {
    let d = Thresholds::default();
    let th = Thresholds {
        window_ratio_max: a.threshold.unwrap_or(d.window_ratio_max),
        ..d
    };
    let delta_grid = if a.deltas.is_empty() {
        std::iter::successors(Some(2.0 * a.eps), |d| Some(2.0 * d))
            .take_while(|&d| d <= 0.5)
            .collect()
    } else {
        a.deltas.clone()
    };
    let p = WindowParams {
        c: a.c,
        eps: a.eps,
        delta_grid,
        z_grid: a.z.clone(),
        v_step: a.v_step.unwrap_or(a.eps / 4.0),
    };
    Ok(window_lemma_check(&p, &th, &limits.table(a.y_max as f64)?)?)
}

fn squarefree_cmd(a: &SquarefreeArgs, limits: &Limits) -> CliResult<ExperimentReport> {
    let d = Thresholds::default();
    let th = Thresholds {
        squarefree_ratio_max: a.threshold.unwrap_or(d.squarefree_ratio_max),
        ..d
    };
    let step = a.v_step.unwrap_or(a.eps);
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Usage(format!("--v-step must be positive, got {step}")));
    }
    if !(a.v_max >= a.v_min) {
        return Err(CliError::Usage("--v-max must be at least --v-min".into()));
    }
    let n = ((a.v_max - a.v_min) / step + 1e-9).floor() as usize;
    let v_grid = (0..=n).map(|k| a.v_min + k as f64 * step).collect();
    let p = SquarefreeParams {
        c: a.c,
        eps: a.eps,
        v_grid,
        budget: limits.budget(&a.budget),
    };
    Ok(squarefree_sum_check(&p, &th, &limits.table(a.budget.y_max as f64)?)?)
}

fn model_cmd(a: &ModelArgs, limits: &Limits) -> CliResult<ExperimentReport> {
    let p = ModelVsIntegersParams {
        f: spec(&a.family)?,
        x: a.x,
        y: a.y,
        eps_grid: a.eps.clone(),
        budget: limits.budget(&a.budget),
    };
    Ok(model_vs_integers(&p, &limits.table(a.y.max(isqrt_ceil(a.x)))?)?)
}
