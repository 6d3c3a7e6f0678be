//! Named experiments that set computed concentration values against the
//! theorems and the inequalities used in their proofs.
//!
//! Every experiment is a pure function of its parameters and the prime
//! table; rows are computed in parallel and assembled in grid order, so a
//! rerun reproduces the CSV byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{k_of_eps, log_p_delta, AdditiveFunctionSpec};
use crate::bounds::{envelopes, EnvelopeSource};
use crate::dist::{
    concentration, empirical_distribution, fmt_f64, interval_mass, smooth_exact, squarefree_smooth,
    ConcentrationBracket, ConvolutionOptions, DiscreteDistribution, DEFAULT_ENUMERATION_BUDGET,
};
use crate::error::{Error, Result};
use crate::model::{sample_smooth, McConfig};
use crate::primes::{PrimeTable, ValueWindow};
use crate::sum::CompensatedSum;

/// Smallest grid on which a slope fit yields a verdict.
pub const MIN_FIT_POINTS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Informational => "informational",
        }
    }

    fn from_check(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// One report cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bool(bool),
    Int(u64),
    Num(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Bool(b) => b.to_string(),
            Cell::Int(n) => n.to_string(),
            Cell::Num(x) => fmt_f64(*x),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Num(x) => Some(x),
            Cell::Int(n) => Some(n as f64),
            _ => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub tool_version: String,
    /// Seconds since the Unix epoch. Kept out of the CSV form so reruns
    /// compare byte for byte.
    pub generated_unix: u64,
}

impl ReportProvenance {
    fn now() -> Self {
        ReportProvenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub params: BTreeMap<String, String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub fit: Option<Fit>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
    pub provenance: ReportProvenance,
}

impl ExperimentReport {
    fn new(name: &str, params: BTreeMap<String, String>, columns: &[&str]) -> Self {
        ExperimentReport {
            name: name.to_string(),
            params,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            fit: None,
            notes: Vec::new(),
            verdict: Verdict::Informational,
            provenance: ReportProvenance::now(),
        }
    }

    /// Values of a numeric column, `None` where a row leaves it empty.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64()).collect())
    }

    /// Comment lines echo the experiment, parameters, fit, verdict and
    /// notes; then one header line and one line per grid point.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment={}", self.name);
        let _ = writeln!(s, "# tool_version={}", self.provenance.tool_version);
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k}={v}");
        }
        if let Some(fit) = &self.fit {
            let _ = writeln!(s, "# fit_slope={}", fmt_f64(fit.slope));
            let _ = writeln!(s, "# fit_intercept={}", fmt_f64(fit.intercept));
        }
        let _ = writeln!(s, "# verdict={}", self.verdict.as_str());
        for n in &self.notes {
            let _ = writeln!(s, "# note={n}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Ordinary least squares of `ys` on `xs`; `None` with fewer than two
/// distinct abscissae.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some(Fit {
        slope,
        intercept: my - slope * mx,
        points: n,
    })
}

/// `points` values from `hi` down to `lo`, evenly spaced in `log`.
pub fn geometric_grid(hi: f64, lo: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![hi],
        n => (0..n).map(|k| hi * (lo / hi).powf(k as f64 / (n - 1) as f64)).collect(),
    }
}

/// Verdict thresholds, echoed into every report.
///
/// The theorems carry unspecified constants, so the calibrated entries
/// come from pilot runs at the standard grids; regression tests keep the
/// measured statistics within 20% of those pilots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Allowed distance between the fitted and the predicted slope.
    pub slope_tolerance: f64,
    /// Least admissible `q_lower * log K(eps)`.
    pub lower_bound_min: f64,
    /// Largest admissible `q_upper * log K(eps) / min{1/(c-1), log(1/eps)}`.
    pub lower_bound_ceiling: f64,
    /// Largest admissible window-lemma ratio.
    pub window_ratio_max: f64,
    /// Largest admissible squarefree-sum ratio.
    pub squarefree_ratio_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            slope_tolerance: 0.15,
            lower_bound_min: 0.05,
            lower_bound_ceiling: LOWER_BOUND_CEILING,
            window_ratio_max: 20.0,
            squarefree_ratio_max: SQUAREFREE_RATIO_MAX,
        }
    }
}

/// 1.2 times the largest upper ratio of the standard pilot runs
/// (c = 2, eps down to 3.9e-3, y up to 10^7: 0.5791).
pub const LOWER_BOUND_CEILING: f64 = 1.2 * 0.5791;
/// 1.2 times the largest ratio of the standard pilot runs (c = 3,
/// eps = 0.02: 0.3333, the window holding `n = 2`).
pub const SQUAREFREE_RATIO_MAX: f64 = 1.2 * 0.3333;

impl Thresholds {
    fn echo(&self, params: &mut BTreeMap<String, String>) {
        params.insert("threshold.slope_tolerance".into(), fmt_f64(self.slope_tolerance));
        params.insert("threshold.lower_bound_min".into(), fmt_f64(self.lower_bound_min));
        params.insert(
            "threshold.lower_bound_ceiling".into(),
            fmt_f64(self.lower_bound_ceiling),
        );
        params.insert("threshold.window_ratio_max".into(), fmt_f64(self.window_ratio_max));
        params.insert(
            "threshold.squarefree_ratio_max".into(),
            fmt_f64(self.squarefree_ratio_max),
        );
    }
}

/// How the truncation point `y` of the smooth law is chosen per grid point.
/// Values beyond the prime table are clamped to its limit and flagged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum YRule {
    Fixed {
        y: f64,
    },
    /// `y = P_{2 eps} = exp((2 eps)^{-1/c})`, the threshold of the proofs.
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Mc(McConfig),
}

/// Work limits shared by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub tail_budget: f64,
    /// Each distribution uses resolution `eps / resolution_divisor`.
    pub resolution_divisor: f64,
    pub atom_budget: usize,
    pub enumeration: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            tail_budget: 1e-6,
            resolution_divisor: 32.0,
            atom_budget: 16_000_000,
            enumeration: DEFAULT_ENUMERATION_BUDGET,
        }
    }
}

impl Budget {
    fn options(&self, eps: f64) -> ConvolutionOptions {
        ConvolutionOptions {
            atom_budget: self.atom_budget,
            ..ConvolutionOptions::new(self.tail_budget, eps / self.resolution_divisor)
        }
    }

    fn echo(&self, params: &mut BTreeMap<String, String>) {
        params.insert("budget.tail".into(), fmt_f64(self.tail_budget));
        params.insert("budget.resolution_divisor".into(), fmt_f64(self.resolution_divisor));
        params.insert("budget.atoms".into(), self.atom_budget.to_string());
        params.insert("budget.enumeration".into(), self.enumeration.to_string());
    }
}

fn grid_string(grid: &[f64]) -> String {
    grid.iter().map(|&e| fmt_f64(e)).collect::<Vec<_>>().join(";")
}

fn check_grid(grid: &[f64], hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("eps grid is empty"));
    }
    if let Some(e) = grid.iter().find(|&&e| !(e > 0.0 && e <= hi)) {
        return Err(Error::invalid(format!("eps {e} outside (0, {hi}]")));
    }
    Ok(())
}

/// Clamps `y` to the table; returns `(y, capped)`.
fn clamp_y(y: f64, table: &PrimeTable) -> (f64, bool) {
    let cap = table.limit() as f64;
    if y > cap {
        (cap, true)
    } else {
        (y.max(1.0), false)
    }
}

fn infeasible_note(what: &str, log_need: f64, table: &PrimeTable, eps: &[f64]) -> String {
    format!(
        "{what} = exp({}) exceeds the prime table limit {}; eps in {{{}}} use y = {}",
        fmt_f64(log_need),
        table.limit(),
        grid_string(eps),
        table.limit()
    )
}

fn smooth_law(
    f: &AdditiveFunctionSpec,
    y: f64,
    eps: f64,
    method: &Method,
    row: usize,
    budget: &Budget,
    table: &PrimeTable,
) -> Result<DiscreteDistribution> {
    match method {
        Method::Exact => smooth_exact(f, y, &budget.options(eps), table),
        Method::Mc(cfg) => {
            let cfg = McConfig {
                seed: cfg.seed.wrapping_add(row as u64),
                target_eps: Some(eps),
                ..*cfg
            };
            sample_smooth(f, y, &cfg, table)
        }
    }
}

// ---------------------------------------------------------------------------
// Scaling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub c: f64,
    pub eps_grid: Vec<f64>,
    pub y_rule: YRule,
    pub method: Method,
    #[serde(default)]
    pub budget: Budget,
}

/// Predicted slope of `log Q` against `log eps`: `1/c` for `c >= 1`, and 1
/// below.
pub fn predicted_slope(c: f64) -> f64 {
    if c >= 1.0 {
        1.0 / c
    } else {
        1.0
    }
}

fn envelope_upper(c: f64, eps: f64) -> Option<f64> {
    let source = if c >= 1.0 {
        EnvelopeSource::ThmEkc { c }
    } else {
        EnvelopeSource::CLessOne { c }
    };
    envelopes(source, eps).ok().map(|e| e.upper_envelope)
}

/// Fits the slope of `log Q_{F_y}(eps)` on `log eps` and compares it with
/// the predicted exponent.
pub fn scaling_experiment(p: &ScalingParams, th: &Thresholds, table: &PrimeTable) -> Result<ExperimentReport> {
    if !(p.c > 0.0 && p.c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive, got {}", p.c)));
    }
    check_grid(&p.eps_grid, 1.0)?;
    let f = AdditiveFunctionSpec::log_pow(p.c)?;
    let mut params = BTreeMap::new();
    params.insert("c".into(), fmt_f64(p.c));
    params.insert("eps_grid".into(), grid_string(&p.eps_grid));
    params.insert("y_rule".into(), serde_json::to_string(&p.y_rule)?);
    params.insert("method".into(), serde_json::to_string(&p.method)?);
    params.insert("table_limit".into(), table.limit().to_string());
    p.budget.echo(&mut params);
    th.echo(&mut params);
    let mut report = ExperimentReport::new(
        "scaling",
        params,
        &[
            "eps",
            "y",
            "y_capped",
            "below_threshold",
            "resolution",
            "q_lower",
            "q_upper",
            "q_mid",
            "tail",
            "slack",
            "statistical",
            "ratio_eps_pow",
            "envelope_upper",
            "ratio_envelope",
        ],
    );

    let rows: Vec<Result<(Vec<Cell>, bool, bool)>> = p
        .eps_grid
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let log_threshold = log_p_delta(p.c, 2.0 * eps);
            let (y, capped) = match p.y_rule {
                YRule::Fixed { y } => clamp_y(y, table),
                YRule::Threshold => clamp_y(log_threshold.exp(), table),
            };
            let below = y.ln() < log_threshold;
            let d = smooth_law(&f, y, eps, &p.method, i, &p.budget, table)?;
            let b = concentration(&d, eps)?;
            let q = b.midpoint();
            let env = envelope_upper(p.c, eps);
            let row = vec![
                eps.into(),
                y.into(),
                capped.into(),
                below.into(),
                d.resolution().into(),
                b.q_lower.into(),
                b.q_upper.into(),
                q.into(),
                d.tail_mass().into(),
                d.slack().into(),
                b.error_terms.statistical.into(),
                (q / eps.powf(1.0 / p.c)).into(),
                env.into(),
                env.map(|e| q / e).into(),
            ];
            Ok((row, capped, below))
        })
        .collect();
    let mut capped_eps = Vec::new();
    let mut below_eps = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (r, &eps) in rows.into_iter().zip(&p.eps_grid) {
        let (row, capped, below) = r?;
        if capped {
            capped_eps.push(eps);
        }
        if below {
            below_eps.push(eps);
        }
        let q = row[7].as_f64().unwrap_or(0.0);
        if q > 0.0 {
            xs.push(eps.ln());
            ys.push(q.ln());
        }
        report.rows.push(row);
    }
    if !capped_eps.is_empty() {
        let e_min = capped_eps.iter().copied().fold(f64::INFINITY, f64::min);
        let need = match p.y_rule {
            YRule::Fixed { y } => y.ln(),
            YRule::Threshold => log_p_delta(p.c, 2.0 * e_min),
        };
        report.notes.push(infeasible_note("y", need, table, &capped_eps));
    }
    if !below_eps.is_empty() {
        report
            .notes
            .push(format!("y < P_{{2 eps}} for eps in {{{}}}", grid_string(&below_eps)));
    }
    report.fit = ols(&xs, &ys);
    let target = predicted_slope(p.c);
    report.params.insert("predicted_slope".into(), fmt_f64(target));
    report.verdict = match report.fit {
        _ if p.c == 1.0 => {
            report.notes.push("c = 1 is open; verdict informational".into());
            Verdict::Informational
        }
        Some(fit) if p.eps_grid.len() >= MIN_FIT_POINTS => {
            Verdict::from_check((fit.slope - target).abs() <= th.slope_tolerance)
        }
        _ => {
            report
                .notes
                .push(format!("fewer than {MIN_FIT_POINTS} grid points; no verdict"));
            Verdict::Informational
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Lower bound of the main theorem

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub c: f64,
    pub eps_grid: Vec<f64>,
    /// Exponent in the hypothesis `y >= K(eps)^{1/A}`.
    pub a: f64,
    #[serde(default)]
    pub budget: Budget,
}

/// `min{1/(c-1), log(1/eps)}` with `c` clamped to `[1, 2]`.
fn main_factor(c: f64, eps: f64) -> f64 {
    let c = c.min(2.0);
    let log_inv = (1.0 / eps).ln();
    if c > 1.0 {
        (1.0 / (c - 1.0)).min(log_inv)
    } else {
        log_inv
    }
}

/// One table row plus its feasibility flag and the lower and upper products.
type MainRow = (Vec<Cell>, bool, f64, f64);

/// Records `q_lower log K(eps)` and `q_upper log K(eps) / min{1/(c-1),
/// log(1/eps)}` with `y = K(eps)^{1/A}`.
pub fn lower_bound_check(p: &LowerBoundParams, th: &Thresholds, table: &PrimeTable) -> Result<ExperimentReport> {
    if !(p.c >= 1.0 && p.c.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "the main theorem needs c >= 1, got {}",
            p.c
        )));
    }
    if !(p.a >= 1.0) {
        return Err(Error::invalid(format!("A must be >= 1, got {}", p.a)));
    }
    check_grid(&p.eps_grid, 1.0)?;
    let f = AdditiveFunctionSpec::log_pow(p.c)?;
    let mut params = BTreeMap::new();
    params.insert("c".into(), fmt_f64(p.c));
    params.insert("c_theorem".into(), fmt_f64(p.c.min(2.0)));
    params.insert("a".into(), fmt_f64(p.a));
    params.insert("eps_grid".into(), grid_string(&p.eps_grid));
    params.insert("table_limit".into(), table.limit().to_string());
    p.budget.echo(&mut params);
    th.echo(&mut params);
    let mut report = ExperimentReport::new(
        "lower_bound",
        params,
        &[
            "eps",
            "k_eps",
            "log_k",
            "y",
            "hypothesis_ok",
            "q_lower",
            "q_upper",
            "lower_product",
            "upper_ratio",
        ],
    );
    if p.c > 2.0 {
        report
            .notes
            .push("c > 2: the theorem is applied with c = 2, which the hypotheses still satisfy".into());
    }
    let rows: Vec<Result<MainRow>> = p
        .eps_grid
        .par_iter()
        .map(|&eps| {
            // g(t) = (log t)^{-c} in closed form, so the horizon is moot;
            // past 2^62 only log K = eps^{-1/c} is available
            let (k, log_k) = match k_of_eps(&f, p.c, eps, u64::MAX, table) {
                Ok(k) => (Some(k), (k as f64).ln()),
                Err(Error::UnboundedSearch { .. }) => (None, log_p_delta(p.c, eps)),
                Err(e) => return Err(e),
            };
            let y_needed = match k {
                Some(k) => (k as f64).powf(1.0 / p.a),
                None => (log_k / p.a).exp(),
            };
            let (y, capped) = clamp_y(y_needed, table);
            let ok = !capped && eps <= 0.5;
            let d = smooth_exact(&f, y, &p.budget.options(eps), table)?;
            let b = concentration(&d, eps)?;
            let lower = b.q_lower * log_k;
            let upper = b.q_upper * log_k / main_factor(p.c, eps);
            let row = vec![
                eps.into(),
                k.map_or(Cell::Empty, Cell::Int),
                log_k.into(),
                y.into(),
                ok.into(),
                b.q_lower.into(),
                b.q_upper.into(),
                lower.into(),
                upper.into(),
            ];
            Ok((row, ok, lower, upper))
        })
        .collect();
    let mut min_lower = f64::INFINITY;
    let mut max_upper = 0.0f64;
    let mut skipped = Vec::new();
    for (r, &eps) in rows.into_iter().zip(&p.eps_grid) {
        let (row, ok, lower, upper) = r?;
        if ok {
            min_lower = min_lower.min(lower);
            max_upper = max_upper.max(upper);
        } else {
            skipped.push(eps);
        }
        report.rows.push(row);
    }
    if !skipped.is_empty() {
        report.notes.push(format!(
            "hypothesis y >= K(eps)^(1/A) with eps <= 1/2 not met within the prime table for eps in {{{}}}; rows excluded from the verdict",
            grid_string(&skipped)
        ));
    }
    report.verdict = if p.c == 1.0 {
        report.notes.push("c = 1 is open; verdict informational".into());
        Verdict::Informational
    } else if min_lower.is_finite() {
        report.params.insert("min_lower_product".into(), fmt_f64(min_lower));
        report.params.insert("max_upper_ratio".into(), fmt_f64(max_upper));
        Verdict::from_check(min_lower >= th.lower_bound_min && max_upper <= th.lower_bound_ceiling)
    } else {
        Verdict::Informational
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Window lemma

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub c: f64,
    pub eps: f64,
    pub delta_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub v_step: f64,
}

/// Largest `sum 1/p` over `z < p <= P_delta` with `v < f(p) <= v + eps`,
/// scanning `v` in steps of `v_step`; returns `(sum, v)`.
fn window_scan(
    f: &AdditiveFunctionSpec,
    eps: f64,
    z: f64,
    w: f64,
    v_step: f64,
    table: &PrimeTable,
) -> Result<(f64, f64)> {
    let primes = table.range(z, w);
    if primes.is_empty() {
        return Ok((0.0, f64::NAN));
    }
    let vals = f.prime_values(primes)?;
    let mut pts: Vec<(f64, f64)> = vals
        .into_iter()
        .zip(primes)
        .map(|(v, &p)| (v, 1.0 / p as f64))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    let steps = ((hi - lo + eps) / v_step).ceil() as u64 + 1;
    let mut best = (0.0f64, f64::NAN);
    for k in 0..=steps {
        let v = lo - eps + k as f64 * v_step;
        let window = ValueWindow::half_open(v, eps);
        let a = pts.partition_point(|q| q.0 <= v);
        let mut s = CompensatedSum::new();
        for q in pts[a..].iter().take_while(|q| window.contains(q.0)) {
            s.add(q.1);
        }
        if s.value() > best.0 {
            best = (s.value(), v);
        }
    }
    Ok(best)
}

/// Scans `LHS / (eps/delta + z^{-1/2})` where LHS is the prime sum of the
/// window lemma.
pub fn window_lemma_check(p: &WindowParams, th: &Thresholds, table: &PrimeTable) -> Result<ExperimentReport> {
    if !(p.c >= 1.0 && p.c.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "the window lemma needs c >= 1, got {}",
            p.c
        )));
    }
    if !(p.eps > 0.0 && p.eps <= 0.5) {
        return Err(Error::invalid(format!("eps must lie in (0, 1/2], got {}", p.eps)));
    }
    if !(p.v_step > 0.0) {
        return Err(Error::invalid("v_step must be positive"));
    }
    if let Some(d) = p.delta_grid.iter().find(|&&d| !(d >= 2.0 * p.eps && d <= 1.0)) {
        return Err(Error::invalid(format!("delta {d} outside [2 eps, 1]")));
    }
    if let Some(z) = p.z_grid.iter().find(|&&z| !(z >= 1.0)) {
        return Err(Error::invalid(format!("z = {z} must be >= 1")));
    }
    let f = AdditiveFunctionSpec::log_pow(p.c)?;
    let mut params = BTreeMap::new();
    params.insert("c".into(), fmt_f64(p.c));
    params.insert("eps".into(), fmt_f64(p.eps));
    params.insert("delta_grid".into(), grid_string(&p.delta_grid));
    params.insert("z_grid".into(), grid_string(&p.z_grid));
    params.insert("v_step".into(), fmt_f64(p.v_step));
    params.insert("table_limit".into(), table.limit().to_string());
    th.echo(&mut params);
    let mut report = ExperimentReport::new(
        "window_lemma",
        params,
        &["delta", "z", "p_delta", "lhs_max", "v_at_max", "bound", "ratio"],
    );
    let limit = table.limit() as f64;
    let mut cases = Vec::new();
    for &delta in &p.delta_grid {
        let log_w = log_p_delta(p.c, delta);
        if log_w > limit.ln() {
            report.notes.push(format!(
                "P_delta = exp({}) exceeds the prime table limit {} for delta = {}; skipped",
                fmt_f64(log_w),
                table.limit(),
                fmt_f64(delta)
            ));
            continue;
        }
        let w = log_w.exp();
        for &z in p.z_grid.iter().filter(|&&z| z <= w) {
            cases.push((delta, z, w));
        }
    }
    let rows: Vec<Result<(Vec<Cell>, f64)>> = cases
        .par_iter()
        .map(|&(delta, z, w)| {
            let (lhs, v) = window_scan(&f, p.eps, z, w, p.v_step, table)?;
            let bound = p.eps / delta + z.powf(-0.5);
            let ratio = lhs / bound;
            let row = vec![
                delta.into(),
                z.into(),
                w.into(),
                lhs.into(),
                (if v.is_nan() { None } else { Some(v) }).into(),
                bound.into(),
                ratio.into(),
            ];
            Ok((row, ratio))
        })
        .collect();
    let mut max_ratio = 0.0f64;
    for r in rows {
        let (row, ratio) = r?;
        max_ratio = max_ratio.max(ratio);
        report.rows.push(row);
    }
    report.params.insert("max_ratio".into(), fmt_f64(max_ratio));
    report.verdict = if report.rows.is_empty() {
        Verdict::Informational
    } else {
        Verdict::from_check(max_ratio <= th.window_ratio_max)
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Squarefree sum

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquarefreeParams {
    pub c: f64,
    pub eps: f64,
    pub v_grid: Vec<f64>,
    #[serde(default)]
    pub budget: Budget,
}

/// `min{c/(c-1), log(1/eps)}`, with `log(1/eps)` at `c = 1`.
fn ekc_factor(c: f64, eps: f64) -> f64 {
    let log_inv = (1.0 / eps).ln();
    if c > 1.0 {
        (c / (c - 1.0)).min(log_inv)
    } else {
        log_inv
    }
}

/// Brackets `sum mu^2(n)/n` over squarefree `P_{2 eps}`-smooth `n` with
/// `v < f(n) <= v + eps`, divided by `min{c/(c-1), log(1/eps)}`.
pub fn squarefree_sum_check(p: &SquarefreeParams, th: &Thresholds, table: &PrimeTable) -> Result<ExperimentReport> {
    if !(p.c >= 1.0 && p.c.is_finite()) {
        return Err(Error::HypothesisViolation(format!(
            "the squarefree estimate needs c >= 1, got {}",
            p.c
        )));
    }
    if !(p.eps > 0.0 && p.eps < 1.0) {
        return Err(Error::invalid(format!("eps must lie in (0, 1), got {}", p.eps)));
    }
    let f = AdditiveFunctionSpec::log_pow(p.c)?;
    let log_q = log_p_delta(p.c, 2.0 * p.eps);
    let mut params = BTreeMap::new();
    params.insert("c".into(), fmt_f64(p.c));
    params.insert("eps".into(), fmt_f64(p.eps));
    params.insert("v_grid".into(), grid_string(&p.v_grid));
    params.insert("log_q".into(), fmt_f64(log_q));
    p.budget.echo(&mut params);
    th.echo(&mut params);
    let mut report = ExperimentReport::new("squarefree_sum", params, &["v", "sum_lower", "sum_upper", "ratio"]);
    if log_q > (table.limit() as f64).ln() {
        report.notes.push(format!(
            "q = P_(2 eps) = exp({}) exceeds the prime table limit {}; nothing computed",
            fmt_f64(log_q),
            table.limit()
        ));
        return Ok(report);
    }
    let q = log_q.exp();
    // exact values while they fit, the grid beyond
    let exact = ConvolutionOptions {
        resolution: 0.0,
        ..p.budget.options(p.eps)
    };
    let (d, norm) = match squarefree_smooth(&f, q, &exact, table) {
        Err(Error::AtomExplosion { .. }) => squarefree_smooth(&f, q, &p.budget.options(p.eps), table)?,
        r => r?,
    };
    report.params.insert("resolution".into(), fmt_f64(d.resolution()));
    let factor = ekc_factor(p.c, p.eps);
    let mut max_ratio = 0.0f64;
    for &v in &p.v_grid {
        let (lo, hi) = interval_mass(&d, v, v + p.eps);
        let ratio = norm * hi / factor;
        max_ratio = max_ratio.max(ratio);
        report
            .rows
            .push(vec![v.into(), (norm * lo).into(), (norm * hi).into(), ratio.into()]);
    }
    report.params.insert("normalizer".into(), fmt_f64(norm));
    report.params.insert("max_ratio".into(), fmt_f64(max_ratio));
    report.verdict = if report.rows.is_empty() {
        Verdict::Informational
    } else {
        Verdict::from_check(max_ratio <= th.squarefree_ratio_max)
    };
    Ok(report)
}

// ---------------------------------------------------------------------------
// Model against integers

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVsIntegersParams {
    pub f: AdditiveFunctionSpec,
    pub x: u64,
    pub y: f64,
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub budget: Budget,
}

fn brackets_overlap(a: &ConcentrationBracket, b: &ConcentrationBracket) -> bool {
    a.q_lower <= b.q_upper && b.q_lower <= a.q_upper
}

/// `Q_{F_x}` beside `Q_{F_y}` on each grid point.
pub fn model_vs_integers(p: &ModelVsIntegersParams, table: &PrimeTable) -> Result<ExperimentReport> {
    check_grid(&p.eps_grid, f64::INFINITY)?;
    let mut params = BTreeMap::new();
    params.insert("f".into(), p.f.label());
    params.insert("x".into(), p.x.to_string());
    params.insert("y".into(), fmt_f64(p.y));
    params.insert("eps_grid".into(), grid_string(&p.eps_grid));
    p.budget.echo(&mut params);
    let mut report = ExperimentReport::new(
        "model_vs_integers",
        params,
        &["eps", "fx_lower", "fx_upper", "fy_lower", "fy_upper", "overlap"],
    );
    let fx = empirical_distribution(&p.f, p.x, p.budget.enumeration, table)?;
    let e_min = p.eps_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let fy = smooth_exact(&p.f, p.y, &p.budget.options(e_min), table)?;
    for &eps in &p.eps_grid {
        let a = concentration(&fx, eps)?;
        let b = concentration(&fy, eps)?;
        report.rows.push(vec![
            eps.into(),
            a.q_lower.into(),
            a.q_upper.into(),
            b.q_lower.into(),
            b.q_upper.into(),
            brackets_overlap(&a, &b).into(),
        ]);
    }
    report
        .notes
        .push("no constant relates the two laws at finite x and y; informational".into());
    Ok(report)
}
