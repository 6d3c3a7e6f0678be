use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "addconc",
    version,
    about = "Concentration functions of additive arithmetic functions"
)]
pub struct Cli {
    /// File of `key=value` lines naming long flags of the subcommand;
    /// flags on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// List the primes up to a limit.
    Sieve(SieveArgs),
    /// Evaluate f(n).
    Eval(EvalArgs),
    /// Build a value distribution and write it as CSV or JSON.
    Dist(DistArgs),
    /// Concentration brackets Q(eps) of a distribution.
    Conc(ConcArgs),
    /// Characteristic function of the smooth law.
    Char(CharArgs),
    /// The three Erdős–Wintner series.
    Series(SeriesArgs),
    /// Ruzsa's upper bound on the concentration.
    Ruzsa(RuzsaArgs),
    /// Slope of log Q against log eps for f(p) = (log p)^{-c}.
    Scaling(ScalingArgs),
    /// Run a check; exits 2 when its verdict is `fail`.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output file; `-` is standard output.
    #[arg(long, default_value = "-", value_name = "PATH")]
    pub out: String,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyName {
    Logpow,
    Omega,
    Bigomega,
    Logphiratio,
    Table,
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    #[arg(long, value_enum, default_value_t = FamilyName::Logpow)]
    pub family: FamilyName,
    /// Exponent of `f(p) = (log p)^{-c}`.
    #[arg(long, default_value_t = 2.0)]
    pub c: f64,
    /// `prime_power,value` CSV for `--family table`.
    #[arg(long, value_name = "PATH")]
    pub table: Option<PathBuf>,
    /// Give prime powers their own values instead of `f(p^k) = f(p)`.
    #[arg(long)]
    pub additive: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SieveArgs {
    #[arg(long)]
    pub limit: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// Comma-separated arguments.
    #[arg(long, value_delimiter = ',', required_unless_present = "upto")]
    pub n: Vec<u64>,
    /// Evaluate every n from 1 to this bound.
    #[arg(long, conflicts_with = "n")]
    pub upto: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Exact smooth law over y-smooth integers.
    Smooth,
    /// Values f(n) for n <= x.
    Empirical,
    /// Monte Carlo draws from the smooth law.
    Mc,
    /// Monte Carlo draws from the Bernoulli model.
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Order {
    Smallest,
    Largest,
}

#[derive(Args, Debug, Clone)]
pub struct LawArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, value_enum, default_value_t = Mode::Smooth)]
    pub mode: Mode,
    /// Range of the empirical law.
    #[arg(long, default_value_t = 1_000_000)]
    pub x: u64,
    /// Largest prime of the smooth and sampled laws.
    #[arg(long, default_value_t = 1000.0)]
    pub y: f64,
    /// Mass the smooth convolution may drop.
    #[arg(long, default_value_t = 1e-6)]
    pub tail: f64,
    /// Certified distance from true values to atoms; 0 keeps exact values.
    #[arg(long, default_value_t = 0.0)]
    pub resolution: f64,
    /// Fold primes by increasing or decreasing |f(p)|.
    #[arg(long, value_enum, default_value_t = Order::Smallest)]
    pub order: Order,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub shards: u32,
    /// DKW confidence level of sampled laws.
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    /// Bucket sampled values to width target_eps / 64.
    #[arg(long)]
    pub target_eps: Option<f64>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct DistArgs {
    #[command(flatten)]
    pub law: LawArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ConcArgs {
    #[command(flatten)]
    pub law: LawArgs,
    /// Read the distribution from a CSV written by `dist`.
    #[arg(long, value_name = "PATH")]
    pub from: Option<PathBuf>,
    /// Comma-separated window widths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct CharArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 1000.0)]
    pub y: f64,
    /// Comma-separated frequencies.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub xi: Vec<f64>,
    /// Prime exponents summed per Euler factor.
    #[arg(long, default_value_t = 20)]
    pub kmax: u32,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SeriesArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long, default_value_t = 1e6)]
    pub cutoff: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    SquareInside,
    Literal,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct RuzsaArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub x: f64,
    #[arg(long, value_enum, default_value_t = Variant::SquareInside)]
    pub variant: Variant,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Explicit comma-separated grid; overrides the geometric grid.
    #[arg(long, value_delimiter = ',')]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub eps_max: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps_min: f64,
    #[arg(long, default_value_t = 8)]
    pub points: usize,
}

impl GridArgs {
    pub fn grid(&self) -> Vec<f64> {
        if self.eps.is_empty() {
            addconc_core::experiments::geometric_grid(self.eps_max, self.eps_min, self.points)
        } else {
            self.eps.clone()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct BudgetArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub tail: f64,
    /// Each distribution uses resolution eps / divisor.
    #[arg(long, default_value_t = 32.0)]
    pub resolution_divisor: f64,
    /// Prime table limit; larger y are clamped to it and noted.
    #[arg(long, default_value_t = 10_000_000)]
    pub y_max: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum YRuleName {
    Threshold,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Exact,
    Mc,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ScalingArgs {
    #[arg(long)]
    pub c: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, value_enum, default_value_t = YRuleName::Threshold)]
    pub y_rule: YRuleName,
    /// y for `--y-rule fixed`.
    #[arg(long, default_value_t = 1e7)]
    pub y: f64,
    #[arg(long, value_enum, default_value_t = MethodName::Exact)]
    pub method: MethodName,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub shards: u32,
    #[arg(long, default_value_t = 0.15)]
    pub slope_tolerance: f64,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub check: Check,
}

#[derive(Subcommand, Debug)]
pub enum Check {
    /// q_lower log K(eps) and q_upper log K(eps) / min{1/(c-1), log(1/eps)}.
    LowerBound(LowerBoundArgs),
    /// The prime window sum against eps/delta + z^{-1/2}.
    WindowLemma(WindowArgs),
    /// Squarefree smooth sums in windows of width eps.
    Squarefree(SquarefreeArgs),
    /// Q of the integer law beside Q of the smooth law.
    ModelVsIntegers(ModelArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct LowerBoundArgs {
    #[arg(long)]
    pub c: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Exponent of the hypothesis y >= K(eps)^{1/A}.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Least admissible q_lower log K(eps).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Largest admissible upper ratio.
    #[arg(long)]
    pub ceiling: Option<f64>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct WindowArgs {
    #[arg(long)]
    pub c: f64,
    #[arg(long)]
    pub eps: f64,
    /// Comma-separated; defaults to 2 eps, 4 eps, ... up to 1/2.
    #[arg(long, value_delimiter = ',')]
    pub deltas: Vec<f64>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,2,5,10,30,100,1000,10000,100000,1000000"
    )]
    pub z: Vec<f64>,
    /// Defaults to eps / 4.
    #[arg(long)]
    pub v_step: Option<f64>,
    /// Largest admissible ratio.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 10_000_000)]
    pub y_max: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SquarefreeArgs {
    #[arg(long)]
    pub c: f64,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub v_min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub v_max: f64,
    /// Defaults to eps.
    #[arg(long)]
    pub v_step: Option<f64>,
    /// Largest admissible ratio.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ModelArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[arg(long)]
    pub x: u64,
    #[arg(long)]
    pub y: f64,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
