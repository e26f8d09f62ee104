use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::Value;

use osdos::harness::{
    cdf_csv, curves, curves_csv, fmt_sig, results_csv, run_experiment, ExperimentConfig, InstanceSpec,
    MechanismSpec, QuadraticFamily,
};
use osdos::instances::{read_instance, write_instance, InstanceKind};
use osdos::lower_bound::{solve, solve_alpha_star, solve_alpha_star_general};
use osdos::mechanisms::{expected_welfare, run_trial};
use osdos::pricing::{build_pricing_scheme, build_pricing_scheme_k2};
use osdos::{CostModel, CostSpec, ModelSpec, PricingScheme, SolverConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

/// Lower bounds, pricing schemes and simulations for online k-selection with
/// increasing marginal production costs.
#[derive(Parser)]
#[command(name = "osdos", version)]
struct Cli {
    /// Directory for files written by `pricing`, `instances`, `experiment` and `curves`.
    #[arg(long, global = true, env = "OSDOS_OUT_DIR", default_value = "osdos-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the competitive-ratio lower bound alpha*.
    Solve(SolveArgs),
    /// Build the pricing scheme and dump it as JSON plus a sampled CSV.
    Pricing(PricingArgs),
    /// Generate arrival instances.
    Instances(InstancesArgs),
    /// Run a pricing scheme on one instance.
    Simulate(SimulateArgs),
    /// Empirical competitive-ratio distributions over generated instances.
    Experiment(ExperimentArgs),
    /// alpha* and the pricing guarantee over a range of k.
    Curves(CurvesArgs),
}

#[derive(Args, Clone, Default)]
struct ModelArgs {
    /// JSON config; either a model object or an object with a `model` field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Lowest valuation L.
    #[arg(long)]
    lower: Option<f64>,
    /// Highest valuation U.
    #[arg(long)]
    upper: Option<f64>,
    /// Capacity k (with --coeff).
    #[arg(long)]
    k: Option<usize>,
    /// Quadratic cost f(i) = coeff * i^2.
    #[arg(long, conflicts_with = "marginals")]
    coeff: Option<f64>,
    /// Explicit marginal costs, comma separated.
    #[arg(long, value_delimiter = ',')]
    marginals: Option<Vec<f64>>,
    /// Solver tolerance on |u_k - U|.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Copy, Clone, ValueEnum)]
enum RegimeArg {
    Auto,
    HighValue,
    General,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Force a solver instead of picking it from c_k < L.
    #[arg(long, value_enum, default_value = "auto")]
    regime: RegimeArg,
}

#[derive(Copy, Clone, ValueEnum)]
enum SchemeArg {
    General,
    HighValue,
    TwoUnit,
}

#[derive(Args)]
struct PricingArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value = "general")]
    scheme: SchemeArg,
    /// Seed grid points per unit in the CSV.
    #[arg(long, default_value_t = 101)]
    grid: usize,
}

#[derive(Args)]
struct InstancesArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    dist: DistArgs,
}

#[derive(Copy, Clone, ValueEnum)]
enum KindArg {
    Hard,
    Iid,
    Sorted,
    Low2high,
}

impl From<KindArg> for InstanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Hard => InstanceKind::Hard,
            KindArg::Iid => InstanceKind::Iid,
            KindArg::Sorted => InstanceKind::Sorted,
            KindArg::Low2high => InstanceKind::Low2high,
        }
    }
}

#[derive(Args, Clone, Default)]
struct DistArgs {
    /// Buyers per iid/sorted instance.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sdev: Option<f64>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    sdev1: Option<f64>,
    #[arg(long)]
    n2: Option<usize>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    sdev2: Option<f64>,
    /// Read every spread parameter as a variance instead of a standard deviation.
    #[arg(long)]
    variance: bool,
    /// Stage width of the hard instance.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Last stage of the hard instance (defaults to sweeping the grid).
    #[arg(long)]
    terminal: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Optional JSON config supplying `trials`, `master_seed` and `mechanisms[0]`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pricing scheme JSON as written by `pricing`.
    #[arg(long)]
    scheme: PathBuf,
    /// Instance file: one valuation per line.
    #[arg(long)]
    instance: PathBuf,
    /// r-dynamic, pinned:<sigma> or static-surrogate.
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pin every seed to this value; gives a deterministic trace.
    #[arg(long)]
    pin_seeds: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Mechanisms to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    mechanisms: Option<Vec<String>>,
    #[command(flatten)]
    dist: DistArgs,
}

#[derive(Args)]
struct CurvesArgs {
    /// JSON config with `lower`, `upper`, `coeff`, `k_min`, `k_max`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lower: Option<f64>,
    #[arg(long)]
    upper: Option<f64>,
    #[arg(long)]
    coeff: Option<f64>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

/// Marks errors that come from bad input rather than from the solver or the OS.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn from_value<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| invalid(format!("bad {what}: {e}")))
}

/// The object under `key` if present, else the whole document.
fn section(doc: &Value, key: &str) -> Value {
    doc.get(key).cloned().unwrap_or_else(|| doc.clone())
}

impl ModelArgs {
    fn document(&self) -> Result<Option<Value>> {
        self.config.as_deref().map(read_json).transpose()
    }

    fn spec_from(&self, doc: Option<&Value>) -> Result<ModelSpec> {
        let mut spec = match doc {
            Some(doc) if doc.get("model").is_some() || doc.get("L").is_some() => {
                from_value(section(doc, "model"), "model")?
            }
            _ => ExperimentConfig::default().model,
        };
        if let Some(l) = self.lower {
            spec.lower = l;
        }
        if let Some(u) = self.upper {
            spec.upper = u;
        }
        if let Some(c) = &self.marginals {
            spec.k = c.len();
            spec.cost = CostSpec::Explicit { marginals: c.clone() };
        }
        if let Some(coeff) = self.coeff {
            spec.cost = CostSpec::Quadratic { coeff };
        }
        if let Some(k) = self.k {
            spec.k = k;
        }
        Ok(spec)
    }

    fn tol_from(&self, doc: Option<&Value>) -> f64 {
        self.tol
            .or_else(|| doc.and_then(|d| d.get("tol")).and_then(Value::as_f64))
            .unwrap_or(SolverConfig::default().tol)
    }

    fn resolve(&self) -> Result<(CostModel, SolverConfig)> {
        let doc = self.document()?;
        let model = self.spec_from(doc.as_ref())?.build()?;
        Ok((model, SolverConfig::with_tol(self.tol_from(doc.as_ref()))))
    }
}

impl DistArgs {
    fn apply(&self, spec: &mut InstanceSpec) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { spec.$f = v; } )* };
        }
        set!(n, mu, sdev, n1, mu1, sdev1, n2, mu2, sdev2, epsilon);
        if self.variance {
            spec.spread_is_variance = true;
        }
        if self.terminal.is_some() {
            spec.terminal_stage = self.terminal;
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let (model, config) = args.model.resolve()?;
    let sol = match args.regime {
        RegimeArg::Auto => solve(&model, &config)?,
        RegimeArg::HighValue => solve_alpha_star(&model, &config)?,
        RegimeArg::General => solve_alpha_star_general(&model, &config)?,
    };
    print!("{}", to_json(&sol)?);
    Ok(())
}

fn cmd_pricing(args: &PricingArgs, out_dir: &Path) -> Result<()> {
    let (model, config) = args.model.resolve()?;
    let scheme = match args.scheme {
        SchemeArg::General => PricingScheme::build(&model, &config)?,
        SchemeArg::HighValue => build_pricing_scheme(&model, &config)?,
        SchemeArg::TwoUnit => build_pricing_scheme_k2(&model, &config)?,
    };
    if args.grid < 2 {
        return Err(invalid("--grid must be at least 2"));
    }
    let mut csv = String::from("unit,s,phi\n");
    for unit in 1..=scheme.k() {
        for j in 0..args.grid {
            let s = j as f64 / (args.grid - 1) as f64;
            let _ = writeln!(csv, "{unit},{},{}", fmt_sig(s), fmt_sig(scheme.price_at(unit, s)?));
        }
    }
    write_file(&out_dir.join("scheme.json"), &to_json(&scheme)?)?;
    write_file(&out_dir.join("pricing.csv"), &csv)?;
    println!(
        "alpha_star={} cr_guarantee={} guarantee={:?}",
        fmt_sig(scheme.alpha_star),
        fmt_sig(scheme.cr_guarantee),
        scheme.guarantee_kind
    );
    Ok(())
}

/// Instance spec and seed from `--config` (its `instances` and `master_seed`
/// fields), then flags.
fn instance_spec(
    doc: Option<&Value>,
    kind: Option<KindArg>,
    count: Option<usize>,
    dist: &DistArgs,
) -> Result<InstanceSpec> {
    let mut spec: InstanceSpec = match doc.and_then(|d| d.get("instances")) {
        Some(v) => from_value(v.clone(), "instances")?,
        None => InstanceSpec::default(),
    };
    if let Some(k) = kind {
        spec.kind = k.into();
    }
    if let Some(c) = count {
        spec.count = c;
    }
    dist.apply(&mut spec);
    Ok(spec)
}

fn seed_from(doc: Option<&Value>, flag: Option<u64>) -> u64 {
    flag.or_else(|| doc.and_then(|d| d.get("master_seed")).and_then(Value::as_u64))
        .unwrap_or(0)
}

fn cmd_instances(args: &InstancesArgs, out_dir: &Path) -> Result<()> {
    let doc = args.model.document()?;
    let model = args.model.spec_from(doc.as_ref())?.build()?;
    let mut spec = instance_spec(doc.as_ref(), args.kind, args.count, &args.dist)?;
    if args.count.is_none() && doc.as_ref().and_then(|d| d.get("instances")).is_none() {
        spec.count = 1;
    }
    if spec.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    let seed = seed_from(doc.as_ref(), args.seed);
    let kind = serde_json::to_value(spec.kind)?.as_str().unwrap_or("instance").to_string();
    for j in 0..spec.count {
        let inst = spec.generate(&model, seed, j)?;
        let path = out_dir.join(format!("{kind}_{j:04}.txt"));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_instance(&inst, &path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct TraceReport<'a> {
    mechanism: String,
    seed: u64,
    prices: &'a osdos::PriceVector,
    outcome: &'a osdos::RunOutcome,
    opt: f64,
}

#[derive(serde::Serialize)]
struct EstimateReport {
    mechanism: String,
    seed: u64,
    #[serde(flatten)]
    estimate: osdos::WelfareEstimate,
    ratio_std_error: f64,
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let doc = args.config.as_deref().map(read_json).transpose()?;
    let scheme: PricingScheme = from_value(read_json(&args.scheme)?, "pricing scheme")?;
    let instance = read_instance(&args.instance)?;
    let model = scheme.model.clone();

    let mech_spec = match (&args.pin_seeds, &args.mechanism) {
        (Some(sigma), _) => MechanismSpec::Pinned(*sigma),
        (None, Some(m)) => m.parse()?,
        (None, None) => match doc.as_ref().and_then(|d| d.get("mechanisms")).and_then(|m| m.get(0)) {
            Some(v) => from_value(v.clone(), "mechanism")?,
            None => MechanismSpec::RDynamic,
        },
    };
    let mech = mech_spec.instantiate(scheme)?;
    let trials = args
        .trials
        .or_else(|| doc.as_ref().and_then(|d| d.get("trials")).and_then(Value::as_u64))
        .unwrap_or(1);
    let seed = seed_from(doc.as_ref(), args.seed);
    if trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    if trials == 1 {
        let (prices, outcome) = run_trial(&mech, &instance, &model, seed, 0)?;
        let (opt, _) = osdos::mechanisms::offline_opt(&instance, &model);
        print!(
            "{}",
            to_json(&TraceReport {
                mechanism: mech.label(),
                seed,
                prices: &prices,
                outcome: &outcome,
                opt,
            })?
        );
    } else {
        let estimate = expected_welfare(&mech, &instance, &model, trials, seed)?;
        print!(
            "{}",
            to_json(&EstimateReport {
                mechanism: mech.label(),
                seed,
                ratio_std_error: estimate.ratio_std_error(),
                estimate,
            })?
        );
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs, out_dir: &Path) -> Result<()> {
    let doc = args.model.document()?;
    let mut config: ExperimentConfig = match &doc {
        Some(d) => from_value(d.clone(), "experiment config")?,
        None => ExperimentConfig::default(),
    };
    config.model = args.model.spec_from(doc.as_ref())?;
    config.tol = args.model.tol_from(doc.as_ref());
    config.instances = instance_spec(doc.as_ref(), args.kind, args.count, &args.dist)?;
    if let Some(t) = args.trials {
        config.trials = t;
    }
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(ms) = &args.mechanisms {
        config.mechanisms = ms.iter().map(|m| m.parse()).collect::<osdos::Result<_>>()?;
    }
    let dir = config.output.clone().unwrap_or_else(|| out_dir.to_path_buf());
    let report = run_experiment(&config)?;
    write_file(&dir.join("cdf.csv"), &cdf_csv(&report.cdf))?;
    write_file(&dir.join("results.csv"), &results_csv(&report.results))?;
    let summary = serde_json::json!({
        "config": config,
        "alpha_star": report.alpha_star,
        "cr_guarantee": report.cr_guarantee,
    });
    write_file(&dir.join("experiment.json"), &to_json(&summary)?)?;
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct CurvesFile {
    lower: Option<f64>,
    upper: Option<f64>,
    coeff: Option<f64>,
    k_min: Option<usize>,
    k_max: Option<usize>,
    tol: Option<f64>,
}

fn cmd_curves(args: &CurvesArgs, out_dir: &Path) -> Result<()> {
    let file: CurvesFile = match args.config.as_deref() {
        Some(p) => from_value(read_json(p)?, "curves config")?,
        None => CurvesFile::default(),
    };
    let family = QuadraticFamily {
        lower: args.lower.or(file.lower).unwrap_or(1.0),
        upper: args.upper.or(file.upper).unwrap_or(10.0),
        coeff: args.coeff.or(file.coeff).unwrap_or(1.0 / 59.0),
    };
    let (k_min, k_max) = (
        args.k_min.or(file.k_min).unwrap_or(2),
        args.k_max.or(file.k_max).unwrap_or(40),
    );
    if k_min == 0 || k_min > k_max {
        return Err(invalid(format!("bad k range {k_min}..={k_max}")));
    }
    let tol = args.tol.or(file.tol).unwrap_or(SolverConfig::default().tol);
    let report = curves(&family, k_min..=k_max, &SolverConfig::with_tol(tol));
    for f in &report.failures {
        eprintln!("k = {}: skipped: {}", f.k, f.error);
    }
    if report.points.is_empty() {
        bail!(invalid("no k in range could be solved"));
    }
    write_file(&out_dir.join("curves.csv"), &curves_csv(&report.points))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<osdos::Error>() {
            return match e {
                e if e.is_solver_failure() => EXIT_NO_CONVERGENCE,
                osdos::Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<Invalid>().is_some() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Pricing(a) => cmd_pricing(a, &cli.out_dir),
        Command::Instances(a) => cmd_instances(a, &cli.out_dir),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Experiment(a) => cmd_experiment(a, &cli.out_dir),
        Command::Curves(a) => cmd_curves(a, &cli.out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
