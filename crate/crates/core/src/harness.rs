//! Experiment driver: bound curves over a range of capacities and empirical
//! competitive-ratio distributions over generated instances.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost_model::{CostModel, ModelSpec};
use crate::error::{Error, Result};
use crate::exec;
use crate::instances::{self, Instance, InstanceKind};
use crate::lower_bound::{Regime, SolverConfig};
use crate::mechanisms::{
    expected_welfare, instance_seed, make_pinned_deterministic, make_static_random, Mechanism,
};
use crate::pricing::{GuaranteeKind, PricingScheme};
use crate::rng::{substream, DOMAIN_INSTANCES};

pub const DEFAULT_TRIALS: u64 = 2000;
pub const DEFAULT_INSTANCES: usize = 300;
pub const DEFAULT_PINNED_SIGMA: f64 = 0.5;

/// Which mechanism to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismSpec {
    RDynamic,
    Pinned(f64),
    StaticSurrogate,
}

impl MechanismSpec {
    pub fn instantiate(&self, scheme: PricingScheme) -> Result<Mechanism> {
        match *self {
            MechanismSpec::RDynamic => Ok(Mechanism::r_dynamic(scheme)),
            MechanismSpec::Pinned(sigma) => make_pinned_deterministic(scheme, sigma),
            MechanismSpec::StaticSurrogate => Ok(make_static_random(scheme)),
        }
    }

    pub fn defaults() -> Vec<MechanismSpec> {
        vec![
            MechanismSpec::RDynamic,
            MechanismSpec::Pinned(DEFAULT_PINNED_SIGMA),
            MechanismSpec::StaticSurrogate,
        ]
    }
}

impl FromStr for MechanismSpec {
    type Err = Error;

    /// `r-dynamic`, `static-surrogate`, `pinned` or `pinned:<sigma>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "r-dynamic" => return Ok(MechanismSpec::RDynamic),
            "static-surrogate" | "static" => return Ok(MechanismSpec::StaticSurrogate),
            "pinned" => return Ok(MechanismSpec::Pinned(DEFAULT_PINNED_SIGMA)),
            _ => {}
        }
        let sigma = s
            .strip_prefix("pinned:")
            .ok_or_else(|| Error::InvalidInput(format!("unknown mechanism {s:?}")))?;
        let sigma: f64 = sigma
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad sigma in {s:?}")))?;
        if !(0.0..=1.0).contains(&sigma) {
            return Err(Error::out_of_range("sigma", format!("{sigma} not in [0, 1]")));
        }
        Ok(MechanismSpec::Pinned(sigma))
    }
}

/// Instance family and its parameters. Unused fields are ignored for a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub count: usize,
    pub n: usize,
    pub mu: f64,
    pub sdev: f64,
    pub n1: usize,
    pub mu1: f64,
    pub sdev1: f64,
    pub n2: usize,
    pub mu2: f64,
    pub sdev2: f64,
    /// Read every `sdev*` field as a variance instead.
    pub spread_is_variance: bool,
    pub epsilon: f64,
    /// Fixed last stage for `hard`; when absent instances sweep the grid.
    pub terminal_stage: Option<f64>,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            kind: InstanceKind::Iid,
            count: DEFAULT_INSTANCES,
            n: 1000,
            mu: 15.0,
            sdev: 15.0,
            n1: 500,
            mu1: 7.5,
            sdev1: 7.5,
            n2: 500,
            mu2: 22.5,
            sdev2: 7.5,
            spread_is_variance: false,
            epsilon: 0.01,
            terminal_stage: None,
        }
    }
}

impl InstanceSpec {
    fn spread(&self, s: f64) -> f64 {
        if self.spread_is_variance {
            s.sqrt()
        } else {
            s
        }
    }

    /// Instance `index` of this family; stochastic kinds use their own substream.
    pub fn generate(&self, model: &CostModel, master_seed: u64, index: usize) -> Result<Instance> {
        let mut rng = substream(master_seed, DOMAIN_INSTANCES, index as u64);
        let mut inst = match self.kind {
            InstanceKind::Iid => instances::gen_iid(model, self.n, self.mu, self.spread(self.sdev), &mut rng)?,
            InstanceKind::Sorted => {
                instances::gen_sorted(model, self.n, self.mu, self.spread(self.sdev), &mut rng)?
            }
            InstanceKind::Low2high => instances::gen_low2high(
                model,
                self.n1,
                self.mu1,
                self.spread(self.sdev1),
                self.n2,
                self.mu2,
                self.spread(self.sdev2),
                &mut rng,
            )?,
            InstanceKind::Hard => {
                let terminal = match self.terminal_stage {
                    Some(t) => t,
                    None => self.sweep_stage(model, index)?,
                };
                instances::hard_instance(model, self.epsilon, terminal)?
            }
        };
        inst.label = format!("{} #{index}", inst.label);
        Ok(inst)
    }

    /// Spreads `count` terminal stages evenly over the grid, ending at the last stage.
    fn sweep_stage(&self, model: &CostModel, index: usize) -> Result<f64> {
        let full = instances::full_hard_instance(model, self.epsilon)?;
        let last = *full.valuations.last().expect("hard instance is never empty");
        let stages = ((last - model.lower()) / self.epsilon).round() as usize;
        if self.count <= 1 {
            return Ok(last);
        }
        let j = (index * stages + (self.count - 1) / 2) / (self.count - 1);
        if j >= stages {
            Ok(last)
        } else {
            Ok(model.lower() + j as f64 * self.epsilon)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub instances: InstanceSpec,
    pub mechanisms: Vec<MechanismSpec>,
    pub trials: u64,
    pub master_seed: u64,
    pub tol: f64,
    /// Output directory; the CLI falls back to its default when absent.
    pub output: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::quadratic(1.0, 30.0, 10, 1.0 / 16.0),
            instances: InstanceSpec::default(),
            mechanisms: MechanismSpec::defaults(),
            trials: DEFAULT_TRIALS,
            master_seed: 0,
            tol: SolverConfig::default().tol,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<CostModel> {
        if self.trials == 0 {
            return Err(Error::out_of_range("trials", "must be at least 1".to_string()));
        }
        if self.instances.count == 0 {
            return Err(Error::out_of_range("instance count", "must be at least 1".to_string()));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::InvalidInput("no mechanisms selected".into()));
        }
        self.model.build()
    }
}

/// One mechanism on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub mechanism: String,
    pub surrogate: bool,
    pub instance: usize,
    pub opt: f64,
    pub mean_welfare: f64,
    pub std_error: f64,
    pub ratio: f64,
    pub ratio_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub mechanism: String,
    pub surrogate: bool,
    pub empirical_ratio: f64,
    pub cumulative_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub alpha_star: f64,
    pub cr_guarantee: f64,
    pub results: Vec<InstanceResult>,
    pub cdf: Vec<CdfPoint>,
}

impl ExperimentReport {
    /// Ratios of one mechanism, in instance order.
    pub fn ratios(&self, mechanism: &str) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.mechanism == mechanism)
            .map(|r| r.ratio)
            .collect()
    }
}

/// Sorted ratios paired with `(i + 1) / n`.
pub fn empirical_cdf(mechanism: &str, surrogate: bool, ratios: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| CdfPoint {
            mechanism: mechanism.to_string(),
            surrogate,
            empirical_ratio: r,
            cumulative_fraction: (i + 1) as f64 / n,
        })
        .collect()
}

/// Empirical quantile (lower, by order statistic) of a sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Builds the scheme once, then runs every mechanism on every instance.
/// Instance `j` draws its valuations and its trial streams from seeds derived
/// from `(master_seed, j)`; all mechanisms share them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = config.validate()?;
    let scheme = PricingScheme::build(&model, &SolverConfig::with_tol(config.tol))?;
    let mechanisms = config
        .mechanisms
        .iter()
        .map(|m| m.instantiate(scheme.clone()))
        .collect::<Result<Vec<_>>>()?;

    let per_instance = exec::map_indexed(config.instances.count as u64, |j| -> Result<Vec<InstanceResult>> {
        let j = j as usize;
        let inst = config
            .instances
            .generate(&model, config.master_seed, j)
            .map_err(|e| Error::InvalidInput(format!("instance {j}: {e}")))?;
        let seed = instance_seed(config.master_seed, j as u64);
        mechanisms
            .iter()
            .map(|mech| {
                let trials = if mech.is_deterministic() { 1 } else { config.trials };
                let est = expected_welfare(mech, &inst, &model, trials, seed)
                    .map_err(|e| Error::InvalidInput(format!("instance {j}: {e}")))?;
                Ok(InstanceResult {
                    mechanism: mech.label(),
                    surrogate: mech.is_surrogate(),
                    instance: j,
                    opt: est.opt,
                    mean_welfare: est.mean,
                    std_error: est.std_error,
                    ratio: est.ratio_to_opt,
                    ratio_std_error: est.ratio_std_error(),
                })
            })
            .collect()
    });

    let mut results = Vec::new();
    for r in per_instance {
        results.extend(r?);
    }
    let mut cdf = Vec::new();
    for mech in &mechanisms {
        let label = mech.label();
        let ratios: Vec<f64> = results
            .iter()
            .filter(|r| r.mechanism == label)
            .map(|r| r.ratio)
            .collect();
        cdf.extend(empirical_cdf(&label, mech.is_surrogate(), &ratios));
    }
    results.sort_by(|a, b| a.mechanism.cmp(&b.mechanism).then(a.instance.cmp(&b.instance)));
    Ok(ExperimentReport {
        alpha_star: scheme.alpha_star,
        cr_guarantee: scheme.cr_guarantee,
        results,
        cdf,
    })
}

/// Cost family `f(i) = coeff * i^2` on `[lower, upper]`, indexed by capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFamily {
    pub lower: f64,
    pub upper: f64,
    pub coeff: f64,
}

impl QuadraticFamily {
    pub fn model(&self, k: usize) -> Result<CostModel> {
        CostModel::quadratic(self.lower, self.upper, k, self.coeff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub alpha_star: f64,
    pub cr_guarantee: f64,
    pub regime: Regime,
    pub guarantee_kind: GuaranteeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFailure {
    pub k: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurvesReport {
    pub points: Vec<CurvePoint>,
    pub failures: Vec<CurveFailure>,
}

/// Lower bound and guarantee for each `k`, using the general solver
/// throughout. A `k` whose solve fails is reported and skipped.
pub fn curves(family: &QuadraticFamily, ks: impl IntoIterator<Item = usize>, config: &SolverConfig) -> CurvesReport {
    let mut report = CurvesReport::default();
    for k in ks {
        match family
            .model(k)
            .and_then(|m| PricingScheme::build(&m, config).map(|s| (m, s)))
        {
            Ok((model, scheme)) => report.points.push(CurvePoint {
                k,
                alpha_star: scheme.alpha_star,
                cr_guarantee: scheme.cr_guarantee,
                regime: Regime::for_model(&model),
                guarantee_kind: scheme.guarantee_kind,
            }),
            Err(e) => report.failures.push(CurveFailure {
                k,
                error: e.to_string(),
            }),
        }
    }
    report
}

/// Decimal rendering with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    const DIGITS: i32 = 12;
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = DIGITS - 1 - magnitude;
    if (0..=24).contains(&decimals) {
        format!("{x:.*}", decimals as usize)
    } else if decimals < 0 && magnitude < 16 {
        format!("{x:.0}")
    } else {
        format!("{x:.*e}", (DIGITS - 1) as usize)
    }
}

fn snake<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("k,alpha_star,cr_guarantee,regime,guarantee\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.k,
            fmt_sig(p.alpha_star),
            fmt_sig(p.cr_guarantee),
            snake(&p.regime),
            snake(&p.guarantee_kind)
        );
    }
    out
}

pub fn cdf_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("mechanism,surrogate,empirical_ratio,cumulative_fraction\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.mechanism,
            p.surrogate,
            fmt_sig(p.empirical_ratio),
            fmt_sig(p.cumulative_fraction)
        );
    }
    out
}

pub fn results_csv(results: &[InstanceResult]) -> String {
    let mut out = String::from("mechanism,surrogate,instance,opt,mean_welfare,std_error,ratio,ratio_std_error\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.mechanism,
            r.surrogate,
            r.instance,
            fmt_sig(r.opt),
            fmt_sig(r.mean_welfare),
            fmt_sig(r.std_error),
            fmt_sig(r.ratio),
            fmt_sig(r.ratio_std_error)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mechanism_spec_parsing() {
        assert_eq!("r-dynamic".parse::<MechanismSpec>().unwrap(), MechanismSpec::RDynamic);
        assert_eq!("pinned:0.25".parse::<MechanismSpec>().unwrap(), MechanismSpec::Pinned(0.25));
        assert_eq!("pinned".parse::<MechanismSpec>().unwrap(), MechanismSpec::Pinned(0.5));
        assert_eq!("static-surrogate".parse::<MechanismSpec>().unwrap(), MechanismSpec::StaticSurrogate);
        assert!("pinned:2".parse::<MechanismSpec>().is_err());
        assert!("greedy".parse::<MechanismSpec>().is_err());
        let json: Vec<MechanismSpec> = serde_json::from_str(r#"["r-dynamic", {"pinned": 0.5}, "static-surrogate"]"#).unwrap();
        assert_eq!(json, MechanismSpec::defaults());
    }

    #[test]
    fn fmt_sig_digits() {
        assert_eq!(fmt_sig(4.281799597123456), "4.28179959712");
        assert_eq!(fmt_sig(0.5), "0.500000000000");
        assert_eq!(fmt_sig(1234.5), "1234.50000000");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn single_deterministic_instance() {
        let config = ExperimentConfig {
            instances: InstanceSpec {
                count: 1,
                n: 50,
                ..InstanceSpec::default()
            },
            mechanisms: vec![MechanismSpec::Pinned(0.5)],
            trials: 1,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.cdf.len(), 1);
        assert_eq!(report.cdf[0].cumulative_fraction, 1.0);
        assert_eq!(report.cdf[0].empirical_ratio, report.results[0].ratio);
        assert!(report.cdf[0].mechanism.starts_with("surrogate:"));
    }

    #[test]
    fn experiment_is_reproducible_and_cdf_valid() {
        let config = ExperimentConfig {
            instances: InstanceSpec {
                kind: InstanceKind::Low2high,
                count: 6,
                n1: 40,
                n2: 40,
                ..InstanceSpec::default()
            },
            trials: 50,
            master_seed: 9,
            ..ExperimentConfig::default()
        };
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(cdf_csv(&a.cdf), cdf_csv(&b.cdf));
        assert_eq!(results_csv(&a.results), results_csv(&b.results));
        for mech in MechanismSpec::defaults() {
            let label = mech.instantiate(PricingScheme::build(&config.model.build().unwrap(), &SolverConfig::default()).unwrap()).unwrap().label();
            let pts: Vec<&CdfPoint> = a.cdf.iter().filter(|p| p.mechanism == label).collect();
            assert_eq!(pts.len(), 6);
            assert!(pts.windows(2).all(|w| w[0].cumulative_fraction <= w[1].cumulative_fraction
                && w[0].empirical_ratio <= w[1].empirical_ratio));
            assert_eq!(pts.last().unwrap().cumulative_fraction, 1.0);
        }
    }

    #[test]
    fn hard_sweep_covers_grid() {
        let model = CostModel::quadratic(1.0, 10.0, 2, 1.0 / 59.0).unwrap();
        let spec = InstanceSpec {
            kind: InstanceKind::Hard,
            count: 4,
            epsilon: 0.5,
            ..InstanceSpec::default()
        };
        let first = spec.generate(&model, 0, 0).unwrap();
        let last = spec.generate(&model, 0, 3).unwrap();
        assert_eq!(first.valuations, vec![1.0, 1.0]);
        assert_eq!(*last.valuations.last().unwrap(), 10.0);
    }

    #[test]
    fn curves_rows() {
        let family = QuadraticFamily {
            lower: 1.0,
            upper: 10.0,
            coeff: 1.0 / 59.0,
        };
        let report = curves(&family, [2, 10, 30, 35], &SolverConfig::default());
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let by_k = |k| report.points.iter().find(|p| p.k == k).unwrap();
        assert_eq!(by_k(2).cr_guarantee, by_k(2).alpha_star);
        assert_eq!(by_k(10).regime, Regime::HighValue);
        assert_eq!(by_k(30).regime, Regime::General);
        for p in &report.points {
            assert!(p.cr_guarantee >= p.alpha_star);
        }
        let csv = curves_csv(&report.points);
        assert!(csv.starts_with("k,alpha_star"));
        assert!(csv.contains(",general,"));
    }

    #[test]
    fn config_defaults_from_json() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"instances": {"kind": "sorted"}}"#).unwrap();
        assert_eq!(c.trials, DEFAULT_TRIALS);
        assert_eq!(c.instances.count, DEFAULT_INSTANCES);
        assert_eq!(c.instances.kind, InstanceKind::Sorted);
        assert!(ExperimentConfig { trials: 0, ..ExperimentConfig::default() }.validate().is_err());
    }
}
