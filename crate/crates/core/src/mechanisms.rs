//! Posted-price mechanisms: the randomized dynamic pricing scheme, two
//! surrogate baselines, the offline optimum, and Monte-Carlo welfare estimates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::exec;
use crate::instances::Instance;
use crate::pricing::{PriceVector, PricingScheme};
use crate::rng::{self, substream, DOMAIN_PROBES, DOMAIN_TRIALS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// `None` once all `k` units are sold.
    pub posted_price: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub decisions: Vec<Decision>,
    pub units_sold: usize,
    pub welfare: f64,
    pub revenue: f64,
}

/// Welfare of one run, without the per-buyer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tally {
    units_sold: usize,
    value: f64,
    paid: f64,
}

fn tally(prices: &[f64], valuations: &[f64]) -> Tally {
    let mut t = Tally {
        units_sold: 0,
        value: 0.0,
        paid: 0.0,
    };
    for &v in valuations {
        let Some(&p) = prices.get(t.units_sold) else {
            break;
        };
        if v >= p {
            t.units_sold += 1;
            t.value += v;
            t.paid += p;
        }
    }
    t
}

fn check_prices(prices: &[f64], model: &CostModel) -> Result<()> {
    if prices.len() != model.k() {
        return Err(Error::InvalidInput(format!(
            "price vector has {} entries, model has k = {}",
            prices.len(),
            model.k()
        )));
    }
    if let Some(p) = prices.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidInput(format!("price {p} is not finite")));
    }
    Ok(())
}

/// Posts `prices[kappa]` to each buyer in turn; a buyer buys iff `v >= price`.
pub fn run_posted_price(prices: &PriceVector, instance: &Instance, model: &CostModel) -> Result<RunOutcome> {
    run_prices(&prices.prices, instance, model)
}

fn run_prices(prices: &[f64], instance: &Instance, model: &CostModel) -> Result<RunOutcome> {
    check_prices(prices, model)?;
    instance.validate(model)?;
    let mut decisions = Vec::with_capacity(instance.len());
    let mut sold = 0usize;
    let (mut value, mut paid) = (0.0, 0.0);
    for &v in &instance.valuations {
        let posted_price = prices.get(sold).copied();
        let accepted = posted_price.is_some_and(|p| v >= p);
        if accepted {
            sold += 1;
            value += v;
            paid += posted_price.unwrap_or_default();
        }
        decisions.push(Decision {
            posted_price,
            accepted,
        });
    }
    let cost = model.cumulative_cost(sold)?;
    Ok(RunOutcome {
        decisions,
        units_sold: sold,
        welfare: value - cost,
        revenue: paid - cost,
    })
}

/// Best welfare in hindsight: the `j` highest valuations minus `f(j)`,
/// maximized over `j`. Returns `(OPT, j*)` with the smallest maximizing `j`.
pub fn offline_opt(instance: &Instance, model: &CostModel) -> (f64, usize) {
    let mut sorted = instance.valuations.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let (mut best, mut best_j) = (0.0, 0);
    let (mut top, mut cost) = (0.0, 0.0);
    for (j, (&v, &c)) in sorted.iter().zip(model.marginals()).enumerate() {
        top += v;
        cost += c;
        if top - cost > best {
            best = top - cost;
            best_j = j + 1;
        }
    }
    (best, best_j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MechanismKind {
    /// Independent uniform seed per unit.
    RDynamic,
    /// Every seed fixed at `sigma`; deterministic.
    Pinned { sigma: f64 },
    /// One price drawn from the aggregate allocation curve, posted until
    /// `k` units sell.
    StaticSurrogate,
}

/// A pricing scheme plus the rule that turns randomness into prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub scheme: PricingScheme,
    pub kind: MechanismKind,
}

const QUANTILE_ITERS: usize = 200;

impl Mechanism {
    pub fn r_dynamic(scheme: PricingScheme) -> Self {
        Mechanism {
            scheme,
            kind: MechanismKind::RDynamic,
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            MechanismKind::RDynamic => "r-dynamic".to_string(),
            MechanismKind::Pinned { sigma } => format!("surrogate:pinned({sigma})"),
            MechanismKind::StaticSurrogate => "surrogate:static".to_string(),
        }
    }

    pub fn is_surrogate(&self) -> bool {
        !matches!(self.kind, MechanismKind::RDynamic)
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, MechanismKind::Pinned { .. })
    }

    /// Smallest `v` in `[L, U]` with aggregate CDF at least `q`.
    pub fn static_quantile(&self, q: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::out_of_range("quantile", format!("{q} not in [0, 1]")));
        }
        let model = &self.scheme.model;
        let (mut lo, mut hi) = (model.lower(), model.upper());
        if self.scheme.aggregate_cdf(lo)? >= q {
            return Ok(lo);
        }
        if self.scheme.aggregate_cdf(hi)? < q {
            return Ok(hi);
        }
        for _ in 0..QUANTILE_ITERS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.scheme.aggregate_cdf(mid)? >= q {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Prices for one run, drawing whatever randomness the mechanism needs.
    pub fn draw_prices<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PriceVector> {
        match self.kind {
            MechanismKind::RDynamic => Ok(self.scheme.sample_price_vector(rng)),
            MechanismKind::Pinned { sigma } => self.scheme.prices_for_seeds(&vec![sigma; self.scheme.k()]),
            MechanismKind::StaticSurrogate => {
                let q: f64 = rng.random();
                let p = self.static_quantile(q)?;
                Ok(PriceVector {
                    seeds: vec![q; self.scheme.k()],
                    prices: vec![p; self.scheme.k()],
                })
            }
        }
    }

    fn check_model(&self, model: &CostModel) -> Result<()> {
        if &self.scheme.model != model {
            return Err(Error::InvalidInput(
                "pricing scheme was built for a different cost model".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic surrogate: the dynamic scheme with every seed at `sigma`.
pub fn make_pinned_deterministic(scheme: PricingScheme, sigma: f64) -> Result<Mechanism> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::out_of_range("sigma", format!("{sigma} not in [0, 1]")));
    }
    Ok(Mechanism {
        scheme,
        kind: MechanismKind::Pinned { sigma },
    })
}

/// Single-price randomized surrogate.
pub fn make_static_random(scheme: PricingScheme) -> Mechanism {
    Mechanism {
        scheme,
        kind: MechanismKind::StaticSurrogate,
    }
}

/// One run under the substream for `(master_seed, trial)`.
pub fn run_trial(
    mechanism: &Mechanism,
    instance: &Instance,
    model: &CostModel,
    master_seed: u64,
    trial: u64,
) -> Result<(PriceVector, RunOutcome)> {
    mechanism.check_model(model)?;
    let prices = mechanism.draw_prices(&mut substream(master_seed, DOMAIN_TRIALS, trial))?;
    let outcome = run_posted_price(&prices, instance, model)?;
    Ok((prices, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
    pub opt: f64,
    /// `OPT / mean`; 1 when both are zero.
    pub ratio_to_opt: f64,
}

impl WelfareEstimate {
    fn from_samples(samples: &[f64], opt: f64) -> Self {
        let n = samples.len() as f64;
        let constant = samples.windows(2).all(|w| w[0] == w[1]);
        let mean = if constant {
            samples[0]
        } else {
            compensated_sum(samples.iter().copied()) / n
        };
        let std_error = if constant {
            0.0
        } else {
            let ss = compensated_sum(samples.iter().map(|w| (w - mean).powi(2)));
            (ss / (n - 1.0) / n).sqrt()
        };
        let ratio_to_opt = if opt == 0.0 && mean == 0.0 {
            1.0
        } else if mean > 0.0 {
            opt / mean
        } else {
            f64::INFINITY
        };
        WelfareEstimate {
            mean,
            std_error,
            trials: samples.len() as u64,
            opt,
            ratio_to_opt,
        }
    }

    /// Delta-method standard error of `OPT / mean`.
    pub fn ratio_std_error(&self) -> f64 {
        if self.mean > 0.0 {
            self.opt * self.std_error / (self.mean * self.mean)
        } else {
            0.0
        }
    }
}

/// Neumaier summation; keeps long Monte-Carlo sums accurate to a few ulps.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn welfare_samples(
    mechanism: &Mechanism,
    instance: &Instance,
    model: &CostModel,
    trials: u64,
    master_seed: u64,
    parallel: bool,
) -> Result<WelfareEstimate> {
    if trials == 0 {
        return Err(Error::out_of_range("trials", "must be at least 1".to_string()));
    }
    mechanism.check_model(model)?;
    instance.validate(model)?;
    let cum: Vec<f64> = (0..=model.k())
        .map(|j| model.cumulative_cost(j))
        .collect::<Result<_>>()?;
    let one = |trial: u64| -> Result<f64> {
        let prices = mechanism.draw_prices(&mut substream(master_seed, DOMAIN_TRIALS, trial))?;
        let t = tally(&prices.prices, &instance.valuations);
        Ok(t.value - cum[t.units_sold])
    };
    let samples: Vec<Result<f64>> = if parallel {
        exec::map_indexed(trials, one)
    } else {
        exec::map_indexed_sequential(trials, one)
    };
    let samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let (opt, _) = offline_opt(instance, model);
    Ok(WelfareEstimate::from_samples(&samples, opt))
}

/// Monte-Carlo estimate of expected welfare; trial `i` uses its own
/// substream, so the result does not depend on scheduling.
pub fn expected_welfare(
    mechanism: &Mechanism,
    instance: &Instance,
    model: &CostModel,
    trials: u64,
    master_seed: u64,
) -> Result<WelfareEstimate> {
    welfare_samples(mechanism, instance, model, trials, master_seed, true)
}

/// Same estimate, always on the calling thread.
pub fn expected_welfare_sequential(
    mechanism: &Mechanism,
    instance: &Instance,
    model: &CostModel,
    trials: u64,
    master_seed: u64,
) -> Result<WelfareEstimate> {
    welfare_samples(mechanism, instance, model, trials, master_seed, false)
}

/// Result of the sales-floor check on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalesFloor {
    /// Most units any probe sold.
    pub omega: usize,
    /// Earliest arrival (0-based) at which some probe sold its `omega`-th unit.
    pub tau_omega: Option<usize>,
    /// Fewest units any probe had sold by `tau_omega`, inclusive.
    pub min_sold_by_tau: usize,
    pub probes: usize,
    /// Every probe sold at least `omega - 1` units by `tau_omega`.
    pub holds: bool,
}

fn sale_times(prices: &[f64], valuations: &[f64]) -> Vec<usize> {
    let mut times = Vec::with_capacity(prices.len());
    for (t, &v) in valuations.iter().enumerate() {
        match prices.get(times.len()) {
            Some(&p) if v >= p => times.push(t),
            Some(_) => {}
            None => break,
        }
    }
    times
}

/// Runs `probes` price vectors (all-zero seeds, all-one seeds, the rest
/// uniform) over the same instance and checks that once any of them has sold
/// `omega` units, all have sold at least `omega - 1`.
pub fn sales_floor_check(
    scheme: &PricingScheme,
    instance: &Instance,
    probes: usize,
    master_seed: u64,
) -> Result<SalesFloor> {
    if probes < 2 {
        return Err(Error::out_of_range("probes", format!("{probes} (need at least 2)")));
    }
    instance.validate(&scheme.model)?;
    let k = scheme.k();
    let mut vectors = vec![
        scheme.prices_for_seeds(&vec![0.0; k])?,
        scheme.prices_for_seeds(&vec![1.0; k])?,
    ];
    for p in 2..probes {
        vectors.push(scheme.sample_price_vector(&mut substream(master_seed, DOMAIN_PROBES, p as u64)));
    }
    let times: Vec<Vec<usize>> = vectors
        .iter()
        .map(|v| sale_times(&v.prices, &instance.valuations))
        .collect();
    let omega = times.iter().map(Vec::len).max().unwrap_or(0);
    if omega == 0 {
        return Ok(SalesFloor {
            omega,
            tau_omega: None,
            min_sold_by_tau: 0,
            probes,
            holds: true,
        });
    }
    let tau = times
        .iter()
        .filter(|t| t.len() == omega)
        .map(|t| t[omega - 1])
        .min()
        .expect("some probe sold omega units");
    let min_sold = times
        .iter()
        .map(|t| t.iter().filter(|&&s| s <= tau).count())
        .min()
        .unwrap_or(0);
    Ok(SalesFloor {
        omega,
        tau_omega: Some(tau),
        min_sold_by_tau: min_sold,
        probes,
        holds: min_sold + 1 >= omega,
    })
}

/// Master seed for instance `index` of an experiment.
pub fn instance_seed(master_seed: u64, index: u64) -> u64 {
    rng::derive_seed(master_seed, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lower_bound::SolverConfig;

    fn pv(prices: Vec<f64>) -> PriceVector {
        PriceVector {
            seeds: vec![0.0; prices.len()],
            prices,
        }
    }

    #[test]
    fn hand_simulation() {
        let m = CostModel::new(1.0, 2.0, vec![0.1, 0.2]).unwrap();
        let inst = Instance::new(vec![1.0, 1.2, 2.0], "");
        let out = run_posted_price(&pv(vec![1.1, 1.5]), &inst, &m).unwrap();
        assert_eq!(out.units_sold, 2);
        assert!((out.welfare - 2.9).abs() < 1e-12);
        assert!((out.revenue - (2.6 - 0.3)).abs() < 1e-12);
        assert!(!out.decisions[0].accepted);
        assert!(out.decisions[1].accepted && out.decisions[2].accepted);
    }

    #[test]
    fn equality_accepts_and_sold_out_posts_nothing() {
        let m = CostModel::new(1.0, 3.0, vec![0.5]).unwrap();
        let inst = Instance::new(vec![1.5, 3.0], "");
        let out = run_posted_price(&pv(vec![1.5]), &inst, &m).unwrap();
        assert!(out.decisions[0].accepted);
        assert_eq!(out.decisions[1].posted_price, None);
        assert!(!out.decisions[1].accepted);
        assert_eq!(out.units_sold, 1);

        let empty = run_posted_price(&pv(vec![1.5]), &Instance::default(), &m).unwrap();
        assert_eq!((empty.units_sold, empty.welfare), (0, 0.0));
        assert!(run_posted_price(&pv(vec![1.5]), &Instance::new(vec![0.5], ""), &m).is_err());
        assert!(run_posted_price(&pv(vec![1.5, 2.0]), &inst, &m).is_err());
    }

    #[test]
    fn offline_examples() {
        let m = CostModel::new(1.0, 5.0, vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(offline_opt(&Instance::new(vec![5.0, 3.0, 2.0], ""), &m), (5.0, 2));
        assert_eq!(offline_opt(&Instance::default(), &m), (0.0, 0));
        let one = CostModel::new(1.0, 2.0, vec![1.0]).unwrap();
        assert_eq!(offline_opt(&Instance::new(vec![2.0], ""), &one), (1.0, 1));
    }

    fn scheme_k1() -> PricingScheme {
        let m = CostModel::new(1.0, std::f64::consts::E, vec![0.0]).unwrap();
        PricingScheme::build(&m, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn pinned_extremes_and_determinism() {
        let scheme = PricingScheme::build(
            &CostModel::quadratic(1.0, 10.0, 4, 1.0 / 59.0).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        let lowers: Vec<f64> = scheme.units.iter().map(|u| u.lower).collect();
        let uppers: Vec<f64> = scheme.units.iter().map(|u| u.upper).collect();
        let mut rng = substream(0, 0, 0);
        let zero = make_pinned_deterministic(scheme.clone(), 0.0).unwrap();
        assert_eq!(zero.draw_prices(&mut rng).unwrap().prices, lowers);
        let one = make_pinned_deterministic(scheme.clone(), 1.0).unwrap();
        assert_eq!(one.draw_prices(&mut rng).unwrap().prices, uppers);
        assert!(make_pinned_deterministic(scheme.clone(), 1.5).is_err());
        assert!(zero.label().starts_with("surrogate:"));

        let model = scheme.model.clone();
        let inst = crate::instances::full_hard_instance(&model, 0.05).unwrap();
        let half = make_pinned_deterministic(scheme, 0.5).unwrap();
        let a = run_trial(&half, &inst, &model, 1, 0).unwrap();
        let b = run_trial(&half, &inst, &model, 99, 7).unwrap();
        assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&b.1).unwrap());

        let est = expected_welfare(&half, &inst, &model, 50, 3).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.mean, a.1.welfare);
    }

    #[test]
    fn trials_are_reproducible() {
        let scheme = scheme_k1();
        let model = scheme.model.clone();
        let mech = Mechanism::r_dynamic(scheme);
        let inst = Instance::new(vec![1.2, 2.0, 2.5], "");
        let a = run_trial(&mech, &inst, &model, 42, 17).unwrap();
        let b = run_trial(&mech, &inst, &model, 42, 17).unwrap();
        assert_eq!(a, b);
        let p = expected_welfare(&mech, &inst, &model, 2000, 5).unwrap();
        let s = expected_welfare_sequential(&mech, &inst, &model, 2000, 5).unwrap();
        assert_eq!(p, s);
        assert!(expected_welfare(&mech, &inst, &model, 0, 5).is_err());
    }

    #[test]
    fn buyer_at_upper_always_buys() {
        let scheme = scheme_k1();
        let model = scheme.model.clone();
        let mech = Mechanism::r_dynamic(scheme);
        let e = std::f64::consts::E;
        let est = expected_welfare(&mech, &Instance::new(vec![e], ""), &model, 100_000, 8).unwrap();
        assert!((est.mean - e).abs() < 1e-12, "{est:?}");
        assert!((est.ratio_to_opt - 1.0).abs() <= 3.0 * est.ratio_std_error() + 1e-12);
    }

    #[test]
    fn static_quantile_endpoints() {
        let scheme = PricingScheme::build(
            &CostModel::quadratic(1.0, 30.0, 10, 1.0 / 16.0).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        let mech = make_static_random(scheme);
        assert_eq!(mech.static_quantile(0.0).unwrap(), 1.0);
        assert!((mech.static_quantile(1.0).unwrap() - 30.0).abs() < 1e-6);
        let mut last = 0.0;
        for j in 0..=20 {
            let p = mech.static_quantile(j as f64 / 20.0).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn static_matches_dynamic_for_one_unit() {
        let scheme = scheme_k1();
        let model = scheme.model.clone();
        let inst = Instance::new(vec![1.3, 1.9, 2.4, 1.1], "");
        let dynamic = expected_welfare(&Mechanism::r_dynamic(scheme.clone()), &inst, &model, 100_000, 1).unwrap();
        let fixed = expected_welfare(&make_static_random(scheme), &inst, &model, 100_000, 2).unwrap();
        let se = (dynamic.std_error.powi(2) + fixed.std_error.powi(2)).sqrt();
        assert!((dynamic.mean - fixed.mean).abs() < 3.0 * se, "{dynamic:?} {fixed:?}");
    }

    #[test]
    fn sales_floor_on_hard_instance() {
        let model = CostModel::quadratic(1.0, 10.0, 5, 1.0 / 59.0).unwrap();
        let scheme = PricingScheme::build(&model, &SolverConfig::default()).unwrap();
        for terminal in [1.0, 2.5, 6.0, 10.0] {
            let inst = crate::instances::hard_instance(&model, 0.05, terminal).unwrap();
            let floor = sales_floor_check(&scheme, &inst, 64, 11).unwrap();
            assert!(floor.holds, "{terminal}: {floor:?}");
        }
    }
}
