//! The competitive-ratio lower bound `alpha*` and the allocation functions
//! that attain it.
//!
//! For a candidate ratio `alpha`, the first randomized unit `k_underbar` and
//! its head start `xi` are fixed by what must be sold against `k` buyers at
//! valuation `L`. The remaining units are then switched on one after another
//! along a chain of valuation intervals `[ell_i, u_i]`. The chain end `u_k`
//! increases with `alpha`, and `alpha*` is the ratio at which it reaches `U`.
//!
//! Two independent solvers are provided: a closed-form exponential chain valid
//! when every marginal cost is below `L`, and a piecewise-logarithmic chain for
//! arbitrary non-decreasing costs. On high-value models they must agree.

use serde::{Deserialize, Serialize};

use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::piecewise::{step_integral, trace_unit, LogPiece};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    HighValue,
    General,
}

impl Regime {
    pub fn for_model(model: &CostModel) -> Self {
        if model.is_high_value() {
            Regime::HighValue
        } else {
            Regime::General
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    #[serde(rename = "i")]
    pub unit: usize,
    pub ell: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundSolution {
    #[serde(rename = "alpha_star")]
    pub alpha: f64,
    pub k_underbar: usize,
    pub xi: f64,
    /// Units `k_underbar..=k`, in order.
    pub intervals: Vec<Interval>,
    pub regime: Regime,
    /// The prefix sum hit the threshold exactly when `k_underbar` was chosen.
    #[serde(default)]
    pub tie: bool,
    /// `U` is within tolerance of the chain end already at `alpha = 1`.
    #[serde(default)]
    pub boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Outer termination: `|u_k(alpha) - U| <= tol`.
    pub tol: f64,
    /// The upper bracket starts at 2 and may be doubled this many times.
    pub max_doublings: u32,
    pub max_bisections: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_doublings: 40,
            max_bisections: 400,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            tol,
            ..Default::default()
        }
    }
}

/// What an `alpha`-competitive algorithm must earn on `k` buyers at `L`:
/// `(kL - sum c_i)` in the high-value regime, `f*(L)` in general. Both are
/// accumulated as `sum (L - c_i)`.
fn baseline_welfare(model: &CostModel, regime: Regime) -> f64 {
    match regime {
        Regime::HighValue => model.marginals().iter().map(|&c| model.lower() - c).sum(),
        Regime::General => model.conjugate(model.lower()),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 1.0 {
        Ok(())
    } else {
        Err(Error::out_of_range("alpha", format!("{alpha} (must be >= 1)")))
    }
}

fn k_underbar_with_tie(model: &CostModel, alpha: f64, regime: Regime) -> (usize, bool) {
    let threshold = baseline_welfare(model, regime) / alpha;
    let lower = model.lower();
    let mut partial = 0.0;
    for (idx, &c) in model.marginals().iter().enumerate() {
        partial += lower - c;
        if partial >= threshold {
            return (idx + 1, partial == threshold);
        }
    }
    // Only reachable through rounding when the threshold equals the full sum.
    let fallback = match regime {
        Regime::HighValue => model.k(),
        Regime::General => model.allocation_count(lower).max(1),
    };
    (fallback, true)
}

/// Smallest `k_underbar` in `1..=k` whose prefix `sum_{i<=k_underbar} (L - c_i)`
/// reaches the `1/alpha` share of the baseline welfare at `L`.
pub fn compute_k_underbar(model: &CostModel, alpha: f64, regime: Regime) -> Result<usize> {
    check_alpha(alpha)?;
    Ok(k_underbar_with_tie(model, alpha, regime).0)
}

/// Fraction of unit `k_underbar` that must already be sold in expectation at `L`.
pub fn compute_xi(model: &CostModel, alpha: f64, k_underbar: usize, regime: Regime) -> Result<f64> {
    check_alpha(alpha)?;
    if k_underbar == 0 || k_underbar > model.k() {
        return Err(Error::out_of_range(
            "k_underbar",
            format!("{k_underbar} not in 1..={}", model.k()),
        ));
    }
    let lower = model.lower();
    let margin = lower - model.marginal(k_underbar);
    if margin <= 0.0 {
        return Err(Error::Degenerate(format!(
            "L = {lower} does not exceed c_{k_underbar} = {}",
            model.marginal(k_underbar)
        )));
    }
    let threshold = baseline_welfare(model, regime) / alpha;
    let before: f64 = model.marginals()[..k_underbar - 1]
        .iter()
        .map(|&c| lower - c)
        .sum();
    Ok(((threshold - before) / margin).min(1.0))
}

fn head(model: &CostModel, alpha: f64, regime: Regime) -> Result<(usize, f64, bool)> {
    check_alpha(alpha)?;
    if regime == Regime::General && model.conjugate(model.lower()) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "no marginal cost lies below L = {}; nothing is worth selling at the lowest valuation",
            model.lower()
        )));
    }
    let (k_underbar, tie) = k_underbar_with_tie(model, alpha, regime);
    let xi = compute_xi(model, alpha, k_underbar, regime)?;
    Ok((k_underbar, xi, tie))
}

/// Exponential interval chain for high-value models at a given `alpha`.
pub fn build_intervals(model: &CostModel, alpha: f64) -> Result<LowerBoundSolution> {
    model.require_high_value()?;
    let (k_underbar, xi, tie) = head(model, alpha, Regime::HighValue)?;
    let k = model.k() as f64;
    let lower = model.lower();
    let c = model.marginal(k_underbar);
    let mut intervals = Vec::with_capacity(model.k() - k_underbar + 1);
    let mut ell = lower;
    let mut u = (lower - c) * ((1.0 - xi) * alpha / k).exp() + c;
    intervals.push(Interval {
        unit: k_underbar,
        ell,
        u,
    });
    for unit in k_underbar + 1..=model.k() {
        ell = u;
        let c = model.marginal(unit);
        u = (ell - c) * (alpha / k).exp() + c;
        intervals.push(Interval { unit, ell, u });
    }
    Ok(LowerBoundSolution {
        alpha,
        k_underbar,
        xi,
        intervals,
        regime: Regime::HighValue,
        tie,
        boundary: false,
    })
}

/// The unrolled chain end: the right-hand side of the equation `U = u_k(alpha)`
/// written as a single sum over the units from `k_underbar` to `k`.
pub fn alpha_equation_rhs(model: &CostModel, alpha: f64) -> Result<f64> {
    model.require_high_value()?;
    let (h, xi, _) = head(model, alpha, Regime::HighValue)?;
    let k = model.k();
    let r = alpha / k as f64;
    let lower = model.lower();
    let c_h = model.marginal(h);
    let mut rhs = (lower - c_h) * (r * (k as f64 + 1.0 - h as f64 - xi)).exp()
        + c_h * (r * (k - h) as f64).exp();
    for j in h + 1..=k {
        rhs += model.marginal(j) * (1.0 - r.exp()) * (r * (k - j) as f64).exp();
    }
    Ok(rhs)
}

/// Piecewise-logarithmic interval chain for arbitrary costs at a given `alpha`.
pub fn build_intervals_general(model: &CostModel, alpha: f64) -> Result<LowerBoundSolution> {
    let (k_underbar, xi, tie) = head(model, alpha, Regime::General)?;
    let lower = model.lower();
    let mut intervals = Vec::with_capacity(model.k() - k_underbar + 1);
    let mut ell = lower;
    for unit in k_underbar..=model.k() {
        let s_start = if unit == k_underbar { xi } else { 0.0 };
        let pieces = trace_unit(model, alpha, model.marginal(unit), ell, s_start, 1.0)?;
        let u = pieces.last().map_or(ell, |p| p.v_end);
        intervals.push(Interval { unit, ell, u });
        ell = u;
    }
    Ok(LowerBoundSolution {
        alpha,
        k_underbar,
        xi,
        intervals,
        regime: Regime::General,
        tie,
        boundary: false,
    })
}

/// Lower bound for a high-value model, by bisection on the exponential chain.
pub fn solve_alpha_star(model: &CostModel, config: &SolverConfig) -> Result<LowerBoundSolution> {
    model.require_high_value()?;
    bisect_alpha(model, config, |a| build_intervals(model, a))
}

/// Lower bound for any valid model, by bisection on the piecewise-log chain.
pub fn solve_alpha_star_general(
    model: &CostModel,
    config: &SolverConfig,
) -> Result<LowerBoundSolution> {
    require_solvable(model)?;
    bisect_alpha(model, config, |a| build_intervals_general(model, a))
}

/// The chain only closes when the first unit is worth selling at `L` and the
/// last one at some valuation below `U`.
fn require_solvable(model: &CostModel) -> Result<()> {
    let (c1, ck) = (model.marginal(1), model.marginal(model.k()));
    if c1 >= model.lower() {
        return Err(Error::InvalidModel(format!(
            "c_1 = {c1} must be below L = {}; no unit is worth producing at L",
            model.lower()
        )));
    }
    if ck >= model.upper() && model.upper() > model.lower() {
        return Err(Error::InvalidModel(format!(
            "c_k = {ck} must be below U = {}; the last unit can never be sold at a profit",
            model.upper()
        )));
    }
    Ok(())
}

/// Picks the solver from the model's regime.
pub fn solve(model: &CostModel, config: &SolverConfig) -> Result<LowerBoundSolution> {
    match Regime::for_model(model) {
        Regime::HighValue => solve_alpha_star(model, config),
        Regime::General => solve_alpha_star_general(model, config),
    }
}

fn bisect_alpha<F>(model: &CostModel, config: &SolverConfig, build: F) -> Result<LowerBoundSolution>
where
    F: Fn(f64) -> Result<LowerBoundSolution>,
{
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::out_of_range("tol", format!("{} (must be > 0)", config.tol)));
    }
    let target = model.upper();
    // A probe that cannot even complete its chain sits below the target.
    let probe = |alpha: f64| -> Result<Option<LowerBoundSolution>> {
        match build(alpha) {
            Ok(sol) => Ok(Some(sol)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let reaches = |sol: &Option<LowerBoundSolution>| sol.as_ref().is_some_and(|s| s.u_k() >= target);

    let at_one = probe(1.0)?;
    if let Some(sol) = &at_one {
        if sol.u_k() >= target - config.tol {
            let mut sol = sol.clone();
            sol.boundary = true;
            return Ok(sol);
        }
    }

    let mut lo = 1.0;
    let mut hi = 2.0;
    let mut hi_sol = probe(hi)?;
    let mut doublings = 0;
    while !reaches(&hi_sol) {
        if doublings >= config.max_doublings {
            return Err(Error::NoConvergence(format!(
                "chain end stays below U = {target} up to alpha = {hi}"
            )));
        }
        lo = hi;
        hi *= 2.0;
        hi_sol = probe(hi)?;
        doublings += 1;
    }
    let mut best = hi_sol.expect("bracket end reaches U");
    if (best.u_k() - target).abs() <= config.tol {
        return Ok(best);
    }
    for _ in 0..config.max_bisections {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match probe(mid)? {
            Some(sol) => {
                let gap = sol.u_k() - target;
                if gap.abs() <= config.tol {
                    return Ok(sol);
                }
                if gap > 0.0 {
                    hi = mid;
                    best = sol;
                } else {
                    lo = mid;
                }
            }
            None => lo = mid,
        }
    }
    if (best.u_k() - target).abs() <= config.tol {
        Ok(best)
    } else {
        Err(Error::NoConvergence(format!(
            "bracket collapsed at alpha = {} with |u_k - U| = {:e} > tol = {:e}",
            best.alpha,
            (best.u_k() - target).abs(),
            config.tol
        )))
    }
}

impl LowerBoundSolution {
    /// End of the chain; equals `U` at `alpha*`.
    pub fn u_k(&self) -> f64 {
        self.intervals.last().map_or(f64::NAN, |iv| iv.u)
    }

    pub fn interval(&self, unit: usize) -> Option<&Interval> {
        if unit < self.k_underbar {
            return None;
        }
        self.intervals.get(unit - self.k_underbar)
    }

    /// Piecewise-log description of `psi_unit` on its active interval.
    /// Empty for units that are allocated with certainty at `L`.
    pub fn psi_pieces(&self, model: &CostModel, unit: usize) -> Result<Vec<LogPiece>> {
        let Some(iv) = self.interval(unit) else {
            return Ok(Vec::new());
        };
        let s_start = if unit == self.k_underbar { self.xi } else { 0.0 };
        trace_unit(model, self.alpha, model.marginal(unit), iv.ell, s_start, 1.0)
    }

    /// Allocation function `psi_unit(v)` in `[0, 1]`, for `unit` in `1..=k`
    /// and `v` in `[L, U]`.
    pub fn eval_psi(&self, model: &CostModel, unit: usize, v: f64) -> Result<f64> {
        if unit == 0 || unit > model.k() {
            return Err(Error::out_of_range("unit", format!("{unit} not in 1..={}", model.k())));
        }
        if !(v >= model.lower() && v <= model.upper()) {
            return Err(Error::out_of_range(
                "valuation",
                format!("{v} not in [{}, {}]", model.lower(), model.upper()),
            ));
        }
        if unit < self.k_underbar {
            return Ok(1.0);
        }
        let iv = self.interval(unit).ok_or_else(|| {
            Error::InvalidInput(format!("solution has no interval for unit {unit}"))
        })?;
        if v <= iv.ell && unit > self.k_underbar {
            return Ok(0.0);
        }
        let raw = match self.regime {
            Regime::HighValue => {
                let c = model.marginal(unit);
                let head = if unit == self.k_underbar { self.xi } else { 0.0 };
                head + model.k() as f64 / self.alpha * ((v - c) / (iv.ell - c)).ln()
            }
            Regime::General => {
                let pieces = self.psi_pieces(model, unit)?;
                match pieces.iter().find(|p| v <= p.v_end) {
                    Some(p) => p.level(v.max(p.v_start)),
                    None => 1.0,
                }
            }
        };
        Ok(raw.clamp(0.0, 1.0))
    }

    /// Largest violation of the tight performance identity over a uniform grid
    /// of `grid_size` valuations in `[L, U]`: expected welfare of the allocation
    /// functions on the staged instance ending at `v`, minus the `1/alpha`
    /// share of the offline optimum at `v`.
    pub fn verify_equality(&self, model: &CostModel, grid_size: usize) -> Result<f64> {
        let lower = model.lower();
        let upper = model.upper();
        let mut at_lower = 0.0;
        for unit in 1..=model.k() {
            at_lower += self.eval_psi(model, unit, lower)? * (lower - model.marginal(unit));
        }
        let n = grid_size.max(2);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let v = if j + 1 == n {
                upper
            } else {
                lower + (upper - lower) * j as f64 / (n - 1) as f64
            };
            // On its active interval, (eta - c_i) d psi_i = g(eta) / alpha d eta.
            let gained: f64 = self
                .intervals
                .iter()
                .map(|iv| step_integral(model, iv.ell.max(lower), iv.u.min(v)) / self.alpha)
                .sum();
            let opt = match self.regime {
                Regime::HighValue => model.k() as f64 * v - model.total_cost(),
                Regime::General => model.conjugate(v),
            };
            worst = worst.max((at_lower + gained - opt / self.alpha).abs());
        }
        Ok(worst)
    }
}
