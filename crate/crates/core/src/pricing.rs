//! Randomized dynamic pricing: one pricing function per unit, mapping a
//! uniform seed in `[0, 1]` to that unit's price.
//!
//! Each function is stored as a list of parametric pieces (flat at `L`, or
//! exponential around the unit's marginal cost) so that evaluation, inversion,
//! and expected prices are all exact. Price intervals chain end to end, which
//! makes every sampled price vector non-decreasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::CostModel;
use crate::error::{Error, Result};
use crate::lower_bound::{self, LowerBoundSolution, Regime, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PricePiece {
    Flat {
        s_start: f64,
        s_end: f64,
        price: f64,
    },
    /// `price(s) = pole + (v_start - pole) * exp(rate * (s - s_start))`.
    Exponential {
        s_start: f64,
        s_end: f64,
        v_start: f64,
        v_end: f64,
        pole: f64,
        rate: f64,
    },
}

impl PricePiece {
    fn s_end(&self) -> f64 {
        match *self {
            PricePiece::Flat { s_end, .. } | PricePiece::Exponential { s_end, .. } => s_end,
        }
    }

    fn eval(&self, s: f64) -> f64 {
        match *self {
            PricePiece::Flat { price, .. } => price,
            PricePiece::Exponential {
                s_start,
                v_start,
                v_end,
                pole,
                rate,
                ..
            } => (pole + (v_start - pole) * (rate * (s - s_start)).exp()).clamp(v_start, v_end),
        }
    }

    fn integral(&self) -> f64 {
        match *self {
            PricePiece::Flat {
                s_start,
                s_end,
                price,
            } => price * (s_end - s_start),
            PricePiece::Exponential {
                s_start,
                s_end,
                v_start,
                pole,
                rate,
                ..
            } => {
                let len = s_end - s_start;
                pole * len + (v_start - pole) * ((rate * len).exp() - 1.0) / rate
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPricing {
    pub unit: usize,
    /// `L_i`: the price at seed 0.
    pub lower: f64,
    /// `U_i`: the price at seed 1.
    pub upper: f64,
    pub pieces: Vec<PricePiece>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Exponential pricing for high-value models.
    HighValue,
    /// Two-branch construction for `k = 2` high-value models.
    TwoUnit,
    /// Inverse of the piecewise-log allocation functions; any cost model.
    General,
}

/// Which proven ratio `cr_guarantee` reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuaranteeKind {
    /// `alpha*` itself (high-value, `k = 2`).
    Optimal,
    /// `alpha* * exp(alpha* / k)` (high-value).
    Exponential,
    /// `max_i alpha* (1 + (U_i - c_i) / f*(U_{i-1}))` with `U_0 = L`.
    ConjugateMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingScheme {
    pub model: CostModel,
    pub kind: SchemeKind,
    pub alpha_star: f64,
    pub k_underbar_star: usize,
    pub xi_star: f64,
    pub units: Vec<UnitPricing>,
    pub guarantee_kind: GuaranteeKind,
    pub cr_guarantee: f64,
}

/// Seeds and the prices they map to; `prices[i] = phi_{i+1}(seeds[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceVector {
    pub seeds: Vec<f64>,
    pub prices: Vec<f64>,
}

fn constant_unit(unit: usize, price: f64) -> UnitPricing {
    UnitPricing {
        unit,
        lower: price,
        upper: price,
        pieces: vec![PricePiece::Flat {
            s_start: 0.0,
            s_end: 1.0,
            price,
        }],
    }
}

/// Unit `k_underbar`: flat at `L` up to `xi`, then exponential.
fn head_unit(unit: usize, lower: f64, pole: f64, xi: f64, rate: f64) -> UnitPricing {
    let upper = (lower - pole) * ((1.0 - xi) * rate).exp() + pole;
    let mut pieces = Vec::with_capacity(2);
    if xi > 0.0 {
        pieces.push(PricePiece::Flat {
            s_start: 0.0,
            s_end: xi,
            price: lower,
        });
    }
    if xi < 1.0 {
        pieces.push(PricePiece::Exponential {
            s_start: xi,
            s_end: 1.0,
            v_start: lower,
            v_end: upper,
            pole,
            rate,
        });
    }
    UnitPricing {
        unit,
        lower,
        upper,
        pieces,
    }
}

/// Units above `k_underbar`: `(L_i - c_i) e^{s rate} + c_i` on all of `[0, 1]`.
fn tail_unit(unit: usize, lower: f64, pole: f64, rate: f64) -> UnitPricing {
    let upper = (lower - pole) * rate.exp() + pole;
    UnitPricing {
        unit,
        lower,
        upper,
        pieces: vec![PricePiece::Exponential {
            s_start: 0.0,
            s_end: 1.0,
            v_start: lower,
            v_end: upper,
            pole,
            rate,
        }],
    }
}

fn guarantee_for(model: &CostModel, alpha: f64, units: &[UnitPricing]) -> (GuaranteeKind, f64) {
    let k = model.k();
    if model.is_high_value() {
        if k == 2 {
            (GuaranteeKind::Optimal, alpha)
        } else {
            (GuaranteeKind::Exponential, alpha * (alpha / k as f64).exp())
        }
    } else {
        let mut prev_upper = model.lower();
        let mut worst = f64::NEG_INFINITY;
        for (idx, u) in units.iter().enumerate() {
            let ratio = alpha * (1.0 + (u.upper - model.marginal(idx + 1)) / model.conjugate(prev_upper));
            worst = worst.max(ratio);
            prev_upper = u.upper;
        }
        (GuaranteeKind::ConjugateMax, worst)
    }
}

impl PricingScheme {
    /// Default entry point: the general construction, valid for any model.
    pub fn build(model: &CostModel, config: &SolverConfig) -> Result<Self> {
        build_pricing_scheme_general(model, config)
    }

    pub fn k(&self) -> usize {
        self.units.len()
    }

    pub fn unit(&self, i: usize) -> Result<&UnitPricing> {
        if i == 0 || i > self.k() {
            return Err(Error::out_of_range("unit", format!("{i} not in 1..={}", self.k())));
        }
        Ok(&self.units[i - 1])
    }

    /// `phi_i(s)` for `i` in `1..=k`, `s` in `[0, 1]`.
    pub fn price_at(&self, i: usize, s: f64) -> Result<f64> {
        let unit = self.unit(i)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::out_of_range("seed", format!("{s} not in [0, 1]")));
        }
        Ok(self.eval_unit(unit, s))
    }

    fn eval_unit(&self, unit: &UnitPricing, s: f64) -> f64 {
        let piece = unit
            .pieces
            .iter()
            .find(|p| s <= p.s_end())
            .or(unit.pieces.last())
            .expect("pricing function has at least one piece");
        piece
            .eval(s)
            .clamp(unit.lower, unit.upper)
            .min(self.model.upper())
    }

    /// `sup { s : phi_i(s) <= v }`, clamped to `[0, 1]`; 0 when no seed qualifies.
    pub fn inverse_price(&self, i: usize, v: f64) -> Result<f64> {
        let unit = self.unit(i)?;
        let (lower, upper) = (self.model.lower(), self.model.upper());
        if !(v >= lower && v <= upper) {
            return Err(Error::out_of_range("valuation", format!("{v} not in [{lower}, {upper}]")));
        }
        if v >= unit.upper {
            return Ok(1.0);
        }
        if v < unit.lower {
            return Ok(0.0);
        }
        let mut sup = 0.0;
        for piece in &unit.pieces {
            match *piece {
                PricePiece::Flat { s_end, price, .. } => {
                    if price <= v {
                        sup = s_end;
                    } else {
                        break;
                    }
                }
                PricePiece::Exponential {
                    s_start,
                    s_end,
                    v_start,
                    v_end,
                    pole,
                    rate,
                } => {
                    if v >= v_end {
                        sup = s_end;
                    } else {
                        if v >= v_start {
                            sup = s_start + ((v - pole) / (v_start - pole)).ln() / rate;
                        }
                        break;
                    }
                }
            }
        }
        Ok(sup.clamp(0.0, 1.0))
    }

    /// `∫_0^1 phi_i(s) ds`: the expected price of unit `i`.
    pub fn mean_price(&self, i: usize) -> Result<f64> {
        Ok(self.unit(i)?.pieces.iter().map(PricePiece::integral).sum())
    }

    /// Maps a full seed vector to prices. Seeds must lie in `[0, 1]`.
    pub fn prices_for_seeds(&self, seeds: &[f64]) -> Result<PriceVector> {
        if seeds.len() != self.k() {
            return Err(Error::InvalidInput(format!(
                "expected {} seeds, got {}",
                self.k(),
                seeds.len()
            )));
        }
        let prices = seeds
            .iter()
            .enumerate()
            .map(|(idx, &s)| self.price_at(idx + 1, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(PriceVector {
            seeds: seeds.to_vec(),
            prices,
        })
    }

    /// Draws `k` independent uniform seeds from `rng` and prices every unit.
    pub fn sample_price_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> PriceVector {
        let seeds: Vec<f64> = (0..self.k()).map(|_| rng.random::<f64>()).collect();
        let prices = seeds
            .iter()
            .zip(&self.units)
            .map(|(&s, unit)| self.eval_unit(unit, s))
            .collect();
        PriceVector { seeds, prices }
    }

    pub fn cr_guarantee(&self) -> f64 {
        self.cr_guarantee
    }

    /// `Sum_i inverse_price(i, v) / k`: the distribution of one price drawn
    /// from the aggregate allocation curve.
    pub fn aggregate_cdf(&self, v: f64) -> Result<f64> {
        let mut total = 0.0;
        for i in 1..=self.k() {
            total += self.inverse_price(i, v)?;
        }
        Ok(total / self.k() as f64)
    }
}

/// Exponential pricing for high-value models, from the closed-form interval
/// recursion at `alpha*`.
pub fn build_pricing_scheme(model: &CostModel, config: &SolverConfig) -> Result<PricingScheme> {
    model.require_high_value()?;
    let sol = lower_bound::solve_alpha_star(model, config)?;
    let (alpha, h, xi) = (sol.alpha, sol.k_underbar, sol.xi);
    let rate = alpha / model.k() as f64;
    let lower = model.lower();
    let mut units: Vec<UnitPricing> = (1..h).map(|i| constant_unit(i, lower)).collect();
    units.push(head_unit(h, lower, model.marginal(h), xi, rate));
    for i in h + 1..=model.k() {
        let start = units.last().expect("head unit pushed").upper;
        units.push(tail_unit(i, start, model.marginal(i), rate));
    }
    let (guarantee_kind, cr_guarantee) = guarantee_for(model, alpha, &units);
    Ok(PricingScheme {
        model: model.clone(),
        kind: SchemeKind::HighValue,
        alpha_star: alpha,
        k_underbar_star: h,
        xi_star: xi,
        units,
        guarantee_kind,
        cr_guarantee,
    })
}

/// Two-unit construction. Which unit carries the randomization depends on
/// whether `alpha*(2)` clears `(2L - c_1 - c_2) / (L - c_1)`.
pub fn build_pricing_scheme_k2(model: &CostModel, config: &SolverConfig) -> Result<PricingScheme> {
    if model.k() != 2 {
        return Err(Error::InvalidInput(format!(
            "two-unit pricing needs k = 2, got k = {}",
            model.k()
        )));
    }
    model.require_high_value()?;
    let alpha = lower_bound::solve_alpha_star(model, config)?.alpha;
    let lower = model.lower();
    let (c1, c2) = (model.marginal(1), model.marginal(2));
    let rate = alpha / 2.0;
    let total = 2.0 * lower - c1 - c2;
    let switch = total / (lower - c1);
    let (h, xi, units) = if alpha >= switch {
        let xi = (total / (lower - c1) / alpha).min(1.0);
        let first = head_unit(1, lower, c1, xi, rate);
        let second = tail_unit(2, first.upper, c2, rate);
        (1, xi, vec![first, second])
    } else {
        let xi = ((total / alpha - (lower - c1)) / (lower - c2)).min(1.0);
        (2, xi, vec![constant_unit(1, lower), head_unit(2, lower, c2, xi, rate)])
    };
    Ok(PricingScheme {
        model: model.clone(),
        kind: SchemeKind::TwoUnit,
        alpha_star: alpha,
        k_underbar_star: h,
        xi_star: xi,
        units,
        guarantee_kind: GuaranteeKind::Optimal,
        cr_guarantee: alpha,
    })
}

/// General construction: every pricing function is the exact inverse of the
/// piecewise-log allocation function at `alpha*`.
pub fn build_pricing_scheme_general(
    model: &CostModel,
    config: &SolverConfig,
) -> Result<PricingScheme> {
    let sol = lower_bound::solve_alpha_star_general(model, config)?;
    scheme_from_solution(model, &sol)
}

pub(crate) fn scheme_from_solution(
    model: &CostModel,
    sol: &LowerBoundSolution,
) -> Result<PricingScheme> {
    if sol.regime != Regime::General {
        return Err(Error::InvalidInput(
            "general pricing needs a general-regime solution".into(),
        ));
    }
    let lower = model.lower();
    let h = sol.k_underbar;
    let mut units: Vec<UnitPricing> = (1..h).map(|i| constant_unit(i, lower)).collect();
    for iv in &sol.intervals {
        let mut pieces = Vec::new();
        if iv.unit == h && sol.xi > 0.0 {
            pieces.push(PricePiece::Flat {
                s_start: 0.0,
                s_end: sol.xi,
                price: lower,
            });
        }
        for p in sol.psi_pieces(model, iv.unit)? {
            pieces.push(PricePiece::Exponential {
                s_start: p.s_start,
                s_end: p.s_end,
                v_start: p.v_start,
                v_end: p.v_end,
                pole: p.pole,
                rate: 1.0 / p.weight,
            });
        }
        if pieces.is_empty() {
            pieces.push(PricePiece::Flat {
                s_start: 0.0,
                s_end: 1.0,
                price: iv.ell,
            });
        }
        units.push(UnitPricing {
            unit: iv.unit,
            lower: iv.ell,
            upper: iv.u,
            pieces,
        });
    }
    let (guarantee_kind, cr_guarantee) = guarantee_for(model, sol.alpha, &units);
    Ok(PricingScheme {
        model: model.clone(),
        kind: SchemeKind::General,
        alpha_star: sol.alpha,
        k_underbar_star: h,
        xi_star: sol.xi,
        units,
        guarantee_kind,
        cr_guarantee,
    })
}
