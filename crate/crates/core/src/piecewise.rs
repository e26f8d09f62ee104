//! Piecewise-logarithmic allocation curves for general production costs.
//!
//! Between consecutive distinct marginal costs the conjugate slope `g` is
//! constant, so `∫ g / (alpha (eta - c)) d eta` is a sum of logarithms. Each
//! [`LogPiece`] covers one such stretch and is invertible in closed form.

use serde::{Deserialize, Serialize};

use crate::cost_model::CostModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPiece {
    pub v_start: f64,
    pub v_end: f64,
    pub s_start: f64,
    pub s_end: f64,
    /// `g / alpha` on this piece.
    pub weight: f64,
    /// The marginal cost of the unit this curve belongs to.
    pub pole: f64,
}

impl LogPiece {
    /// Allocation level at valuation `v` (no range check).
    pub fn level(&self, v: f64) -> f64 {
        self.s_start + self.weight * ((v - self.pole) / (self.v_start - self.pole)).ln()
    }

    /// Valuation at allocation level `s` (no range check).
    pub fn value(&self, s: f64) -> f64 {
        self.pole + (self.v_start - self.pole) * ((s - self.s_start) / self.weight).exp()
    }
}

/// Walks the curve of the unit with marginal cost `pole` from `(v_start,
/// s_start)` until the level reaches `s_target`, splitting at every jump of
/// `g`. Returns the pieces, in order; empty if `s_start >= s_target`.
pub(crate) fn trace_unit(
    model: &CostModel,
    alpha: f64,
    pole: f64,
    v_start: f64,
    s_start: f64,
    s_target: f64,
) -> Result<Vec<LogPiece>> {
    if v_start <= pole {
        return Err(Error::Degenerate(format!(
            "allocation curve starts at {v_start} which does not exceed its marginal cost {pole}"
        )));
    }
    let breakpoints = model.breakpoints();
    let mut pieces = Vec::new();
    let mut v = v_start;
    let mut s = s_start;
    while s < s_target {
        let g = model.allocation_count(v);
        if g == 0 {
            return Err(Error::Degenerate(format!(
                "no marginal cost lies at or below {v}; the conjugate slope vanishes"
            )));
        }
        let weight = g as f64 / alpha;
        let next = breakpoints.iter().copied().find(|&c| c > v);
        let reach = next.map(|b| s + weight * ((b - pole) / (v - pole)).ln());
        match (next, reach) {
            (Some(b), Some(r)) if r < s_target => {
                pieces.push(LogPiece {
                    v_start: v,
                    v_end: b,
                    s_start: s,
                    s_end: r,
                    weight,
                    pole,
                });
                v = b;
                s = r;
            }
            _ => {
                let v_end = pole + (v - pole) * ((s_target - s) / weight).exp();
                pieces.push(LogPiece {
                    v_start: v,
                    v_end,
                    s_start: s,
                    s_end: s_target,
                    weight,
                    pole,
                });
                s = s_target;
            }
        }
    }
    Ok(pieces)
}

/// `∫_a^b g(eta) d eta` for the step function `g(eta) = #{j : c_j <= eta}`.
pub(crate) fn step_integral(model: &CostModel, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    model
        .marginals()
        .iter()
        .map(|&c| (b - a.max(c)).max(0.0))
        .sum()
}
