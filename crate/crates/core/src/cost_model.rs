//! The setup `{L, U, f}`: valuation bounds plus the marginal production costs
//! of the `k` units, with the conjugate cost and its step-function derivative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the production cost is described in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CostSpec {
    /// Marginal cost of each unit, in production order.
    Explicit { marginals: Vec<f64> },
    /// Cumulative cost `f(i) = coeff * i^2`.
    Quadratic { coeff: f64 },
}

/// JSON form of a cost model: `{"L": .., "U": .., "k": .., "cost": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "U")]
    pub upper: f64,
    pub k: usize,
    pub cost: CostSpec,
}

impl ModelSpec {
    pub fn quadratic(lower: f64, upper: f64, k: usize, coeff: f64) -> Self {
        ModelSpec {
            lower,
            upper,
            k,
            cost: CostSpec::Quadratic { coeff },
        }
    }

    pub fn build(&self) -> Result<CostModel> {
        CostModel::from_spec(self)
    }
}

/// Validated cost model. Units are indexed `1..=k` in the public API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelSpec", try_from = "ModelSpec")]
pub struct CostModel {
    lower: f64,
    upper: f64,
    marginals: Vec<f64>,
    cumulative: Vec<f64>,
}

impl CostModel {
    pub fn new(lower: f64, upper: f64, marginals: Vec<f64>) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() {
            return Err(Error::InvalidModel("L and U must be finite".into()));
        }
        if lower < 1.0 {
            return Err(Error::InvalidModel(format!("L = {lower} must be at least 1")));
        }
        if upper < lower {
            return Err(Error::InvalidModel(format!("U = {upper} is below L = {lower}")));
        }
        if marginals.is_empty() {
            return Err(Error::InvalidModel("capacity k must be at least 1".into()));
        }
        for (i, &c) in marginals.iter().enumerate() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "marginal cost c_{} = {c} must be finite and non-negative",
                    i + 1
                )));
            }
        }
        if let Some(i) = marginals.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidModel(format!(
                "marginal costs decrease: c_{} = {} > c_{} = {}",
                i + 1,
                marginals[i],
                i + 2,
                marginals[i + 1]
            )));
        }
        let mut cumulative = Vec::with_capacity(marginals.len() + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for &c in &marginals {
            acc += c;
            cumulative.push(acc);
        }
        Ok(CostModel {
            lower,
            upper,
            marginals,
            cumulative,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        match &spec.cost {
            CostSpec::Explicit { marginals } => {
                if marginals.len() != spec.k {
                    return Err(Error::InvalidModel(format!(
                        "k = {} but {} marginal costs were given",
                        spec.k,
                        marginals.len()
                    )));
                }
                CostModel::new(spec.lower, spec.upper, marginals.clone())
            }
            CostSpec::Quadratic { coeff } => {
                CostModel::quadratic(spec.lower, spec.upper, spec.k, *coeff)
            }
        }
    }

    /// `f(i) = coeff * i^2`, expanded to marginals `c_i = coeff * (2i - 1)`.
    pub fn quadratic(lower: f64, upper: f64, k: usize, coeff: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("capacity k must be at least 1".into()));
        }
        let marginals = (1..=k)
            .map(|i| coeff * (2 * i - 1) as f64)
            .collect::<Vec<_>>();
        CostModel::new(lower, upper, marginals)
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            lower: self.lower,
            upper: self.upper,
            k: self.k(),
            cost: CostSpec::Explicit {
                marginals: self.marginals.clone(),
            },
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn k(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    /// Marginal cost `c_i` of unit `i` (1-based).
    ///
    /// Panics if `i` is not in `1..=k`.
    pub fn marginal(&self, i: usize) -> f64 {
        self.marginals[i - 1]
    }

    /// True iff `c_k < L`: every admissible valuation exceeds every marginal cost.
    pub fn is_high_value(&self) -> bool {
        self.marginal(self.k()) < self.lower
    }

    pub(crate) fn require_high_value(&self) -> Result<()> {
        if self.is_high_value() {
            Ok(())
        } else {
            Err(Error::NotHighValue {
                c_k: self.marginal(self.k()),
                lower: self.lower,
            })
        }
    }

    /// `f(j) = c_1 + ... + c_j`, with `f(0) = 0`.
    pub fn cumulative_cost(&self, j: usize) -> Result<f64> {
        self.cumulative
            .get(j)
            .copied()
            .ok_or_else(|| Error::out_of_range("unit count", format!("{j} > k = {}", self.k())))
    }

    pub(crate) fn total_cost(&self) -> f64 {
        self.cumulative[self.k()]
    }

    /// Number of marginal costs at or below `v`; the derivative of the conjugate.
    pub fn allocation_count(&self, v: f64) -> usize {
        self.marginals.partition_point(|&c| c <= v)
    }

    /// `f*(v) = max_{i in 0..=k} (v*i - f(i))`.
    ///
    /// The maximum is attained at `i = g(v)`; the sum is accumulated as
    /// `sum (v - c_i)` so that `f*(L)` agrees bit-for-bit with the prefix sums
    /// used to locate the first randomized unit.
    pub fn conjugate(&self, v: f64) -> f64 {
        self.marginals[..self.allocation_count(v)]
            .iter()
            .map(|&c| v - c)
            .sum()
    }

    /// Distinct marginal costs in increasing order: the jump points of `g`.
    pub(crate) fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::with_capacity(self.k());
        for &c in &self.marginals {
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
        out
    }
}

impl From<CostModel> for ModelSpec {
    fn from(model: CostModel) -> Self {
        model.to_spec()
    }
}

impl TryFrom<ModelSpec> for CostModel {
    type Error = Error;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        CostModel::from_spec(&spec)
    }
}
