//! Arrival instances: the staged adversarial family and the stochastic
//! workloads (i.i.d., sorted, low-then-high), plus a plain-text file format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost_model::CostModel;
use crate::error::{Error, Result};

const GRID_SNAP: f64 = 1e-12;
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Instance {
    pub valuations: Vec<f64>,
    #[serde(default)]
    pub label: String,
}

impl Instance {
    pub fn new(valuations: Vec<f64>, label: impl Into<String>) -> Self {
        Instance {
            valuations,
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.valuations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valuations.is_empty()
    }

    /// Every valuation must lie in `[L, U]`.
    pub fn validate(&self, model: &CostModel) -> Result<()> {
        let (lo, hi) = (model.lower(), model.upper());
        match self.valuations.iter().position(|&v| !(v >= lo && v <= hi)) {
            None => Ok(()),
            Some(t) => Err(Error::out_of_range(
                "valuation",
                format!("buyer {} has {} outside [{lo}, {hi}]", t + 1, self.valuations[t]),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Hard,
    Iid,
    Sorted,
    Low2high,
}

/// Stage value `L + j * eps`, snapped onto `U` when it lands within rounding of it.
fn stage_value(model: &CostModel, epsilon: f64, j: usize) -> f64 {
    let v = model.lower() + j as f64 * epsilon;
    if (v - model.upper()).abs() <= GRID_SNAP * model.upper() {
        model.upper()
    } else {
        v
    }
}

/// Number of stages above `L` on the `eps`-grid inside `[L, U]`.
fn stages_above(model: &CostModel, epsilon: f64) -> usize {
    let span = (model.upper() - model.lower()) / epsilon;
    (span + GRID_SNAP * span.max(1.0)).floor() as usize
}

/// `k` buyers at each of `L, L + eps, ...` up to and including `terminal_stage`.
pub fn hard_instance(model: &CostModel, epsilon: f64, terminal_stage: f64) -> Result<Instance> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::out_of_range("epsilon", format!("{epsilon} (must be > 0)")));
    }
    let offset = (terminal_stage - model.lower()) / epsilon;
    let j_max = offset.round();
    let tol = GRID_SNAP * terminal_stage.abs().max(1.0);
    if j_max < 0.0 || (model.lower() + j_max * epsilon - terminal_stage).abs() > tol.max(GRID_SNAP * epsilon * j_max) {
        return Err(Error::InvalidInput(format!(
            "terminal stage {terminal_stage} is not on the grid L + j * {epsilon}"
        )));
    }
    let j_max = j_max as usize;
    if j_max > stages_above(model, epsilon) {
        return Err(Error::out_of_range(
            "terminal stage",
            format!("{terminal_stage} exceeds U = {}", model.upper()),
        ));
    }
    let k = model.k();
    let mut valuations = Vec::with_capacity(k * (j_max + 1));
    for j in 0..=j_max {
        let v = stage_value(model, epsilon, j);
        assert!(
            v >= model.lower() && v <= model.upper(),
            "stage value {v} left [L, U]"
        );
        valuations.extend(std::iter::repeat_n(v, k));
    }
    Ok(Instance::new(
        valuations,
        format!("hard eps={epsilon} terminal={terminal_stage}"),
    ))
}

/// The complete staged instance, ending at the last grid stage at or below `U`.
pub fn full_hard_instance(model: &CostModel, epsilon: f64) -> Result<Instance> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::out_of_range("epsilon", format!("{epsilon} (must be > 0)")));
    }
    let last = stage_value(model, epsilon, stages_above(model, epsilon));
    hard_instance(model, epsilon, last)
}

/// Normal distribution conditioned on `[lo, hi]`, sampled by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sdev: f64,
    lo: f64,
    hi: f64,
    normal: Option<Normal<f64>>,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sdev: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(sdev >= 0.0 && sdev.is_finite() && mean.is_finite() && lo <= hi) {
            return Err(Error::InvalidInput(format!(
                "bad truncated normal N({mean}, {sdev}) on [{lo}, {hi}]"
            )));
        }
        if sdev == 0.0 && !(lo..=hi).contains(&mean) {
            return Err(Error::InvalidInput(format!(
                "degenerate distribution at {mean} lies outside [{lo}, {hi}]"
            )));
        }
        let normal = if sdev > 0.0 {
            Some(Normal::new(mean, sdev).map_err(|e| Error::InvalidInput(e.to_string()))?)
        } else {
            None
        };
        Ok(TruncatedNormal {
            mean,
            sdev,
            lo,
            hi,
            normal,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sdev(&self) -> f64 {
        self.sdev
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let Some(normal) = &self.normal else {
            return Ok(self.mean);
        };
        for _ in 0..MAX_REJECTIONS {
            let x = normal.sample(rng);
            if x >= self.lo && x <= self.hi {
                return Ok(x);
            }
        }
        Err(Error::InvalidInput(format!(
            "N({}, {}) almost never lands in [{}, {}]",
            self.mean, self.sdev, self.lo, self.hi
        )))
    }
}

fn draw<R: Rng + ?Sized>(model: &CostModel, n: usize, mu: f64, sdev: f64, rng: &mut R) -> Result<Vec<f64>> {
    let dist = TruncatedNormal::new(mu, sdev, model.lower(), model.upper())?;
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `n` i.i.d. draws from `N(mu, sdev)` truncated to `[L, U]`.
pub fn gen_iid<R: Rng + ?Sized>(
    model: &CostModel,
    n: usize,
    mu: f64,
    sdev: f64,
    rng: &mut R,
) -> Result<Instance> {
    Ok(Instance::new(
        draw(model, n, mu, sdev, rng)?,
        format!("iid n={n} mu={mu} sd={sdev}"),
    ))
}

/// [`gen_iid`], then sorted ascending.
pub fn gen_sorted<R: Rng + ?Sized>(
    model: &CostModel,
    n: usize,
    mu: f64,
    sdev: f64,
    rng: &mut R,
) -> Result<Instance> {
    let mut valuations = draw(model, n, mu, sdev, rng)?;
    valuations.sort_by(f64::total_cmp);
    Ok(Instance::new(valuations, format!("sorted n={n} mu={mu} sd={sdev}")))
}

/// Two truncated-normal blocks, the first followed by the second.
#[allow(clippy::too_many_arguments)]
pub fn gen_low2high<R: Rng + ?Sized>(
    model: &CostModel,
    n1: usize,
    mu1: f64,
    sdev1: f64,
    n2: usize,
    mu2: f64,
    sdev2: f64,
    rng: &mut R,
) -> Result<Instance> {
    let mut valuations = draw(model, n1, mu1, sdev1, rng)?;
    valuations.extend(draw(model, n2, mu2, sdev2, rng)?);
    Ok(Instance::new(
        valuations,
        format!("low2high n1={n1} mu1={mu1} sd1={sdev1} n2={n2} mu2={mu2} sd2={sdev2}"),
    ))
}

/// One valuation per line, shortest exact decimal form; optional
/// `# label: ...` header.
pub fn format_instance(instance: &Instance) -> String {
    let mut out = String::with_capacity(instance.len() * 20);
    if !instance.label.is_empty() {
        let _ = writeln!(out, "# label: {}", instance.label.replace('\n', " "));
    }
    for v in &instance.valuations {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut instance = Instance::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(label) = rest.trim_start().strip_prefix("label:") {
                instance.label = label.trim().to_string();
            }
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("not a number: {line:?}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("valuation must be finite, got {line}"),
            });
        }
        instance.valuations.push(v);
    }
    Ok(instance)
}

pub fn read_instance(path: impl AsRef<Path>) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn write_instance(instance: &Instance, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_instance(instance))?;
    Ok(())
}
