//! Rank functions and the normalize-and-sum aggregation that turns them into
//! a per-host total weight.
//!
//! Each weigher produces a raw value per candidate host. Raw values are
//! rescaled to [0, 1] across the candidate set, multiplied by the weigher's
//! multiplier and summed. The host with the largest total wins.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::CapacityView;
use crate::reaper::{select_victims, PartialHourCost};
use crate::resources::ResourceVector;
use crate::scheduler::Request;

const BILLING_PERIOD_MIN: u64 = 60;

#[derive(Debug, Error, PartialEq)]
pub enum WeighError {
    #[error("cannot normalize an empty weight list")]
    Empty,
    #[error("weigher `{0}` produced a non-finite value")]
    NonFinite(String),
    #[error("weigher `{name}` has non-finite multiplier {multiplier}")]
    BadMultiplier { name: String, multiplier: f64 },
    #[error("unknown weigher `{0}`")]
    Unknown(String),
}

/// A rank function over a host's Full view.
pub trait Weigher: Send + Sync {
    fn name(&self) -> &str;
    fn raw_weight(&self, request: &Request, full_view: &CapacityView<'_>) -> f64;
}

/// -1 when the request does not fit the Full view, else 0.
pub fn overcommit_rank(demand: ResourceVector, full_view: &CapacityView<'_>) -> f64 {
    if demand.fits_in(&full_view.free) {
        0.0
    } else {
        -1.0
    }
}

/// Negated sum of partial-hour remainders over every resident preemptible.
pub fn period_rank(full_view: &CapacityView<'_>) -> f64 {
    let mut weight = 0u64;
    for instance in &full_view.resident_preemptibles {
        let remainder = instance.run_time(full_view.now) % BILLING_PERIOD_MIN;
        if remainder > 0 {
            weight += remainder;
        }
    }
    -(weight as f64)
}

/// Negated partial-hour cost of the cheapest victim set that would make the
/// request fit; 0 when it already fits.
///
/// A host where even terminating every preemptible is not enough ranks below
/// any feasible host: it is charged all remainders plus one full period.
pub fn victim_period_rank(demand: ResourceVector, full_view: &CapacityView<'_>) -> f64 {
    match select_victims(demand, full_view, &PartialHourCost) {
        Ok(sel) => -sel.cost,
        Err(_) => period_rank(full_view) - BILLING_PERIOD_MIN as f64,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OvercommitRank;

impl Weigher for OvercommitRank {
    fn name(&self) -> &str {
        "overcommit"
    }

    fn raw_weight(&self, request: &Request, full_view: &CapacityView<'_>) -> f64 {
        overcommit_rank(request.resources(), full_view)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PeriodRank;

impl Weigher for PeriodRank {
    fn name(&self) -> &str {
        "period"
    }

    fn raw_weight(&self, _request: &Request, full_view: &CapacityView<'_>) -> f64 {
        period_rank(full_view)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct VictimPeriodRank;

impl Weigher for VictimPeriodRank {
    fn name(&self) -> &str {
        "victim_period"
    }

    fn raw_weight(&self, request: &Request, full_view: &CapacityView<'_>) -> f64 {
        victim_period_rank(request.resources(), full_view)
    }
}

pub fn weigher_by_name(name: &str) -> Option<Arc<dyn Weigher>> {
    match name {
        "overcommit" => Some(Arc::new(OvercommitRank)),
        "period" => Some(Arc::new(PeriodRank)),
        "victim_period" => Some(Arc::new(VictimPeriodRank)),
        _ => None,
    }
}

/// Weigher entry as written in scenario documents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeigherConfig {
    pub name: String,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_multiplier() -> f64 {
    1.0
}

#[derive(Clone)]
pub struct WeigherSpec {
    pub weigher: Arc<dyn Weigher>,
    pub multiplier: f64,
}

impl WeigherSpec {
    pub fn new(weigher: Arc<dyn Weigher>, multiplier: f64) -> Result<Self, WeighError> {
        if !multiplier.is_finite() {
            return Err(WeighError::BadMultiplier {
                name: weigher.name().to_string(),
                multiplier,
            });
        }
        Ok(WeigherSpec {
            weigher,
            multiplier,
        })
    }

    pub fn from_config(config: &WeigherConfig) -> Result<Self, WeighError> {
        let weigher = weigher_by_name(&config.name)
            .ok_or_else(|| WeighError::Unknown(config.name.clone()))?;
        Self::new(weigher, config.multiplier)
    }

    pub fn name(&self) -> &str {
        self.weigher.name()
    }
}

impl fmt::Debug for WeigherSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeigherSpec")
            .field("name", &self.weigher.name())
            .field("multiplier", &self.multiplier)
            .finish()
    }
}

/// Overcommit then victim-aware period rank, both with multiplier 1.
pub fn default_stack() -> Vec<WeigherSpec> {
    vec![
        WeigherSpec::new(Arc::new(OvercommitRank), 1.0).unwrap(),
        WeigherSpec::new(Arc::new(VictimPeriodRank), 1.0).unwrap(),
    ]
}

/// Min-max rescale into [0, 1]. A constant list maps to all zeros.
pub fn normalize(raw: &[f64]) -> Result<Vec<f64>, WeighError> {
    if raw.is_empty() {
        return Err(WeighError::Empty);
    }
    if raw.iter().any(|w| !w.is_finite()) {
        return Err(WeighError::NonFinite("normalize".into()));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; raw.len()]);
    }
    let span = max - min;
    Ok(raw.iter().map(|w| (w - min) / span).collect())
}

/// Sum of multiplier * normalized weight pairs for one host.
pub fn total_weight(terms: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    terms.into_iter().map(|(m, n)| m * n).sum()
}

/// Total weight of every candidate, in candidate order. Raw values are
/// computed over the whole candidate set before normalizing.
pub fn weigh_hosts(
    request: &Request,
    candidates: &[CapacityView<'_>],
    specs: &[WeigherSpec],
) -> Result<Vec<f64>, WeighError> {
    if candidates.is_empty() {
        return Err(WeighError::Empty);
    }
    let mut totals = vec![0.0; candidates.len()];
    for spec in specs {
        let raw: Vec<f64> = candidates
            .iter()
            .map(|view| spec.weigher.raw_weight(request, view))
            .collect();
        let normalized = normalize(&raw).map_err(|e| match e {
            WeighError::NonFinite(_) => WeighError::NonFinite(spec.name().to_string()),
            other => other,
        })?;
        for (total, n) in totals.iter_mut().zip(normalized) {
            *total += spec.multiplier * n;
        }
    }
    Ok(totals)
}
