//! Filter-and-weigh scheduling pipelines.
//!
//! * Baseline: filter and weigh on Full views. Never evicts.
//! * Preemptible-aware: filter normal requests on NormalOnly views and
//!   preemptible requests on Full views, always weigh on Full views, then pick
//!   victims on the winning host if it is overcommitted. One pass.
//! * Retry: run the baseline; if a normal request fails, run a second pass
//!   with the preemptible-aware pipeline.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    CapacityView, Cluster, ClusterError, HostId, Instance, InstanceId, InstanceKind, Minutes,
    ViewMode,
};
use crate::reaper::{self, CostFunction, PartialHourCost, ReaperError, TerminationEvent};
use crate::resources::{Flavor, ResourceVector};
use crate::weighers::{self, WeighError, WeigherSpec};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub flavor: Flavor,
    pub kind: InstanceKind,
    pub arrival_time: Minutes,
}

impl Request {
    pub fn new(
        id: impl Into<String>,
        flavor: Flavor,
        kind: InstanceKind,
        arrival_time: Minutes,
    ) -> Self {
        Request {
            id: id.into(),
            flavor,
            kind,
            arrival_time,
        }
    }

    pub fn resources(&self) -> ResourceVector {
        self.flavor.resources()
    }

    pub fn is_preemptible(&self) -> bool {
        self.kind.is_preemptible()
    }
}

pub trait HostFilter: Send + Sync {
    fn name(&self) -> &str;
    fn passes(&self, request: &Request, view: &CapacityView<'_>) -> bool;
}

/// The request fits the view in every dimension.
pub fn resource_fit_filter(request: &Request, view: &CapacityView<'_>) -> bool {
    request.resources().fits_in(&view.free)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ResourceFitFilter;

impl HostFilter for ResourceFitFilter {
    fn name(&self) -> &str {
        "resource_fit"
    }

    fn passes(&self, request: &Request, view: &CapacityView<'_>) -> bool {
        resource_fit_filter(request, view)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Uniform choice among equal-weight hosts using the caller's RNG.
    #[default]
    SeededRandom,
    LowestHostId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Baseline,
    PreemptibleAware,
    Retry,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Baseline => "baseline",
            SchedulerKind::PreemptibleAware => "aware",
            SchedulerKind::Retry => "retry",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub host: HostId,
    /// Preemptibles on `host` to terminate first, sorted by id.
    pub victims: Vec<InstanceId>,
    pub victim_cost: f64,
    pub total_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleOutcome {
    Placed(Placement),
    NoValidHost,
}

impl ScheduleOutcome {
    pub fn placement(&self) -> Option<&Placement> {
        match self {
            ScheduleOutcome::Placed(p) => Some(p),
            ScheduleOutcome::NoValidHost => None,
        }
    }

    pub fn is_placed(&self) -> bool {
        self.placement().is_some()
    }
}

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("scheduler has no filters")]
    NoFilters,
    #[error("scheduler has no weighers")]
    NoWeighers,
    #[error(transparent)]
    Weigh(#[from] WeighError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("victim selection failed on admitted host `{host}`: {source}")]
    VictimSelection { host: HostId, source: ReaperError },
    #[error("commit failed: {0}")]
    Commit(ReaperError),
}

#[derive(Clone)]
pub struct Scheduler {
    filters: Vec<Arc<dyn HostFilter>>,
    weighers: Vec<WeigherSpec>,
    cost_fn: Arc<dyn CostFunction>,
    tie_break: TieBreak,
}

impl Default for Scheduler {
    fn default() -> Self {
        Scheduler {
            filters: vec![Arc::new(ResourceFitFilter)],
            weighers: weighers::default_stack(),
            cost_fn: Arc::new(PartialHourCost),
            tie_break: TieBreak::SeededRandom,
        }
    }
}

impl fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scheduler")
            .field(
                "filters",
                &self.filters.iter().map(|x| x.name()).collect::<Vec<_>>(),
            )
            .field("weighers", &self.weighers)
            .field("cost_fn", &self.cost_fn.name())
            .field("tie_break", &self.tie_break)
            .finish()
    }
}

struct Choice<'a> {
    full_view: CapacityView<'a>,
    total_weight: f64,
}

impl Scheduler {
    pub fn new(
        filters: Vec<Arc<dyn HostFilter>>,
        weighers: Vec<WeigherSpec>,
        cost_fn: Arc<dyn CostFunction>,
        tie_break: TieBreak,
    ) -> Result<Self, ScheduleError> {
        if filters.is_empty() {
            return Err(ScheduleError::NoFilters);
        }
        if weighers.is_empty() {
            return Err(ScheduleError::NoWeighers);
        }
        Ok(Scheduler {
            filters,
            weighers,
            cost_fn,
            tie_break,
        })
    }

    pub fn with_weighers(mut self, weighers: Vec<WeigherSpec>) -> Result<Self, ScheduleError> {
        if weighers.is_empty() {
            return Err(ScheduleError::NoWeighers);
        }
        self.weighers = weighers;
        Ok(self)
    }

    pub fn with_cost_fn(mut self, cost_fn: Arc<dyn CostFunction>) -> Self {
        self.cost_fn = cost_fn;
        self
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn cost_fn(&self) -> &dyn CostFunction {
        self.cost_fn.as_ref()
    }

    pub fn weighers(&self) -> &[WeigherSpec] {
        &self.weighers
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn schedule<R: Rng + ?Sized>(
        &self,
        kind: SchedulerKind,
        request: &Request,
        cluster: &Cluster,
        rng: &mut R,
    ) -> Result<ScheduleOutcome, ScheduleError> {
        match kind {
            SchedulerKind::Baseline => self.schedule_baseline(request, cluster, rng),
            SchedulerKind::PreemptibleAware => {
                self.schedule_preemptible_aware(request, cluster, rng)
            }
            SchedulerKind::Retry => self.schedule_retry(request, cluster, rng),
        }
    }

    /// Filter and weigh on Full views only.
    pub fn schedule_baseline<R: Rng + ?Sized>(
        &self,
        request: &Request,
        cluster: &Cluster,
        rng: &mut R,
    ) -> Result<ScheduleOutcome, ScheduleError> {
        let full = cluster.views(ViewMode::Full);
        let candidates: Vec<_> = full
            .into_iter()
            .filter(|v| self.passes_filters(request, v))
            .collect();
        Ok(match self.best_host(request, candidates, rng)? {
            Some(choice) => ScheduleOutcome::Placed(Placement {
                host: choice.full_view.host.clone(),
                victims: Vec::new(),
                victim_cost: 0.0,
                total_weight: choice.total_weight,
            }),
            None => ScheduleOutcome::NoValidHost,
        })
    }

    /// Single pass over both host states, with victim selection on the
    /// winning host when it is overcommitted.
    pub fn schedule_preemptible_aware<R: Rng + ?Sized>(
        &self,
        request: &Request,
        cluster: &Cluster,
        rng: &mut R,
    ) -> Result<ScheduleOutcome, ScheduleError> {
        let full = cluster.views(ViewMode::Full);
        let candidates: Vec<_> = if request.is_preemptible() {
            full.into_iter()
                .filter(|v| self.passes_filters(request, v))
                .collect()
        } else {
            let normal = cluster.views(ViewMode::NormalOnly);
            full.into_iter()
                .zip(normal)
                .filter(|(_, n)| self.passes_filters(request, n))
                .map(|(f, _)| f)
                .collect()
        };
        let Some(choice) = self.best_host(request, candidates, rng)? else {
            return Ok(ScheduleOutcome::NoValidHost);
        };
        let host = choice.full_view.host.clone();
        let demand = request.resources();
        let (victims, victim_cost) = if demand.fits_in(&choice.full_view.free) {
            (Vec::new(), 0.0)
        } else {
            // Preemptible requests are filtered on Full views and always fit here.
            debug_assert!(!request.is_preemptible());
            let sel = reaper::select_victims(demand, &choice.full_view, self.cost_fn.as_ref())
                .map_err(|source| ScheduleError::VictimSelection {
                    host: host.clone(),
                    source,
                })?;
            (sel.victims, sel.cost)
        };
        Ok(ScheduleOutcome::Placed(Placement {
            host,
            victims,
            victim_cost,
            total_weight: choice.total_weight,
        }))
    }

    /// Baseline pass, then a preemptible-aware pass for failed normal requests.
    pub fn schedule_retry<R: Rng + ?Sized>(
        &self,
        request: &Request,
        cluster: &Cluster,
        rng: &mut R,
    ) -> Result<ScheduleOutcome, ScheduleError> {
        let first = self.schedule_baseline(request, cluster, rng)?;
        if first.is_placed() || request.is_preemptible() {
            return Ok(first);
        }
        self.schedule_preemptible_aware(request, cluster, rng)
    }

    fn passes_filters(&self, request: &Request, view: &CapacityView<'_>) -> bool {
        self.filters.iter().all(|f| f.passes(request, view))
    }

    fn best_host<'a, R: Rng + ?Sized>(
        &self,
        request: &Request,
        candidates: Vec<CapacityView<'a>>,
        rng: &mut R,
    ) -> Result<Option<Choice<'a>>, ScheduleError> {
        if candidates.is_empty() {
            return Ok(None);
        }
        let totals = weighers::weigh_hosts(request, &candidates, &self.weighers)?;
        let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..totals.len()).filter(|&i| totals[i] == max).collect();
        let pick = match (tied.len(), self.tie_break) {
            (1, _) => tied[0],
            (_, TieBreak::SeededRandom) => tied[rng.random_range(0..tied.len())],
            (_, TieBreak::LowestHostId) => *tied
                .iter()
                .min_by(|&&a, &&b| candidates[a].host.cmp(candidates[b].host))
                .expect("non-empty"),
        };
        let total_weight = totals[pick];
        let full_view = candidates.into_iter().nth(pick).expect("index in range");
        Ok(Some(Choice {
            full_view,
            total_weight,
        }))
    }
}

/// Terminates the placement's victims and registers the new instance.
///
/// Returns the termination events. A placement that still does not fit once
/// its victims are gone is reported as [`ScheduleError::Commit`] and leaves
/// the cluster as it was.
pub fn commit_placement(
    cluster: &mut Cluster,
    request: &Request,
    placement: &Placement,
    planned_duration: Option<Minutes>,
    cost_fn: &dyn CostFunction,
) -> Result<Vec<TerminationEvent>, ScheduleError> {
    let free = cluster.view(&placement.host, ViewMode::Full)?.free;
    let mut freed = ResourceVector::ZERO;
    for id in &placement.victims {
        let victim = cluster.instance(id).ok_or_else(|| {
            ScheduleError::Commit(ClusterError::UnknownInstance(id.clone()).into())
        })?;
        if victim.host != placement.host {
            return Err(ScheduleError::Commit(
                ClusterError::Inconsistent(format!("victim `{id}` is not on `{}`", placement.host))
                    .into(),
            ));
        }
        freed += victim.resources();
    }
    if !request.resources().fits_in(&(free + freed)) {
        return Err(ScheduleError::Commit(
            ClusterError::InsufficientCapacity {
                id: InstanceId::new(request.id.clone()),
                host: placement.host.clone(),
                free: free + freed,
                needs: request.resources(),
            }
            .into(),
        ));
    }
    let events =
        reaper::terminate(cluster, &placement.victims, cost_fn).map_err(ScheduleError::Commit)?;
    cluster.place(Instance {
        id: InstanceId::new(request.id.clone()),
        flavor: request.flavor.clone(),
        kind: request.kind,
        host: placement.host.clone(),
        start_time: cluster.clock(),
        planned_duration,
    })?;
    Ok(events)
}
