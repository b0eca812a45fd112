//! Victim selection and termination of preemptible instances.
//!
//! Given a host whose Full view cannot take a request, pick the subset of
//! its resident preemptibles whose termination makes the request fit and
//! whose summed cost is lowest. Ties go to the smaller set, then to the
//! lexicographically smaller sorted id list.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    CapacityView, Cluster, ClusterError, HostId, Instance, InstanceId, Minutes, ViewMode,
};
use crate::resources::ResourceVector;

/// Hosts with more preemptibles than this fall back to a greedy selection.
pub const EXHAUSTIVE_LIMIT: usize = 20;

const BILLING_PERIOD_MIN: Minutes = 60;

#[derive(Debug, Error, PartialEq)]
pub enum ReaperError {
    #[error("cost requested for normal instance `{0}`")]
    NotPreemptible(InstanceId),
    #[error("victim selection needs a full view, got {0:?}")]
    WrongViewMode(ViewMode),
    #[error("no subset of preemptibles on `{host}` frees {demand}")]
    NoFeasibleSet {
        host: HostId,
        demand: ResourceVector,
    },
    #[error("oracle limited to {EXHAUSTIVE_LIMIT} preemptibles, host has {0}")]
    TooManyForOracle(usize),
    #[error("instance `{0}` listed twice")]
    DuplicateVictim(InstanceId),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Per-instance termination cost; the cost of a set is the sum.
pub trait CostFunction: Send + Sync {
    fn name(&self) -> &str;

    /// Must be non-negative.
    fn instance_cost(&self, instance: &Instance, now: Minutes) -> f64;

    fn set_cost(&self, instances: &[&Instance], now: Minutes) -> f64 {
        instances.iter().map(|i| self.instance_cost(i, now)).sum()
    }
}

/// Minutes consumed past the last whole billing hour.
pub fn partial_hour_cost(instance: &Instance, now: Minutes) -> Result<f64, ReaperError> {
    if !instance.is_preemptible() {
        return Err(ReaperError::NotPreemptible(instance.id.clone()));
    }
    Ok((instance.run_time(now) % BILLING_PERIOD_MIN) as f64)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PartialHourCost;

impl CostFunction for PartialHourCost {
    fn name(&self) -> &str {
        "partial_hour"
    }

    fn instance_cost(&self, instance: &Instance, now: Minutes) -> f64 {
        (instance.run_time(now) % BILLING_PERIOD_MIN) as f64
    }
}

/// Every victim costs 1, so the smallest set wins.
#[derive(Clone, Copy, Debug, Default)]
pub struct CountCost;

impl CostFunction for CountCost {
    fn name(&self) -> &str {
        "count"
    }

    fn instance_cost(&self, _instance: &Instance, _now: Minutes) -> f64 {
        1.0
    }
}

pub fn cost_function_by_name(name: &str) -> Option<Box<dyn CostFunction>> {
    match name {
        "partial_hour" => Some(Box::new(PartialHourCost)),
        "count" => Some(Box::new(CountCost)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VictimSelection {
    pub victims: Vec<InstanceId>,
    pub cost: f64,
    pub freed: ResourceVector,
    /// False when the host had too many preemptibles and the greedy
    /// fallback was used.
    pub exhaustive: bool,
}

impl VictimSelection {
    fn none() -> Self {
        VictimSelection {
            victims: Vec::new(),
            cost: 0.0,
            freed: ResourceVector::ZERO,
            exhaustive: true,
        }
    }
}

struct Candidate<'a> {
    instance: &'a Instance,
    resources: ResourceVector,
    cost: f64,
}

fn candidates<'a>(
    view: &CapacityView<'a>,
    cost_fn: &dyn CostFunction,
) -> Result<Vec<Candidate<'a>>, ReaperError> {
    if view.mode != ViewMode::Full {
        return Err(ReaperError::WrongViewMode(view.mode));
    }
    let mut out: Vec<_> = view
        .resident_preemptibles
        .iter()
        .map(|&instance| Candidate {
            instance,
            resources: instance.resources(),
            cost: cost_fn.instance_cost(instance, view.now),
        })
        .collect();
    out.sort_by(|a, b| a.instance.id.cmp(&b.instance.id));
    Ok(out)
}

fn selection_from_mask(cands: &[Candidate<'_>], mask: u64, exhaustive: bool) -> VictimSelection {
    let mut sel = VictimSelection::none();
    sel.exhaustive = exhaustive;
    for (i, c) in cands.iter().enumerate() {
        if mask & (1 << i) != 0 {
            sel.victims.push(c.instance.id.clone());
            sel.cost += c.cost;
            sel.freed += c.resources;
        }
    }
    sel
}

fn no_feasible(view: &CapacityView<'_>, demand: ResourceVector) -> ReaperError {
    ReaperError::NoFeasibleSet {
        host: view.host.clone(),
        demand,
    }
}

/// Minimum-cost feasible victim set on one host.
///
/// Subsets are visited by increasing size in lexicographic id order. A subset
/// containing an already feasible subset is skipped, as is any subset whose
/// cost cannot beat the incumbent. With non-negative costs neither cut can
/// drop the optimum under the tie-break.
pub fn select_victims(
    demand: ResourceVector,
    view: &CapacityView<'_>,
    cost_fn: &dyn CostFunction,
) -> Result<VictimSelection, ReaperError> {
    if demand.fits_in(&view.free) {
        return Ok(VictimSelection::none());
    }
    let cands = candidates(view, cost_fn)?;
    let n = cands.len();
    let all: ResourceVector = cands.iter().map(|c| c.resources).sum();
    if !demand.fits_in(&(view.free + all)) {
        return Err(no_feasible(view, demand));
    }
    if n > EXHAUSTIVE_LIMIT {
        return Ok(greedy(&cands, view.free, demand));
    }

    let mut feasible_masks: Vec<u64> = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    let mut combo: Vec<usize> = Vec::with_capacity(n);
    'sizes: for k in 1..=n {
        combo.clear();
        combo.extend(0..k);
        loop {
            let mask = combo.iter().fold(0u64, |m, &i| m | (1 << i));
            if !feasible_masks.iter().any(|&f| f & !mask == 0) {
                let cost: f64 = combo.iter().map(|&i| cands[i].cost).sum();
                // An incumbent of equal cost is smaller or lexicographically earlier.
                let improves = best.is_none_or(|(_, c)| cost < c);
                if improves {
                    let freed: ResourceVector = combo.iter().map(|&i| cands[i].resources).sum();
                    if demand.fits_in(&(view.free + freed)) {
                        feasible_masks.push(mask);
                        best = Some((mask, cost));
                        if cost <= 0.0 {
                            break 'sizes;
                        }
                    }
                }
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
    }
    let (mask, _) = best.ok_or_else(|| no_feasible(view, demand))?;
    Ok(selection_from_mask(&cands, mask, true))
}

/// Advances `combo` to the next k-combination of 0..n in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn greedy(
    cands: &[Candidate<'_>],
    free: ResourceVector,
    demand: ResourceVector,
) -> VictimSelection {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[a]
            .cost
            .partial_cmp(&cands[b].cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| cands[a].instance.id.cmp(&cands[b].instance.id))
    });
    let mut picked = Vec::new();
    let mut freed = ResourceVector::ZERO;
    for i in order {
        if demand.fits_in(&(free + freed)) {
            break;
        }
        freed += cands[i].resources;
        picked.push(i);
    }
    picked.sort_unstable();
    let mut sel = VictimSelection::none();
    sel.exhaustive = false;
    for i in picked {
        sel.victims.push(cands[i].instance.id.clone());
        sel.cost += cands[i].cost;
        sel.freed += cands[i].resources;
    }
    sel
}

/// Power-set scan used as ground truth for [`select_victims`].
pub fn oracle_select_victims(
    demand: ResourceVector,
    view: &CapacityView<'_>,
    cost_fn: &dyn CostFunction,
) -> Result<VictimSelection, ReaperError> {
    let cands = candidates(view, cost_fn)?;
    let n = cands.len();
    if n > EXHAUSTIVE_LIMIT {
        return Err(ReaperError::TooManyForOracle(n));
    }
    let mut best: Option<(f64, u32, Vec<&str>, u64)> = None;
    for mask in 0u64..(1u64 << n) {
        let mut freed = ResourceVector::ZERO;
        let mut cost = 0.0;
        let mut ids = Vec::new();
        for (i, c) in cands.iter().enumerate() {
            if mask & (1 << i) != 0 {
                freed += c.resources;
                cost += c.cost;
                ids.push(c.instance.id.as_str());
            }
        }
        if !demand.fits_in(&(view.free + freed)) {
            continue;
        }
        let size = mask.count_ones();
        let better = match &best {
            None => true,
            Some((bc, bs, bids, _)) => {
                cost.partial_cmp(bc)
                    .unwrap_or(Ordering::Equal)
                    .then(size.cmp(bs))
                    .then_with(|| ids.cmp(bids))
                    == Ordering::Less
            }
        };
        if better {
            best = Some((cost, size, ids, mask));
        }
    }
    let (_, _, _, mask) = best.ok_or_else(|| no_feasible(view, demand))?;
    Ok(selection_from_mask(&cands, mask, true))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminationEvent {
    pub time: Minutes,
    pub instance_id: InstanceId,
    pub host: HostId,
    pub run_time_min: Minutes,
    pub cost: f64,
}

/// Removes every victim from the cluster. All ids are checked before any
/// instance is removed, so a bad list leaves the cluster untouched.
pub fn terminate(
    cluster: &mut Cluster,
    victims: &[InstanceId],
    cost_fn: &dyn CostFunction,
) -> Result<Vec<TerminationEvent>, ReaperError> {
    let now = cluster.clock();
    let mut events = Vec::with_capacity(victims.len());
    for (i, id) in victims.iter().enumerate() {
        if victims[..i].contains(id) {
            return Err(ReaperError::DuplicateVictim(id.clone()));
        }
        let instance = cluster
            .instance(id)
            .ok_or_else(|| ClusterError::UnknownInstance(id.clone()))?;
        if !instance.is_preemptible() {
            return Err(ReaperError::NotPreemptible(id.clone()));
        }
        events.push(TerminationEvent {
            time: now,
            instance_id: id.clone(),
            host: instance.host.clone(),
            run_time_min: instance.run_time(now),
            cost: cost_fn.instance_cost(instance, now),
        });
    }
    for id in victims {
        cluster.remove(id)?;
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{HostSpec, InstanceKind};
    use crate::resources::FlavorCatalog;

    fn cluster_with(run_times: &[(&str, &str, u64)], now: Minutes) -> Cluster {
        let cat = FlavorCatalog::standard_diskless();
        let mut c = Cluster::new([HostSpec::new("h", ResourceVector::new(8, 16000, 140))]).unwrap();
        c.set_clock(now).unwrap();
        for &(id, flavor, run) in run_times {
            c.place(Instance {
                id: id.into(),
                flavor: cat.lookup(flavor).unwrap().clone(),
                kind: InstanceKind::Preemptible,
                host: "h".into(),
                start_time: now - run,
                planned_duration: None,
            })
            .unwrap();
        }
        c
    }

    #[test]
    fn partial_hour_examples() {
        let c = cluster_with(
            &[("a", "small", 181), ("b", "small", 120), ("c", "small", 71)],
            500,
        );
        let cost = |id: &str| partial_hour_cost(c.instance(&id.into()).unwrap(), 500).unwrap();
        assert_eq!(cost("a"), 1.0);
        assert_eq!(cost("b"), 0.0);
        assert_eq!(cost("c"), 11.0);
    }

    #[test]
    fn partial_hour_rejects_normal() {
        let mut c = Cluster::standard(1);
        let normal = Instance {
            id: "n".into(),
            flavor: FlavorCatalog::standard().lookup("small").unwrap().clone(),
            kind: InstanceKind::Normal,
            host: "host-0".into(),
            start_time: 0,
            planned_duration: None,
        };
        c.place(normal.clone()).unwrap();
        assert_eq!(
            partial_hour_cost(&normal, 0),
            Err(ReaperError::NotPreemptible("n".into()))
        );
        assert!(matches!(
            terminate(&mut c, &["n".into()], &PartialHourCost),
            Err(ReaperError::NotPreemptible(_))
        ));
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn fitting_host_needs_no_victims() {
        let c = cluster_with(&[("a", "medium", 61)], 100);
        let view = c.view(&"h".into(), ViewMode::Full).unwrap();
        let sel = select_victims(ResourceVector::new(2, 4000, 0), &view, &PartialHourCost).unwrap();
        assert!(sel.victims.is_empty());
        assert_eq!(sel.cost, 0.0);
    }

    #[test]
    fn worked_example_picks_whole_hour_instance() {
        let c = cluster_with(
            &[
                ("p120", "medium", 120),
                ("p119", "medium", 119),
                ("p61", "medium", 61),
                ("x", "medium", 30),
            ],
            300,
        );
        let view = c.view(&"h".into(), ViewMode::Full).unwrap();
        let sel = select_victims(ResourceVector::new(2, 4000, 0), &view, &PartialHourCost).unwrap();
        assert_eq!(sel.victims, vec![InstanceId::from("p120")]);
        assert_eq!(sel.cost, 0.0);
    }

    #[test]
    fn normal_only_view_is_rejected() {
        let c = cluster_with(&[("a", "medium", 61)], 100);
        let view = c.view(&"h".into(), ViewMode::NormalOnly).unwrap();
        // The NormalOnly view of this host fits, so force a demand above it.
        assert_eq!(
            select_victims(ResourceVector::new(9, 0, 0), &view, &PartialHourCost).unwrap_err(),
            ReaperError::WrongViewMode(ViewMode::NormalOnly)
        );
    }

    #[test]
    fn infeasible_host_errors() {
        let c = cluster_with(&[("a", "small", 61)], 100);
        let view = c.view(&"h".into(), ViewMode::Full).unwrap();
        let demand = ResourceVector::new(9, 0, 0);
        assert!(matches!(
            select_victims(demand, &view, &PartialHourCost),
            Err(ReaperError::NoFeasibleSet { .. })
        ));
        assert!(matches!(
            oracle_select_victims(demand, &view, &PartialHourCost),
            Err(ReaperError::NoFeasibleSet { .. })
        ));
    }

    #[test]
    fn greedy_fallback_above_limit() {
        let mut c = Cluster::new([HostSpec::new("h", ResourceVector::new(32, 64000, 0))]).unwrap();
        c.set_clock(1000).unwrap();
        let small = FlavorCatalog::standard_diskless()
            .lookup("small")
            .unwrap()
            .clone();
        for i in 0..32u64 {
            c.place(Instance {
                id: InstanceId::new(format!("p{i:02}")),
                flavor: small.clone(),
                kind: InstanceKind::Preemptible,
                host: "h".into(),
                start_time: 1000 - (60 + i),
                planned_duration: None,
            })
            .unwrap();
        }
        let view = c.view(&"h".into(), ViewMode::Full).unwrap();
        let sel = select_victims(ResourceVector::new(3, 6000, 0), &view, &PartialHourCost).unwrap();
        assert!(!sel.exhaustive);
        assert_eq!(sel.victims, vec!["p00".into(), "p01".into(), "p02".into()]);
        assert_eq!(sel.cost, 3.0);
        assert!(matches!(
            oracle_select_victims(ResourceVector::new(3, 6000, 0), &view, &PartialHourCost),
            Err(ReaperError::TooManyForOracle(32))
        ));
    }

    #[test]
    fn terminate_records_events_and_rejects_repeats() {
        let mut c = cluster_with(&[("a", "medium", 71), ("b", "medium", 91)], 200);
        assert!(terminate(&mut c, &[], &PartialHourCost).unwrap().is_empty());
        assert_eq!(c.len(), 2);
        let ev = terminate(&mut c, &["a".into()], &PartialHourCost).unwrap();
        assert_eq!(
            ev,
            vec![TerminationEvent {
                time: 200,
                instance_id: "a".into(),
                host: "h".into(),
                run_time_min: 71,
                cost: 11.0
            }]
        );
        assert!(terminate(&mut c, &["a".into()], &PartialHourCost).is_err());
        assert_eq!(
            terminate(&mut c, &["b".into(), "b".into()], &PartialHourCost).unwrap_err(),
            ReaperError::DuplicateVictim("b".into())
        );
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut combo = vec![0, 1];
        let mut seen = vec![combo.clone()];
        while next_combination(&mut combo, 4) {
            seen.push(combo.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }
}
