//! Deterministic discrete-event simulation.
//!
//! Events are processed in time order. At equal timestamps expiries come
//! before arrivals, and preemptions caused by an arrival are logged right
//! after it; remaining ties are broken by id. A preempted instance's pending
//! expiry is cancelled.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, ClusterError, HostId, InstanceId, InstanceKind, Minutes};
use crate::reaper::{CostFunction, TerminationEvent};
use crate::scenario::{Scenario, ScenarioError, ScriptedRequest, StopRule, Workload};
use crate::scheduler::{
    commit_placement, Request, ScheduleError, ScheduleOutcome, Scheduler, SchedulerKind,
};
use crate::workload::{generate_workload, WorkloadError, WorkloadGenerator};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("t={time} request `{request}`: {source}")]
    Schedule {
        time: Minutes,
        request: String,
        source: Box<ScheduleError>,
    },
    #[error("t={time}: {source}")]
    Cluster { time: Minutes, source: ClusterError },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Expiry {
        instance_id: InstanceId,
    },
    Arrival {
        request_id: String,
    },
    Preemption {
        instance_id: InstanceId,
        host: HostId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub time: Minutes,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotInstance {
    pub id: InstanceId,
    pub run_time_min: Minutes,
    pub flavor: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSnapshot {
    pub host: HostId,
    pub normal: Vec<SnapshotInstance>,
    pub preemptible: Vec<SnapshotInstance>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRequest {
    pub id: String,
    pub flavor: String,
    pub kind: InstanceKind,
}

/// Cluster state at the moment a request was scheduled, before commit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: Minutes,
    pub hosts: Vec<HostSnapshot>,
    pub request: SnapshotRequest,
    pub chosen_host: Option<HostId>,
    pub victims: Vec<InstanceId>,
}

impl Snapshot {
    pub fn capture(cluster: &Cluster, request: &Request, outcome: &ScheduleOutcome) -> Self {
        let now = cluster.clock();
        let hosts = cluster
            .hosts()
            .map(|spec| {
                let mut hs = HostSnapshot {
                    host: spec.id.clone(),
                    normal: Vec::new(),
                    preemptible: Vec::new(),
                };
                for inst in cluster.residents(&spec.id).expect("listed host") {
                    let row = SnapshotInstance {
                        id: inst.id.clone(),
                        run_time_min: inst.run_time(now),
                        flavor: inst.flavor.name.clone(),
                    };
                    match inst.kind {
                        InstanceKind::Normal => hs.normal.push(row),
                        InstanceKind::Preemptible => hs.preemptible.push(row),
                    }
                }
                hs
            })
            .collect();
        let placement = outcome.placement();
        Snapshot {
            time: now,
            hosts,
            request: SnapshotRequest {
                id: request.id.clone(),
                flavor: request.flavor.name.clone(),
                kind: request.kind,
            },
            chosen_host: placement.map(|p| p.host.clone()),
            victims: placement.map(|p| p.victims.clone()).unwrap_or_default(),
        }
    }
}

/// Per-host rows of id, run time in minutes and size letter. Victims carry a
/// `*` in the last column. Hosts without instances produce no rows.
pub fn render_snapshot(snapshot: &Snapshot) -> String {
    let header = ["Host", "Kind", "ID", "Time", "Size", "Victim"];
    let mut rows: Vec<[String; 6]> = Vec::new();
    for host in &snapshot.hosts {
        for (kind, list) in [("normal", &host.normal), ("preemptible", &host.preemptible)] {
            for inst in list {
                let size = inst
                    .flavor
                    .chars()
                    .next()
                    .map(|c| c.to_ascii_uppercase().to_string())
                    .unwrap_or_default();
                let victim = if snapshot.victims.contains(&inst.id) {
                    "*"
                } else {
                    ""
                };
                rows.push([
                    host.host.to_string(),
                    kind.to_string(),
                    inst.id.to_string(),
                    inst.run_time_min.to_string(),
                    size,
                    victim.to_string(),
                ]);
            }
        }
    }
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let _ = write!(s, "{cell:<w$}");
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&header);
    for row in &rows {
        line(&row.each_ref().map(String::as_str));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRecord {
    pub time: Minutes,
    pub request_id: String,
    pub kind: InstanceKind,
    pub flavor: String,
    pub outcome: ScheduleOutcome,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub requests: u64,
    pub placed: u64,
    pub placed_with_eviction: u64,
    pub failed_normal: u64,
    pub failed_preemptible: u64,
    pub preempted: u64,
    pub expired: u64,
    pub end_time: Minutes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// The event queue ran dry.
    Exhausted,
    FirstNormalFailure,
    RequestCount,
    SimTime,
    EventLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scheduler: SchedulerKind,
    pub halt: HaltReason,
    pub metrics: Metrics,
    pub arrivals: Vec<ArrivalRecord>,
    pub terminations: Vec<TerminationEvent>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<Event>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Termination events as CSV: time,instance_id,host,run_time_min,cost.
    pub fn terminations_csv(&self) -> String {
        terminations_csv(&self.terminations)
    }
}

pub fn terminations_csv(events: &[TerminationEvent]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "instance_id", "host", "run_time_min", "cost"])
        .expect("in-memory write");
    for e in events {
        w.serialize((
            e.time,
            e.instance_id.as_str(),
            e.host.as_str(),
            e.run_time_min,
            e.cost,
        ))
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

#[derive(Debug)]
enum Payload {
    Expiry(InstanceId),
    Arrival(Request, Option<Minutes>),
}

#[derive(Debug)]
struct Pending {
    time: Minutes,
    rank: u8,
    key: String,
    seq: u64,
    payload: Payload,
}

impl Pending {
    fn order_key(&self) -> (Minutes, u8, &str, u64) {
        (self.time, self.rank, &self.key, self.seq)
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.order_key() == other.order_key()
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

const RANK_EXPIRY: u8 = 0;
const RANK_ARRIVAL: u8 = 1;

/// What one call to [`Simulation::step`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub event: Event,
    pub arrival: Option<ArrivalRecord>,
}

pub struct Simulation {
    cluster: Cluster,
    scheduler: Scheduler,
    kind: SchedulerKind,
    stop: StopRule,
    replay: bool,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Pending>>,
    generator: Option<WorkloadGenerator>,
    cancelled: BTreeSet<InstanceId>,
    seq: u64,
    processed: u64,
    max_events: u64,
    halted: Option<HaltReason>,
    report: RunReport,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        let cluster = scenario.build_cluster()?;
        let scheduler = scenario.build_scheduler()?;
        let origin = cluster.clock();
        let mut sim = Simulation {
            cluster,
            scheduler,
            kind: scenario.scheduler,
            stop: scenario.stop,
            replay: scenario.is_replay(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            queue: BinaryHeap::new(),
            generator: None,
            cancelled: BTreeSet::new(),
            seq: 0,
            processed: 0,
            max_events: scenario.max_events,
            halted: None,
            report: RunReport {
                scheduler: scenario.scheduler,
                halt: HaltReason::Exhausted,
                metrics: Metrics::default(),
                arrivals: Vec::new(),
                terminations: Vec::new(),
                snapshots: Vec::new(),
                events: Vec::new(),
            },
        };
        for p in &scenario.preload {
            if let Some(remaining) = p.remaining {
                sim.push(
                    origin + remaining,
                    RANK_EXPIRY,
                    Payload::Expiry(p.id.clone()),
                );
            }
        }
        let scripted = |r: &ScriptedRequest| {
            let request = Request::new(r.id.clone(), r.flavor.clone(), r.kind, origin + r.arrival);
            (request, r.duration)
        };
        match &scenario.workload {
            Workload::Replay(r) => {
                let (request, duration) = scripted(r);
                sim.push_arrival(request, duration);
            }
            Workload::Scripted(list) => {
                for r in list {
                    let (request, duration) = scripted(r);
                    sim.push_arrival(request, duration);
                }
            }
            Workload::Generated { seed, params } => {
                let mut gen = generate_workload(*seed, params.clone(), origin)?;
                let first = gen.next().expect("endless generator");
                sim.push_arrival(first.request, Some(first.duration));
                sim.generator = Some(gen);
            }
        }
        Ok(sim)
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn halted(&self) -> Option<HaltReason> {
        self.halted
    }

    fn push(&mut self, time: Minutes, rank: u8, payload: Payload) {
        let key = match &payload {
            Payload::Expiry(id) => id.to_string(),
            Payload::Arrival(r, _) => r.id.clone(),
        };
        self.seq += 1;
        self.queue.push(Reverse(Pending {
            time,
            rank,
            key,
            seq: self.seq,
            payload,
        }));
    }

    fn push_arrival(&mut self, request: Request, duration: Option<Minutes>) {
        self.push(
            request.arrival_time,
            RANK_ARRIVAL,
            Payload::Arrival(request, duration),
        );
    }

    fn halt(&mut self, reason: HaltReason) {
        self.halted = Some(reason);
        self.report.halt = reason;
    }

    fn log(&mut self, time: Minutes, kind: EventKind) -> Event {
        let event = Event { time, kind };
        self.report.events.push(event.clone());
        event
    }

    /// Processes the next event. Returns `None` once the run has halted.
    pub fn step(&mut self) -> Result<Option<StepRecord>, SimError> {
        loop {
            if self.halted.is_some() {
                return Ok(None);
            }
            if self.processed >= self.max_events {
                self.halt(HaltReason::EventLimit);
                return Ok(None);
            }
            let Some(next) = self.queue.peek() else {
                self.halt(HaltReason::Exhausted);
                return Ok(None);
            };
            if let StopRule::SimTime(limit) = self.stop {
                if next.0.time > limit {
                    self.halt(HaltReason::SimTime);
                    return Ok(None);
                }
            }
            let Reverse(pending) = self.queue.pop().expect("peeked");
            let time = pending.time;
            self.cluster
                .set_clock(time)
                .map_err(|source| SimError::Cluster { time, source })?;
            self.report.metrics.end_time = time;
            match pending.payload {
                Payload::Expiry(id) => {
                    if self.cancelled.remove(&id) {
                        continue;
                    }
                    self.cluster
                        .remove(&id)
                        .map_err(|source| SimError::Cluster { time, source })?;
                    self.processed += 1;
                    self.report.metrics.expired += 1;
                    let event = self.log(time, EventKind::Expiry { instance_id: id });
                    return Ok(Some(StepRecord {
                        event,
                        arrival: None,
                    }));
                }
                Payload::Arrival(request, duration) => {
                    self.processed += 1;
                    let record = self.arrive(request, duration)?;
                    let event = Event {
                        time,
                        kind: EventKind::Arrival {
                            request_id: record.request_id.clone(),
                        },
                    };
                    return Ok(Some(StepRecord {
                        event,
                        arrival: Some(record),
                    }));
                }
            }
        }
    }

    fn arrive(
        &mut self,
        request: Request,
        duration: Option<Minutes>,
    ) -> Result<ArrivalRecord, SimError> {
        let time = request.arrival_time;
        if let Some(gen) = self.generator.as_mut() {
            let more = match self.stop {
                StopRule::RequestCount(n) => self.report.metrics.requests + 1 < n,
                _ => true,
            };
            if more {
                let next = gen.next().expect("endless generator");
                self.push_arrival(next.request, Some(next.duration));
            }
        }
        self.log(
            time,
            EventKind::Arrival {
                request_id: request.id.clone(),
            },
        );
        self.report.metrics.requests += 1;

        let schedule_err = |source| SimError::Schedule {
            time,
            request: request.id.clone(),
            source: Box::new(source),
        };
        let outcome = self
            .scheduler
            .schedule(self.kind, &request, &self.cluster, &mut self.rng)
            .map_err(schedule_err)?;
        let trigger =
            !request.is_preemptible() && outcome.placement().is_none_or(|p| !p.victims.is_empty());
        let capture_on_trigger = self.stop == StopRule::FirstNormalFailure && trigger;
        if self.replay || capture_on_trigger {
            self.report
                .snapshots
                .push(Snapshot::capture(&self.cluster, &request, &outcome));
        }

        match &outcome {
            ScheduleOutcome::Placed(placement) => {
                let expiring: Vec<bool> = placement
                    .victims
                    .iter()
                    .map(|id| {
                        self.cluster
                            .instance(id)
                            .is_some_and(|i| i.planned_duration.is_some())
                    })
                    .collect();
                let cost_fn: &dyn CostFunction = self.scheduler.cost_fn();
                let terminations =
                    commit_placement(&mut self.cluster, &request, placement, duration, cost_fn)
                        .map_err(schedule_err)?;
                for (ev, has_expiry) in terminations.into_iter().zip(expiring) {
                    if has_expiry {
                        self.cancelled.insert(ev.instance_id.clone());
                    }
                    self.log(
                        time,
                        EventKind::Preemption {
                            instance_id: ev.instance_id.clone(),
                            host: ev.host.clone(),
                        },
                    );
                    self.report.metrics.preempted += 1;
                    self.report.terminations.push(ev);
                }
                if let Some(d) = duration {
                    self.push(
                        time + d,
                        RANK_EXPIRY,
                        Payload::Expiry(InstanceId::new(request.id.clone())),
                    );
                }
                self.report.metrics.placed += 1;
                if !placement.victims.is_empty() {
                    self.report.metrics.placed_with_eviction += 1;
                }
            }
            ScheduleOutcome::NoValidHost => match request.kind {
                InstanceKind::Normal => self.report.metrics.failed_normal += 1,
                InstanceKind::Preemptible => self.report.metrics.failed_preemptible += 1,
            },
        }

        let record = ArrivalRecord {
            time,
            request_id: request.id.clone(),
            kind: request.kind,
            flavor: request.flavor.name.clone(),
            outcome,
        };
        self.report.arrivals.push(record.clone());

        if capture_on_trigger {
            self.halt(HaltReason::FirstNormalFailure);
        } else if let StopRule::RequestCount(n) = self.stop {
            if self.report.metrics.requests >= n {
                self.halt(HaltReason::RequestCount);
            }
        }
        Ok(record)
    }

    /// Runs until a stop rule fires or the queue is empty.
    pub fn run_to_end(mut self) -> Result<RunReport, SimError> {
        while self.step()?.is_some() {}
        Ok(self.report)
    }

    pub fn into_report(self) -> RunReport {
        self.report
    }
}

pub fn run(scenario: &Scenario) -> Result<RunReport, SimError> {
    Simulation::new(scenario)?.run_to_end()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(json: &str) -> Scenario {
        Scenario::from_json(json).unwrap()
    }

    #[test]
    fn empty_snapshot_renders_header_only() {
        let cluster = Cluster::standard(2);
        let request = Request::new(
            "r",
            crate::FlavorCatalog::standard()
                .lookup("small")
                .unwrap()
                .clone(),
            InstanceKind::Normal,
            0,
        );
        let snap = Snapshot::capture(&cluster, &request, &ScheduleOutcome::NoValidHost);
        assert_eq!(
            render_snapshot(&snap),
            "Host  Kind  ID  Time  Size  Victim\n"
        );
    }

    #[test]
    fn expiry_before_arrival_at_equal_time() {
        // One small host; the preload expires at +5 exactly when the request arrives.
        let s = scenario(
            r#"{
            "hosts": [{"id": "h", "vcpus": 1, "ram_mb": 2000}],
            "flavors": [{"name": "small", "vcpus": 1, "ram_mb": 2000}],
            "instances": [{"id": "old", "host": "h", "flavor": "small", "kind": "normal", "run_time_min": 10, "remaining_min": 5}],
            "workload": {"type": "scripted", "requests": [{"id": "new", "flavor": "small", "kind": "normal", "arrival_min": 5}]},
            "stop": {"request_count": 1}
        }"#,
        );
        let report = run(&s).unwrap();
        assert_eq!(report.metrics.placed, 1);
        assert_eq!(report.metrics.expired, 1);
        assert_eq!(
            report.events,
            vec![
                Event {
                    time: 15,
                    kind: EventKind::Expiry {
                        instance_id: "old".into()
                    }
                },
                Event {
                    time: 15,
                    kind: EventKind::Arrival {
                        request_id: "new".into()
                    }
                },
            ]
        );
    }

    #[test]
    fn preemption_cancels_expiry() {
        let s = scenario(
            r#"{
            "hosts": [{"id": "h", "vcpus": 1, "ram_mb": 2000}],
            "flavors": [{"name": "small", "vcpus": 1, "ram_mb": 2000}],
            "instances": [{"id": "p", "host": "h", "flavor": "small", "kind": "preemptible", "run_time_min": 61, "remaining_min": 20}],
            "workload": {"type": "scripted", "requests": [
                {"id": "n", "flavor": "small", "kind": "normal", "arrival_min": 1, "duration_min": 100}
            ]},
            "stop": {"sim_time": 1000}
        }"#,
        );
        let report = run(&s).unwrap();
        assert_eq!(report.halt, HaltReason::Exhausted);
        assert_eq!(report.metrics.preempted, 1);
        assert_eq!(
            report.metrics.expired, 1,
            "only the normal instance expires"
        );
        assert_eq!(
            report.events[1],
            Event {
                time: 62,
                kind: EventKind::Preemption {
                    instance_id: "p".into(),
                    host: "h".into()
                }
            }
        );
        assert_eq!(report.terminations[0].cost, 2.0);
        assert_eq!(
            report.terminations_csv(),
            "time,instance_id,host,run_time_min,cost\n62,p,h,62,2.0\n"
        );
    }

    #[test]
    fn first_normal_failure_captures_and_halts() {
        let s = scenario(
            r#"{
            "hosts": [{"id": "h", "vcpus": 2, "ram_mb": 4000}],
            "flavors": [{"name": "small", "vcpus": 1, "ram_mb": 2000}],
            "workload": {"type": "scripted", "requests": [
                {"id": "a", "flavor": "small", "kind": "preemptible", "arrival_min": 0},
                {"id": "b", "flavor": "small", "kind": "normal", "arrival_min": 1},
                {"id": "c", "flavor": "small", "kind": "normal", "arrival_min": 2},
                {"id": "d", "flavor": "small", "kind": "normal", "arrival_min": 3}
            ]}
        }"#,
        );
        let report = run(&s).unwrap();
        assert_eq!(report.halt, HaltReason::FirstNormalFailure);
        assert_eq!(report.metrics.requests, 3);
        assert_eq!(report.snapshots.len(), 1);
        let snap = &report.snapshots[0];
        assert_eq!(snap.request.id, "c");
        assert_eq!(snap.victims, vec![InstanceId::from("a")]);
        assert_eq!(snap.hosts[0].preemptible.len(), 1);
        let table = render_snapshot(snap);
        assert!(
            table
                .lines()
                .any(|l| l.starts_with("h     preemptible  a") && l.ends_with('*')),
            "{table}"
        );
    }

    #[test]
    fn generated_run_is_reproducible() {
        let doc = r#"{
            "hosts": [{"id": "h0", "vcpus": 8, "ram_mb": 16000}, {"id": "h1", "vcpus": 8, "ram_mb": 16000}],
            "workload": {"type": "generated", "seed": 11, "flavors": ["small", "medium"]},
            "stop": {"request_count": 300}
        }"#;
        let a = run(&scenario(doc)).unwrap();
        let b = run(&scenario(doc)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.metrics.requests, 300);
        assert_eq!(a.halt, HaltReason::RequestCount);
        let times: Vec<_> = a.events.iter().map(|e| e.time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn event_limit_halts() {
        let doc = r#"{
            "hosts": [{"id": "h0", "vcpus": 8, "ram_mb": 16000}],
            "workload": {"type": "generated", "seed": 1, "preemptible_fraction": 1.0},
            "stop": "first_normal_failure",
            "max_events": 50
        }"#;
        let report = run(&scenario(doc)).unwrap();
        assert_eq!(report.halt, HaltReason::EventLimit);
    }
}
