//! Scenario documents: the JSON world description consumed by the
//! simulator and the CLI.
//!
//! ```json
//! {
//!   "hosts": [{"id": "host-A", "vcpus": 8, "ram_mb": 16000, "disk_gb": 140}],
//!   "flavors": [{"name": "medium", "vcpus": 2, "ram_mb": 4000, "disk_gb": 0}],
//!   "instances": [{"id": "AP1", "host": "host-A", "flavor": "medium",
//!                  "kind": "preemptible", "run_time_min": 96}],
//!   "request": {"flavor": "medium", "kind": "normal"},
//!   "scheduler": "preemptible_aware",
//!   "weighers": [{"name": "overcommit", "multiplier": 1.0}],
//!   "cost_fn": "partial_hour"
//! }
//! ```
//!
//! `workload`, `stop`, `tie_break`, `seed` and `max_events` are optional.
//! Without a `workload` the document is a replay of its single `request`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{Cluster, HostSpec, Instance, InstanceId, InstanceKind, Minutes};
use crate::reaper::cost_function_by_name;
use crate::resources::{Flavor, FlavorCatalog, ResourceVector};
use crate::scheduler::{ResourceFitFilter, Scheduler, SchedulerKind, TieBreak};
use crate::weighers::{WeigherConfig, WeigherSpec};
use crate::workload::{ArrivalProcess, WorkloadParams};

pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostDoc {
    pub id: String,
    pub vcpus: i64,
    pub ram_mb: i64,
    #[serde(default)]
    pub disk_gb: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub id: String,
    pub host: String,
    pub flavor: String,
    pub kind: InstanceKind,
    pub run_time_min: Minutes,
    /// Minutes left before the instance ends on its own. Absent means it
    /// runs until terminated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_min: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub flavor: String,
    pub kind: InstanceKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalDoc {
    Fixed { interval_min: Minutes },
    Poisson { rate_per_min: f64 },
}

impl Default for ArrivalDoc {
    fn default() -> Self {
        ArrivalDoc::Fixed { interval_min: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedRequestDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub flavor: String,
    pub kind: InstanceKind,
    pub arrival_min: Minutes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_min: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WorkloadDoc {
    Generated {
        seed: u64,
        #[serde(default = "default_fraction")]
        preemptible_fraction: f64,
        #[serde(default = "default_mean")]
        mean_duration_min: f64,
        #[serde(default)]
        arrival: ArrivalDoc,
        /// Flavor names drawn uniformly; all catalog flavors when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flavors: Option<Vec<String>>,
    },
    Replay,
    Scripted {
        requests: Vec<ScriptedRequestDoc>,
    },
}

fn default_fraction() -> f64 {
    0.5
}

fn default_mean() -> f64 {
    60.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Halt at the first normal arrival that cannot be served from free
    /// capacity alone.
    FirstNormalFailure,
    RequestCount(u64),
    SimTime(Minutes),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub hosts: Vec<HostDoc>,
    #[serde(default)]
    pub flavors: Vec<Flavor>,
    #[serde(default)]
    pub instances: Vec<InstanceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workload: Option<WorkloadDoc>,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighers: Option<Vec<WeigherConfig>>,
    #[serde(default = "default_cost_fn")]
    pub cost_fn: String,
    #[serde(default)]
    pub tie_break: TieBreak,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

fn default_scheduler() -> SchedulerKind {
    SchedulerKind::PreemptibleAware
}

fn default_cost_fn() -> String {
    "partial_hour".into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreloadInstance {
    pub id: InstanceId,
    pub host: String,
    pub flavor: Flavor,
    pub kind: InstanceKind,
    pub run_time: Minutes,
    pub remaining: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedRequest {
    pub id: String,
    pub flavor: Flavor,
    pub kind: InstanceKind,
    pub arrival: Minutes,
    pub duration: Option<Minutes>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Workload {
    Generated { seed: u64, params: WorkloadParams },
    Replay(ScriptedRequest),
    Scripted(Vec<ScriptedRequest>),
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub hosts: Vec<HostSpec>,
    pub flavors: FlavorCatalog,
    pub preload: Vec<PreloadInstance>,
    pub workload: Workload,
    pub scheduler: SchedulerKind,
    pub stop: StopRule,
    pub weighers: Vec<WeigherSpec>,
    pub cost_fn: String,
    pub tie_break: TieBreak,
    /// Seed for tie-breaking.
    pub seed: u64,
    pub max_events: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let doc: ScenarioDoc = serde_json::from_str(text)?;
        Self::from_doc(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_doc(doc: ScenarioDoc) -> Result<Self, ScenarioError> {
        let flavors = if doc.flavors.is_empty() {
            FlavorCatalog::standard()
        } else {
            FlavorCatalog::new(doc.flavors.iter().cloned()).map_err(|e| invalid("flavors", e))?
        };

        let mut hosts = Vec::with_capacity(doc.hosts.len());
        for (i, h) in doc.hosts.iter().enumerate() {
            if h.vcpus <= 0 || h.ram_mb <= 0 || h.disk_gb < 0 {
                return Err(invalid(
                    format!("hosts[{i}]"),
                    format!("host `{}` needs positive vcpus and ram_mb", h.id),
                ));
            }
            hosts.push(HostSpec::new(
                h.id.clone(),
                ResourceVector::new(h.vcpus, h.ram_mb, h.disk_gb),
            ));
        }
        if hosts.is_empty() {
            return Err(invalid("hosts", "at least one host is required"));
        }

        let flavor = |field: String, name: &str| {
            flavors.lookup(name).cloned().map_err(|e| invalid(field, e))
        };

        let mut preload = Vec::with_capacity(doc.instances.len());
        for (i, inst) in doc.instances.iter().enumerate() {
            preload.push(PreloadInstance {
                id: InstanceId::new(inst.id.clone()),
                host: inst.host.clone(),
                flavor: flavor(format!("instances[{i}].flavor"), &inst.flavor)?,
                kind: inst.kind,
                run_time: inst.run_time_min,
                remaining: match inst.remaining_min {
                    Some(0) => {
                        return Err(invalid(
                            format!("instances[{i}].remaining_min"),
                            "must be positive",
                        ))
                    }
                    r => r,
                },
            });
        }

        let replay_request = |r: &RequestDoc| -> Result<ScriptedRequest, ScenarioError> {
            Ok(ScriptedRequest {
                id: r.id.clone().unwrap_or_else(|| "request".into()),
                flavor: flavor("request.flavor".into(), &r.flavor)?,
                kind: r.kind,
                arrival: 0,
                duration: None,
            })
        };

        let workload = match (&doc.workload, &doc.request) {
            (None, Some(r)) | (Some(WorkloadDoc::Replay), Some(r)) => {
                Workload::Replay(replay_request(r)?)
            }
            (None, None) | (Some(WorkloadDoc::Replay), None) => {
                return Err(invalid("request", "a replay scenario needs a request"));
            }
            (
                Some(WorkloadDoc::Generated {
                    seed,
                    preemptible_fraction,
                    mean_duration_min,
                    arrival,
                    flavors: names,
                }),
                _,
            ) => {
                let chosen = match names {
                    Some(names) => names
                        .iter()
                        .enumerate()
                        .map(|(i, n)| flavor(format!("workload.flavors[{i}]"), n))
                        .collect::<Result<Vec<_>, _>>()?,
                    None => flavors.iter().cloned().collect(),
                };
                let params = WorkloadParams {
                    preemptible_fraction: *preemptible_fraction,
                    mean_duration_min: *mean_duration_min,
                    arrival: match *arrival {
                        ArrivalDoc::Fixed { interval_min } => {
                            ArrivalProcess::Fixed { interval_min }
                        }
                        ArrivalDoc::Poisson { rate_per_min } => {
                            ArrivalProcess::Poisson { rate_per_min }
                        }
                    },
                    flavors: chosen,
                    ..WorkloadParams::default()
                };
                params.validate().map_err(|e| invalid("workload", e))?;
                Workload::Generated {
                    seed: *seed,
                    params,
                }
            }
            (Some(WorkloadDoc::Scripted { requests }), _) => {
                let mut out = Vec::with_capacity(requests.len());
                for (i, r) in requests.iter().enumerate() {
                    if r.duration_min == Some(0) {
                        return Err(invalid(
                            format!("workload.requests[{i}].duration_min"),
                            "must be positive",
                        ));
                    }
                    out.push(ScriptedRequest {
                        id: r.id.clone().unwrap_or_else(|| format!("r{i}")),
                        flavor: flavor(format!("workload.requests[{i}].flavor"), &r.flavor)?,
                        kind: r.kind,
                        arrival: r.arrival_min,
                        duration: r.duration_min,
                    });
                }
                Workload::Scripted(out)
            }
        };

        let weighers = match &doc.weighers {
            None => crate::weighers::default_stack(),
            Some(list) if list.is_empty() => {
                return Err(invalid("weighers", "at least one weigher is required"))
            }
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    WeigherSpec::from_config(w).map_err(|e| invalid(format!("weighers[{i}]"), e))
                })
                .collect::<Result<_, _>>()?,
        };
        if cost_function_by_name(&doc.cost_fn).is_none() {
            return Err(invalid(
                "cost_fn",
                format!("unknown cost function `{}`", doc.cost_fn),
            ));
        }

        let seed = doc.seed.unwrap_or(match &workload {
            Workload::Generated { seed, .. } => *seed,
            _ => 0,
        });

        let scenario = Scenario {
            hosts,
            flavors,
            preload,
            workload,
            scheduler: doc.scheduler,
            stop: doc.stop.unwrap_or(StopRule::FirstNormalFailure),
            weighers,
            cost_fn: doc.cost_fn,
            tie_break: doc.tie_break,
            seed,
            max_events: doc.max_events.unwrap_or(DEFAULT_MAX_EVENTS),
        };
        // Surfaces duplicate hosts and over-full preloads with the offending field.
        scenario.build_cluster()?;
        Ok(scenario)
    }

    /// Clock origin: the longest preload run time, so every preload start
    /// time is non-negative.
    pub fn origin(&self) -> Minutes {
        self.preload.iter().map(|p| p.run_time).max().unwrap_or(0)
    }

    /// Cluster at the origin with every preload instance placed.
    pub fn build_cluster(&self) -> Result<Cluster, ScenarioError> {
        let mut cluster =
            Cluster::new(self.hosts.iter().cloned()).map_err(|e| invalid("hosts", e))?;
        let origin = self.origin();
        cluster
            .set_clock(origin)
            .map_err(|e| invalid("instances", e))?;
        for (i, p) in self.preload.iter().enumerate() {
            cluster
                .place(Instance {
                    id: p.id.clone(),
                    flavor: p.flavor.clone(),
                    kind: p.kind,
                    host: p.host.as_str().into(),
                    start_time: origin - p.run_time,
                    planned_duration: p.remaining.map(|r| p.run_time + r),
                })
                .map_err(|e| invalid(format!("instances[{i}]"), e))?;
        }
        Ok(cluster)
    }

    pub fn build_scheduler(&self) -> Result<Scheduler, ScenarioError> {
        let cost_fn = cost_function_by_name(&self.cost_fn).ok_or_else(|| {
            invalid(
                "cost_fn",
                format!("unknown cost function `{}`", self.cost_fn),
            )
        })?;
        Scheduler::new(
            vec![Arc::new(ResourceFitFilter)],
            self.weighers.clone(),
            Arc::from(cost_fn),
            self.tie_break,
        )
        .map_err(|e| invalid("weighers", e))
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.workload, Workload::Replay(_))
    }

    /// Replaces the tie-break seed and, for generated workloads, the
    /// workload seed.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        if let Workload::Generated { seed: s, .. } = &mut self.workload {
            *s = seed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "hosts": [{"id": "h", "vcpus": 8, "ram_mb": 16000, "disk_gb": 140}],
        "instances": [{"id": "p", "host": "h", "flavor": "medium", "kind": "preemptible", "run_time_min": 71}],
        "request": {"flavor": "medium", "kind": "normal"}
    }"#;

    #[test]
    fn minimal_replay_document() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert!(s.is_replay());
        assert_eq!(s.scheduler, SchedulerKind::PreemptibleAware);
        assert_eq!(s.stop, StopRule::FirstNormalFailure);
        assert_eq!(s.weighers.len(), 2);
        let c = s.build_cluster().unwrap();
        assert_eq!(c.clock(), 71);
        assert_eq!(c.instance(&"p".into()).unwrap().run_time(c.clock()), 71);
    }

    #[test]
    fn errors_name_the_field() {
        let bad_host = MINIMAL.replace(r#""host": "h""#, r#""host": "zz""#);
        let err = Scenario::from_json(&bad_host).unwrap_err().to_string();
        assert!(err.contains("instances[0]"), "{err}");

        let bad_flavor = MINIMAL.replace(
            r#""flavor": "medium", "kind": "normal""#,
            r#""flavor": "huge", "kind": "normal""#,
        );
        let err = Scenario::from_json(&bad_flavor).unwrap_err().to_string();
        assert!(err.contains("request.flavor"), "{err}");

        let missing = MINIMAL.replace(r#""vcpus": 8, "#, "");
        let err = Scenario::from_json(&missing).unwrap_err().to_string();
        assert!(err.contains("vcpus"), "{err}");

        let unknown = MINIMAL.replace(r#""disk_gb": 140"#, r#""disk_gb": 140, "gpus": 1"#);
        let err = Scenario::from_json(&unknown).unwrap_err().to_string();
        assert!(err.contains("gpus"), "{err}");

        let weigher = MINIMAL.replacen(
            r#""request""#,
            r#""weighers": [{"name": "ram"}], "request""#,
            1,
        );
        let err = Scenario::from_json(&weigher).unwrap_err().to_string();
        assert!(err.contains("weighers[0]"), "{err}");
    }

    #[test]
    fn overfull_preload_rejected() {
        let doc = r#"{
            "hosts": [{"id": "h", "vcpus": 2, "ram_mb": 4000}],
            "flavors": [{"name": "medium", "vcpus": 2, "ram_mb": 4000}],
            "instances": [
                {"id": "a", "host": "h", "flavor": "medium", "kind": "normal", "run_time_min": 1},
                {"id": "b", "host": "h", "flavor": "medium", "kind": "preemptible", "run_time_min": 1}
            ],
            "request": {"flavor": "medium", "kind": "normal"}
        }"#;
        let err = Scenario::from_json(doc).unwrap_err().to_string();
        assert!(err.contains("instances[1]"), "{err}");
    }

    #[test]
    fn generated_and_scripted_workloads_parse() {
        let doc = r#"{
            "hosts": [{"id": "h", "vcpus": 8, "ram_mb": 16000}],
            "workload": {"type": "generated", "seed": 3, "preemptible_fraction": 0.25,
                         "arrival": {"process": "poisson", "rate_per_min": 0.5}, "flavors": ["small"]},
            "stop": {"request_count": 10},
            "scheduler": "retry"
        }"#;
        let s = Scenario::from_json(doc).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.stop, StopRule::RequestCount(10));
        match &s.workload {
            Workload::Generated { params, .. } => {
                assert_eq!(params.flavors.len(), 1);
                assert_eq!(params.mean_duration_min, 60.0);
            }
            other => panic!("{other:?}"),
        }

        let bad = doc.replace("0.25", "1.5");
        assert!(Scenario::from_json(&bad)
            .unwrap_err()
            .to_string()
            .contains("workload"));

        let scripted = r#"{
            "hosts": [{"id": "h", "vcpus": 8, "ram_mb": 16000}],
            "workload": {"type": "scripted", "requests": [
                {"flavor": "small", "kind": "normal", "arrival_min": 0},
                {"id": "x", "flavor": "large", "kind": "preemptible", "arrival_min": 5, "duration_min": 10}
            ]},
            "stop": {"sim_time": 100}
        }"#;
        let s = Scenario::from_json(scripted).unwrap();
        match &s.workload {
            Workload::Scripted(reqs) => {
                assert_eq!(reqs[0].id, "r0");
                assert_eq!(reqs[1].duration, Some(10));
            }
            other => panic!("{other:?}"),
        }
    }
}
