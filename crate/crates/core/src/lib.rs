//! Preemptible-instance aware cloud scheduling.
//!
//! The crate models a cluster of hosts running normal and preemptible
//! instances, schedules new requests with a filter-and-weigh pipeline that
//! can reclaim capacity from preemptibles, and replays or generates
//! workloads in a deterministic discrete-event simulator.

pub mod bench;
pub mod cluster;
pub mod reaper;
pub mod replay;
pub mod resources;
pub mod scenario;
pub mod scheduler;
pub mod simulator;
pub mod weighers;
pub mod workload;

pub use cluster::{
    CapacityView, Cluster, ClusterError, HostId, HostSpec, Instance, InstanceId, InstanceKind,
    Minutes, ViewMode,
};
pub use reaper::{CostFunction, PartialHourCost, TerminationEvent, VictimSelection};
pub use resources::{Flavor, FlavorCatalog, ResourceVector};
pub use scenario::{Scenario, ScenarioError, StopRule};
pub use scheduler::{Placement, Request, ScheduleOutcome, Scheduler, SchedulerKind, TieBreak};
pub use simulator::{run, RunReport, SimError, Simulation};
pub use weighers::{WeigherConfig, WeigherSpec};
