//! Bundled evaluation snapshots and the expected victim sets for each.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::cluster::InstanceId;
use crate::scenario::{Scenario, ScenarioError};
use crate::scheduler::ScheduleOutcome;
use crate::simulator::{self, RunReport, SimError};

pub const FIXTURE_NAMES: [&str; 4] = ["test1", "test2", "test3", "test4"];

const BUNDLED: [&str; 4] = [
    include_str!("../fixtures/test1.json"),
    include_str!("../fixtures/test2.json"),
    include_str!("../fixtures/test3.json"),
    include_str!("../fixtures/test4.json"),
];

/// (host, victims, victim cost) each snapshot must produce.
pub const EXPECTED: [(&str, &[&str], f64); 4] = [
    ("host-B", &["BP1"], 11.0),
    ("host-C", &["CP1"], 1.0),
    ("host-A", &["AP2", "AP3", "AP4"], 55.0),
    ("host-B", &["BP3"], 20.0),
];

pub fn bundled_json(name: &str) -> Option<&'static str> {
    FIXTURE_NAMES
        .iter()
        .position(|n| *n == name)
        .map(|i| BUNDLED[i])
}

pub fn bundled_scenarios() -> Vec<(&'static str, Scenario)> {
    FIXTURE_NAMES
        .iter()
        .zip(BUNDLED)
        .map(|(name, text)| {
            (
                *name,
                Scenario::from_json(text).expect("bundled fixture is valid"),
            )
        })
        .collect()
}

/// Loads `test1.json` .. `test4.json` from a directory.
pub fn load_dir(dir: &Path) -> Result<Vec<(&'static str, Scenario)>, ScenarioError> {
    FIXTURE_NAMES
        .iter()
        .map(|name| Scenario::load(dir.join(format!("{name}.json"))).map(|s| (*name, s)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotCheck {
    pub name: String,
    pub expected_host: String,
    pub expected_victims: Vec<String>,
    pub expected_cost: f64,
    pub host: Option<String>,
    pub victims: Vec<String>,
    pub cost: Option<f64>,
}

impl SnapshotCheck {
    /// Victim ids decide the verdict; they also pin the host.
    pub fn passed(&self) -> bool {
        self.host.is_some() && self.victims == self.expected_victims
    }
}

impl fmt::Display for SnapshotCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "ok  " } else { "FAIL" };
        write!(
            f,
            "{status} {}: expected {} {{{}}} cost {}, got {} {{{}}} cost {}",
            self.name,
            self.expected_host,
            self.expected_victims.join(", "),
            self.expected_cost,
            self.host.as_deref().unwrap_or("NoValidHost"),
            self.victims.join(", "),
            self.cost
                .map(|c| c.to_string())
                .unwrap_or_else(|| "-".into()),
        )
    }
}

pub fn check_one(
    index: usize,
    name: &str,
    scenario: &Scenario,
) -> Result<(SnapshotCheck, RunReport), SimError> {
    let report = simulator::run(scenario)?;
    let (host, victims, cost) = match report.arrivals.first().map(|a| &a.outcome) {
        Some(ScheduleOutcome::Placed(p)) => (
            Some(p.host.to_string()),
            p.victims.iter().map(InstanceId::to_string).collect(),
            Some(p.victim_cost),
        ),
        _ => (None, Vec::new(), None),
    };
    let (eh, ev, ec) = EXPECTED[index];
    Ok((
        SnapshotCheck {
            name: name.to_string(),
            expected_host: eh.to_string(),
            expected_victims: ev.iter().map(|s| s.to_string()).collect(),
            expected_cost: ec,
            host,
            victims,
            cost,
        },
        report,
    ))
}

/// Runs every snapshot and compares against [`EXPECTED`].
pub fn check_all(scenarios: &[(&str, Scenario)]) -> Result<Vec<SnapshotCheck>, SimError> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, (name, s))| check_one(i, name, s).map(|(c, _)| c))
        .collect()
}
