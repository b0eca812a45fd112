//! Wall-clock latency of single scheduling decisions.
//!
//! Every cell times `calls` decisions against a fixed cluster after
//! `warmup` untimed ones. Placements are never committed, so each call sees
//! the same state.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::{Cluster, Instance, InstanceKind};
use crate::resources::{Flavor, FlavorCatalog};
use crate::scheduler::{Request, Scheduler, SchedulerKind, TieBreak};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub hosts: usize,
    pub calls: usize,
    pub warmup: usize,
    pub seed: u64,
    pub tie_break: TieBreak,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            hosts: 24,
            calls: 130,
            warmup: 10,
            seed: 0,
            tie_break: TieBreak::SeededRandom,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: String,
    pub scheduler: String,
    pub sample_count: usize,
    pub mean_us: f64,
    pub stddev_us: f64,
}

impl BenchResult {
    /// Sample standard deviation; zero for a single sample.
    pub fn from_samples(scenario: &str, scheduler: &str, samples_us: &[f64]) -> Self {
        assert!(!samples_us.is_empty(), "at least one sample");
        let n = samples_us.len() as f64;
        let mean = samples_us.iter().sum::<f64>() / n;
        let stddev = if samples_us.len() > 1 {
            (samples_us.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        BenchResult {
            scenario: scenario.to_string(),
            scheduler: scheduler.to_string(),
            sample_count: samples_us.len(),
            mean_us: mean,
            stddev_us: stddev,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchScenario {
    NormalEmpty,
    PreemptibleEmpty,
    /// Every host holds four preemptible mediums; each normal medium request
    /// needs exactly one eviction.
    Saturated,
}

impl BenchScenario {
    pub fn label(self) -> &'static str {
        match self {
            BenchScenario::NormalEmpty => "normal-empty",
            BenchScenario::PreemptibleEmpty => "preemptible-empty",
            BenchScenario::Saturated => "saturated",
        }
    }

    fn request_kind(self) -> InstanceKind {
        match self {
            BenchScenario::PreemptibleEmpty => InstanceKind::Preemptible,
            _ => InstanceKind::Normal,
        }
    }
}

/// The seven (scheduler, scenario) cells, in report order.
pub const CELLS: [(SchedulerKind, BenchScenario); 7] = [
    (SchedulerKind::Baseline, BenchScenario::NormalEmpty),
    (SchedulerKind::PreemptibleAware, BenchScenario::NormalEmpty),
    (
        SchedulerKind::PreemptibleAware,
        BenchScenario::PreemptibleEmpty,
    ),
    (SchedulerKind::PreemptibleAware, BenchScenario::Saturated),
    (SchedulerKind::Retry, BenchScenario::NormalEmpty),
    (SchedulerKind::Retry, BenchScenario::PreemptibleEmpty),
    (SchedulerKind::Retry, BenchScenario::Saturated),
];

fn cell_label(kind: SchedulerKind, scenario: BenchScenario) -> &'static str {
    match (kind, scenario) {
        (SchedulerKind::Baseline, _) => "empty",
        _ => scenario.label(),
    }
}

fn medium() -> Flavor {
    FlavorCatalog::standard_diskless()
        .lookup("medium")
        .expect("standard flavor")
        .clone()
}

/// `hosts` standard hosts, each filled with four preemptible mediums whose
/// run times are drawn from 1..=600 minutes.
pub fn saturated_cluster(hosts: usize, seed: u64) -> Cluster {
    let mut cluster = Cluster::standard(hosts);
    let origin = 600;
    cluster.set_clock(origin).expect("fresh clock");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flavor = medium();
    let host_ids: Vec<_> = cluster.hosts().map(|h| h.id.clone()).collect();
    for host in host_ids {
        for slot in 0..4 {
            let run_time = rng.random_range(1..=origin);
            cluster
                .place(Instance {
                    id: format!("{host}-p{slot}").as_str().into(),
                    flavor: flavor.clone(),
                    kind: InstanceKind::Preemptible,
                    host: host.clone(),
                    start_time: origin - run_time,
                    planned_duration: None,
                })
                .expect("four mediums fit a standard host");
        }
    }
    cluster
}

fn cluster_for(scenario: BenchScenario, cfg: &BenchConfig) -> Cluster {
    match scenario {
        BenchScenario::Saturated => saturated_cluster(cfg.hosts, cfg.seed),
        _ => Cluster::standard(cfg.hosts),
    }
}

/// Times `calls` invocations of `f` after `warmup` untimed ones, in µs.
pub fn time_calls<T>(warmup: usize, calls: usize, mut f: impl FnMut() -> T) -> Vec<f64> {
    for _ in 0..warmup {
        black_box(f());
    }
    (0..calls)
        .map(|_| {
            let start = Instant::now();
            black_box(f());
            start.elapsed().as_secs_f64() * 1e6
        })
        .collect()
}

pub fn run_cell(kind: SchedulerKind, scenario: BenchScenario, cfg: &BenchConfig) -> BenchResult {
    let cluster = cluster_for(scenario, cfg);
    let scheduler = Scheduler::default().with_tie_break(cfg.tie_break);
    let request = Request::new("bench", medium(), scenario.request_kind(), cluster.clock());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples = time_calls(cfg.warmup, cfg.calls.max(1), || {
        scheduler
            .schedule(kind, black_box(&request), black_box(&cluster), &mut rng)
            .expect("bench scheduling succeeds")
    });
    BenchResult::from_samples(cell_label(kind, scenario), &kind.to_string(), &samples)
}

pub fn run_bench(cfg: &BenchConfig) -> Vec<BenchResult> {
    CELLS.iter().map(|&(k, s)| run_cell(k, s, cfg)).collect()
}

/// All cells at once on separate threads. Timer interference makes these
/// numbers unsuitable for comparison.
pub fn run_bench_parallel(cfg: &BenchConfig) -> Vec<BenchResult> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = CELLS
            .iter()
            .map(|&(k, s)| scope.spawn(move || run_cell(k, s, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench thread"))
            .collect()
    })
}

/// Times a call that does nothing, to bound harness overhead.
pub fn calibrate(cfg: &BenchConfig) -> BenchResult {
    let samples = time_calls(cfg.warmup, cfg.calls.max(1), || ());
    BenchResult::from_samples("calibration", "none", &samples)
}

pub fn to_csv(results: &[BenchResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn from_csv(text: &str) -> Result<Vec<BenchResult>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect()
}

pub fn render_table(results: &[BenchResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:<18} {:>7} {:>12} {:>12}",
        "scheduler", "scenario", "samples", "mean_us", "stddev_us"
    );
    for r in results {
        let _ = writeln!(
            out,
            "{:<10} {:<18} {:>7} {:>12.3} {:>12.3}",
            r.scheduler, r.scenario, r.sample_count, r.mean_us, r.stddev_us
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ViewMode;
    use crate::scheduler::ScheduleOutcome;

    #[test]
    fn sample_statistics() {
        let r = BenchResult::from_samples("s", "x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(r.mean_us, 2.5);
        assert!((r.stddev_us - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(BenchResult::from_samples("s", "x", &[7.0]).stddev_us, 0.0);
    }

    #[test]
    fn saturated_cluster_forces_one_eviction() {
        let c = saturated_cluster(24, 3);
        c.check_invariants().unwrap();
        for v in c.views(ViewMode::Full) {
            assert_eq!((v.free.vcpus, v.free.ram_mb), (0, 0));
        }
        let req = Request::new("r", medium(), InstanceKind::Normal, c.clock());
        let s = Scheduler::default();
        for kind in [SchedulerKind::PreemptibleAware, SchedulerKind::Retry] {
            match s
                .schedule(kind, &req, &c, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap()
            {
                ScheduleOutcome::Placed(p) => assert_eq!(p.victims.len(), 1),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn seven_cells_with_requested_sample_count() {
        let cfg = BenchConfig {
            hosts: 4,
            calls: 5,
            warmup: 1,
            ..BenchConfig::default()
        };
        let rows = run_bench(&cfg);
        let labels: Vec<_> = rows
            .iter()
            .map(|r| format!("{}/{}", r.scheduler, r.scenario))
            .collect();
        assert_eq!(
            labels,
            [
                "baseline/empty",
                "aware/normal-empty",
                "aware/preemptible-empty",
                "aware/saturated",
                "retry/normal-empty",
                "retry/preemptible-empty",
                "retry/saturated"
            ]
        );
        assert!(rows
            .iter()
            .all(|r| r.sample_count == 5 && r.stddev_us >= 0.0));
        assert_eq!(run_bench_parallel(&cfg).len(), 7);
        let table = render_table(&rows);
        assert_eq!(table.lines().count(), 8);
    }

    #[test]
    fn csv_round_trips() {
        let rows = vec![
            BenchResult::from_samples("empty", "baseline", &[1.25, 0.1 + 0.2, 3.0]),
            BenchResult::from_samples("saturated", "retry", &[1e-9, 12345.678]),
        ];
        assert_eq!(from_csv(&to_csv(&rows)).unwrap(), rows);
    }
}
