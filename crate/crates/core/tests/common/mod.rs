//! Seeded generators shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use preemptsched::scenario::Scenario;
use preemptsched::{
    Cluster, Flavor, FlavorCatalog, HostId, HostSpec, Instance, InstanceKind, Request,
    ResourceVector,
};
use rand::Rng;

pub const CLOCK: u64 = 600;

pub fn flavor(catalog: &FlavorCatalog, name: &str) -> Flavor {
    catalog.lookup(name).unwrap().clone()
}

fn random_flavor<R: Rng>(rng: &mut R, catalog: &FlavorCatalog) -> Flavor {
    let all: Vec<_> = catalog.iter().cloned().collect();
    all[rng.random_range(0..all.len())].clone()
}

fn instance(
    id: String,
    flavor: Flavor,
    kind: InstanceKind,
    host: &HostId,
    run_time: u64,
) -> Instance {
    Instance {
        id: id.as_str().into(),
        flavor,
        kind,
        host: host.clone(),
        start_time: CLOCK - run_time,
        planned_duration: None,
    }
}

/// One roomy host with up to `max_preemptibles` preemptibles of mixed sizes,
/// a few normals, and a demand of one or two flavors' worth of resources.
pub fn random_host<R: Rng>(
    rng: &mut R,
    max_preemptibles: usize,
) -> (Cluster, HostId, ResourceVector) {
    let catalog = FlavorCatalog::standard();
    let capacity = ResourceVector::new(
        rng.random_range(8..=48),
        rng.random_range(8..=48) * 2000,
        rng.random_range(100..=1000),
    );
    let host = HostId::new("h");
    let mut cluster = Cluster::new([HostSpec::new("h", capacity)]).unwrap();
    cluster.set_clock(CLOCK).unwrap();
    for i in 0..rng.random_range(0..=3) {
        let inst = instance(
            format!("n{i:02}"),
            random_flavor(rng, &catalog),
            InstanceKind::Normal,
            &host,
            rng.random_range(0..=CLOCK),
        );
        let _ = cluster.place(inst);
    }
    let target = rng.random_range(0..=max_preemptibles);
    for i in 0..target {
        let inst = instance(
            format!("p{i:02}"),
            random_flavor(rng, &catalog),
            InstanceKind::Preemptible,
            &host,
            rng.random_range(0..=CLOCK),
        );
        let _ = cluster.place(inst);
    }
    let mut demand = random_flavor(rng, &catalog).resources();
    if rng.random_bool(0.5) {
        demand += random_flavor(rng, &catalog).resources();
    }
    (cluster, host, demand)
}

/// Standard hosts partly filled with random residents, plus a random request.
pub fn random_cluster<R: Rng>(rng: &mut R) -> (Cluster, Request) {
    let catalog = if rng.random_bool(0.5) {
        FlavorCatalog::standard_diskless()
    } else {
        FlavorCatalog::standard()
    };
    let mut cluster = Cluster::standard(rng.random_range(1..=8));
    cluster.set_clock(CLOCK).unwrap();
    let hosts: Vec<HostId> = cluster.hosts().map(|h| h.id.clone()).collect();
    let attempts = rng.random_range(0..=hosts.len() * 6);
    for i in 0..attempts {
        let host = &hosts[rng.random_range(0..hosts.len())];
        let kind = if rng.random_bool(0.6) {
            InstanceKind::Preemptible
        } else {
            InstanceKind::Normal
        };
        let inst = instance(
            format!("i{i:03}"),
            random_flavor(rng, &catalog),
            kind,
            host,
            rng.random_range(0..=CLOCK),
        );
        let _ = cluster.place(inst);
    }
    let kind = if rng.random_bool(0.7) {
        InstanceKind::Normal
    } else {
        InstanceKind::Preemptible
    };
    let request = Request::new("req", random_flavor(rng, &catalog), kind, CLOCK);
    (cluster, request)
}

/// A generated workload on `hosts` standard hosts that keeps the cluster
/// near saturation.
pub fn busy_scenario(hosts: usize, scheduler: &str, seed: u64, max_events: u64) -> Scenario {
    let host_list: Vec<String> = (0..hosts)
        .map(|i| format!(r#"{{"id": "host-{i}", "vcpus": 8, "ram_mb": 16000, "disk_gb": 140}}"#))
        .collect();
    let doc = format!(
        r#"{{
        "hosts": [{}],
        "workload": {{"type": "generated", "seed": {seed}, "preemptible_fraction": 0.5,
                     "mean_duration_min": 60, "arrival": {{"process": "poisson", "rate_per_min": {rate}}}}},
        "stop": {{"request_count": 1000000000}},
        "scheduler": "{scheduler}",
        "seed": {seed},
        "max_events": {max_events}
    }}"#,
        host_list.join(","),
        rate = hosts as f64 * 0.08,
    );
    Scenario::from_json(&doc).unwrap()
}
