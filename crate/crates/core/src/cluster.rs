//! In-memory hosts, instances and the two capacity views.
//!
//! A host can be looked at in two ways. The Full view charges every resident
//! instance against the host capacity. The NormalOnly view charges only
//! normal instances, so it shows what a normal request could get if every
//! preemptible on the host were terminated. Views are computed on demand from
//! the instance registry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::resources::{Flavor, ResourceVector};

/// Simulated time, in whole minutes.
pub type Minutes = u64;

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

string_id!(HostId);
string_id!(InstanceId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceKind {
    Normal,
    Preemptible,
}

impl InstanceKind {
    pub fn is_preemptible(self) -> bool {
        self == InstanceKind::Preemptible
    }
}

impl fmt::Display for InstanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstanceKind::Normal => "normal",
            InstanceKind::Preemptible => "preemptible",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub flavor: Flavor,
    pub kind: InstanceKind,
    pub host: HostId,
    pub start_time: Minutes,
    /// Known to the simulator only; the scheduler never reads it.
    pub planned_duration: Option<Minutes>,
}

impl Instance {
    pub fn resources(&self) -> ResourceVector {
        self.flavor.resources()
    }

    pub fn run_time(&self, now: Minutes) -> Minutes {
        debug_assert!(now >= self.start_time, "clock behind instance start");
        now.saturating_sub(self.start_time)
    }

    pub fn is_preemptible(&self) -> bool {
        self.kind.is_preemptible()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: HostId,
    pub capacity: ResourceVector,
}

impl HostSpec {
    pub fn new(id: impl Into<String>, capacity: ResourceVector) -> Self {
        HostSpec {
            id: HostId::new(id),
            capacity,
        }
    }

    /// 2x quad core, 16 GB RAM, 140 GB disk.
    pub fn standard(id: impl Into<String>) -> Self {
        Self::new(id, ResourceVector::new(8, 16000, 140))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Every resident instance is charged.
    Full,
    /// Resident preemptibles are ignored.
    NormalOnly,
}

/// A host's free resources under one accounting mode.
#[derive(Clone, Debug)]
pub struct CapacityView<'a> {
    pub host: &'a HostId,
    pub mode: ViewMode,
    pub capacity: ResourceVector,
    pub free: ResourceVector,
    /// Sorted by instance id.
    pub resident_preemptibles: Vec<&'a Instance>,
    /// Cluster clock at the time the view was taken.
    pub now: Minutes,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClusterError {
    #[error("unknown host `{0}`")]
    UnknownHost(HostId),
    #[error("duplicate host `{0}`")]
    DuplicateHost(HostId),
    #[error("host `{0}` must have positive vcpus and ram")]
    EmptyHost(HostId),
    #[error("unknown instance `{0}`")]
    UnknownInstance(InstanceId),
    #[error("duplicate instance `{0}`")]
    DuplicateInstance(InstanceId),
    #[error("instance `{id}` does not fit on `{host}`: free {free}, needs {needs}")]
    InsufficientCapacity {
        id: InstanceId,
        host: HostId,
        free: ResourceVector,
        needs: ResourceVector,
    },
    #[error("instance `{0}` starts after the cluster clock")]
    StartsInFuture(InstanceId),
    #[error("clock cannot move backwards from {from} to {to}")]
    ClockBackwards { from: Minutes, to: Minutes },
    #[error("consistency violation: {0}")]
    Inconsistent(String),
}

#[derive(Clone, Debug)]
struct HostEntry {
    spec: HostSpec,
    residents: BTreeSet<InstanceId>,
}

/// Hosts, the instance registry and the simulated clock.
#[derive(Clone, Debug, Default)]
pub struct Cluster {
    hosts: Vec<HostEntry>,
    index: BTreeMap<HostId, usize>,
    instances: BTreeMap<InstanceId, Instance>,
    clock: Minutes,
}

impl Cluster {
    pub fn new(hosts: impl IntoIterator<Item = HostSpec>) -> Result<Self, ClusterError> {
        let mut cluster = Cluster::default();
        for host in hosts {
            cluster.add_host(host)?;
        }
        Ok(cluster)
    }

    /// `n` standard hosts named `host-0`, `host-1`, ...
    pub fn standard(n: usize) -> Self {
        Self::new((0..n).map(|i| HostSpec::standard(format!("host-{i}")))).unwrap()
    }

    pub fn add_host(&mut self, spec: HostSpec) -> Result<(), ClusterError> {
        if spec.capacity.vcpus <= 0 || spec.capacity.ram_mb <= 0 {
            return Err(ClusterError::EmptyHost(spec.id));
        }
        if self.index.contains_key(&spec.id) {
            return Err(ClusterError::DuplicateHost(spec.id));
        }
        self.index.insert(spec.id.clone(), self.hosts.len());
        self.hosts.push(HostEntry {
            spec,
            residents: BTreeSet::new(),
        });
        Ok(())
    }

    pub fn clock(&self) -> Minutes {
        self.clock
    }

    pub fn set_clock(&mut self, now: Minutes) -> Result<(), ClusterError> {
        if now < self.clock {
            return Err(ClusterError::ClockBackwards {
                from: self.clock,
                to: now,
            });
        }
        self.clock = now;
        Ok(())
    }

    /// Hosts in insertion order.
    pub fn hosts(&self) -> impl ExactSizeIterator<Item = &HostSpec> {
        self.hosts.iter().map(|h| &h.spec)
    }

    pub fn host(&self, id: &HostId) -> Result<&HostSpec, ClusterError> {
        self.entry(id).map(|e| &e.spec)
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&Instance> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.instances.values()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Resident instances of a host, sorted by id.
    pub fn residents(
        &self,
        host: &HostId,
    ) -> Result<impl Iterator<Item = &Instance>, ClusterError> {
        let entry = self.entry(host)?;
        Ok(entry.residents.iter().map(|id| &self.instances[id]))
    }

    pub fn view(&self, host: &HostId, mode: ViewMode) -> Result<CapacityView<'_>, ClusterError> {
        let entry = self.entry(host)?;
        let mut free = entry.spec.capacity;
        let mut resident_preemptibles = Vec::new();
        for id in &entry.residents {
            let instance = &self.instances[id];
            if instance.is_preemptible() {
                resident_preemptibles.push(instance);
                if mode == ViewMode::NormalOnly {
                    continue;
                }
            }
            free -= instance.resources();
        }
        Ok(CapacityView {
            host: &entry.spec.id,
            mode,
            capacity: entry.spec.capacity,
            free,
            resident_preemptibles,
            now: self.clock,
        })
    }

    /// Views of every host, in host order.
    pub fn views(&self, mode: ViewMode) -> Vec<CapacityView<'_>> {
        self.hosts
            .iter()
            .map(|h| self.view(&h.spec.id, mode).expect("indexed host"))
            .collect()
    }

    /// Registers an instance. The host's Full view must stay non-negative.
    pub fn place(&mut self, instance: Instance) -> Result<(), ClusterError> {
        if self.instances.contains_key(&instance.id) {
            return Err(ClusterError::DuplicateInstance(instance.id));
        }
        if instance.start_time > self.clock {
            return Err(ClusterError::StartsInFuture(instance.id));
        }
        let free = self.view(&instance.host, ViewMode::Full)?.free;
        let needs = instance.resources();
        if !needs.fits_in(&free) {
            return Err(ClusterError::InsufficientCapacity {
                id: instance.id,
                host: instance.host,
                free,
                needs,
            });
        }
        let idx = self.index[&instance.host];
        self.hosts[idx].residents.insert(instance.id.clone());
        self.instances.insert(instance.id.clone(), instance);
        Ok(())
    }

    pub fn remove(&mut self, id: &InstanceId) -> Result<Instance, ClusterError> {
        let instance = self
            .instances
            .remove(id)
            .ok_or_else(|| ClusterError::UnknownInstance(id.clone()))?;
        let idx = self.index[&instance.host];
        self.hosts[idx].residents.remove(id);
        Ok(instance)
    }

    /// Checks the registry against the view definitions: every instance
    /// sits on a known host, no Full view is negative, and used capacity
    /// summed over hosts equals the resources of all registered instances.
    pub fn check_invariants(&self) -> Result<(), ClusterError> {
        let mut used_total = ResourceVector::ZERO;
        let mut resident_count = 0;
        for entry in &self.hosts {
            let full = self.view(&entry.spec.id, ViewMode::Full)?;
            let normal = self.view(&entry.spec.id, ViewMode::NormalOnly)?;
            if !full.free.is_non_negative() {
                return Err(ClusterError::Inconsistent(format!(
                    "host `{}` has negative full free {}",
                    entry.spec.id, full.free
                )));
            }
            let preempt: ResourceVector = full
                .resident_preemptibles
                .iter()
                .map(|i| i.resources())
                .sum();
            if normal.free - full.free != preempt {
                return Err(ClusterError::Inconsistent(format!(
                    "host `{}` view gap differs from resident preemptibles",
                    entry.spec.id
                )));
            }
            used_total += entry.spec.capacity - full.free;
            resident_count += entry.residents.len();
        }
        for instance in self.instances.values() {
            let idx = self.index.get(&instance.host).ok_or_else(|| {
                ClusterError::Inconsistent(format!("instance `{}` on unknown host", instance.id))
            })?;
            if !self.hosts[*idx].residents.contains(&instance.id) {
                return Err(ClusterError::Inconsistent(format!(
                    "instance `{}` missing from its host",
                    instance.id
                )));
            }
        }
        let registered: ResourceVector = self.instances.values().map(|i| i.resources()).sum();
        if resident_count != self.instances.len() || used_total != registered {
            return Err(ClusterError::Inconsistent(
                "used capacity does not match registered instances".into(),
            ));
        }
        Ok(())
    }

    fn entry(&self, id: &HostId) -> Result<&HostEntry, ClusterError> {
        self.index
            .get(id)
            .map(|&i| &self.hosts[i])
            .ok_or_else(|| ClusterError::UnknownHost(id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::FlavorCatalog;

    fn inst(id: &str, host: &str, flavor: &str, kind: InstanceKind) -> Instance {
        Instance {
            id: id.into(),
            flavor: FlavorCatalog::standard().lookup(flavor).unwrap().clone(),
            kind,
            host: host.into(),
            start_time: 0,
            planned_duration: None,
        }
    }

    fn half_preemptible_host() -> Cluster {
        let mut c = Cluster::new([HostSpec::new("h", ResourceVector::new(8, 16000, 0))]).unwrap();
        let cat = FlavorCatalog::standard_diskless();
        for (id, kind) in [
            ("n1", InstanceKind::Normal),
            ("n2", InstanceKind::Normal),
            ("p1", InstanceKind::Preemptible),
            ("p2", InstanceKind::Preemptible),
        ] {
            let mut i = inst(id, "h", "medium", kind);
            i.flavor = cat.lookup("medium").unwrap().clone();
            c.place(i).unwrap();
        }
        c
    }

    #[test]
    fn views_split_by_mode() {
        let c = half_preemptible_host();
        let h = HostId::from("h");
        assert_eq!(
            c.view(&h, ViewMode::Full).unwrap().free,
            ResourceVector::new(0, 0, 0)
        );
        assert_eq!(
            c.view(&h, ViewMode::NormalOnly).unwrap().free,
            ResourceVector::new(4, 8000, 0)
        );
        let empty = Cluster::standard(1);
        let h0 = HostId::from("host-0");
        for mode in [ViewMode::Full, ViewMode::NormalOnly] {
            assert_eq!(
                empty.view(&h0, mode).unwrap().free,
                ResourceVector::new(8, 16000, 140)
            );
        }
        assert_eq!(
            c.view(&"nope".into(), ViewMode::Full).unwrap_err(),
            ClusterError::UnknownHost("nope".into())
        );
    }

    #[test]
    fn place_standard_medium() {
        let mut c = Cluster::standard(1);
        c.place(inst("m", "host-0", "medium", InstanceKind::Normal))
            .unwrap();
        assert_eq!(
            c.view(&"host-0".into(), ViewMode::Full).unwrap().free,
            ResourceVector::new(6, 12000, 100)
        );
        assert!(matches!(
            c.place(inst("m", "host-0", "small", InstanceKind::Normal)),
            Err(ClusterError::DuplicateInstance(_))
        ));
    }

    #[test]
    fn four_diskless_mediums_fill_a_host() {
        let mut c = Cluster::standard(1);
        let medium = FlavorCatalog::standard_diskless()
            .lookup("medium")
            .unwrap()
            .clone();
        for i in 0..4 {
            let mut m = inst(&format!("m{i}"), "host-0", "medium", InstanceKind::Normal);
            m.flavor = medium.clone();
            c.place(m).unwrap();
        }
        let free = c.view(&"host-0".into(), ViewMode::Full).unwrap().free;
        assert_eq!((free.vcpus, free.ram_mb), (0, 0));
        let mut fifth = inst("m4", "host-0", "medium", InstanceKind::Normal);
        fifth.flavor = medium;
        assert!(matches!(
            c.place(fifth),
            Err(ClusterError::InsufficientCapacity { .. })
        ));
        c.check_invariants().unwrap();
    }

    #[test]
    fn remove_restores_views() {
        let mut c = half_preemptible_host();
        let h = HostId::from("h");
        let normal_before = c.view(&h, ViewMode::NormalOnly).unwrap().free;
        c.remove(&"p1".into()).unwrap();
        assert_eq!(
            c.view(&h, ViewMode::NormalOnly).unwrap().free,
            normal_before
        );
        assert_eq!(
            c.view(&h, ViewMode::Full).unwrap().free,
            ResourceVector::new(2, 4000, 0)
        );

        let full_before = c.view(&h, ViewMode::Full).unwrap().free;
        c.remove(&"n1".into()).unwrap();
        let gain = ResourceVector::new(2, 4000, 0);
        assert_eq!(c.view(&h, ViewMode::Full).unwrap().free, full_before + gain);
        assert_eq!(
            c.view(&h, ViewMode::NormalOnly).unwrap().free,
            normal_before + gain
        );

        assert_eq!(
            c.remove(&"n1".into()).unwrap_err(),
            ClusterError::UnknownInstance("n1".into())
        );
        c.check_invariants().unwrap();
    }

    #[test]
    fn remove_only_instance_gives_empty_views() {
        let mut c = Cluster::standard(1);
        let h = HostId::from("host-0");
        c.place(inst("x", "host-0", "large", InstanceKind::Preemptible))
            .unwrap();
        c.remove(&"x".into()).unwrap();
        for mode in [ViewMode::Full, ViewMode::NormalOnly] {
            assert_eq!(c.view(&h, mode).unwrap().free, c.host(&h).unwrap().capacity);
        }
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = Cluster::standard(1);
        c.set_clock(10).unwrap();
        assert!(c.set_clock(9).is_err());
        let mut late = inst("late", "host-0", "small", InstanceKind::Normal);
        late.start_time = 11;
        assert_eq!(
            c.place(late).unwrap_err(),
            ClusterError::StartsInFuture("late".into())
        );
    }
}
