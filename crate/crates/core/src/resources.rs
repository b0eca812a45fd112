//! Resource vectors and flavor catalogs.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A (vCPU, RAM, disk) triple.
///
/// Components are signed so that overcommitted views can be reported, but a
/// committed cluster never holds a negative Full-mode free vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResourceVector {
    pub vcpus: i64,
    pub ram_mb: i64,
    pub disk_gb: i64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector::new(0, 0, 0);

    pub const fn new(vcpus: i64, ram_mb: i64, disk_gb: i64) -> Self {
        Self {
            vcpus,
            ram_mb,
            disk_gb,
        }
    }

    /// Component-wise `self <= other`. This is the "fits" relation used by
    /// every filter, weigher and victim search.
    pub fn fits_in(&self, other: &ResourceVector) -> bool {
        self.vcpus <= other.vcpus && self.ram_mb <= other.ram_mb && self.disk_gb <= other.disk_gb
    }

    pub fn is_non_negative(&self) -> bool {
        Self::ZERO.fits_in(self)
    }
}

impl PartialOrd for ResourceVector {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self.fits_in(other), other.fits_in(self)) {
            (true, true) => Some(Equal),
            (true, false) => Some(Less),
            (false, true) => Some(Greater),
            (false, false) => None,
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;
    fn add(self, rhs: Self) -> Self {
        ResourceVector::new(
            self.vcpus + rhs.vcpus,
            self.ram_mb + rhs.ram_mb,
            self.disk_gb + rhs.disk_gb,
        )
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for ResourceVector {
    type Output = ResourceVector;
    fn sub(self, rhs: Self) -> Self {
        ResourceVector::new(
            self.vcpus - rhs.vcpus,
            self.ram_mb - rhs.ram_mb,
            self.disk_gb - rhs.disk_gb,
        )
    }
}

impl SubAssign for ResourceVector {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl Neg for ResourceVector {
    type Output = ResourceVector;
    fn neg(self) -> Self {
        ResourceVector::ZERO - self
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, Add::add)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} vCPU, {} MB, {} GB)",
            self.vcpus, self.ram_mb, self.disk_gb
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlavorError {
    #[error("flavor `{0}`: vcpus must be at least 1")]
    NoVcpus(String),
    #[error("flavor `{0}`: ram_mb must be positive")]
    NoRam(String),
    #[error("duplicate flavor name `{0}`")]
    Duplicate(String),
    #[error("unknown flavor `{0}`")]
    Unknown(String),
}

/// A named resource bundle a request asks for.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flavor {
    pub name: String,
    pub vcpus: u32,
    pub ram_mb: u64,
    #[serde(default)]
    pub disk_gb: u64,
}

impl Flavor {
    pub fn new(
        name: impl Into<String>,
        vcpus: u32,
        ram_mb: u64,
        disk_gb: u64,
    ) -> Result<Self, FlavorError> {
        let flavor = Flavor {
            name: name.into(),
            vcpus,
            ram_mb,
            disk_gb,
        };
        flavor.validate()?;
        Ok(flavor)
    }

    pub fn validate(&self) -> Result<(), FlavorError> {
        if self.vcpus < 1 {
            return Err(FlavorError::NoVcpus(self.name.clone()));
        }
        if self.ram_mb == 0 {
            return Err(FlavorError::NoRam(self.name.clone()));
        }
        Ok(())
    }

    pub fn resources(&self) -> ResourceVector {
        ResourceVector::new(self.vcpus as i64, self.ram_mb as i64, self.disk_gb as i64)
    }

    /// Upper-case first letter of the name: small -> S, medium -> M.
    pub fn size_letter(&self) -> char {
        self.name
            .chars()
            .next()
            .map(|c| c.to_ascii_uppercase())
            .unwrap_or('?')
    }
}

/// Ordered set of flavors with unique names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlavorCatalog {
    flavors: Vec<Flavor>,
}

impl FlavorCatalog {
    pub fn new(flavors: impl IntoIterator<Item = Flavor>) -> Result<Self, FlavorError> {
        let mut catalog = FlavorCatalog::default();
        for flavor in flavors {
            catalog.insert(flavor)?;
        }
        Ok(catalog)
    }

    /// small(1, 2000 MB, 20 GB), medium(2, 4000 MB, 40 GB), large(4, 8000 MB, 80 GB).
    pub fn standard() -> Self {
        Self::new([
            Flavor::new("small", 1, 2000, 20).unwrap(),
            Flavor::new("medium", 2, 4000, 40).unwrap(),
            Flavor::new("large", 4, 8000, 80).unwrap(),
        ])
        .unwrap()
    }

    /// The standard sizes with zero disk demand, as used by the replay
    /// fixtures. With disk counted, a 140 GB host only takes three mediums.
    pub fn standard_diskless() -> Self {
        Self::new(Self::standard().flavors.into_iter().map(|mut f| {
            f.disk_gb = 0;
            f
        }))
        .unwrap()
    }

    pub fn insert(&mut self, flavor: Flavor) -> Result<(), FlavorError> {
        flavor.validate()?;
        if self.get(&flavor.name).is_some() {
            return Err(FlavorError::Duplicate(flavor.name));
        }
        self.flavors.push(flavor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Flavor> {
        self.flavors.iter().find(|f| f.name == name)
    }

    pub fn lookup(&self, name: &str) -> Result<&Flavor, FlavorError> {
        self.get(name)
            .ok_or_else(|| FlavorError::Unknown(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Flavor> {
        self.flavors.iter()
    }

    pub fn len(&self) -> usize {
        self.flavors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flavors.is_empty()
    }
}
