//! Seeded request streams.
//!
//! Each request is preemptible with probability `preemptible_fraction`, asks
//! for a flavor drawn uniformly from the configured list, and lives for
//! `min_duration + Exp(mean)` minutes, resampled until it is at most
//! `max_duration`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::cluster::{InstanceKind, Minutes};
use crate::resources::{Flavor, FlavorCatalog};
use crate::scheduler::Request;

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("preemptible_fraction must be within [0, 1], got {0}")]
    Fraction(f64),
    #[error("mean duration must be positive and finite, got {0}")]
    Mean(f64),
    #[error("duration range [{0}, {1}] is empty")]
    Range(Minutes, Minutes),
    #[error("no flavors to draw from")]
    NoFlavors,
    #[error("fixed arrival interval must be at least 1 minute")]
    Interval,
    #[error("poisson rate must be positive and finite, got {0}")]
    Rate(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArrivalProcess {
    Fixed {
        interval_min: Minutes,
    },
    /// Exponential inter-arrival times with `rate_per_min` arrivals per minute
    /// on average, floored to whole minutes.
    Poisson {
        rate_per_min: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadParams {
    pub preemptible_fraction: f64,
    pub mean_duration_min: f64,
    pub min_duration_min: Minutes,
    pub max_duration_min: Minutes,
    pub arrival: ArrivalProcess,
    pub flavors: Vec<Flavor>,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            preemptible_fraction: 0.5,
            mean_duration_min: 60.0,
            min_duration_min: 10,
            max_duration_min: 300,
            arrival: ArrivalProcess::Fixed { interval_min: 1 },
            flavors: FlavorCatalog::standard().iter().cloned().collect(),
        }
    }
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(0.0..=1.0).contains(&self.preemptible_fraction) {
            return Err(WorkloadError::Fraction(self.preemptible_fraction));
        }
        if !(self.mean_duration_min.is_finite() && self.mean_duration_min > 0.0) {
            return Err(WorkloadError::Mean(self.mean_duration_min));
        }
        if self.min_duration_min == 0 || self.min_duration_min > self.max_duration_min {
            return Err(WorkloadError::Range(
                self.min_duration_min,
                self.max_duration_min,
            ));
        }
        if self.flavors.is_empty() {
            return Err(WorkloadError::NoFlavors);
        }
        match self.arrival {
            ArrivalProcess::Fixed { interval_min: 0 } => Err(WorkloadError::Interval),
            ArrivalProcess::Poisson { rate_per_min }
                if !(rate_per_min.is_finite() && rate_per_min > 0.0) =>
            {
                Err(WorkloadError::Rate(rate_per_min))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedRequest {
    pub request: Request,
    pub duration: Minutes,
}

/// Endless request stream; take as many as needed.
#[derive(Clone, Debug)]
pub struct WorkloadGenerator {
    rng: ChaCha8Rng,
    params: WorkloadParams,
    duration: Exp<f64>,
    inter_arrival: Option<Exp<f64>>,
    start: Minutes,
    elapsed: f64,
    issued: u64,
}

/// Requests arrive from `start` onwards; the first one arrives at `start`.
pub fn generate_workload(
    seed: u64,
    params: WorkloadParams,
    start: Minutes,
) -> Result<WorkloadGenerator, WorkloadError> {
    params.validate()?;
    let duration = Exp::new(1.0 / params.mean_duration_min)
        .map_err(|_| WorkloadError::Mean(params.mean_duration_min))?;
    let inter_arrival = match params.arrival {
        ArrivalProcess::Poisson { rate_per_min } => {
            Some(Exp::new(rate_per_min).map_err(|_| WorkloadError::Rate(rate_per_min))?)
        }
        ArrivalProcess::Fixed { .. } => None,
    };
    Ok(WorkloadGenerator {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params,
        duration,
        inter_arrival,
        start,
        elapsed: 0.0,
        issued: 0,
    })
}

impl WorkloadGenerator {
    fn sample_duration(&mut self) -> Minutes {
        let min = self.params.min_duration_min as f64;
        let max = self.params.max_duration_min as f64;
        loop {
            let d = min + self.duration.sample(&mut self.rng);
            if d <= max {
                return d.floor() as Minutes;
            }
        }
    }
}

impl Iterator for WorkloadGenerator {
    type Item = GeneratedRequest;

    fn next(&mut self) -> Option<GeneratedRequest> {
        let kind = if self.rng.random_bool(self.params.preemptible_fraction) {
            InstanceKind::Preemptible
        } else {
            InstanceKind::Normal
        };
        let flavor =
            self.params.flavors[self.rng.random_range(0..self.params.flavors.len())].clone();
        let duration = self.sample_duration();
        if self.issued > 0 {
            self.elapsed += match (self.params.arrival, &self.inter_arrival) {
                (ArrivalProcess::Fixed { interval_min }, _) => interval_min as f64,
                (_, Some(exp)) => exp.sample(&mut self.rng),
                (_, None) => unreachable!("poisson without distribution"),
            };
        }
        let arrival = self.start + self.elapsed.floor() as Minutes;
        let id = format!("r{}", self.issued);
        self.issued += 1;
        Some(GeneratedRequest {
            request: Request::new(id, flavor, kind, arrival),
            duration,
        })
    }
}
