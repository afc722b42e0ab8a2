//! Ground-truth benchmark systems, their exact invariants, fixed-step RK4
//! and noisy trajectory datasets.

mod dataset;
mod integrate;

pub use dataset::{generate_dataset, generate_dataset_with, Dataset, DatasetParams, Trajectory};
pub use integrate::{integrate_observed, rk4_step};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

/// Below this radius the Kepler field is treated as singular.
pub const KEPLER_MIN_RADIUS: f64 = 1e-8;

/// Spatial extent of the heat rod, `[-5, 5]`.
pub const HEAT_DOMAIN: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    /// `ẋ1 = x2, ẋ2 = −x1`, conserving `x1² + x2²`.
    SpringMass,
    /// `ẋ1 = −κ1 x1 + κ2 x2, ẋ2 = κ1 x1 − κ2 x2`, conserving `x1 + x2`.
    Chemical { kappa1: f64, kappa2: f64 },
    /// Planar two-body problem in units with `GM = 1`, conserving energy and
    /// angular momentum.
    Kepler,
    /// 1-D heat equation on `[-5, 5]` with insulated ends, discretised on
    /// `nodes` equally spaced points.
    Heat { nodes: usize },
}

impl System {
    pub fn spring_mass() -> Self {
        System::SpringMass
    }

    pub fn chemical() -> Self {
        System::Chemical {
            kappa1: 1.0,
            kappa2: 2.0,
        }
    }

    pub fn kepler() -> Self {
        System::Kepler
    }

    pub fn heat() -> Self {
        System::Heat { nodes: 101 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "spring_mass" => Ok(System::spring_mass()),
            "chemical" => Ok(System::chemical()),
            "kepler" => Ok(System::kepler()),
            "heat" => Ok(System::heat()),
            other => Err(Error::InvalidConfig(format!(
                "unknown system {other:?} (expected spring_mass, chemical, kepler or heat)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::SpringMass => "spring_mass",
            System::Chemical { .. } => "chemical",
            System::Kepler => "kepler",
            System::Heat { .. } => "heat",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::SpringMass | System::Chemical { .. } => 2,
            System::Kepler => 4,
            System::Heat { nodes } => *nodes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            System::Heat { nodes } if nodes < 3 => Err(Error::InvalidConfig(format!(
                "heat grid needs at least 3 nodes, got {nodes}"
            ))),
            System::Chemical { kappa1, kappa2 }
                if !(kappa1 > 0.0 && kappa2 > 0.0 && kappa1.is_finite() && kappa2.is_finite()) =>
            {
                Err(Error::InvalidConfig(format!(
                    "rate constants must be positive, got {kappa1}, {kappa2}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Grid spacing of the heat rod.
    pub fn heat_dy(&self) -> Option<f64> {
        match self {
            System::Heat { nodes } => Some((HEAT_DOMAIN.1 - HEAT_DOMAIN.0) / (*nodes as f64 - 1.0)),
            _ => None,
        }
    }

    pub fn conservation_names(&self) -> &'static [&'static str] {
        match self {
            System::SpringMass => &["energy"],
            System::Chemical { .. } => &["mass"],
            System::Kepler => &["energy", "angular_momentum"],
            System::Heat { .. } => &["total_heat"],
        }
    }

    /// Evaluation rollout length in seconds.
    pub fn default_eval_duration(&self) -> f64 {
        match self {
            System::SpringMass => 50.0,
            System::Chemical { .. } => 10.0,
            System::Kepler => 5.0,
            System::Heat { .. } => 1.0,
        }
    }

    pub fn default_rollout_dt(&self) -> f64 {
        match self {
            System::Heat { .. } => 1e-4,
            _ => 0.01,
        }
    }

    pub fn default_train_trajectories(&self) -> usize {
        match self {
            System::Heat { .. } => 100,
            _ => 50,
        }
    }

    /// Largest RK4 step that keeps the explicit scheme well inside its
    /// stability region (`λ_max · dt = 1` for the heat Laplacian).
    pub fn max_stable_step(&self) -> f64 {
        match self.heat_dy() {
            Some(dy) => 0.25 * dy * dy,
            None => f64::INFINITY,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "system state",
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match *self {
            System::SpringMass => Ok(vec![x[1], -x[0]]),
            System::Chemical { kappa1, kappa2 } => {
                let flow = -kappa1 * x[0] + kappa2 * x[1];
                Ok(vec![flow, -flow])
            }
            System::Kepler => {
                let r = kepler_radius(x)?;
                let r3 = r * r * r;
                Ok(vec![x[2], x[3], -x[0] / r3, -x[1] / r3])
            }
            System::Heat { .. } => heat_laplacian(x, self.heat_dy().unwrap()),
        }
    }

    pub fn conservation_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match *self {
            System::SpringMass => Ok(vec![x[0] * x[0] + x[1] * x[1]]),
            System::Chemical { .. } => Ok(vec![x[0] + x[1]]),
            System::Kepler => {
                let r = kepler_radius(x)?;
                let energy = 0.5 * (x[2] * x[2] + x[3] * x[3]) - 1.0 / r;
                let momentum = x[0] * x[3] - x[1] * x[2];
                Ok(vec![energy, momentum])
            }
            System::Heat { .. } => Ok(vec![x.iter().sum::<f64>() * self.heat_dy().unwrap()]),
        }
    }

    /// Random initial condition. Ranges:
    ///
    /// - spring-mass: radius in `[0.5, 1.5]`, uniform angle
    /// - chemical: both species uniform in `[0.5, 2]`
    /// - Kepler: radius `r0 ∈ [0.8, 1.2]`, uniform angle, counter-clockwise
    ///   tangential speed `v ∈ [0.9, 1.1]·√(1/r0)` (always bound)
    /// - heat: sum of three Gaussians with centres in `[-4, 4]`, widths and
    ///   amplitudes in `[0.5, 1.5]`
    pub fn sample_initial_state(&self, rng: &mut Rng) -> Vec<f64> {
        use std::f64::consts::TAU;
        match *self {
            System::SpringMass => {
                let r = rng.gen_range(0.5..=1.5);
                let theta = rng.gen_range(0.0..TAU);
                vec![r * theta.cos(), r * theta.sin()]
            }
            System::Chemical { .. } => vec![rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0)],
            System::Kepler => {
                let r0: f64 = rng.gen_range(0.8..=1.2);
                let theta: f64 = rng.gen_range(0.0..TAU);
                let v = rng.gen_range(0.9..=1.1) * (1.0 / r0).sqrt();
                let (s, c) = theta.sin_cos();
                vec![r0 * c, r0 * s, -v * s, v * c]
            }
            System::Heat { nodes } => {
                let dy = self.heat_dy().unwrap();
                let bumps: Vec<(f64, f64, f64)> = (0..3)
                    .map(|_| {
                        (
                            rng.gen_range(-4.0..=4.0),
                            rng.gen_range(0.5..=1.5),
                            rng.gen_range(0.5..=1.5),
                        )
                    })
                    .collect();
                (0..nodes)
                    .map(|i| {
                        let y = HEAT_DOMAIN.0 + i as f64 * dy;
                        bumps
                            .iter()
                            .map(|&(c, w, a)| a * (-(y - c).powi(2) / (2.0 * w * w)).exp())
                            .sum()
                    })
                    .collect()
            }
        }
    }
}

fn kepler_radius(x: &[f64]) -> Result<f64> {
    let r = x[0].hypot(x[1]);
    if r.is_nan() || r < KEPLER_MIN_RADIUS {
        return Err(Error::Singularity { radius: r });
    }
    Ok(r)
}

/// Flux-form second difference with insulated ends:
///
/// ```text
/// u̇_0     = (u_1 − u_0) / Δy²
/// u̇_i     = (u_{i+1} − 2u_i + u_{i−1}) / Δy²
/// u̇_{N−1} = (u_{N−2} − u_{N−1}) / Δy²
/// ```
///
/// Each interface flux enters two nodes with opposite signs, so `Σ u̇ = 0`.
pub fn heat_laplacian(u: &[f64], dy: f64) -> Result<Vec<f64>> {
    let n = u.len();
    if n < 3 {
        return Err(Error::DimensionMismatch {
            context: "heat grid (at least 3 nodes)",
            expected: 3,
            got: n,
        });
    }
    let inv = 1.0 / (dy * dy);
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        let flux = (u[i + 1] - u[i]) * inv;
        out[i] += flux;
        out[i + 1] -= flux;
    }
    Ok(out)
}
