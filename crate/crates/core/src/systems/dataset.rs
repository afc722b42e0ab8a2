use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::io::{self, fmt_f64};
use crate::rng::derive_rng;
use crate::systems::{integrate_observed, System};
use crate::{Error, Result};

const MAX_RESAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub traj_id: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.times.len() != self.states.len() || self.derivs.len() != self.states.len() {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: {} times, {} states, {} derivatives",
                self.traj_id,
                self.times.len(),
                self.states.len(),
                self.derivs.len()
            )));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: times must be strictly increasing",
                self.traj_id
            )));
        }
        for row in self.states.iter().chain(&self.derivs) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "trajectory row",
                    expected: dim,
                    got: row.len(),
                });
            }
        }
        Ok(())
    }
}

/// Sizes of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    pub n_traj: usize,
    pub points_per_traj: usize,
    /// Trajectory length in seconds.
    pub duration: f64,
    pub noise_std: f64,
}

impl DatasetParams {
    /// 50 trajectories (100 for heat) of 100 points over 10 s, noise 0.01.
    pub fn defaults_for(system: &System) -> Self {
        DatasetParams {
            n_traj: system.default_train_trajectories(),
            points_per_traj: 100,
            duration: 10.0,
            noise_std: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj < 2 {
            return Err(Error::InvalidConfig(format!(
                "contrastive learning needs at least 2 trajectories, got {}",
                self.n_traj
            )));
        }
        if self.points_per_traj < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 points per trajectory, got {}",
                self.points_per_traj
            )));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Spacing between stored observations.
    pub fn interval(&self) -> f64 {
        self.duration / self.points_per_traj as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// System name; lifted datasets carry the name of the system they
    /// were encoded from.
    pub system: String,
    pub dim: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    system: String,
    dim: usize,
    seed: u64,
    noise_std: f64,
    files: Vec<String>,
}

impl Dataset {
    pub fn new(system: &str, seed: u64, noise_std: f64, trajectories: Vec<Trajectory>) -> Result<Self> {
        let dim = trajectories.first().map_or(0, Trajectory::dim);
        let ds = Dataset {
            system: system.to_string(),
            dim,
            seed,
            noise_std,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.trajectories.first().map_or(0, Trajectory::len);
        for t in &self.trajectories {
            t.validate(self.dim)?;
            if t.len() != len {
                return Err(Error::InvalidInput(format!(
                    "trajectory {} has {} points, expected {len}",
                    t.traj_id,
                    t.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// All `(state, derivative)` pairs, trajectory-major.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.trajectories
            .iter()
            .flat_map(|t| t.states.iter().zip(&t.derivs))
            .map(|(x, d)| (x.as_slice(), d.as_slice()))
    }

    /// Writes `manifest.json` plus one `traj_NNN.csv` per trajectory with
    /// columns `t, x_1..x_n, xdot_1..xdot_n`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let mut files = Vec::with_capacity(self.trajectories.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("x_{i}")));
        header.extend((1..=self.dim).map(|i| format!("xdot_{i}")));
        for t in &self.trajectories {
            let name = format!("traj_{:03}.csv", t.traj_id);
            let rows = (0..t.len()).map(|k| {
                std::iter::once(fmt_f64(t.times[k]))
                    .chain(t.states[k].iter().map(|&v| fmt_f64(v)))
                    .chain(t.derivs[k].iter().map(|&v| fmt_f64(v)))
                    .collect::<Vec<_>>()
            });
            io::write_csv(&dir.join(&name), &header, rows)?;
            files.push(name);
        }
        let manifest = Manifest {
            system: self.system.clone(),
            dim: self.dim,
            seed: self.seed,
            noise_std: self.noise_std,
            files,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact {
                path: manifest_path,
                what: "dataset manifest (run `generate` first)".into(),
            });
        }
        let manifest: Manifest = io::read_json(&manifest_path)?;
        let n = manifest.dim;
        let mut trajectories = Vec::with_capacity(manifest.files.len());
        for name in &manifest.files {
            let path = dir.join(name);
            let mut reader = csv::Reader::from_path(&path)?;
            let traj_id = name
                .trim_start_matches("traj_")
                .trim_end_matches(".csv")
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad trajectory file name {name}")))?;
            let mut t = Trajectory {
                traj_id,
                times: Vec::new(),
                states: Vec::new(),
                derivs: Vec::new(),
            };
            for rec in reader.records() {
                let rec = rec?;
                if rec.len() != 1 + 2 * n {
                    return Err(Error::DimensionMismatch {
                        context: "dataset CSV columns",
                        expected: 1 + 2 * n,
                        got: rec.len(),
                    });
                }
                let vals = rec
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|_| Error::InvalidInput(format!("bad number {s:?} in {name}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                t.times.push(vals[0]);
                t.states.push(vals[1..=n].to_vec());
                t.derivs.push(vals[n + 1..].to_vec());
            }
            trajectories.push(t);
        }
        let ds = Dataset {
            system: manifest.system,
            dim: n,
            seed: manifest.seed,
            noise_std: manifest.noise_std,
            trajectories,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Single-document JSON form.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ds: Dataset = serde_json::from_str(s)?;
        ds.validate()?;
        Ok(ds)
    }
}

/// [`generate_dataset_with`] using the default executor.
pub fn generate_dataset(system: &System, params: &DatasetParams, seed: u64) -> Result<Dataset> {
    generate_dataset_with(Exec::default(), system, params, seed)
}

/// Trajectories integrated with RK4 at `interval / 10` (finer when the
/// system's stability bound demands it), observed every `interval`, then
/// states and derivatives perturbed with i.i.d. Gaussian noise. Trajectory
/// `i` draws from its own stream keyed by `(seed, i)`.
pub fn generate_dataset_with(
    exec: Exec,
    system: &System,
    params: &DatasetParams,
    seed: u64,
) -> Result<Dataset> {
    system.validate()?;
    params.validate()?;
    let interval = params.interval();
    let substeps = ((interval / system.max_stable_step()).ceil() as usize).max(10);
    let trajectories = exec.try_map_range(params.n_traj, |traj_id| {
        let mut rng = derive_rng(seed, "trajectory", traj_id as u64);
        let mut last_err = None;
        for _ in 0..=MAX_RESAMPLES {
            let x0 = system.sample_initial_state(&mut rng);
            let states = match integrate_observed(
                |x| system.vector_field(x),
                &x0,
                interval,
                substeps,
                params.points_per_traj,
            ) {
                Ok(s) => s,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            let mut derivs = states
                .iter()
                .map(|x| system.vector_field(x))
                .collect::<Result<Vec<_>>>()?;
            let mut states = states;
            if params.noise_std > 0.0 {
                for (x, d) in states.iter_mut().zip(derivs.iter_mut()) {
                    for v in x.iter_mut().chain(d.iter_mut()) {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v += params.noise_std * z;
                    }
                }
            }
            let times = (0..params.points_per_traj)
                .map(|k| k as f64 * interval)
                .collect();
            return Ok(Trajectory {
                traj_id,
                times,
                states,
                derivs,
            });
        }
        Err(last_err.expect("at least one attempt was made"))
    })?;
    Dataset::new(system.name(), seed, params.noise_std, trajectories)
}
