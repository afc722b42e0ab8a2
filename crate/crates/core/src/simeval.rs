//! Rollouts of learned fields and the trajectory metrics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conservation::{r2_regression, ConservationNet, R2};
use crate::dynamics::DynamicsModel;
use crate::exec::Exec;
use crate::io::{self, fmt_f64};
use crate::latent::Autoencoder;
use crate::rng::{derive_rng, derive_seed};
use crate::systems::{generate_dataset_with, integrate_observed, rk4_step, DatasetParams, System};
use crate::{Error, Result};

/// States beyond this magnitude end a rollout as diverged.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// A time-invariant vector field that can be integrated.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl VectorField for DynamicsModel {
    fn dim(&self) -> usize {
        DynamicsModel::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        DynamicsModel::eval(self, x)
    }
}

impl VectorField for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.vector_field(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x0` followed by one state per completed step.
    pub states: Vec<Vec<f64>>,
    pub diverged: bool,
}

/// Fixed-step RK4 from `x0`. Stops early, flagged, when a state leaves the
/// `±1e6` box or the field cannot be evaluated numerically.
pub fn rollout<F: VectorField + ?Sized>(field: &F, x0: &[f64], dt: f64, steps: usize) -> Result<Rollout> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("rollout dt must be positive, got {dt}")));
    }
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            context: "rollout initial state",
            expected: field.dim(),
            got: x0.len(),
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for _ in 0..steps {
        match rk4_step(|s| field.eval(s), &x, dt) {
            Ok(next) if next.iter().all(|v| v.abs() <= DIVERGENCE_CAP) => {
                states.push(next.clone());
                x = next;
            }
            Ok(_) => return Ok(Rollout { states, diverged: true }),
            Err(e) if e.is_numeric() => return Ok(Rollout { states, diverged: true }),
            Err(e) => return Err(e),
        }
    }
    Ok(Rollout {
        states,
        diverged: false,
    })
}

/// Mean squared coordinate error over the common prefix of two
/// trajectories.
pub fn mse_metric(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let len = pred.len().min(truth.len());
    if len == 0 {
        return Err(Error::InvalidInput("mse of an empty trajectory".into()));
    }
    let n = truth[0].len();
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(truth).take(len) {
        if p.len() != n || t.len() != n {
            return Err(Error::DimensionMismatch {
                context: "mse state",
                expected: n,
                got: p.len().max(t.len()),
            });
        }
        sum += p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(sum / (len * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// One entry per conservation function of the system.
    pub values: Vec<f64>,
    /// The invariants could not be evaluated past some state; `values`
    /// cover the prefix before it.
    pub truncated: bool,
}

/// Time mean of `|g(x_t) − g(x0_truth)|` for each exact invariant `g`.
pub fn conservation_violation(system: &System, states: &[Vec<f64>], x0_truth: &[f64]) -> Result<Violation> {
    let g0 = system.conservation_values(x0_truth)?;
    let mut sums = vec![0.0; g0.len()];
    let mut count = 0usize;
    let mut truncated = false;
    for x in states {
        match system.conservation_values(x) {
            Ok(g) => {
                sums.iter_mut()
                    .zip(g.iter().zip(&g0))
                    .for_each(|(s, (a, b))| *s += (a - b).abs());
                count += 1;
            }
            Err(e) if e.is_numeric() => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("violation of an empty trajectory".into()));
    }
    Ok(Violation {
        values: sums.into_iter().map(|s| s / count as f64).collect(),
        truncated,
    })
}

/// A model under evaluation. With an autoencoder the field lives in latent
/// space: rollouts start from `E(x0)` and are decoded before scoring.
#[derive(Debug, Clone)]
pub struct EvalModel {
    pub name: String,
    pub field: DynamicsModel,
    pub autoencoder: Option<Autoencoder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub n_traj: usize,
    /// Seconds.
    pub duration: f64,
    pub dt: f64,
    /// Source of the evaluation initial states.
    pub seed: u64,
}

impl EvalParams {
    pub fn defaults_for(system: &System) -> Self {
        EvalParams {
            n_traj: 10,
            duration: system.default_eval_duration(),
            dt: system.default_rollout_dt(),
            seed: 0x5eed_e7a1,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 || !(self.dt > 0.0) || !(self.duration >= self.dt) {
            return Err(Error::InvalidConfig(format!(
                "eval needs n_traj ≥ 1 and duration ≥ dt > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
    pub mse: f64,
    pub violation: Vec<f64>,
    pub diverged: bool,
}

/// Rolls `model` out from the true state `x0` and scores it against `truth`.
pub fn simulate(
    system: &System,
    model: &EvalModel,
    x0: &[f64],
    truth: &[Vec<f64>],
    params: &EvalParams,
) -> Result<SimResult> {
    let steps = params.steps();
    let (predicted, diverged) = match &model.autoencoder {
        None => {
            let r = rollout(&model.field, x0, params.dt, steps)?;
            (r.states, r.diverged)
        }
        Some(ae) => {
            let r = rollout(&model.field, &ae.encode(x0)?, params.dt, steps)?;
            let decoded = r.states.iter().map(|z| ae.decode(z)).collect::<Result<Vec<_>>>()?;
            (decoded, r.diverged)
        }
    };
    let mse = mse_metric(&predicted, truth)?;
    let v = conservation_violation(system, &predicted, x0)?;
    let times = (0..predicted.len()).map(|k| k as f64 * params.dt).collect();
    Ok(SimResult {
        times,
        predicted,
        truth: truth.to_vec(),
        mse,
        violation: v.values,
        diverged: diverged || v.truncated,
    })
}

/// RK4 on the exact field at `dt / 10`, sampled every `dt`.
pub fn ground_truth(system: &System, x0: &[f64], params: &EvalParams) -> Result<Vec<Vec<f64>>> {
    integrate_observed(|x| system.vector_field(x), x0, params.dt, 10, params.steps() + 1)
}

/// Initial state of evaluation trajectory `traj` for training seed `seed`.
pub fn eval_initial_state(system: &System, params: &EvalParams, seed: u64, traj: usize) -> Vec<f64> {
    let mut rng = derive_rng(derive_seed(params.seed, "eval-seed", seed), "eval-trajectory", traj as u64);
    system.sample_initial_state(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub traj: usize,
    pub model: String,
    pub mse: f64,
    pub violations: Vec<f64>,
    pub diverged: bool,
}

impl EvalRow {
    pub fn violation_sum(&self) -> f64 {
        self.violations.iter().sum()
    }

    pub fn violation_mean(&self) -> f64 {
        self.violation_sum() / self.violations.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub seeds: usize,
    pub mse: MeanStd,
    /// Keyed by invariant name, in system order.
    pub violations: Vec<(String, MeanStd)>,
    pub violation_sum: MeanStd,
    pub violation_mean: MeanStd,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub invariants: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Per model: each seed's trajectory mean, then mean ± std over seeds.
    pub fn summary(&self) -> Vec<ModelSummary> {
        let mut models: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        models
            .into_iter()
            .map(|name| {
                let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.model == name).collect();
                let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
                seeds.dedup();
                seeds.sort_unstable();
                seeds.dedup();
                let per_seed = |f: &dyn Fn(&EvalRow) -> f64| -> MeanStd {
                    let means: Vec<f64> = seeds
                        .iter()
                        .map(|s| {
                            let v: Vec<f64> = rows.iter().filter(|r| r.seed == *s).map(|r| f(r)).collect();
                            v.iter().sum::<f64>() / v.len() as f64
                        })
                        .collect();
                    MeanStd::of(&means)
                };
                ModelSummary {
                    model: name.to_string(),
                    seeds: seeds.len(),
                    mse: per_seed(&|r| r.mse),
                    violations: self
                        .invariants
                        .iter()
                        .enumerate()
                        .map(|(k, inv)| (inv.clone(), per_seed(&|r| r.violations[k])))
                        .collect(),
                    violation_sum: per_seed(&|r| r.violation_sum()),
                    violation_mean: per_seed(&|r| r.violation_mean()),
                    diverged: rows.iter().filter(|r| r.diverged).count(),
                }
            })
            .collect()
    }

    pub fn model_summary(&self, model: &str) -> Option<ModelSummary> {
        self.summary().into_iter().find(|s| s.model == model)
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["seed", "traj", "model", "mse"].iter().map(|s| s.to_string()).collect();
        h.extend(self.invariants.iter().map(|i| format!("violation_{i}")));
        h.extend(["violation_sum", "violation_mean", "diverged"].iter().map(|s| s.to_string()));
        h
    }

    pub fn csv_rows(&self) -> impl Iterator<Item = Vec<String>> + '_ {
        self.rows.iter().map(|r| {
            let mut row = vec![r.seed.to_string(), r.traj.to_string(), r.model.clone(), fmt_f64(r.mse)];
            row.extend(r.violations.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(r.violation_sum()));
            row.push(fmt_f64(r.violation_mean()));
            row.push(r.diverged.to_string());
            row
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_csv(path, &self.csv_header(), self.csv_rows())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.summary())
    }
}

/// Rolls every model of every seed out from `params.n_traj` fresh initial
/// states. `models` pairs each training seed with the models trained on it.
/// Jobs are independent per `(seed, trajectory)` and rows come back in
/// `seed, traj, model` order regardless of `exec`.
pub fn evaluate(
    system: &System,
    models: &[(u64, Vec<EvalModel>)],
    params: &EvalParams,
    exec: Exec,
) -> Result<EvalReport> {
    params.validate()?;
    let jobs: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|s| (0..params.n_traj).map(move |t| (s, t)))
        .collect();
    let rows = exec.try_map_range(jobs.len(), |j| {
        let (si, traj) = jobs[j];
        let (seed, set) = &models[si];
        let x0 = eval_initial_state(system, params, *seed, traj);
        let truth = ground_truth(system, &x0, params)?;
        set.iter()
            .map(|m| {
                let r = simulate(system, m, &x0, &truth, params)?;
                Ok(EvalRow {
                    seed: *seed,
                    traj,
                    model: m.name.clone(),
                    mse: r.mse,
                    violations: r.violation,
                    diverged: r.diverged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(EvalReport {
        system: system.name().to_string(),
        invariants: system.conservation_names().iter().map(|s| s.to_string()).collect(),
        rows: rows.into_iter().flatten().collect(),
    })
}

/// R² of each exact invariant against the first latent output of `net`
/// over noise-free trajectories (encoded first when an autoencoder is
/// given).
pub fn invariant_r2(
    system: &System,
    net: &ConservationNet,
    autoencoder: Option<&Autoencoder>,
    params: &DatasetParams,
    seed: u64,
    exec: Exec,
) -> Result<Vec<R2>> {
    let clean = DatasetParams {
        noise_std: 0.0,
        ..params.clone()
    };
    let ds = generate_dataset_with(exec, system, &clean, derive_seed(seed, "r2-eval", 0))?;
    let k = system.conservation_names().len();
    let mut h = Vec::with_capacity(ds.n_pairs());
    let mut g: Vec<Vec<f64>> = vec![Vec::with_capacity(ds.n_pairs()); k];
    for (x, _) in ds.pairs() {
        let input = match autoencoder {
            Some(ae) => ae.encode(x)?,
            None => x.to_vec(),
        };
        h.push(net.eval(&input)?[0]);
        for (gi, v) in g.iter_mut().zip(system.conservation_values(x)?) {
            gi.push(v);
        }
    }
    g.iter().map(|gi| r2_regression(&h, gi)).collect()
}
