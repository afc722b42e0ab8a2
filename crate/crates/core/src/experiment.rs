//! Experiment configuration and the artifact-producing pipeline stages.
//!
//! Every stage is a function of the configuration and of the artifacts
//! written by earlier stages under `output_dir`:
//!
//! ```text
//! seed_{s}/dataset/          manifest.json, traj_NNN.csv
//! seed_{s}/autoencoder/      encoder.json, decoder.json, loss.csv   (heat)
//! seed_{s}/lifted/           latent dataset                        (heat)
//! seed_{s}/conservation/     model.json, loss.csv
//! seed_{s}/dynamics/         baseline.json, concernet.json, *_loss.csv
//! eval/                      report.csv, summary.json, r2.csv, r2_summary.json
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::conservation::{train_conservation, ConservationNet, ConservationTraining, R2};
use crate::dynamics::{train_dynamics, DynamicsModel, DynamicsTraining};
use crate::exec::Exec;
use crate::io::{self, fmt_f64, write_history_csv};
use crate::latent::{lift_dataset, train_autoencoder, Autoencoder, AutoencoderTraining};
use crate::rng::derive_seed;
use crate::simeval::{evaluate, invariant_r2, EvalModel, EvalParams, EvalReport, MeanStd};
use crate::systems::{generate_dataset_with, Dataset, DatasetParams, System};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub n_traj: usize,
    /// Rollout length in seconds.
    pub duration: f64,
    pub dt: f64,
    /// Fresh noise-free trajectories for the R² protocol.
    pub r2_traj: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: System,
    pub dataset: DatasetParams,
    /// Required for the heat equation, absent otherwise.
    #[serde(default)]
    pub autoencoder: Option<AutoencoderTraining>,
    pub conservation: ConservationTraining,
    pub dynamics: DynamicsTraining,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn defaults(system: System) -> Self {
        let autoencoder = matches!(system, System::Heat { .. }).then(AutoencoderTraining::default);
        ExperimentConfig {
            dataset: DatasetParams::defaults_for(&system),
            autoencoder,
            conservation: ConservationTraining::default(),
            dynamics: DynamicsTraining::default(),
            eval: EvalConfig {
                n_traj: 10,
                duration: system.default_eval_duration(),
                dt: system.default_rollout_dt(),
                r2_traj: 10,
            },
            seeds: (0..5).collect(),
            master_seed: 0,
            output_dir: PathBuf::from("out").join(system.name()),
            system,
        }
    }

    /// Heat rod on 51 nodes with a 5-dimensional latent space.
    pub fn reduced_heat() -> Self {
        let mut cfg = ExperimentConfig::defaults(System::Heat { nodes: 51 });
        if let Some(ae) = cfg.autoencoder.as_mut() {
            ae.latent_dim = 5;
        }
        cfg
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_json(&io::read_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        self.system.validate()?;
        self.dataset.validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad(format!("duplicate seeds in {:?}", self.seeds));
        }
        let heat = matches!(self.system, System::Heat { .. });
        if heat != self.autoencoder.is_some() {
            return bad(if heat {
                "the heat equation needs an autoencoder section".into()
            } else {
                "an autoencoder section is only valid for the heat equation".into()
            });
        }
        if let Some(ae) = &self.autoencoder {
            if ae.latent_dim == 0 || ae.batch_size == 0 || !(ae.lr > 0.0) {
                return bad(format!("invalid autoencoder settings {ae:?}"));
            }
        }
        let c = &self.conservation;
        if c.latent_dim == 0 || c.batch_traj < 2 || !(c.lr > 0.0) {
            return bad(format!(
                "conservation needs latent_dim ≥ 1, batch_traj ≥ 2 and lr > 0, got {c:?}"
            ));
        }
        let d = &self.dynamics;
        if d.batch_size == 0 || !(d.lr > 0.0) {
            return bad(format!("dynamics needs batch_size ≥ 1 and lr > 0, got {d:?}"));
        }
        let e = &self.eval;
        if e.n_traj == 0 || !(e.dt > 0.0) || !(e.duration >= e.dt) {
            return bad(format!("eval needs n_traj ≥ 1 and duration ≥ dt > 0, got {e:?}"));
        }
        if e.r2_traj < 1 {
            return bad("eval.r2_traj must be at least 1".into());
        }
        Ok(())
    }

    /// Applies `key=value` overrides, where `key` is a dotted path into the
    /// JSON form (`dataset.noise_std`, `seeds`) and `value` is JSON, or a
    /// bare string when it does not parse as JSON.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed_{seed}"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }

    /// Stage seed for `(purpose, run seed)`.
    pub fn stage_seed(&self, purpose: &str, seed: u64) -> u64 {
        derive_seed(self.master_seed, purpose, seed)
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            n_traj: self.eval.n_traj,
            duration: self.eval.duration,
            dt: self.eval.dt,
            seed: derive_seed(self.master_seed, "eval", 0),
        }
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let obj = match cur {
            Value::Object(map) => map,
            Value::Null if !last => {
                return Err(Error::InvalidConfig(format!(
                    "cannot set {key}: {} is not configured",
                    parts[..=i - 1].join(".")
                )))
            }
            _ => return Err(Error::InvalidConfig(format!("cannot set {key}: not an object path"))),
        };
        if !obj.contains_key(*part) {
            return Err(Error::InvalidConfig(format!("unknown config key {key:?}")));
        }
        if last {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).unwrap();
    }
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            what: what.to_string(),
        })
    }
}

/// Writes the training dataset of one seed.
pub fn stage_generate(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<Dataset> {
    let ds = generate_dataset_with(exec, &cfg.system, &cfg.dataset, cfg.stage_seed("dataset", seed))?;
    ds.write_dir(&cfg.seed_dir(seed).join("dataset"))?;
    log::info!("seed {seed}: generated {} trajectories", ds.trajectories.len());
    Ok(ds)
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    Dataset::read_dir(&cfg.seed_dir(seed).join("dataset"))
}

/// Trains and freezes the autoencoder, then caches the lifted dataset.
pub fn stage_train_autoencoder(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<Autoencoder> {
    let ae_cfg = cfg.autoencoder.as_ref().ok_or_else(|| {
        Error::InvalidConfig(format!("{} has no autoencoder stage", cfg.system.name()))
    })?;
    let ds = load_dataset(cfg, seed)?;
    let trained = train_autoencoder(&ds, ae_cfg, cfg.stage_seed("autoencoder", seed))?;
    let dir = cfg.seed_dir(seed).join("autoencoder");
    trained.ae.save(&dir, seed)?;
    write_history_csv(&dir.join("loss.csv"), &trained.history)?;
    lift_dataset(&trained.ae, &ds, exec)?.write_dir(&cfg.seed_dir(seed).join("lifted"))?;
    log::info!(
        "seed {seed}: autoencoder trained, final loss {:e}",
        trained.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained.ae)
}

pub fn load_autoencoder(cfg: &ExperimentConfig, seed: u64) -> Result<Option<Autoencoder>> {
    if cfg.autoencoder.is_none() {
        return Ok(None);
    }
    Autoencoder::load(&cfg.seed_dir(seed).join("autoencoder")).map(Some)
}

/// The dataset the invariant and dynamics are trained on: the lifted one
/// when there is an autoencoder.
pub fn training_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    if cfg.autoencoder.is_some() {
        let dir = cfg.seed_dir(seed).join("lifted");
        require(&dir.join("manifest.json"), "lifted dataset (run train-ae first)")?;
        Dataset::read_dir(&dir)
    } else {
        load_dataset(cfg, seed)
    }
}

pub fn conservation_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.seed_dir(seed).join("conservation").join("model.json")
}

pub fn stage_train_conservation(cfg: &ExperimentConfig, seed: u64) -> Result<ConservationNet> {
    let ds = training_dataset(cfg, seed)?;
    let mut c = cfg.conservation.clone();
    c.batch_traj = c.batch_traj.min(ds.trajectories.len());
    let trained = train_conservation(&ds, &c, cfg.stage_seed("conservation", seed))?;
    let path = conservation_path(cfg, seed);
    trained
        .net
        .checkpoint(seed)
        .with_meta("system", cfg.system.name())
        .with_meta("dataset_seed", cfg.stage_seed("dataset", seed))
        .with_meta("m", c.latent_dim)
        .with_meta("epochs", c.epochs)
        .save(&path)?;
    write_history_csv(&path.with_file_name("loss.csv"), &trained.history)?;
    log::info!(
        "seed {seed}: invariant trained, final loss {:e}",
        trained.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained.net)
}

pub fn load_conservation(cfg: &ExperimentConfig, seed: u64) -> Result<ConservationNet> {
    let path = conservation_path(cfg, seed);
    require(&path, "conservation checkpoint (run train-conservation first)")?;
    ConservationNet::load(&path)
}

pub fn dynamics_path(cfg: &ExperimentConfig, seed: u64, projected: bool) -> PathBuf {
    let name = if projected { "concernet.json" } else { "baseline.json" };
    cfg.seed_dir(seed).join("dynamics").join(name)
}

/// Trains the projected model (needs the invariant checkpoint) or the
/// baseline.
pub fn stage_train_dynamics(cfg: &ExperimentConfig, seed: u64, projected: bool) -> Result<DynamicsModel> {
    let ds = training_dataset(cfg, seed)?;
    let invariant = if projected {
        Some(load_conservation(cfg, seed)?)
    } else {
        None
    };
    let trained = train_dynamics(&ds, invariant.as_ref(), &cfg.dynamics, cfg.stage_seed("dynamics", seed))?;
    let path = dynamics_path(cfg, seed, projected);
    let rel = Path::new("../conservation/model.json");
    trained.model.save(&path, seed, projected.then_some(rel))?;
    let stem = if projected { "concernet" } else { "baseline" };
    write_history_csv(&path.with_file_name(format!("{stem}_loss.csv")), &trained.history)?;
    log::info!(
        "seed {seed}: {stem} trained, final loss {:e}",
        trained.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained.model)
}

/// All training stages for one seed.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<()> {
    stage_generate(cfg, seed, exec)?;
    if cfg.autoencoder.is_some() {
        stage_train_autoencoder(cfg, seed, exec)?;
    }
    stage_train_conservation(cfg, seed)?;
    stage_train_dynamics(cfg, seed, false)?;
    stage_train_dynamics(cfg, seed, true)?;
    Ok(())
}

/// Row of the R² table: one per seed and invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Row {
    pub seed: u64,
    pub invariant: String,
    pub r2: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Summary {
    pub invariant: String,
    pub r2: MeanStd,
}

pub fn summarize_r2(rows: &[R2Row]) -> Vec<R2Summary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.invariant.as_str()) {
            names.push(&r.invariant);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.invariant == n).map(|r| r.r2).collect();
            R2Summary {
                invariant: n.to_string(),
                r2: MeanStd::of(&v),
            }
        })
        .collect()
}

/// R² of every invariant for every seed; writes `eval/r2.csv` and
/// `eval/r2_summary.json`.
pub fn stage_r2(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<R2Row>> {
    let params = DatasetParams {
        n_traj: cfg.eval.r2_traj.max(1),
        noise_std: 0.0,
        ..cfg.dataset.clone()
    };
    // The dataset sampler rejects a single trajectory; one extra costs nothing.
    let params = DatasetParams {
        n_traj: params.n_traj.max(2),
        ..params
    };
    let per_seed = exec.try_map_range(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        let net = load_conservation(cfg, seed)?;
        let ae = load_autoencoder(cfg, seed)?;
        let r2: Vec<R2> = invariant_r2(
            &cfg.system,
            &net,
            ae.as_ref(),
            &params,
            cfg.stage_seed("r2", seed),
            Exec::Sequential,
        )?;
        Ok::<_, Error>(
            cfg.system
                .conservation_names()
                .iter()
                .zip(r2)
                .map(|(name, r)| R2Row {
                    seed,
                    invariant: name.to_string(),
                    r2: r.r2,
                    degenerate: r.degenerate,
                })
                .collect::<Vec<_>>(),
        )
    })?;
    let rows: Vec<R2Row> = per_seed.into_iter().flatten().collect();
    let dir = cfg.eval_dir();
    let header: Vec<String> = ["seed", "invariant", "r2", "degenerate"].iter().map(|s| s.to_string()).collect();
    io::write_csv(
        &dir.join("r2.csv"),
        &header,
        rows.iter()
            .map(|r| vec![r.seed.to_string(), r.invariant.clone(), fmt_f64(r.r2), r.degenerate.to_string()]),
    )?;
    io::write_json(&dir.join("r2_summary.json"), &summarize_r2(&rows))?;
    Ok(rows)
}

/// Rolls out the trained models of every seed; writes `eval/report.csv`
/// and `eval/summary.json`.
pub fn stage_evaluate(cfg: &ExperimentConfig, exec: Exec) -> Result<EvalReport> {
    let mut models = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let ae = load_autoencoder(cfg, seed)?;
        let mut set = Vec::with_capacity(2);
        for (name, projected) in [("baseline", false), ("concernet", true)] {
            let path = dynamics_path(cfg, seed, projected);
            require(&path, "dynamics checkpoint (run train-dynamics first)")?;
            set.push(EvalModel {
                name: name.to_string(),
                field: DynamicsModel::load(&path)?,
                autoencoder: ae.clone(),
            });
        }
        models.push((seed, set));
    }
    let report = evaluate(&cfg.system, &models, &cfg.eval_params(), exec)?;
    report.write_csv(&cfg.eval_dir().join("report.csv"))?;
    report.write_summary(&cfg.eval_dir().join("summary.json"))?;
    Ok(report)
}

/// Everything: training for every seed, then R² and rollouts.
pub fn run_pipeline(cfg: &ExperimentConfig, exec: Exec) -> Result<(Vec<R2Row>, EvalReport)> {
    cfg.validate()?;
    exec.try_map_range(cfg.seeds.len(), |i| train_seed(cfg, cfg.seeds[i], exec))?;
    let r2 = stage_r2(cfg, exec)?;
    let report = stage_evaluate(cfg, exec)?;
    Ok((r2, report))
}

/// Invariant-only pipeline: dataset, autoencoder and conservation stages
/// for every seed, then R².
pub fn run_r2_pipeline(cfg: &ExperimentConfig, exec: Exec) -> Result<Vec<R2Row>> {
    cfg.validate()?;
    exec.try_map_range(cfg.seeds.len(), |i| {
        let seed = cfg.seeds[i];
        stage_generate(cfg, seed, exec)?;
        if cfg.autoencoder.is_some() {
            stage_train_autoencoder(cfg, seed, exec)?;
        }
        stage_train_conservation(cfg, seed).map(|_| ())
    })?;
    stage_r2(cfg, exec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NoiseStd,
    NTraj,
    PointsPerTraj,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NoiseStd => "noise_std",
            SweepAxis::NTraj => "n_traj",
            SweepAxis::PointsPerTraj => "points_per_traj",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noise_std" => Ok(SweepAxis::NoiseStd),
            "n_traj" => Ok(SweepAxis::NTraj),
            "points_per_traj" => Ok(SweepAxis::PointsPerTraj),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?} (noise_std, n_traj or points_per_traj)"
            ))),
        }
    }

    fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::NoiseStd => c.dataset.noise_std = value,
            SweepAxis::NTraj | SweepAxis::PointsPerTraj => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "{} must be a whole number, got {value}",
                        self.name()
                    )));
                }
                if self == SweepAxis::NTraj {
                    c.dataset.n_traj = value as usize;
                } else {
                    c.dataset.points_per_traj = value as usize;
                }
            }
        }
        c.output_dir = cfg.output_dir.join(format!("{}_{}", self.name(), value));
        c.validate()?;
        Ok(c)
    }
}

/// One full pipeline per value along `axis`; writes `sweep_{axis}.csv`
/// with one row per (value, model).
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], exec: Exec) -> Result<Vec<(f64, EvalReport)>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let configs = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let reports = exec.try_map_range(configs.len(), |i| run_pipeline(&configs[i], exec).map(|(_, r)| r))?;
    let out: Vec<(f64, EvalReport)> = values.iter().copied().zip(reports).collect();
    write_sweep_csv(&cfg.output_dir.join(format!("sweep_{}.csv", axis.name())), axis.name(), &out)?;
    Ok(out)
}

fn write_sweep_csv(path: &Path, axis: &str, results: &[(f64, EvalReport)]) -> Result<()> {
    let mut header = vec![axis.to_string(), "model".into(), "mse_mean".into(), "mse_std".into()];
    header.extend(["violation_mean".into(), "violation_std".into(), "diverged".into()]);
    let mut rows = Vec::new();
    for (v, report) in results {
        for s in report.summary() {
            rows.push(vec![
                fmt_f64(*v),
                s.model,
                fmt_f64(s.mse.mean),
                fmt_f64(s.mse.std),
                fmt_f64(s.violation_sum.mean),
                fmt_f64(s.violation_sum.std),
                s.diverged.to_string(),
            ]);
        }
    }
    io::write_csv(path, &header, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    /// Learned-invariant R² per system.
    Table2,
    /// Rollout error and conservation violation per system.
    Table3,
    /// The rollout comparison across training noise levels.
    Table6,
    /// R² across trajectory counts and points per trajectory.
    Table7,
}

impl Table {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Table::Table2),
            "table3" => Ok(Table::Table3),
            "table6" => Ok(Table::Table6),
            "table7" => Ok(Table::Table7),
            other => Err(Error::InvalidConfig(format!(
                "unknown table {other:?} (table2, table3, table6 or table7)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Table::Table2 => "table2",
            Table::Table3 => "table3",
            Table::Table6 => "table6",
            Table::Table7 => "table7",
        }
    }
}

pub const TABLE6_NOISE: [f64; 4] = [0.0, 0.01, 0.1, 1.0];
pub const TABLE7_TRAJ: [usize; 4] = [5, 10, 20, 40];
pub const TABLE7_POINTS: [usize; 5] = [5, 10, 20, 40, 80];

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    pub output_dir: PathBuf,
    pub systems: Vec<System>,
    /// Applied to every system's default configuration.
    pub overrides: Vec<String>,
}

impl ReproduceOptions {
    pub fn new(output_dir: impl Into<PathBuf>) -> Self {
        ReproduceOptions {
            output_dir: output_dir.into(),
            systems: vec![System::spring_mass(), System::chemical(), System::kepler(), System::heat()],
            overrides: Vec::new(),
        }
    }

    fn config(&self, system: &System, sub: &str) -> Result<ExperimentConfig> {
        let mut base = ExperimentConfig::defaults(system.clone());
        base.output_dir = self.output_dir.join(sub).join(system.name());
        base.with_overrides(&self.overrides)
    }
}

/// Regenerates one table; returns the path of its merged CSV.
pub fn reproduce(table: Table, opts: &ReproduceOptions, exec: Exec) -> Result<PathBuf> {
    let path = opts.output_dir.join(format!("{}.csv", table.name()));
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<String>>();
    match table {
        Table::Table2 => {
            let mut rows = Vec::new();
            for sys in &opts.systems {
                let cfg = opts.config(sys, "table2")?;
                for r in summarize_r2(&run_r2_pipeline(&cfg, exec)?) {
                    rows.push(vec![sys.name().into(), r.invariant, fmt_f64(r.r2.mean), fmt_f64(r.r2.std)]);
                }
            }
            io::write_csv(&path, &s(&["system", "invariant", "r2_mean", "r2_std"]), rows)?;
        }
        Table::Table3 => {
            let mut rows = Vec::new();
            for sys in &opts.systems {
                let cfg = opts.config(sys, "table3")?;
                let (_, report) = run_pipeline(&cfg, exec)?;
                for m in report.summary() {
                    rows.push(summary_row(sys.name(), None, &m));
                }
            }
            io::write_csv(&path, &summary_header(None), rows)?;
        }
        Table::Table6 => {
            let mut rows = Vec::new();
            for sys in &opts.systems {
                let cfg = opts.config(sys, "table6")?;
                for (noise, report) in sweep(&cfg, SweepAxis::NoiseStd, &TABLE6_NOISE, exec)? {
                    for m in report.summary() {
                        rows.push(summary_row(sys.name(), Some(noise), &m));
                    }
                }
            }
            io::write_csv(&path, &summary_header(Some("noise_std")), rows)?;
        }
        Table::Table7 => {
            let mut rows = Vec::new();
            for sys in &opts.systems {
                let base = opts.config(sys, "table7")?;
                for &n in &TABLE7_TRAJ {
                    for &p in &TABLE7_POINTS {
                        let mut cfg = base.clone();
                        cfg.dataset.n_traj = n;
                        cfg.dataset.points_per_traj = p;
                        cfg.output_dir = base.output_dir.join(format!("traj_{n}_points_{p}"));
                        cfg.validate()?;
                        for r in summarize_r2(&run_r2_pipeline(&cfg, exec)?) {
                            rows.push(vec![
                                sys.name().into(),
                                r.invariant,
                                n.to_string(),
                                p.to_string(),
                                fmt_f64(r.r2.mean),
                                fmt_f64(r.r2.std),
                            ]);
                        }
                    }
                }
            }
            io::write_csv(
                &path,
                &s(&["system", "invariant", "n_traj", "points_per_traj", "r2_mean", "r2_std"]),
                rows,
            )?;
        }
    }
    Ok(path)
}

fn summary_header(axis: Option<&str>) -> Vec<String> {
    let mut h = vec!["system".to_string()];
    h.extend(axis.map(str::to_string));
    for c in ["model", "mse_mean", "mse_std", "violation_mean", "violation_std", "diverged"] {
        h.push(c.to_string());
    }
    h
}

fn summary_row(system: &str, axis: Option<f64>, m: &crate::simeval::ModelSummary) -> Vec<String> {
    let mut r = vec![system.to_string()];
    r.extend(axis.map(fmt_f64));
    r.extend([
        m.model.clone(),
        fmt_f64(m.mse.mean),
        fmt_f64(m.mse.std),
        fmt_f64(m.violation_sum.mean),
        fmt_f64(m.violation_sum.std),
        m.diverged.to_string(),
    ]);
    r
}
