//! `conserve` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use conserve::conservation::isrl_needle_probe;
use conserve::exec::Exec;
use conserve::experiment::{self, ExperimentConfig, ReproduceOptions, SweepAxis, Table};
use conserve::io::{self, fmt_f64};
use conserve::systems::System;
use conserve::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "conserve", version, about = "Learn conservation laws and conserving dynamics from trajectories")]
struct Cli {
    /// JSON experiment configuration; system defaults are used without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// System whose defaults to start from when no config is given.
    #[arg(long, global = true, default_value = "spring_mass")]
    system: String,
    /// Override a config key, e.g. `--set dataset.noise_std=0.1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training dataset.
    Generate(SeedArg),
    /// Train the autoencoder and cache the lifted dataset (heat equation).
    TrainAe(SeedArg),
    /// Train the invariant network.
    TrainConservation(SeedArg),
    /// Train the projected dynamics model, or the baseline.
    TrainDynamics {
        #[command(flatten)]
        seed: SeedArg,
        /// Train the unprojected baseline instead.
        #[arg(long)]
        no_projection: bool,
    },
    /// R² of the learned invariant and rollout metrics of both models.
    Evaluate,
    /// Full pipeline for each value along one dataset axis.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Needle perturbation of the discretised integral loss.
    ProbeTheory {
        #[arg(long, value_enum, default_value = "linear")]
        function: ProbeFunction,
        #[arg(long, default_value_t = 200)]
        cells: usize,
        #[arg(long, default_value_t = 0.02)]
        epsilon: f64,
        /// Defaults to 1e-3, 2e-3, ..., 1e-2.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Pass an empty list of perturbations (baseline row only).
        #[arg(long, conflicts_with = "deltas")]
        no_deltas: bool,
        #[arg(long, default_value = "probe.csv")]
        out: PathBuf,
    },
    /// Regenerate one table of results.
    Reproduce {
        #[arg(value_parser = ["table2", "table3", "table6", "table7"])]
        table: String,
        /// Comma-separated systems; all four by default.
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        #[arg(long, default_value = "out/reproduce")]
        out: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct SeedArg {
    /// Only this seed; every configured seed by default.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ProbeFunction {
    /// g(x) = x
    Linear,
    /// g(x) = (x - 0.5)²
    Quadratic,
    /// g(x) = sin(2πx)
    Sine,
}

impl ProbeFunction {
    fn eval(self, x: f64) -> f64 {
        match self {
            ProbeFunction::Linear => x,
            ProbeFunction::Quadratic => (x - 0.5).powi(2),
            ProbeFunction::Sine => (2.0 * std::f64::consts::PI * x).sin(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let base = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(System::by_name(&cli.system)?),
    };
    base.with_overrides(&cli.overrides)
}

fn seeds(cfg: &ExperimentConfig, arg: &SeedArg) -> Result<Vec<u64>> {
    match arg.seed {
        Some(s) if cfg.seeds.contains(&s) => Ok(vec![s]),
        Some(s) => Err(Error::InvalidConfig(format!("seed {s} is not in the configured seeds {:?}", cfg.seeds))),
        None => Ok(cfg.seeds.clone()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    if cli.print_defaults {
        print!("{}", resolve_config(&cli)?.to_json()?);
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::InvalidConfig("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Generate(s) => {
            let cfg = resolve_config(&cli)?;
            for seed in seeds(&cfg, s)? {
                experiment::stage_generate(&cfg, seed, exec)?;
                println!("{}", cfg.seed_dir(seed).join("dataset").display());
            }
        }
        Command::TrainAe(s) => {
            let cfg = resolve_config(&cli)?;
            for seed in seeds(&cfg, s)? {
                experiment::stage_train_autoencoder(&cfg, seed, exec)?;
                println!("{}", cfg.seed_dir(seed).join("autoencoder").display());
            }
        }
        Command::TrainConservation(s) => {
            let cfg = resolve_config(&cli)?;
            for seed in seeds(&cfg, s)? {
                experiment::stage_train_conservation(&cfg, seed)?;
                println!("{}", experiment::conservation_path(&cfg, seed).display());
            }
        }
        Command::TrainDynamics { seed, no_projection } => {
            let cfg = resolve_config(&cli)?;
            for s in seeds(&cfg, seed)? {
                experiment::stage_train_dynamics(&cfg, s, !no_projection)?;
                println!("{}", experiment::dynamics_path(&cfg, s, !no_projection).display());
            }
        }
        Command::Evaluate => {
            let cfg = resolve_config(&cli)?;
            for r in experiment::summarize_r2(&experiment::stage_r2(&cfg, exec)?) {
                println!("r2 {}: {:.6} ± {:.6}", r.invariant, r.r2.mean, r.r2.std);
            }
            let report = experiment::stage_evaluate(&cfg, exec)?;
            for m in report.summary() {
                println!(
                    "{}: mse {:.3e} ± {:.3e}, violation {:.3e} ± {:.3e}, diverged {}",
                    m.model, m.mse.mean, m.mse.std, m.violation_sum.mean, m.violation_sum.std, m.diverged
                );
            }
            println!("{}", cfg.eval_dir().display());
        }
        Command::Sweep { axis, values } => {
            let cfg = resolve_config(&cli)?;
            let axis = SweepAxis::parse(axis)?;
            experiment::sweep(&cfg, axis, values, exec)?;
            println!("{}", cfg.output_dir.join(format!("sweep_{}.csv", axis.name())).display());
        }
        Command::ProbeTheory {
            function,
            cells,
            epsilon,
            deltas,
            no_deltas,
            out,
        } => {
            let deltas = if *no_deltas {
                Vec::new()
            } else {
                deltas.clone().unwrap_or_else(|| (1..=10).map(|k| k as f64 * 1e-3).collect())
            };
            let f = *function;
            let probe = isrl_needle_probe(|x| f.eval(x), *cells, *epsilon, &deltas)?;
            let header = vec!["delta".to_string(), "loss".to_string()];
            io::write_csv(out, &header, probe.rows.iter().map(|(d, l)| [fmt_f64(*d), fmt_f64(*l)]))?;
            println!("pair {:?}, baseline {:e}", probe.pair, probe.baseline);
            if let (Some(c1), Some(c2)) = (probe.linear_coef, probe.quadratic_coef) {
                println!("linear {c1:e}, quadratic {c2:e}");
            }
            println!("{}", out.display());
        }
        Command::Reproduce { table, systems, out } => {
            let mut opts = ReproduceOptions::new(out);
            if !systems.is_empty() {
                opts.systems = systems.iter().map(|s| System::by_name(s)).collect::<Result<_>>()?;
            }
            opts.overrides = cli.overrides.clone();
            let path = experiment::reproduce(Table::parse(table)?, &opts, exec)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
