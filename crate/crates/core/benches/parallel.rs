use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use conserve::autodiff::{init_params, MlpSpec};
use conserve::conservation::ConservationNet;
use conserve::dynamics::{DynamicsModel, DynamicsNet, ProjectedDynamics};
use conserve::exec::Exec;
use conserve::latent::{lift_dataset, Autoencoder};
use conserve::simeval::{evaluate, EvalModel, EvalParams};
use conserve::systems::{generate_dataset_with, DatasetParams, System};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_dataset");
    let sys = System::kepler();
    let p = DatasetParams::defaults_for(&sys);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("kepler", name), |b| {
            b.iter(|| generate_dataset_with(exec, &sys, &p, 0).unwrap())
        });
    }
    g.finish();
}

fn rollouts(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    let sys = System::spring_mass();
    let inv = ConservationNet::new(init_params(&MlpSpec::new(vec![2, 100, 1]).unwrap(), 1), true);
    let models: Vec<(u64, Vec<EvalModel>)> = (0..2)
        .map(|s| {
            let dy = DynamicsNet::new(init_params(&MlpSpec::new(vec![2, 100, 2]).unwrap(), s)).unwrap();
            let projected = ProjectedDynamics::new(dy.clone(), inv.clone()).unwrap();
            (
                s,
                vec![
                    EvalModel {
                        name: "baseline".into(),
                        field: DynamicsModel::Baseline(dy),
                        autoencoder: None,
                    },
                    EvalModel {
                        name: "concernet".into(),
                        field: DynamicsModel::Projected(projected),
                        autoencoder: None,
                    },
                ],
            )
        })
        .collect();
    let params = EvalParams {
        n_traj: 4,
        duration: 5.0,
        ..EvalParams::defaults_for(&sys)
    };
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("spring_mass", name), |b| {
            b.iter(|| evaluate(&sys, &models, &params, exec).unwrap())
        });
    }
    g.finish();
}

fn lifting(c: &mut Criterion) {
    let mut g = c.benchmark_group("lift_dataset");
    g.sample_size(10);
    let sys = System::heat();
    let p = DatasetParams {
        n_traj: 8,
        ..DatasetParams::defaults_for(&sys)
    };
    let ds = generate_dataset_with(Exec::default(), &sys, &p, 0).unwrap();
    let ae = Autoencoder::init(101, &[32, 16], 9, 0).unwrap();
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new("heat", name), |b| b.iter(|| lift_dataset(&ae, &ds, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, generation, rollouts, lifting);
criterion_main!(benches);
