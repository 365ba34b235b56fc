//! Sequential vs rayon-parallel evaluation of the loss, its gradient, the
//! MMD metric and particle simulation.
//!
//! Build with `--no-default-features` to check that both variants collapse
//! to the calling thread.

use alltimeot::flows::{FlowKind, MarginalFlow};
use alltimeot::kernel::RadialKernel;
use alltimeot::metrics::mmd;
use alltimeot::models::{FeatureSet, ModelSpec};
use alltimeot::par::Execution;
use alltimeot::penalty::{batch_drift, draw_batch, evaluate_drift_loss, LossConfig, TimeMode};
use alltimeot::rng;
use alltimeot::simulate::{simulate_ode, SimulationConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("drift_loss");
    group.sample_size(10);
    for (kind, sigma) in [
        (FlowKind::GaussTranslate1d, 0.0),
        (FlowKind::StochasticGauss1d { sigma: 1.0 }, 1.0),
    ] {
        let flow = MarginalFlow::unit(kind);
        let batch =
            draw_batch(&flow, 50, 25, 50, TimeMode::Grid, &mut rng::stream(0, &[1])).unwrap();
        let drift = batch_drift(&flow.truth(), &batch, Execution::Sequential);
        for (label, exec) in MODES {
            let cfg = LossConfig::new(1e3, sigma, 1.0, RadialKernel::default())
                .unwrap()
                .with_execution(exec);
            group.bench_with_input(
                BenchmarkId::new(format!("sigma{sigma}"), label),
                &cfg,
                |b, cfg| b.iter(|| evaluate_drift_loss(&batch, &drift, cfg, true).unwrap()),
            );
        }
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let flow = MarginalFlow::unit(FlowKind::GaussTranslate2d);
    let a = flow.sample(0.5, 2000, &mut rng::stream(0, &[2])).unwrap();
    let b = flow.sample(0.5, 2000, &mut rng::stream(0, &[3])).unwrap();
    let kernel = RadialKernel::default();
    let mut group = c.benchmark_group("mmd_2000");
    group.sample_size(10);
    for (label, exec) in MODES {
        group.bench_function(label, |bench| {
            bench.iter(|| mmd(&a, &b, &kernel, exec).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let flow = MarginalFlow::unit(FlowKind::Bifurcation2d);
    let model = ModelSpec::Dictionary {
        features: FeatureSet::Tanh2d,
    }
    .init(&mut rng::stream(0, &[4]))
    .unwrap();
    let x0 = flow.sample(0.0, 4000, &mut rng::stream(0, &[5])).unwrap();
    let mut group = c.benchmark_group("simulate_ode_4000x200");
    group.sample_size(10);
    for (label, exec) in MODES {
        let cfg = SimulationConfig {
            particles: 4000,
            steps: 200,
            horizon: 1.0,
            sigma: 0.0,
            snapshot_times: vec![0.0, 0.5, 1.0],
            execution: exec,
        };
        group.bench_function(label, |b| {
            b.iter(|| simulate_ode(&model, &x0, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, loss, metrics, simulation);
criterion_main!(benches);
