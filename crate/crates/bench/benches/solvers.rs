use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pellet_mpc::control::{ControllerKind, RecordedInstance};
use pellet_mpc::harness::{run_closed_loop, run_pipeline, DrawSpec, MasterConfig, Pipeline};
use pellet_mpc::numerics::{pseudoinverse, thin_svd};
use pellet_mpc::optim::{condense, pth_solve_condensed, solve_miqp_bnb, solve_qp, BnbOptions, PthSchedule};

fn instances() -> (MasterConfig, Pipeline, Vec<RecordedInstance>) {
    let mut cfg = MasterConfig::default();
    cfg.benchmark.duration_ms = 2000;
    cfg.benchmark.reference = vec![(0, 1.0), (1000, 1.2)];
    let p = run_pipeline(&cfg, cfg.seed).expect("pipeline");
    let (_, rec) = run_closed_loop(&cfg, &p, ControllerKind::MsMi, 1, DrawSpec::Cloud, true, true).expect("closed loop");
    (cfg, p, rec)
}

fn solvers(c: &mut Criterion) {
    let (_, p, rec) = instances();
    // Instance right after the reference step; firing decisions are nontrivial there.
    let inst = &rec[rec.len() / 2 + 1];
    let mut g = c.benchmark_group("ms-instance");
    g.sample_size(20);
    g.bench_function("condense", |b| b.iter(|| condense(black_box(&inst.spec)).unwrap()));
    g.bench_function("relaxation", |b| b.iter(|| solve_qp(black_box(&inst.qp))));
    g.bench_function("bnb", |b| b.iter(|| solve_miqp_bnb(black_box(&inst.qp), None, &BnbOptions::default())));
    g.bench_function("pth", |b| b.iter(|| pth_solve_condensed(black_box(&inst.qp), &PthSchedule::default())));
    g.finish();

    let snapshots = pellet_mpc::numerics::Matrix::from_fn(p.log.n_y(), p.log.len(), |i, t| p.log.outputs[t][i]);
    let mut g = c.benchmark_group("numerics");
    g.sample_size(10);
    g.bench_function("thin-svd-snapshots", |b| b.iter(|| thin_svd(black_box(&snapshots)).unwrap()));
    g.bench_function("pinv-output-map", |b| b.iter(|| pseudoinverse(black_box(&p.model.c), None).unwrap()));
    g.finish();
}

fn closed_loop(c: &mut Criterion) {
    let (cfg, p, _) = instances();
    let mut g = c.benchmark_group("closed-loop-2s");
    g.sample_size(10);
    for kind in [ControllerKind::Mi, ControllerKind::MsMi, ControllerKind::MsPth] {
        g.bench_function(kind.label(), |b| {
            b.iter(|| run_closed_loop(&cfg, &p, kind, 1, DrawSpec::Cloud, true, false).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, solvers, closed_loop);
criterion_main!(benches);
