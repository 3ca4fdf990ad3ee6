use std::fs;

use pellet_mpc::control::ControllerKind;
use pellet_mpc::harness::*;
use pellet_mpc::numerics::{Matrix, Vector};
use pellet_mpc::scenario::ScenarioSet;
use pellet_mpc::Error;

fn short_config(duration_ms: usize, seeds: Vec<u64>) -> MasterConfig {
    let mut cfg = MasterConfig::default();
    cfg.benchmark.duration_ms = duration_ms;
    cfg.benchmark.reference = vec![(0, 1.0), (duration_ms / 2 / 100 * 100, 1.2)];
    cfg.benchmark.seeds = seeds;
    cfg
}

#[test]
fn pipeline_artifacts_are_reproducible() {
    let cfg = MasterConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_pipeline(&cfg, 3).unwrap().write_artifacts(a.path()).unwrap();
    let second = run_pipeline(&cfg, 3).unwrap().write_artifacts(b.path()).unwrap();
    assert_eq!(first.len(), 5);
    for (x, y) in first.iter().zip(&second) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn reference_cloud_is_nearly_planar() {
    let cfg = MasterConfig::default();
    let p = run_pipeline(&cfg, cfg.seed).unwrap();
    assert!(p.explained_variance_two() >= 0.90, "{}", p.explained_variance_two());
    assert_eq!(p.scenarios.len(), 4);
    assert!(p.model.spectral_radius() < 1.0);
}

#[test]
fn no_pellets_means_no_input_model() {
    let mut cfg = MasterConfig::default();
    cfg.experiment.firing_probability = 0.0;
    assert!(matches!(run_pipeline(&cfg, 1), Err(Error::Unidentifiable(_))));
}

#[test]
fn report_layout_and_rescan() {
    let mut cfg = short_config(2000, vec![4]);
    cfg.benchmark.controllers = vec![ControllerKind::Mi, ControllerKind::MsMi];
    let p = run_pipeline(&cfg, cfg.seed).unwrap();
    let result = run_benchmark(&cfg, &p, true).unwrap();
    assert_eq!(result.runs.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(dir.path(), &result).unwrap();
    assert_eq!(written.len(), 2 * 6 + 1);
    let summary = Summary::read(&dir.path().join("summary.json")).unwrap();
    for run in &summary.runs {
        let prefix = format!("{}_cloud_seed4", run.controller.label());
        for panel in ["core", "rrmse", "edge", "decisions", "solve_time"] {
            let body = fs::read_to_string(dir.path().join(format!("plot_{prefix}_{panel}.csv"))).unwrap();
            assert_eq!(body.lines().count(), 2000 + 1, "{panel}");
        }
        let rescanned = rescan_trace_violations(&dir.path().join(&run.trace_file), 1.0).unwrap();
        assert_eq!(rescanned, run.metrics.violation_times);
    }
    assert_eq!(summary.controllers.len(), 2);
}

#[test]
fn zero_uncertainty_collapses_the_controllers() {
    let cfg = short_config(3000, vec![2]);
    let mut p = run_pipeline(&cfg, cfg.seed).unwrap();
    p.cloud.p = Matrix::zeros(p.cloud.len(), p.model.n_x());
    p.scenarios = ScenarioSet::uniform(vec![Vector::zeros(p.model.n_x()); 4]).unwrap();
    let result = run_benchmark(&cfg, &p, true).unwrap();
    let fired = |k: ControllerKind| &result.runs.iter().find(|r| r.kind == k).unwrap().trace.u_fired;
    // Both branch-and-bound controllers solve the same problem. PTH is a
    // heuristic and is not expected to reproduce the optimum.
    assert_eq!(fired(ControllerKind::Mi), fired(ControllerKind::MsMi));
    assert!(result.runs.iter().all(|r| r.metrics.violation_count == 0));
}
