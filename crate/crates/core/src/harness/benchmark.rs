use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{ControllerKind, MpcController, RecordedInstance, ReferenceSchedule};
use crate::control::ControllerConfig;
use crate::error::{Error, Result};
use crate::harness::config::{DrawSpec, MasterConfig};
use crate::harness::metrics::{metrics, rrmse_series, MetricsReport};
use crate::harness::pipeline::Pipeline;
use crate::numerics::Vector;
use crate::optim::{pth_solve_condensed, solve_miqp_bnb, QpStatus};
use crate::plant::{run_executive, ClosedLoopTrace, DrawMode, EdgeConstraint, ExecutiveOptions, LpvPlant};
use crate::sysid::ParameterCloud;

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub kind: ControllerKind,
    pub seed: u64,
    pub draw: DrawSpec,
    pub trace: ClosedLoopTrace,
    /// Per-step core RRMSE in percent.
    pub rrmse: Vec<f64>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub reference: ReferenceSchedule,
    pub t_cpu_lim_ms: f64,
    /// Sorted by seed, then controller.
    pub runs: Vec<RunRecord>,
}

pub fn benchmark_reference(cfg: &MasterConfig, pipeline: &Pipeline) -> Result<ReferenceSchedule> {
    ReferenceSchedule::new(cfg.reference_segments(), cfg.controller.n_core, pipeline.mean_output.clone())
}

/// Cloud rows whose first two principal-component scores are vertices of the
/// convex hull of all scores. Duplicated rows are reported once.
pub fn hull_exterior_rows(cloud: &ParameterCloud) -> Vec<usize> {
    let m = cloud.len();
    let k = cloud.pca.n_components().min(2);
    let pts: Vec<(f64, f64, usize)> = (0..m)
        .map(|i| {
            let row = cloud.row(i);
            let s1 = if k > 1 { cloud.pca.score(&row, 1) } else { 0.0 };
            (cloud.pca.score(&row, 0), s1, i)
        })
        .collect();
    let mut sorted = pts;
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    sorted.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    if sorted.len() < 3 {
        return sorted.iter().map(|p| p.2).collect();
    }
    let cross = |o: &(f64, f64, usize), a: &(f64, f64, usize), b: &(f64, f64, usize)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let span = sorted.iter().fold(0.0f64, |acc, p| acc.max(p.0.abs()).max(p.1.abs()));
    let flat = 1e-12 * span * span;
    // Andrew's monotone chain; boundary points collinear to rounding are not vertices.
    let mut hull: Vec<(f64, f64, usize)> = Vec::with_capacity(2 * sorted.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64, usize)>> =
            if pass == 0 { Box::new(sorted.iter()) } else { Box::new(sorted.iter().rev()) };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= flat {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    let mut rows: Vec<usize> = hull.iter().map(|p| p.2).collect();
    rows.sort_unstable();
    rows.dedup();
    rows
}

fn draw_mode(draw: DrawSpec, cloud: &ParameterCloud) -> (DrawMode, f64) {
    match draw {
        DrawSpec::Cloud => (DrawMode::UniformFromCloud, 1.0),
        DrawSpec::Stress { amplitude } => {
            let rows = hull_exterior_rows(cloud).into_iter().map(|i| cloud.row(i)).collect();
            (DrawMode::ScenariosOnly(rows), amplitude)
        }
    }
}

/// One closed loop. The plant's `n`-th perturbation depends only on `seed`,
/// `draw` and `n`, so runs with the same seed are paired across controllers.
pub fn run_closed_loop(
    cfg: &MasterConfig,
    pipeline: &Pipeline,
    kind: ControllerKind,
    seed: u64,
    draw: DrawSpec,
    deterministic: bool,
    record: bool,
) -> Result<(RunRecord, Vec<RecordedInstance>)> {
    let reference = benchmark_reference(cfg, pipeline)?;
    let (mode, scale) = draw_mode(draw, &pipeline.cloud);
    let x0 = pipeline.model.lift_inverse(&pipeline.mean_output);
    let mut plant =
        LpvPlant::new(pipeline.model.clone(), &pipeline.cloud, mode, seed, x0)?.with_perturbation_scale(scale);
    let mut controller = MpcController::new(
        ControllerConfig { kind, ..cfg.controller.clone() },
        pipeline.model.clone(),
        Some(&pipeline.scenarios),
    )?
    .recording(record);
    let edge = EdgeConstraint { index: cfg.controller.edge_index, limit: cfg.controller.n_lim };
    let trace = run_executive(
        &mut plant,
        &mut controller,
        &reference,
        cfg.duration_steps(),
        cfg.timing,
        edge,
        ExecutiveOptions { deterministic },
    )?;
    let rrmse = rrmse_series(&trace, &reference)?;
    let metrics = metrics(&trace, &reference, cfg.benchmark.t_cpu_lim_ms)?;
    Ok((RunRecord { kind, seed, draw, trace, rrmse, metrics }, controller.take_recorded()))
}

/// Every configured controller over every seed.
pub fn run_benchmark(cfg: &MasterConfig, pipeline: &Pipeline, deterministic: bool) -> Result<BenchmarkResult> {
    let b = &cfg.benchmark;
    let mut jobs: Vec<(u64, ControllerKind)> =
        b.seeds.iter().flat_map(|&s| b.controllers.iter().map(move |&k| (s, k))).collect();
    jobs.sort_unstable();
    jobs.dedup();
    let workers = match b.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(seed, kind)) = jobs.get(i) else { break };
                let out = run_closed_loop(cfg, pipeline, kind, seed, b.draw, deterministic, false).map(|r| r.0);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    let runs = slots
        .into_inner()
        .map_err(|_| Error::NumericalFailure("benchmark worker panicked".into()))?
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkResult { reference: benchmark_reference(cfg, pipeline)?, t_cpu_lim_ms: b.t_cpu_lim_ms, runs })
}

/// Paired B&B/PTH solves of the same condensed instances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: usize,
    pub agreements: usize,
    /// Instances where B&B finds no plan that fires now.
    pub firing_infeasible: usize,
    /// Of those, how many PTH fired on.
    pub pth_fired_when_infeasible: usize,
    pub bnb_mean_ms: f64,
    pub pth_mean_ms: f64,
    /// `(t, bnb u0, pth u0)` for every disagreement.
    pub disagreements: Vec<(usize, u8, u8)>,
}

impl AuditReport {
    pub fn agreement(&self) -> f64 {
        if self.instances == 0 {
            return 1.0;
        }
        self.agreements as f64 / self.instances as f64
    }

    pub fn time_ratio(&self) -> f64 {
        self.pth_mean_ms / self.bnb_mean_ms
    }
}

/// Times only the solver calls; condensing is shared and excluded.
pub fn paired_audit(instances: &[RecordedInstance], cfg: &ControllerConfig) -> AuditReport {
    let opts = cfg.bnb_options();
    let mut rep = AuditReport { instances: instances.len(), ..AuditReport::default() };
    let (mut tb, mut tp) = (0.0, 0.0);
    for inst in instances {
        let v0 = inst.spec.tree.variable(0, 0);
        let started = Instant::now();
        let bnb = solve_miqp_bnb(&inst.qp, None, &opts);
        tb += started.elapsed().as_secs_f64();
        let started = Instant::now();
        let pth = pth_solve_condensed(&inst.qp, &cfg.pth);
        tp += started.elapsed().as_secs_f64();
        let bit = |z: &Vector| u8::from(z[v0] > 0.5);
        let (ub, up) = (if bnb.objective.is_finite() { bit(&bnb.z) } else { 0 }, bit(&pth.z));
        if ub == up {
            rep.agreements += 1;
        } else {
            rep.disagreements.push((inst.t, ub, up));
        }
        let mut forced = inst.qp.clone();
        forced.lb[v0] = 1.0;
        if solve_miqp_bnb(&forced, None, &opts).status == QpStatus::Infeasible {
            rep.firing_infeasible += 1;
            rep.pth_fired_when_infeasible += usize::from(up == 1);
        }
    }
    if !instances.is_empty() {
        rep.bnb_mean_ms = tb * 1e3 / instances.len() as f64;
        rep.pth_mean_ms = tp * 1e3 / instances.len() as f64;
    }
    rep
}
