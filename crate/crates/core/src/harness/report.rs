use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::ControllerKind;
use crate::error::{Error, Result};
use crate::harness::benchmark::{BenchmarkResult, RunRecord};
use crate::harness::config::{DrawSpec, SCHEMA_VERSION};
use crate::harness::metrics::MetricsReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub controller: ControllerKind,
    pub seed: u64,
    pub draw: DrawSpec,
    pub trace_file: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerAggregate {
    pub controller: ControllerKind,
    pub runs: usize,
    /// Mean over runs of each run's mean RRMSE.
    pub mean_rrmse: f64,
    pub violations: usize,
    pub runs_with_violations: usize,
    pub solve_time_mean_ms: f64,
    pub solve_time_max_ms: f64,
    pub cpu_limit_exceedances: usize,
    pub pellets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub n_lim: Option<f64>,
    pub runs: Vec<RunSummary>,
    pub controllers: Vec<ControllerAggregate>,
}

impl Summary {
    pub fn from_runs(runs: Vec<RunSummary>, n_lim: Option<f64>) -> Self {
        let mut kinds: Vec<ControllerKind> = runs.iter().map(|r| r.controller).collect();
        kinds.sort_unstable();
        kinds.dedup();
        let controllers = kinds
            .into_iter()
            .map(|kind| {
                let mine: Vec<&MetricsReport> = runs.iter().filter(|r| r.controller == kind).map(|r| &r.metrics).collect();
                let n = mine.len() as f64;
                ControllerAggregate {
                    controller: kind,
                    runs: mine.len(),
                    mean_rrmse: mine.iter().map(|m| m.mean_rrmse).sum::<f64>() / n,
                    violations: mine.iter().map(|m| m.violation_count).sum(),
                    runs_with_violations: mine.iter().filter(|m| m.violation_count > 0).count(),
                    solve_time_mean_ms: mine.iter().map(|m| m.solve_time_mean_ms).sum::<f64>() / n,
                    solve_time_max_ms: mine.iter().map(|m| m.solve_time_max_ms).fold(0.0, f64::max),
                    cpu_limit_exceedances: mine.iter().map(|m| m.cpu_limit_exceedances.len()).sum(),
                    pellets: mine.iter().map(|m| m.pellet_count).sum(),
                }
            })
            .collect();
        Self { schema_version: SCHEMA_VERSION, n_lim, runs, controllers }
    }

    pub fn aggregate(&self, kind: ControllerKind) -> Option<&ControllerAggregate> {
        self.controllers.iter().find(|c| c.controller == kind)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn run_prefix(run: &RunRecord) -> String {
    format!("{}_{}_seed{}", run.kind.label(), run.draw.label(), run.seed)
}

fn write_rows<F>(path: &Path, header: &str, rows: usize, mut row: F) -> Result<()>
where
    F: FnMut(usize) -> String,
{
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for t in 0..rows {
        writeln!(out, "{}", row(t))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes per-run traces and plot data, plus `summary.json`. Returns every path written.
///
/// Plot files per run: `_core` (core average vs reference), `_rrmse`, `_edge`
/// (edge density vs limit), `_decisions` and `_solve_time`, one row per `tau_s`.
pub fn emit_report(dir: &Path, result: &BenchmarkResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut summaries = Vec::with_capacity(result.runs.len());
    let n_core = result.reference.n_core;
    for run in &result.runs {
        let prefix = run_prefix(run);
        let trace = &run.trace;
        let trace_name = format!("trace_{prefix}.csv");
        let path = dir.join(&trace_name);
        trace.write_csv(fs::File::create(&path)?)?;
        written.push(path);
        let tau_s = trace.timing.tau_s;
        let limit = trace.edge.limit;
        let plots: [(&str, &str, Box<dyn Fn(usize) -> String + '_>); 5] = [
            ("core", "t,core_average,reference", Box::new(|t| {
                let core = trace.outputs[t].rows(0, n_core).mean();
                format!("{},{},{}", t * tau_s, core, result.reference.core_target(t))
            })),
            ("rrmse", "t,rrmse_percent", Box::new(|t| format!("{},{}", t * tau_s, run.rrmse[t]))),
            ("edge", "t,n_edge,n_lim", Box::new(|t| format!("{},{},{}", t * tau_s, trace.n_edge(t), limit))),
            ("decisions", "t,u_fired,pellet_entered", Box::new(|t| {
                format!("{},{},{}", t * tau_s, trace.u_fired[t], trace.pellet_entered[t])
            })),
            ("solve_time", "t,solve_time_ms,t_cpu_lim_ms", Box::new(|t| {
                format!("{},{},{}", t * tau_s, trace.solve_time_ms[t], result.t_cpu_lim_ms)
            })),
        ];
        for (panel, header, row) in plots.iter() {
            let path = dir.join(format!("plot_{prefix}_{panel}.csv"));
            write_rows(&path, header, trace.len(), row)?;
            written.push(path);
        }
        summaries.push(RunSummary {
            controller: run.kind,
            seed: run.seed,
            draw: run.draw,
            trace_file: trace_name,
            metrics: run.metrics.clone(),
        });
    }
    let n_lim = result.runs.first().map(|r| r.trace.edge.limit);
    let summary = Summary::from_runs(summaries, n_lim);
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    written.push(path);
    Ok(written)
}

/// Violation times (ms) recomputed from a trace CSV's raw edge column.
pub fn rescan_trace_violations(path: &Path, n_lim: f64) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("trace has no '{name}' column")))
    };
    let (t_col, edge_col) = (col("t")?, col("n_edge")?);
    let mut times = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", &rec[i])));
        if parse(edge_col)? > n_lim {
            times.push(parse(t_col)? as usize);
        }
    }
    Ok(times)
}
