use serde::{Deserialize, Serialize};

use crate::control::ReferenceSchedule;
use crate::error::{Error, Result};
use crate::plant::ClosedLoopTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Time average of the per-step core RRMSE, in percent.
    pub mean_rrmse: f64,
    pub violation_count: usize,
    /// Milliseconds.
    pub violation_times: Vec<usize>,
    /// Over control instants only.
    pub solve_time_mean_ms: f64,
    pub solve_time_max_ms: f64,
    /// Control instants whose solve exceeded `t_cpu_lim`.
    pub cpu_limit_exceedances: Vec<usize>,
    pub pellet_count: usize,
}

/// Per-step RRMSE over the core window of `reference`, in percent.
pub fn rrmse_series(trace: &ClosedLoopTrace, reference: &ReferenceSchedule) -> Result<Vec<f64>> {
    let n = reference.n_core;
    if n == 0 {
        return Err(Error::InvalidArgument("reference has an empty core window".into()));
    }
    (0..trace.len())
        .map(|t| {
            let target = reference.profile_at(t);
            let y = &trace.outputs[t];
            let mut acc = 0.0;
            for i in 0..n {
                if target[i] == 0.0 {
                    return Err(Error::DivisionGuard(format!("reference is zero at core index {i}, t = {t}")));
                }
                let e = (y[i] - target[i]) / target[i];
                acc += e * e;
            }
            Ok(100.0 * (acc / n as f64).sqrt())
        })
        .collect()
}

pub fn metrics(trace: &ClosedLoopTrace, reference: &ReferenceSchedule, t_cpu_lim_ms: f64) -> Result<MetricsReport> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("trace is empty".into()));
    }
    let series = rrmse_series(trace, reference)?;
    let tau_s = trace.timing.tau_s;
    let violation_times: Vec<usize> = (0..trace.len()).filter(|&t| trace.violation(t)).map(|t| t * tau_s).collect();
    let solves: Vec<(usize, f64)> = trace.statuses.iter().map(|&(t, _)| (t, trace.solve_time_ms[t])).collect();
    let solve_time_mean_ms =
        if solves.is_empty() { 0.0 } else { solves.iter().map(|s| s.1).sum::<f64>() / solves.len() as f64 };
    Ok(MetricsReport {
        mean_rrmse: series.iter().sum::<f64>() / series.len() as f64,
        violation_count: violation_times.len(),
        violation_times,
        solve_time_mean_ms,
        solve_time_max_ms: solves.iter().map(|s| s.1).fold(0.0, f64::max),
        cpu_limit_exceedances: solves.iter().filter(|s| s.1 > t_cpu_lim_ms).map(|s| s.0 * tau_s).collect(),
        pellet_count: trace.u_fired.iter().filter(|&&u| u == 1).count(),
    })
}
