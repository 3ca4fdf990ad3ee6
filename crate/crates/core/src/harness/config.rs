use serde::{Deserialize, Serialize};

use crate::control::{ControllerConfig, ControllerKind};
use crate::error::{Error, Result};
use crate::plant::{SysidExperiment, Timing, TruthPlantConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Perturbation amplitude of the stress draws, frozen after bring-up.
pub const STRESS_AMPLITUDE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_p: usize,
    pub include_centroid: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { n_p: 4, include_centroid: false }
    }
}

/// How the benchmark plant draws `p` at each pellet entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum DrawSpec {
    /// Uniform over the whole identified cloud.
    Cloud,
    /// Uniform over the cloud rows on the convex hull of their first two
    /// principal-component scores, multiplied by `amplitude`.
    Stress { amplitude: f64 },
}

impl DrawSpec {
    pub fn label(self) -> &'static str {
        match self {
            DrawSpec::Cloud => "cloud",
            DrawSpec::Stress { .. } => "stress",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub duration_ms: usize,
    /// `(start ms, core target)`, piecewise constant.
    pub reference: Vec<(usize, f64)>,
    pub seeds: Vec<u64>,
    pub controllers: Vec<ControllerKind>,
    pub draw: DrawSpec,
    pub t_cpu_lim_ms: f64,
    /// Closed loops run concurrently on this many threads; 0 picks the machine's parallelism.
    pub workers: usize,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            duration_ms: 10_000,
            reference: vec![(0, 1.0), (5_000, 1.2)],
            seeds: (1..=20).collect(),
            controllers: vec![ControllerKind::Mi, ControllerKind::MsMi, ControllerKind::MsPth],
            draw: DrawSpec::Cloud,
            t_cpu_lim_ms: 100.0,
            workers: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn stress() -> Self {
        Self { draw: DrawSpec::Stress { amplitude: STRESS_AMPLITUDE }, ..Self::default() }
    }
}

/// Everything a pipeline and benchmark run needs, in one versioned file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MasterConfig {
    pub schema_version: u32,
    /// Seeds the identification experiment.
    pub seed: u64,
    pub truth: TruthPlantConfig,
    pub experiment: SysidExperiment,
    pub timing: Timing,
    pub model_order: usize,
    pub scenarios: ScenarioConfig,
    /// Shared tuning; `kind` is overridden per benchmark run.
    pub controller: ControllerConfig,
    pub benchmark: BenchmarkSpec,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            truth: TruthPlantConfig::default(),
            experiment: SysidExperiment::default(),
            timing: Timing::default(),
            model_order: 4,
            scenarios: ScenarioConfig::default(),
            controller: ControllerConfig::default(),
            benchmark: BenchmarkSpec::default(),
        }
    }
}

impl MasterConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => return Err(Error::InvalidConfig(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}"))),
            None => return Err(Error::InvalidConfig("config is missing schema_version".into())),
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        self.timing.validate()?;
        self.controller.validate(self.truth.n_y)?;
        if self.model_order == 0 {
            return Err(Error::InvalidConfig("model_order must be positive".into()));
        }
        let t = self.timing;
        if self.controller.control_period != t.control_period_steps() || self.controller.delay != t.delay_steps() {
            return Err(Error::InvalidConfig(format!(
                "controller period/delay ({}, {}) disagree with timing ({}, {}) in tau_s steps",
                self.controller.control_period,
                self.controller.delay,
                t.control_period_steps(),
                t.delay_steps()
            )));
        }
        let b = &self.benchmark;
        if b.duration_ms == 0 || b.duration_ms % t.tau_s != 0 {
            return Err(Error::InvalidConfig("benchmark duration must be a positive multiple of tau_s".into()));
        }
        if b.reference.first().map(|s| s.0) != Some(0) {
            return Err(Error::InvalidConfig("benchmark reference must start at 0 ms".into()));
        }
        for &(start, _) in &b.reference[1..] {
            if start < t.start_offset || (start - t.start_offset) % t.tau_c != 0 {
                return Err(Error::InvalidConfig(format!("reference switch at {start} ms is off the control grid")));
            }
        }
        if !(b.t_cpu_lim_ms > 0.0) {
            return Err(Error::InvalidConfig("t_cpu_lim_ms must be positive".into()));
        }
        if let DrawSpec::Stress { amplitude } = b.draw {
            if !(amplitude.is_finite() && amplitude > 0.0) {
                return Err(Error::InvalidConfig("stress amplitude must be positive".into()));
            }
        }
        Ok(())
    }

    /// Benchmark reference in `tau_s` steps.
    pub fn reference_segments(&self) -> Vec<(usize, f64)> {
        self.benchmark.reference.iter().map(|&(ms, v)| (ms / self.timing.tau_s, v)).collect()
    }

    pub fn duration_steps(&self) -> usize {
        self.benchmark.duration_ms / self.timing.tau_s
    }
}
