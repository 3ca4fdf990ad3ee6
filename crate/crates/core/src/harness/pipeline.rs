use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::harness::config::MasterConfig;
use crate::numerics::Vector;
use crate::plant::generate_sysid_data;
use crate::scenario::{select_scenarios_pca, ScenarioSet};
use crate::sysid::{dmdc_fit, extract_parameter_cloud, model_metrics, ModelMetrics, ParameterCloud, SnapshotLog, StateSpaceModel};

/// Identification outputs that every benchmark run shares.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub seed: u64,
    pub log: SnapshotLog,
    pub model: StateSpaceModel,
    pub validation: ModelMetrics,
    pub cloud: ParameterCloud,
    pub scenarios: ScenarioSet,
    /// Time-mean of the identification outputs: the benchmark's initial
    /// profile and the reference outside the core window.
    pub mean_output: Vector,
}

#[derive(Serialize)]
struct PipelineSummary<'a> {
    seed: u64,
    samples: usize,
    pellet_events: usize,
    model_order: usize,
    spectral_radius: f64,
    fit_residual: f64,
    validation: &'a ModelMetrics,
    cloud_rows: usize,
    explained_variance: &'a [f64],
}

/// Identification data, DMDc fit, disturbance cloud and PCA scenarios.
///
/// The fitted model is scored on a second identification run with an
/// independent seed.
pub fn run_pipeline(cfg: &MasterConfig, seed: u64) -> Result<Pipeline> {
    cfg.validate()?;
    let log = generate_sysid_data(&cfg.truth, &cfg.experiment, cfg.timing, seed)?;
    let model = dmdc_fit(&log, cfg.model_order, cfg.timing.delay_steps())?;
    let held_out = generate_sysid_data(&cfg.truth, &cfg.experiment, cfg.timing, seed.wrapping_add(0x5EED))?;
    let validation = model_metrics(&model, &held_out)?;
    let cloud = extract_parameter_cloud(&log, &model)?;
    let scenarios = select_scenarios_pca(&cloud, cfg.scenarios.n_p, cfg.scenarios.include_centroid)?;
    let fractions = &cloud.pca.explained_variance_fractions;
    log::info!(
        "pca explained variance: {:?} (first two {:.4})",
        fractions.as_slice(),
        fractions.iter().take(2).sum::<f64>()
    );
    let mean_output = log.outputs.iter().fold(Vector::zeros(log.n_y()), |acc, y| acc + y) / log.len() as f64;
    Ok(Pipeline { seed, log, model, validation, cloud, scenarios, mean_output })
}

impl Pipeline {
    pub fn explained_variance_two(&self) -> f64 {
        self.cloud.pca.explained_variance_fractions.iter().take(2).sum()
    }

    /// Writes `sysid.csv`, `model.json`, `cloud.json`, `scenarios.json` and `pipeline.json`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("sysid.csv");
        self.log.write_csv(fs::File::create(&path)?)?;
        written.push(path);
        let summary = PipelineSummary {
            seed: self.seed,
            samples: self.log.len(),
            pellet_events: self.log.pellet_count(),
            model_order: self.model.n_x(),
            spectral_radius: self.model.spectral_radius(),
            fit_residual: self.model.fit_residual,
            validation: &self.validation,
            cloud_rows: self.cloud.len(),
            explained_variance: self.cloud.pca.explained_variance_fractions.as_slice(),
        };
        for (name, body) in [
            ("model.json", serde_json::to_string_pretty(&self.model)?),
            ("cloud.json", serde_json::to_string_pretty(&self.cloud)?),
            ("scenarios.json", self.scenarios.to_json()?),
            ("pipeline.json", serde_json::to_string_pretty(&summary)?),
        ] {
            let path = dir.join(name);
            fs::write(&path, body + "\n")?;
            written.push(path);
        }
        Ok(written)
    }
}
