//! Synthetic 1-D density transport plant used to generate identification data.
//!
//! Explicit finite differences for
//! `dn/dt = d/drho (D(rho) dn/drho) - lambda_edge chi_edge n + s_core chi_core`
//! with zero flux at the core and a fixed density at the last grid point.
//! Pellets add a Gaussian deposit with randomly drawn amplitude, center and width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TruthPlantConfig {
    pub n_y: usize,
    /// Diffusion number `D(0) dt / drho^2` of one substep.
    pub diffusion_number: f64,
    /// `D(rho) = D(0) (1 + gain rho^2)`; a negative gain (above -1) gives an edge transport barrier.
    pub diffusion_profile_gain: f64,
    /// Explicit substeps per `tau_s`.
    pub substeps: usize,
    /// Sink rate per `tau_s` on `rho > edge_sink_start`.
    pub edge_sink_rate: f64,
    pub edge_sink_start: f64,
    /// Source rate per `tau_s` on `rho < core_source_end`.
    pub core_source_rate: f64,
    pub core_source_end: f64,
    /// Density held at `rho = 1`.
    pub boundary_density: f64,
    pub pellet_amplitude: [f64; 2],
    pub pellet_center: [f64; 2],
    pub pellet_width: [f64; 2],
    /// Flat initial density before the warm-up phase.
    pub initial_density: f64,
    pub seed: u64,
}

impl Default for TruthPlantConfig {
    fn default() -> Self {
        Self {
            n_y: 100,
            diffusion_number: 0.2,
            diffusion_profile_gain: -0.7,
            substeps: 10,
            edge_sink_rate: 0.0005,
            edge_sink_start: 0.9,
            core_source_rate: 0.0004,
            core_source_end: 0.3,
            boundary_density: 0.05,
            pellet_amplitude: [0.25, 0.4],
            pellet_center: [0.75, 0.85],
            pellet_width: [0.03, 0.06],
            initial_density: 0.7,
            seed: 7,
        }
    }
}

impl TruthPlantConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_y < 3 {
            return bad(format!("n_y = {} is too small", self.n_y));
        }
        if !(self.diffusion_number > 0.0) || !(self.diffusion_profile_gain > -1.0) {
            return bad("diffusion coefficient must be positive everywhere".into());
        }
        let max_number = self.diffusion_number * (1.0 + self.diffusion_profile_gain.max(0.0));
        if max_number >= 0.5 {
            return bad(format!("explicit scheme unstable: max D dt/drho^2 = {max_number} >= 0.5"));
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        let sink_per_substep = self.edge_sink_rate / self.substeps as f64;
        if self.edge_sink_rate < 0.0 || 2.0 * max_number + sink_per_substep > 1.0 {
            return bad("edge sink rate breaks monotonicity of the explicit scheme".into());
        }
        if self.core_source_rate < 0.0 || self.boundary_density < 0.0 || self.initial_density < 0.0 {
            return bad("source, boundary and initial densities must be nonnegative".into());
        }
        let [c_lo, c_hi] = self.pellet_center;
        if !(0.0 < c_lo && c_lo <= c_hi && c_hi < 1.0) {
            return bad(format!("pellet center range [{c_lo}, {c_hi}] outside (0, 1)"));
        }
        let [a_lo, a_hi] = self.pellet_amplitude;
        let [w_lo, w_hi] = self.pellet_width;
        if !(a_lo > 0.0 && a_lo <= a_hi) || !(w_lo > 0.0 && w_lo <= w_hi) {
            return bad("pellet amplitude and width ranges must be positive and ordered".into());
        }
        Ok(())
    }

    pub fn rho(&self, i: usize) -> f64 {
        i as f64 / (self.n_y - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deposit {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl Deposit {
    pub fn shape(&self, rho: f64) -> f64 {
        let z = (rho - self.center) / self.width;
        (-0.5 * z * z).exp()
    }
}

/// Particle bookkeeping of one step, in grid-sum units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParticleBudget {
    pub source: f64,
    pub sink: f64,
    /// Diffusive flux into the fixed boundary node.
    pub boundary_outflow: f64,
    pub deposited: f64,
}

impl ParticleBudget {
    pub fn net(&self) -> f64 {
        self.source - self.sink - self.boundary_outflow + self.deposited
    }

    fn add(&mut self, other: &ParticleBudget) {
        self.source += other.source;
        self.sink += other.sink;
        self.boundary_outflow += other.boundary_outflow;
        self.deposited += other.deposited;
    }
}

#[derive(Debug, Clone)]
pub struct TruthPlant {
    config: TruthPlantConfig,
    /// Diffusion numbers on the half-grid, `kappa[i]` between nodes `i` and `i + 1`.
    kappa: Vec<f64>,
    sink: Vec<f64>,
    source: Vec<f64>,
    profile: Vector,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
}

impl TruthPlant {
    pub fn new(config: TruthPlantConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_y;
        let sub = config.substeps as f64;
        let kappa = (0..n - 1)
            .map(|i| {
                let rho = 0.5 * (config.rho(i) + config.rho(i + 1));
                config.diffusion_number * (1.0 + config.diffusion_profile_gain * rho * rho)
            })
            .collect();
        let sink = (0..n)
            .map(|i| if config.rho(i) > config.edge_sink_start { config.edge_sink_rate / sub } else { 0.0 })
            .collect();
        let source = (0..n)
            .map(|i| if config.rho(i) < config.core_source_end { config.core_source_rate / sub } else { 0.0 })
            .collect();
        let mut profile = Vector::from_element(n, config.initial_density);
        profile[n - 1] = config.boundary_density;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { config, kappa, sink, source, profile, rng, scratch: vec![0.0; n] })
    }

    pub fn config(&self) -> &TruthPlantConfig {
        &self.config
    }

    pub fn profile(&self) -> &Vector {
        &self.profile
    }

    pub fn set_profile(&mut self, profile: Vector) -> Result<()> {
        if profile.len() != self.config.n_y || profile.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("profile must be finite, nonnegative, length n_y".into()));
        }
        self.profile = profile;
        Ok(())
    }

    pub fn draw_deposit(&mut self) -> Deposit {
        let [a_lo, a_hi] = self.config.pellet_amplitude;
        let [c_lo, c_hi] = self.config.pellet_center;
        let [w_lo, w_hi] = self.config.pellet_width;
        Deposit {
            amplitude: sample(&mut self.rng, a_lo, a_hi),
            center: sample(&mut self.rng, c_lo, c_hi),
            width: sample(&mut self.rng, w_lo, w_hi),
        }
    }

    /// Advances `profile` by one `tau_s` and adds `deposit` if a pellet enters.
    pub fn advance(&mut self, profile: &mut Vector, deposit: Option<Deposit>) -> ParticleBudget {
        let n = self.config.n_y;
        let mut budget = ParticleBudget::default();
        for _ in 0..self.config.substeps {
            let n_ref = profile.as_slice();
            for i in 0..n - 1 {
                let left = if i == 0 { 0.0 } else { self.kappa[i - 1] * (n_ref[i - 1] - n_ref[i]) };
                let right = self.kappa[i] * (n_ref[i + 1] - n_ref[i]);
                let sink = self.sink[i] * n_ref[i];
                self.scratch[i] = n_ref[i] + left + right - sink + self.source[i];
                budget.sink += sink;
                budget.source += self.source[i];
            }
            budget.boundary_outflow += self.kappa[n - 2] * (n_ref[n - 2] - n_ref[n - 1]);
            self.scratch[n - 1] = self.config.boundary_density;
            for (dst, src) in profile.iter_mut().zip(&self.scratch) {
                *dst = src.max(0.0);
            }
        }
        if let Some(dep) = deposit {
            for i in 0..n - 1 {
                let add = dep.amplitude * dep.shape(self.config.rho(i));
                profile[i] += add;
                budget.deposited += add;
            }
        }
        budget
    }

    /// One step of the internal profile, drawing a fresh deposit when a pellet enters.
    pub fn truth_step(&mut self, pellet_entering: bool) -> ParticleBudget {
        let deposit = pellet_entering.then(|| self.draw_deposit());
        let mut profile = std::mem::replace(&mut self.profile, Vector::zeros(0));
        let budget = self.advance(&mut profile, deposit);
        self.profile = profile;
        budget
    }

    /// Runs `steps` autonomous steps and returns the accumulated budget.
    pub fn run_autonomous(&mut self, steps: usize) -> ParticleBudget {
        let mut total = ParticleBudget::default();
        for _ in 0..steps {
            total.add(&self.truth_step(false));
        }
        total
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> TruthPlantConfig {
        TruthPlantConfig {
            edge_sink_rate: 0.0,
            core_source_rate: 0.0,
            boundary_density: 0.7,
            initial_density: 0.7,
            ..TruthPlantConfig::default()
        }
    }

    #[test]
    fn constant_profile_is_steady() {
        let mut plant = TruthPlant::new(quiet_config()).unwrap();
        plant.truth_step(false);
        assert!(plant.profile().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn deposit_on_zero_profile() {
        let cfg = TruthPlantConfig { boundary_density: 0.0, initial_density: 0.0, ..quiet_config() };
        let mut plant = TruthPlant::new(cfg.clone()).unwrap();
        let dep = Deposit { amplitude: 0.3, center: 0.8, width: 0.04 };
        let mut profile = Vector::zeros(cfg.n_y);
        let budget = plant.advance(&mut profile, Some(dep));
        let mut expected_total = 0.0;
        for i in 0..cfg.n_y - 1 {
            let want = 0.3 * dep.shape(cfg.rho(i));
            expected_total += want;
            assert!((profile[i] - want).abs() < 1e-15);
        }
        assert_eq!(profile[cfg.n_y - 1], 0.0);
        assert!((budget.deposited - expected_total).abs() < 1e-12);
    }

    #[test]
    fn particle_conservation_audit() {
        let cfg = TruthPlantConfig::default();
        let mut plant = TruthPlant::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut profile = Vector::from_fn(cfg.n_y, |_, _| rng.random_range(0.2..1.5));
        profile[cfg.n_y - 1] = cfg.boundary_density;
        plant.set_profile(profile).unwrap();
        let interior = |p: &Vector| p.rows(0, cfg.n_y - 1).sum();
        let before = interior(plant.profile());
        let budget = plant.run_autonomous(1000);
        let after = interior(plant.profile());
        let change = after - before;
        assert!(
            (change - budget.net()).abs() <= 1e-6 * before,
            "change {change} vs budget {}",
            budget.net()
        );
    }

    #[test]
    fn stays_nonnegative() {
        let cfg = TruthPlantConfig { initial_density: 0.0, boundary_density: 0.0, ..TruthPlantConfig::default() };
        let mut plant = TruthPlant::new(cfg).unwrap();
        for t in 0..500 {
            plant.truth_step(t % 50 == 0);
            assert!(plant.profile().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn rejects_unstable_diffusion() {
        let cfg = TruthPlantConfig { diffusion_number: 0.2, diffusion_profile_gain: 2.0, ..TruthPlantConfig::default() };
        assert!(matches!(TruthPlant::new(cfg), Err(Error::InvalidConfig(_))));
        let cfg = TruthPlantConfig { diffusion_profile_gain: -1.0, ..TruthPlantConfig::default() };
        assert!(TruthPlant::new(cfg).is_err());
    }

    #[test]
    fn rejects_bad_center_range() {
        let cfg = TruthPlantConfig { pellet_center: [0.0, 0.5], ..TruthPlantConfig::default() };
        assert!(TruthPlant::new(cfg).is_err());
    }
}
