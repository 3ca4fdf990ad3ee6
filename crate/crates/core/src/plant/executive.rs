//! Multi-rate closed-loop executive with a fixed pellet flight delay.
//!
//! The plant evolves every `tau_s`; the controller is consulted every `tau_c`
//! (starting at `start_offset`), and a pellet fired at `t` enters at `t + d`.
//! All times are integer milliseconds and `tau_s` is the simulation step.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::ReferenceSchedule;
use crate::error::{Error, Result};
use crate::numerics::Vector;
use crate::plant::lpv::LpvPlant;
use crate::plant::truth::{TruthPlant, TruthPlantConfig};
use crate::sysid::SnapshotLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub tau_s: usize,
    pub tau_c: usize,
    pub delay: usize,
    /// First control instant; subsequent ones follow every `tau_c`.
    pub start_offset: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Self { tau_s: 1, tau_c: 100, delay: 135, start_offset: 0 }
    }
}

impl Timing {
    pub fn validate(&self) -> Result<()> {
        if self.tau_s == 0 || self.tau_c == 0 || self.tau_c % self.tau_s != 0 {
            return Err(Error::InvalidConfig(format!(
                "tau_c = {} must be a positive multiple of tau_s = {}",
                self.tau_c, self.tau_s
            )));
        }
        if self.delay % self.tau_s != 0 || self.start_offset % self.tau_s != 0 {
            return Err(Error::InvalidConfig("delay and start offset must be multiples of tau_s".into()));
        }
        Ok(())
    }

    pub fn control_period_steps(&self) -> usize {
        self.tau_c / self.tau_s
    }

    pub fn delay_steps(&self) -> usize {
        self.delay / self.tau_s
    }

    pub fn is_control_instant(&self, step: usize) -> bool {
        let offset = self.start_offset / self.tau_s;
        step >= offset && (step - offset) % self.control_period_steps() == 0
    }
}

/// A fired pellet still travelling towards the plasma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPellet {
    pub fire_time: usize,
    pub entry_time: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DelayLine {
    delay: usize,
    pending: Vec<PendingPellet>,
}

impl DelayLine {
    pub fn new(delay: usize) -> Self {
        Self { delay, pending: Vec::new() }
    }

    pub fn fire(&mut self, t: usize) -> Result<PendingPellet> {
        if self.pending.iter().any(|p| p.fire_time == t) {
            return Err(Error::ContractViolation(format!("second pellet fired at t = {t}")));
        }
        let pellet = PendingPellet { fire_time: t, entry_time: t + self.delay };
        self.pending.push(pellet);
        Ok(pellet)
    }

    /// Removes and reports the pellet entering at `t`, if any.
    pub fn take_entry(&mut self, t: usize) -> Option<PendingPellet> {
        let idx = self.pending.iter().position(|p| p.entry_time == t)?;
        Some(self.pending.remove(idx))
    }

    /// Pellets with `entry_time >= t`, in firing order.
    pub fn pending(&self) -> &[PendingPellet] {
        &self.pending
    }
}

pub trait Plant {
    fn output(&self) -> Vector;
    fn step(&mut self, pellet_entering: bool);
}

impl Plant for LpvPlant {
    fn output(&self) -> Vector {
        LpvPlant::output(self)
    }

    fn step(&mut self, pellet_entering: bool) {
        self.lpv_step(pellet_entering);
    }
}

impl Plant for TruthPlant {
    fn output(&self) -> Vector {
        self.profile().clone()
    }

    fn step(&mut self, pellet_entering: bool) {
        self.truth_step(pellet_entering);
    }
}

pub struct ControlContext<'a> {
    /// Current time in `tau_s` steps.
    pub t: usize,
    pub y: &'a Vector,
    pub pending: &'a [PendingPellet],
    pub reference: &'a ReferenceSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub u0: u8,
    pub solve_time: Duration,
    pub status: String,
}

pub trait Controller {
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<StepDecision>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeConstraint {
    pub index: usize,
    pub limit: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecutiveOptions {
    /// Record zero solve times so traces are byte-reproducible.
    pub deterministic: bool,
}

/// Per-`tau_s` record of a closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub timing: Timing,
    pub edge: EdgeConstraint,
    pub u_fired: Vec<u8>,
    pub pellet_entered: Vec<u8>,
    /// Zero at non-control instants.
    pub solve_time_ms: Vec<f64>,
    pub outputs: Vec<Vector>,
    /// `(t, status)` for every control instant.
    pub statuses: Vec<(usize, String)>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn n_edge(&self, t: usize) -> f64 {
        self.outputs[t][self.edge.index]
    }

    pub fn violation(&self, t: usize) -> bool {
        self.n_edge(t) > self.edge.limit
    }

    pub fn fire_times(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.u_fired[t] == 1).collect()
    }

    pub fn entry_times(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.pellet_entered[t] == 1).collect()
    }

    /// Columns `t, u_fired, pellet_entered, solve_time_ms, n_edge, violation_flag, y_*`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n_y = self.outputs.first().map_or(0, |y| y.len());
        let mut header: Vec<String> = ["t", "u_fired", "pellet_entered", "solve_time_ms", "n_edge", "violation_flag"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..n_y).map(|i| format!("y_{i}")));
        out.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
        for t in 0..self.len() {
            let mut rec = vec![
                (t * self.timing.tau_s).to_string(),
                self.u_fired[t].to_string(),
                self.pellet_entered[t].to_string(),
                self.solve_time_ms[t].to_string(),
                self.n_edge(t).to_string(),
                u8::from(self.violation(t)).to_string(),
            ];
            rec.extend(self.outputs[t].iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_snapshot_log(&self) -> Result<SnapshotLog> {
        SnapshotLog::new(0, self.pellet_entered.clone(), self.outputs.clone())
    }
}

/// Runs `steps` plant steps of closed loop.
pub fn run_executive<P: Plant + ?Sized, C: Controller + ?Sized>(
    plant: &mut P,
    controller: &mut C,
    reference: &ReferenceSchedule,
    steps: usize,
    timing: Timing,
    edge: EdgeConstraint,
    options: ExecutiveOptions,
) -> Result<ClosedLoopTrace> {
    timing.validate()?;
    let mut line = DelayLine::new(timing.delay_steps());
    let mut trace = ClosedLoopTrace {
        timing,
        edge,
        u_fired: Vec::with_capacity(steps),
        pellet_entered: Vec::with_capacity(steps),
        solve_time_ms: Vec::with_capacity(steps),
        outputs: Vec::with_capacity(steps),
        statuses: Vec::new(),
    };
    for t in 0..steps {
        let y = plant.output();
        let mut fired = 0u8;
        let mut solve_ms = 0.0;
        if timing.is_control_instant(t) {
            let ctx = ControlContext { t, y: &y, pending: line.pending(), reference };
            let started = Instant::now();
            match controller.decide(&ctx) {
                Ok(decision) => {
                    if decision.u0 > 1 {
                        return Err(Error::ContractViolation(format!(
                            "controller returned u0 = {} at t = {t}",
                            decision.u0
                        )));
                    }
                    fired = decision.u0;
                    solve_ms = decision.solve_time.as_secs_f64() * 1e3;
                    trace.statuses.push((t, decision.status));
                }
                Err(e) => {
                    // Never fire blind: a failed solve holds the pellet.
                    log::warn!("controller failed at t = {t}: {e}");
                    solve_ms = started.elapsed().as_secs_f64() * 1e3;
                    trace.statuses.push((t, format!("failed: {e}")));
                }
            }
            if fired == 1 {
                line.fire(t)?;
            }
        }
        let entering = line.take_entry(t).is_some();
        trace.u_fired.push(fired);
        trace.pellet_entered.push(u8::from(entering));
        trace.solve_time_ms.push(if options.deterministic { 0.0 } else { solve_ms });
        trace.outputs.push(y);
        plant.step(entering);
    }
    Ok(trace)
}

/// Fires with probability `q` at every control instant.
pub struct RandomFiring {
    q: f64,
    rng: ChaCha8Rng,
}

impl RandomFiring {
    pub fn new(q: f64, seed: u64) -> Self {
        Self { q, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Controller for RandomFiring {
    fn decide(&mut self, _ctx: &ControlContext<'_>) -> Result<StepDecision> {
        let u0 = u8::from(self.q > 0.0 && self.rng.random_bool(self.q.min(1.0)));
        Ok(StepDecision { u0, solve_time: Duration::ZERO, status: "random".into() })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SysidExperiment {
    pub firing_probability: f64,
    pub duration_ms: usize,
    /// Unlogged lead-in under the same firing law, to settle the profile.
    pub warmup_ms: usize,
}

impl Default for SysidExperiment {
    fn default() -> Self {
        Self { firing_probability: 0.5, duration_ms: 12_000, warmup_ms: 3_000 }
    }
}

/// Runs the truth plant under a random firing schedule and logs entry-aligned data.
pub fn generate_sysid_data(
    truth: &TruthPlantConfig,
    experiment: &SysidExperiment,
    timing: Timing,
    seed: u64,
) -> Result<SnapshotLog> {
    if experiment.duration_ms < 2000 {
        return Err(Error::InvalidConfig("identification experiment must last >= 2000 ms".into()));
    }
    if !(0.0..1.0).contains(&experiment.firing_probability) {
        return Err(Error::InvalidConfig("firing probability must lie in [0, 1)".into()));
    }
    timing.validate()?;
    let mut cfg = truth.clone();
    cfg.seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ truth.seed;
    let mut plant = TruthPlant::new(cfg)?;
    let mut firing = RandomFiring::new(experiment.firing_probability, seed);
    let reference = ReferenceSchedule::constant(1.0, 0, Vector::zeros(truth.n_y));
    let edge = EdgeConstraint { index: 0, limit: f64::INFINITY };
    let warm = experiment.warmup_ms / timing.tau_s;
    let total = warm + experiment.duration_ms / timing.tau_s;
    let trace = run_executive(&mut plant, &mut firing, &reference, total, timing, edge, ExecutiveOptions { deterministic: true })?;
    let outputs = trace.outputs[warm..].to_vec();
    let inputs = trace.pellet_entered[warm..].to_vec();
    SnapshotLog::new(0, inputs, outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::sysid::{ParameterCloud, StateSpaceModel};
    use crate::plant::lpv::DrawMode;

    struct Scripted {
        fire_at: Vec<usize>,
        seen: Vec<(usize, Vec<PendingPellet>)>,
        bogus: bool,
    }

    impl Controller for Scripted {
        fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<StepDecision> {
            self.seen.push((ctx.t, ctx.pending.to_vec()));
            let u0 = if self.bogus { 2 } else { u8::from(self.fire_at.contains(&ctx.t)) };
            Ok(StepDecision { u0, solve_time: Duration::ZERO, status: "scripted".into() })
        }
    }

    fn scalar_plant() -> LpvPlant {
        let model = StateSpaceModel::new(Matrix::from_element(1, 1, 0.99), Vector::from_element(1, 0.1), Matrix::from_element(2, 1, 1.0), 135).unwrap();
        let cloud = ParameterCloud::from_rows(Matrix::from_column_slice(2, 1, &[0.0, 0.0]), vec![0, 1]).unwrap();
        LpvPlant::new(model, &cloud, DrawMode::UniformFromCloud, 0, Vector::from_element(1, 1.0)).unwrap()
    }

    fn run(fire_at: Vec<usize>, steps: usize) -> (ClosedLoopTrace, Scripted) {
        let mut plant = scalar_plant();
        let mut ctrl = Scripted { fire_at, seen: Vec::new(), bogus: false };
        let reference = ReferenceSchedule::constant(1.0, 1, Vector::zeros(2));
        let edge = EdgeConstraint { index: 1, limit: 10.0 };
        let trace = run_executive(&mut plant, &mut ctrl, &reference, steps, Timing::default(), edge, ExecutiveOptions::default()).unwrap();
        (trace, ctrl)
    }

    #[test]
    fn pellet_fired_at_100_enters_at_235() {
        let (trace, _) = run(vec![100], 400);
        assert_eq!(trace.fire_times(), vec![100]);
        assert_eq!(trace.entry_times(), vec![235]);
        // The deposit shows up in the output after the entry step.
        assert!(trace.outputs[236][0] > 0.99 * trace.outputs[235][0] + 0.09);
    }

    #[test]
    fn consecutive_firings_keep_order() {
        let (trace, ctrl) = run(vec![100, 200], 500);
        assert_eq!(trace.entry_times(), vec![235, 335]);
        // Controller at 200 sees the pellet fired at 100 still in flight.
        let at_200 = ctrl.seen.iter().find(|(t, _)| *t == 200).unwrap();
        assert_eq!(at_200.1, vec![PendingPellet { fire_time: 100, entry_time: 235 }]);
        let at_300 = ctrl.seen.iter().find(|(t, _)| *t == 300).unwrap();
        assert_eq!(at_300.1, vec![PendingPellet { fire_time: 200, entry_time: 335 }]);
    }

    #[test]
    fn no_inputs_off_control_instants() {
        let (trace, ctrl) = run((0..1000).collect(), 1000);
        for t in 0..trace.len() {
            if t % 100 != 0 {
                assert_eq!(trace.u_fired[t], 0);
            }
        }
        assert_eq!(ctrl.seen.len(), 10);
        assert_eq!(ctrl.seen[0].0, 0);
        for &f in &trace.fire_times() {
            assert!(f + 135 >= trace.len() || trace.pellet_entered[f + 135] == 1);
        }
    }

    #[test]
    fn never_firing_matches_autonomous_rollout() {
        let (trace, _) = run(vec![], 300);
        let mut plant = scalar_plant();
        for t in 0..300 {
            assert_eq!(trace.outputs[t], plant.output());
            plant.lpv_step(false);
        }
    }

    #[test]
    fn non_binary_decision_is_contract_violation() {
        let mut plant = scalar_plant();
        let mut ctrl = Scripted { fire_at: vec![], seen: Vec::new(), bogus: true };
        let reference = ReferenceSchedule::constant(1.0, 1, Vector::zeros(2));
        let edge = EdgeConstraint { index: 1, limit: 10.0 };
        let err = run_executive(&mut plant, &mut ctrl, &reference, 10, Timing::default(), edge, ExecutiveOptions::default());
        assert!(matches!(err, Err(Error::ContractViolation(_))));
    }

    #[test]
    fn start_offset_shifts_control_instants() {
        let timing = Timing { start_offset: 100, ..Timing::default() };
        assert!(!timing.is_control_instant(0));
        assert!(timing.is_control_instant(100));
        assert!(timing.is_control_instant(300));
        assert!(!timing.is_control_instant(350));
    }

    #[test]
    fn delay_line_rejects_double_fire() {
        let mut line = DelayLine::new(135);
        line.fire(100).unwrap();
        assert!(line.fire(100).is_err());
        assert_eq!(line.take_entry(234), None);
        assert_eq!(line.take_entry(235).unwrap().fire_time, 100);
        assert!(line.pending().is_empty());
    }

    #[test]
    fn sysid_data_is_deterministic() {
        let truth = TruthPlantConfig::default();
        let exp = SysidExperiment { duration_ms: 2000, warmup_ms: 0, ..SysidExperiment::default() };
        let a = generate_sysid_data(&truth, &exp, Timing::default(), 3).unwrap();
        let b = generate_sysid_data(&truth, &exp, Timing::default(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        assert!(a.check_densities().is_ok());
    }

    #[test]
    fn sysid_without_excitation_has_no_events() {
        let exp = SysidExperiment { firing_probability: 0.0, duration_ms: 2000, warmup_ms: 0 };
        let log = generate_sysid_data(&TruthPlantConfig::default(), &exp, Timing::default(), 1).unwrap();
        assert_eq!(log.pellet_count(), 0);
    }
}
