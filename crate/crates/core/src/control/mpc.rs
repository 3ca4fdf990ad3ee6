//! The three receding-horizon controllers: nominal MI-MPC, multistage scenario
//! MI-MPC (branch and bound) and multistage scenario PTH-MPC.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::control::reference::ReferenceSchedule;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::optim::{
    condense, pth_solve_condensed, rollout, solve_miqp_bnb, BnbOptions, CondensedQp, OcpSpec, PthOutcome,
    PthSchedule, QpStatus,
};
use crate::plant::{ControlContext, Controller, PendingPellet, StepDecision, Timing};
use crate::scenario::{build_tree, build_tree_weighted, ScenarioSet};
use crate::sysid::StateSpaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Mi,
    MsMi,
    MsPth,
}

impl ControllerKind {
    pub fn is_multistage(self) -> bool {
        self != ControllerKind::Mi
    }

    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Mi => "mi",
            ControllerKind::MsMi => "ms-mi",
            ControllerKind::MsPth => "ms-pth",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi" => Ok(ControllerKind::Mi),
            "ms-mi" | "ms_mi" => Ok(ControllerKind::MsMi),
            "ms-pth" | "ms_pth" => Ok(ControllerKind::MsPth),
            other => Err(Error::InvalidConfig(format!("unknown controller kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Prediction horizon `N` in `tau_s` steps.
    pub horizon: usize,
    /// Control horizon `N_c` in control steps.
    pub n_c: usize,
    pub control_period: usize,
    pub delay: usize,
    /// Output weights: `q_core` on the first `n_core` outputs, `q_rest` elsewhere.
    pub q_core: f64,
    pub q_rest: f64,
    pub n_core: usize,
    pub r: f64,
    pub edge_index: usize,
    pub n_lim: f64,
    pub robust_horizon: usize,
    pub pth: PthSchedule,
    /// Wall-clock budget per branch-and-bound solve; `None` runs to optimality.
    pub bnb_time_budget_ms: Option<u64>,
    pub bnb_node_limit: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::MsPth,
            horizon: 500,
            n_c: 5,
            control_period: 100,
            delay: 135,
            q_core: 10.0,
            q_rest: 1e-4,
            n_core: 40,
            r: 1.0,
            edge_index: 84,
            n_lim: 1.0,
            robust_horizon: 1,
            pth: PthSchedule::default(),
            bnb_time_budget_ms: None,
            bnb_node_limit: 200_000,
        }
    }
}

impl ControllerConfig {
    pub fn with_kind(kind: ControllerKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self, n_y: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.control_period == 0 || self.n_c * self.control_period != self.horizon {
            return bad(format!(
                "control horizon {} x period {} must equal the prediction horizon {}",
                self.n_c, self.control_period, self.horizon
            ));
        }
        if self.edge_index >= n_y || self.n_core > n_y {
            return bad("edge index or core window outside the output grid".into());
        }
        if !(self.r >= 0.0 && self.q_core >= 0.0 && self.q_rest >= 0.0 && self.n_lim.is_finite()) {
            return bad("weights must be nonnegative and the limit finite".into());
        }
        if self.kind.is_multistage() && self.robust_horizon == 0 {
            return bad("robust horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn timing(&self) -> Timing {
        Timing { tau_s: 1, tau_c: self.control_period, delay: self.delay, start_offset: 0 }
    }

    pub fn q_diag(&self, n_y: usize) -> Vector {
        Vector::from_fn(n_y, |i, _| if i < self.n_core { self.q_core } else { self.q_rest })
    }

    pub fn bnb_options(&self) -> BnbOptions {
        BnbOptions {
            time_budget: self.bnb_time_budget_ms.map(Duration::from_millis),
            node_limit: self.bnb_node_limit,
            ..BnbOptions::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlDecision {
    pub u0: u8,
    /// `plan[j][l]`: planned input of scenario `j` at control step `l`.
    pub plan: Vec<Vec<u8>>,
    /// Predicted states per scenario (`n_x x (N + 1)`), from an independent rollout.
    pub predicted_states: Vec<Matrix>,
    pub status: String,
    /// True when the decision is the all-zero safe default rather than a solver result.
    pub fallback: bool,
    pub objective: f64,
    pub solve_time: Duration,
    pub nodes: usize,
}

impl ControlDecision {
    /// Predicted edge density per scenario.
    pub fn predicted_edge(&self, c: &Matrix, edge_index: usize) -> Vec<Vec<f64>> {
        let row = c.row(edge_index);
        self.predicted_states.iter().map(|x| (0..x.ncols()).map(|k| (row * x.column(k))[0]).collect()).collect()
    }
}

/// One problem instance as seen by a controller, kept for paired solver audits.
#[derive(Debug, Clone)]
pub struct RecordedInstance {
    pub t: usize,
    pub spec: OcpSpec,
    pub qp: CondensedQp,
    pub u0: u8,
}

pub struct MpcController {
    cfg: ControllerConfig,
    model: StateSpaceModel,
    c_pinv: Matrix,
    /// Input vectors `B0 + p_j` (just `B0` for the nominal controller).
    inputs: Vec<Vector>,
    branch_weights: Vec<f64>,
    warm: Option<Vector>,
    record: bool,
    recorded: Vec<RecordedInstance>,
    last: Option<ControlDecision>,
}

impl MpcController {
    pub fn new(cfg: ControllerConfig, model: StateSpaceModel, scenarios: Option<&ScenarioSet>) -> Result<Self> {
        cfg.validate(model.n_y())?;
        if model.delay != cfg.delay {
            return Err(Error::InvalidConfig(format!(
                "model delay {} differs from controller delay {}",
                model.delay, cfg.delay
            )));
        }
        let (inputs, branch_weights) = match (cfg.kind, scenarios) {
            (ControllerKind::Mi, _) => (vec![model.b0.clone()], vec![1.0]),
            (_, Some(set)) => {
                set.validate()?;
                if set.realizations.iter().any(|p| p.len() != model.n_x()) {
                    return Err(Error::InvalidConfig("scenario dimension differs from the model".into()));
                }
                (set.realizations.iter().map(|p| &model.b0 + p).collect(), set.weights.clone())
            }
            (_, None) => return Err(Error::InvalidConfig("multistage controller needs a scenario set".into())),
        };
        let c_pinv = model.c_pinv();
        Ok(Self {
            cfg,
            model,
            c_pinv,
            inputs,
            branch_weights,
            warm: None,
            record: false,
            recorded: Vec::new(),
            last: None,
        })
    }

    /// Keep every instance solved, for offline solver comparisons.
    pub fn recording(mut self, on: bool) -> Self {
        self.record = on;
        self
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn recorded(&self) -> &[RecordedInstance] {
        &self.recorded
    }

    pub fn take_recorded(&mut self) -> Vec<RecordedInstance> {
        std::mem::take(&mut self.recorded)
    }

    pub fn last_decision(&self) -> Option<&ControlDecision> {
        self.last.as_ref()
    }

    /// The OCP at time `t` given the measurement and the in-flight pellets.
    pub fn build_spec(
        &self,
        t: usize,
        y: &Vector,
        pending: &[PendingPellet],
        reference: &ReferenceSchedule,
    ) -> Result<OcpSpec> {
        if y.len() != self.model.n_y() || reference.n_y() != self.model.n_y() {
            return Err(Error::InvalidArgument("measurement or reference has the wrong length".into()));
        }
        let tree = if self.cfg.kind.is_multistage() {
            build_tree_weighted(&self.branch_weights, self.cfg.robust_horizon, self.cfg.n_c)?
        } else {
            build_tree(1, 1, self.cfg.n_c)?
        };
        let mut pending_entries = Vec::with_capacity(pending.len());
        for p in pending {
            let offset = p.entry_time.checked_sub(t).ok_or_else(|| {
                Error::ContractViolation(format!("pending pellet entered at {} before t = {t}", p.entry_time))
            })?;
            pending_entries.push(offset);
        }
        Ok(OcpSpec {
            a: self.model.a.clone(),
            c: self.model.c.clone(),
            b: self.inputs.clone(),
            tree,
            horizon: self.cfg.horizon,
            control_period: self.cfg.control_period,
            delay: self.cfg.delay,
            pending_entries,
            x0: &self.c_pinv * y,
            reference: (0..=self.cfg.horizon).map(|k| reference.profile_at(t + k)).collect(),
            q_diag: self.cfg.q_diag(self.model.n_y()),
            r: self.cfg.r,
            edge_index: self.cfg.edge_index,
            n_lim: self.cfg.n_lim,
        })
    }

    /// Previous plan advanced by one control step, last step filled with zero.
    fn shifted_warm_start(&self, spec: &OcpSpec) -> Option<Vector> {
        let prev = self.warm.as_ref()?;
        let tree = &spec.tree;
        if prev.len() != tree.n_variables() {
            return None;
        }
        let mut z = Vector::zeros(prev.len());
        for j in 0..tree.n_scenarios {
            for l in 0..tree.n_c - 1 {
                z[tree.variable(l, j)] = prev[tree.variable(l + 1, j)];
            }
        }
        Some(z)
    }

    /// Solve one instance with this controller's solver.
    pub fn solve_instance(&self, spec: &OcpSpec, qp: &CondensedQp) -> Result<ControlDecision> {
        let warm = self.shifted_warm_start(spec);
        let started = Instant::now();
        let (z, status, fallback, objective, nodes) = match self.cfg.kind {
            ControllerKind::Mi | ControllerKind::MsMi => {
                let sol = solve_miqp_bnb(qp, warm.as_ref(), &self.cfg.bnb_options());
                let found = sol.objective.is_finite();
                let status = match sol.status {
                    QpStatus::Optimal => "optimal".to_string(),
                    QpStatus::Infeasible => "infeasible".to_string(),
                    _ if found => format!("budget-incumbent gap={:.3e}", sol.bound_gap),
                    _ => "budget-no-incumbent".to_string(),
                };
                (sol.z, status, !found, sol.objective, sol.nodes)
            }
            ControllerKind::MsPth => {
                let sol = pth_solve_condensed(qp, &self.cfg.pth);
                let status = match sol.outcome {
                    PthOutcome::Integral => format!("integral passes={}", sol.log.len()),
                    other => format!("fallback {}", serde_json::to_string(&other)?.trim_matches('"')),
                };
                (sol.z.clone(), status, sol.is_fallback(), sol.objective, sol.log.len())
            }
        };
        let solve_time = started.elapsed();
        self.finish(spec, qp, z, status, fallback, objective, solve_time, nodes)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        spec: &OcpSpec,
        qp: &CondensedQp,
        z: Vector,
        status: String,
        fallback: bool,
        objective: f64,
        solve_time: Duration,
        nodes: usize,
    ) -> Result<ControlDecision> {
        let tree = &spec.tree;
        if z.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::ContractViolation("solver returned a non-binary plan".into()));
        }
        let states = rollout(spec, &z);
        if let Some(pred) = &qp.prediction {
            let condensed = pred.states(&z);
            let scale = 1.0 + spec.x0.amax();
            for (a, b) in condensed.iter().zip(&states) {
                if (a - b).amax() > 1e-8 * scale {
                    return Err(Error::NumericalFailure("condensed predictions disagree with rollout".into()));
                }
            }
        }
        let plan: Vec<Vec<u8>> =
            (0..tree.n_scenarios).map(|j| (0..tree.n_c).map(|l| z[tree.variable(l, j)] as u8).collect()).collect();
        let u0 = plan[0][0];
        if plan.iter().any(|p| p[0] != u0) {
            return Err(Error::ContractViolation("first inputs differ across scenarios".into()));
        }
        if !fallback {
            let edge = spec.c.row(spec.edge_index);
            let worst = states
                .iter()
                .flat_map(|x| (0..x.ncols()).map(move |k| (edge * x.column(k))[0]))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > spec.n_lim + 1e-9 {
                return Err(Error::ContractViolation(format!("plan predicts edge density {worst:.6}")));
            }
        }
        Ok(ControlDecision { u0, plan, predicted_states: states, status, fallback, objective, solve_time, nodes })
    }

    pub fn decide_full(&mut self, ctx: &ControlContext<'_>) -> Result<ControlDecision> {
        let spec = self.build_spec(ctx.t, ctx.y, ctx.pending, ctx.reference)?;
        let qp = condense(&spec)?;
        let decision = self.solve_instance(&spec, &qp)?;
        let tree = &spec.tree;
        let mut z = Vector::zeros(tree.n_variables());
        for j in 0..tree.n_scenarios {
            for l in 0..tree.n_c {
                z[tree.variable(l, j)] = f64::from(decision.plan[j][l]);
            }
        }
        self.warm = Some(z);
        if self.record {
            self.recorded.push(RecordedInstance { t: ctx.t, spec, qp, u0: decision.u0 });
        }
        self.last = Some(decision.clone());
        Ok(decision)
    }
}

impl Controller for MpcController {
    fn decide(&mut self, ctx: &ControlContext<'_>) -> Result<StepDecision> {
        let d = self.decide_full(ctx)?;
        Ok(StepDecision { u0: d.u0, solve_time: d.solve_time, status: d.status })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::enumerate_oracle;

    /// Two-state model with an edge output that reacts fast and a core output that reacts slowly.
    fn toy_model(delay: usize) -> StateSpaceModel {
        let a = Matrix::from_row_slice(2, 2, &[0.995, 0.0, 0.0, 0.999]);
        let b0 = Vector::from_vec(vec![0.004, 0.1]);
        // Outputs: two core points then an edge point.
        let c = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.3, 1.0]);
        StateSpaceModel::new(a, b0, c, delay).unwrap()
    }

    fn toy_config(kind: ControllerKind) -> ControllerConfig {
        ControllerConfig {
            kind,
            horizon: 60,
            n_c: 6,
            control_period: 10,
            delay: 4,
            q_core: 10.0,
            q_rest: 1e-4,
            n_core: 2,
            r: 1e-3,
            edge_index: 2,
            n_lim: 1.0,
            ..ControllerConfig::default()
        }
    }

    fn reference(target: f64) -> ReferenceSchedule {
        ReferenceSchedule::constant(target, 2, Vector::from_vec(vec![0.0, 0.0, 0.3]))
    }

    fn zero_set(n: usize) -> ScenarioSet {
        ScenarioSet::uniform(vec![Vector::zeros(2); n]).unwrap()
    }

    fn decide(ctrl: &mut MpcController, y: &Vector, pending: &[PendingPellet], r: &ReferenceSchedule) -> ControlDecision {
        let ctx = ControlContext { t: 0, y, pending, reference: r };
        ctrl.decide_full(&ctx).unwrap()
    }

    #[test]
    fn config_rejects_inconsistent_horizons() {
        let mut cfg = ControllerConfig::default();
        assert!(cfg.validate(100).is_ok());
        cfg.horizon = 400;
        assert!(cfg.validate(100).is_err());
    }

    #[test]
    fn default_config_matches_tuning() {
        let cfg = ControllerConfig::default();
        let q = cfg.q_diag(100);
        assert_eq!(q.iter().filter(|&&v| v == 10.0).count(), 40);
        assert_eq!(q.iter().filter(|&&v| v == 1e-4).count(), 60);
        assert_eq!((cfg.horizon, cfg.n_c, cfg.control_period, cfg.delay), (500, 5, 100, 135));
        assert_eq!(cfg.n_c * cfg.control_period, cfg.horizon);
    }

    #[test]
    fn above_reference_does_not_fire() {
        let model = toy_model(4);
        let y = Vector::from_vec(vec![0.9, 0.9, 0.27]);
        for kind in [ControllerKind::Mi, ControllerKind::MsMi, ControllerKind::MsPth] {
            let set = zero_set(4);
            let mut ctrl = MpcController::new(toy_config(kind), model.clone(), Some(&set)).unwrap();
            let d = decide(&mut ctrl, &y, &[], &reference(0.5));
            assert_eq!(d.u0, 0, "{kind:?}");
        }
    }

    #[test]
    fn below_reference_fires() {
        let model = toy_model(4);
        let y = Vector::from_vec(vec![0.2, 0.2, 0.06]);
        let set = zero_set(4);
        for kind in [ControllerKind::Mi, ControllerKind::MsMi, ControllerKind::MsPth] {
            let mut ctrl = MpcController::new(toy_config(kind), model.clone(), Some(&set)).unwrap();
            let d = decide(&mut ctrl, &y, &[], &reference(0.6));
            assert_eq!(d.u0, 1, "{kind:?}: {}", d.status);
        }
    }

    #[test]
    fn edge_limit_forces_hold() {
        let model = toy_model(4);
        // Core is far below target but the edge sits just under the limit.
        let y = Vector::from_vec(vec![0.2, 0.2, 0.99]);
        let set = zero_set(4);
        for kind in [ControllerKind::Mi, ControllerKind::MsMi, ControllerKind::MsPth] {
            let mut ctrl = MpcController::new(toy_config(kind), model.clone(), Some(&set)).unwrap();
            let d = decide(&mut ctrl, &y, &[], &reference(0.6));
            assert_eq!(d.u0, 0, "{kind:?}");
        }
    }

    #[test]
    fn three_of_four_scenarios_violating_blocks_firing() {
        let model = toy_model(4);
        let y = Vector::from_vec(vec![0.2, 0.2, 0.88]);
        // Nominal pellet raises the edge by 0.1 which fits; three scenarios add 0.1 more.
        let set = ScenarioSet::uniform(vec![
            Vector::zeros(2),
            Vector::from_vec(vec![0.0, 0.1]),
            Vector::from_vec(vec![0.0, 0.1]),
            Vector::from_vec(vec![0.0, 0.1]),
        ])
        .unwrap();
        let nominal = MpcController::new(toy_config(ControllerKind::Mi), model.clone(), None).unwrap();
        let spec = nominal.build_spec(0, &y, &[], &reference(0.6)).unwrap();
        let qp = condense(&spec).unwrap();
        let d = nominal.solve_instance(&spec, &qp).unwrap();
        assert_eq!(d.u0, 1, "{} {:?} {:?}", d.status, d.plan, d.predicted_edge(&spec.c, 2)[0]);
        for kind in [ControllerKind::MsMi, ControllerKind::MsPth] {
            let mut ctrl = MpcController::new(toy_config(kind), model.clone(), Some(&set)).unwrap();
            let d = decide(&mut ctrl, &y, &[], &reference(0.6));
            assert_eq!(d.u0, 0, "{kind:?}");
        }
    }

    #[test]
    fn zero_scenarios_collapse_to_nominal() {
        let model = toy_model(4);
        let set = zero_set(4);
        for (i, core) in [0.2, 0.35, 0.5, 0.55].into_iter().enumerate() {
            let y = Vector::from_vec(vec![core, core, 0.3 * core + 0.1 * i as f64]);
            let mut mi = MpcController::new(toy_config(ControllerKind::Mi), model.clone(), None).unwrap();
            let mut ms = MpcController::new(toy_config(ControllerKind::MsMi), model.clone(), Some(&set)).unwrap();
            let a = decide(&mut mi, &y, &[], &reference(0.6));
            let b = decide(&mut ms, &y, &[], &reference(0.6));
            assert_eq!(a.plan[0], b.plan[0]);
            assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + a.objective.abs()));
        }
    }

    #[test]
    fn ms_decision_matches_oracle_and_is_nonanticipative() {
        let model = toy_model(4);
        let set = ScenarioSet::uniform(vec![
            Vector::from_vec(vec![0.001, 0.01]),
            Vector::from_vec(vec![-0.001, -0.01]),
            Vector::from_vec(vec![0.0005, -0.005]),
            Vector::from_vec(vec![-0.0005, 0.005]),
        ])
        .unwrap();
        let mut cfg = toy_config(ControllerKind::MsMi);
        cfg.n_c = 3;
        cfg.horizon = 30;
        let ctrl = MpcController::new(cfg, model, Some(&set)).unwrap();
        let y = Vector::from_vec(vec![0.3, 0.3, 0.2]);
        let spec = ctrl.build_spec(0, &y, &[], &reference(0.5)).unwrap();
        let qp = condense(&spec).unwrap();
        let d = ctrl.solve_instance(&spec, &qp).unwrap();
        let (_, best) = enumerate_oracle(&qp, 1e-9).unwrap();
        assert!((d.objective - best).abs() <= 1e-8 * (1.0 + best.abs()));
        assert!(d.plan.iter().all(|p| p[0] == d.u0));
        let u: Vec<Vec<f64>> = d.plan.iter().map(|p| p.iter().map(|&v| f64::from(v)).collect()).collect();
        assert!(spec.tree.is_nonanticipative(&u));
    }

    #[test]
    fn pending_pellets_enter_the_prediction() {
        let model = toy_model(4);
        let ctrl = MpcController::new(toy_config(ControllerKind::Mi), model, None).unwrap();
        let y = Vector::from_vec(vec![0.3, 0.3, 0.2]);
        let pending = [PendingPellet { fire_time: 97, entry_time: 101 }];
        let spec = ctrl.build_spec(100, &y, &pending, &reference(0.5)).unwrap();
        assert_eq!(spec.pending_entries, vec![1]);
        let stale = [PendingPellet { fire_time: 90, entry_time: 94 }];
        assert!(ctrl.build_spec(100, &y, &stale, &reference(0.5)).is_err());
    }

    #[test]
    fn reference_is_previewed_over_the_horizon() {
        let model = toy_model(4);
        let ctrl = MpcController::new(toy_config(ControllerKind::Mi), model, None).unwrap();
        let r = ReferenceSchedule::new(vec![(0, 0.5), (130, 0.7)], 2, Vector::from_vec(vec![0.0, 0.0, 0.3])).unwrap();
        let spec = ctrl.build_spec(100, &Vector::zeros(3), &[], &r).unwrap();
        assert_eq!(spec.reference[29][0], 0.5);
        assert_eq!(spec.reference[30][0], 0.7);
    }

    #[test]
    fn warm_start_does_not_change_the_decision() {
        let model = toy_model(4);
        let y = Vector::from_vec(vec![0.4, 0.4, 0.3]);
        let mut warm = MpcController::new(toy_config(ControllerKind::Mi), model.clone(), None).unwrap();
        let first = decide(&mut warm, &y, &[], &reference(0.6));
        let second = decide(&mut warm, &y, &[], &reference(0.6));
        let mut cold = MpcController::new(toy_config(ControllerKind::Mi), model, None).unwrap();
        let fresh = decide(&mut cold, &y, &[], &reference(0.6));
        assert_eq!(first.plan, fresh.plan);
        assert!((second.objective - fresh.objective).abs() <= 1e-9 * (1.0 + fresh.objective.abs()));
    }

    #[test]
    fn pth_iteration_limit_falls_back_to_zero() {
        let model = toy_model(4);
        let mut cfg = toy_config(ControllerKind::MsPth);
        cfg.pth.i_max = 0;
        let set = zero_set(4);
        let mut ctrl = MpcController::new(cfg, model, Some(&set)).unwrap();
        // Edge room for about three quarters of a pellet makes the relaxation fractional.
        let y = Vector::from_vec(vec![0.2, 0.2, 0.93]);
        let d = decide(&mut ctrl, &y, &[], &reference(0.6));
        assert!(d.fallback, "{}", d.status);
        assert_eq!(d.u0, 0);
        assert!(d.plan.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn tightening_the_limit_never_adds_firing() {
        let model = toy_model(4);
        for core in [0.2, 0.3, 0.4] {
            let y = Vector::from_vec(vec![core, core, 0.8]);
            let mut prev = 1u8;
            for n_lim in [1.2, 1.0, 0.9, 0.85, 0.81] {
                let mut cfg = toy_config(ControllerKind::Mi);
                cfg.n_lim = n_lim;
                let mut ctrl = MpcController::new(cfg, model.clone(), None).unwrap();
                let d = decide(&mut ctrl, &y, &[], &reference(0.6));
                assert!(d.u0 <= prev);
                prev = d.u0;
            }
        }
    }
}
