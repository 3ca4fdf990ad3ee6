//! Penalty-term homotopy for the mixed-binary scenario QP: a sequence of
//! continuous relaxations with a growing complementarity penalty
//! `beta * u (1 - u)` and a log barrier `-gamma * ln(n_lim - y_edge)` on the
//! edge rows, until every input is integral.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Matrix, Vector};
use crate::optim::condense::{condense, CondensedQp, OcpSpec};
use crate::optim::qp::{solve_qp, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PthSchedule {
    pub beta_init: f64,
    pub beta_inc: f64,
    pub gamma_init: f64,
    pub gamma_inc: f64,
    /// Integrality tolerance: `u` is integral when `min(u, 1 - u) <= eps`.
    pub eps: f64,
    pub i_max: usize,
}

impl Default for PthSchedule {
    fn default() -> Self {
        Self { beta_init: 32.0, beta_inc: 2.0, gamma_init: 32.0, gamma_inc: 2.0, eps: 1e-3, i_max: 12 }
    }
}

impl PthSchedule {
    /// Penalty and barrier weights of pass `i` (both zero for the first pass).
    pub fn weights(&self, i: usize) -> (f64, f64) {
        if i == 0 {
            return (0.0, 0.0);
        }
        let e = (i - 1) as i32;
        (self.beta_init * self.beta_inc.powi(e), self.gamma_init * self.gamma_inc.powi(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PthOutcome {
    /// All inputs integral; the rounded plan satisfies every hard row.
    Integral,
    /// Still fractional after `i_max` passes; the plan is all zeros.
    IterationLimit,
    /// Some edge row is already at or past the limit with no firing; all zeros.
    BarrierUndefined,
    /// The first relaxation has no feasible point; all zeros.
    RelaxationInfeasible,
    /// The rounded plan violates a hard row; replaced by all zeros.
    RoundedInfeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PthIteration {
    pub i: usize,
    pub beta: f64,
    pub gamma: f64,
    pub status: QpStatus,
    pub newton_iterations: usize,
    /// `max_v min(z_v, 1 - z_v)` after the pass.
    pub max_fractionality: f64,
    #[serde(with = "crate::serde_mat::vector")]
    pub z: Vector,
}

#[derive(Debug, Clone)]
pub struct PthSolution {
    pub z: Vector,
    /// Base QP objective of the returned plan.
    pub objective: f64,
    pub outcome: PthOutcome,
    pub log: Vec<PthIteration>,
}

impl PthSolution {
    pub fn is_fallback(&self) -> bool {
        self.outcome != PthOutcome::Integral
    }
}

/// Condense `spec` and run the homotopy.
pub fn pth_solve(spec: &OcpSpec, schedule: &PthSchedule) -> Result<PthSolution> {
    let qp = condense(spec)?;
    Ok(pth_solve_condensed(&qp, schedule))
}

fn max_fractionality(z: &Vector) -> f64 {
    z.iter().map(|&v| v.min(1.0 - v).max(0.0)).fold(0.0, f64::max)
}

pub fn pth_solve_condensed(qp: &CondensedQp, schedule: &PthSchedule) -> PthSolution {
    let n = qp.n_z();
    let zeros = |outcome, log| PthSolution { z: Vector::zeros(n), objective: qp.objective(&Vector::zeros(n)), outcome, log };
    let barrier = BarrierRows::new(qp);
    if qp.audit.vacuous_violations > 0 || !barrier.strictly_feasible_at_zero() {
        log::debug!("pth: barrier undefined at z = 0");
        return zeros(PthOutcome::BarrierUndefined, Vec::new());
    }

    let relax = solve_qp(qp);
    let mut log = vec![PthIteration {
        i: 0,
        beta: 0.0,
        gamma: 0.0,
        status: relax.status,
        newton_iterations: relax.iterations,
        max_fractionality: max_fractionality(&relax.z),
        z: relax.z.clone(),
    }];
    log::debug!("pth i=0 beta=0 gamma=0 status={:?} z={:?}", relax.status, relax.z.as_slice());
    if relax.status == QpStatus::Infeasible {
        return zeros(PthOutcome::RelaxationInfeasible, log);
    }
    let mut z = relax.z;
    let mut i = 0;
    while max_fractionality(&z) > schedule.eps && i < schedule.i_max {
        i += 1;
        let (beta, gamma) = schedule.weights(i);
        let start = barrier.pull_inside(&z);
        let pass = PenalizedPass { qp, barrier: &barrier, beta, gamma };
        let (next, iterations, converged) = pass.minimize(start);
        z = next;
        let status = if converged { QpStatus::LocalStationary } else { QpStatus::IterationCap };
        log::debug!("pth i={i} beta={beta} gamma={gamma} status={status:?} z={:?}", z.as_slice());
        log.push(PthIteration {
            i,
            beta,
            gamma,
            status,
            newton_iterations: iterations,
            max_fractionality: max_fractionality(&z),
            z: z.clone(),
        });
    }
    if max_fractionality(&z) > schedule.eps {
        return zeros(PthOutcome::IterationLimit, log);
    }
    let rounded = z.map(|v| v.round());
    if !qp.is_feasible(&rounded, 1e-9) {
        return zeros(PthOutcome::RoundedInfeasible, log);
    }
    PthSolution { objective: qp.objective(&rounded), z: rounded, outcome: PthOutcome::Integral, log }
}

/// Edge rows that depend on the decision, stored sparsely.
struct BarrierRows {
    idx: Vec<Vec<usize>>,
    val: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    weight: Vec<f64>,
}

impl BarrierRows {
    fn new(qp: &CondensedQp) -> Self {
        let mut rows = Self { idx: Vec::new(), val: Vec::new(), rhs: Vec::new(), weight: Vec::new() };
        for r in 0..qp.g.nrows() {
            let (idx, val): (Vec<usize>, Vec<f64>) =
                (0..qp.n_z()).filter(|&c| qp.g[(r, c)] != 0.0).map(|c| (c, qp.g[(r, c)])).unzip();
            if idx.is_empty() {
                continue;
            }
            rows.idx.push(idx);
            rows.val.push(val);
            rows.rhs.push(qp.g_rhs[r]);
            rows.weight.push(qp.row_weight[r]);
        }
        rows
    }

    fn slack(&self, r: usize, z: &Vector) -> f64 {
        self.rhs[r] - self.idx[r].iter().zip(&self.val[r]).map(|(&c, &v)| v * z[c]).sum::<f64>()
    }

    fn strictly_feasible_at_zero(&self) -> bool {
        self.rhs.iter().all(|&h| h > 0.0)
    }

    /// Blend toward zero until every slack keeps at least 1% of its value at zero.
    fn pull_inside(&self, z: &Vector) -> Vector {
        let mut theta: f64 = 1.0;
        for r in 0..self.rhs.len() {
            let s0 = self.rhs[r];
            let s1 = self.slack(r, z);
            if s1 < 0.01 * s0 {
                theta = theta.min(0.99 * s0 / (s0 - s1));
            }
        }
        z * theta
    }
}

struct PenalizedPass<'a> {
    qp: &'a CondensedQp,
    barrier: &'a BarrierRows,
    beta: f64,
    gamma: f64,
}

const NEWTON_MAX_ITER: usize = 100;
const ARMIJO: f64 = 1e-4;

impl PenalizedPass<'_> {
    /// Objective, or `None` outside the barrier domain.
    fn value(&self, z: &Vector) -> Option<f64> {
        let mut j = self.qp.objective(z);
        for v in 0..z.len() {
            j += self.beta * self.qp.var_weight[v] * z[v] * (1.0 - z[v]);
        }
        for r in 0..self.barrier.rhs.len() {
            let s = self.barrier.slack(r, z);
            if s <= 0.0 {
                return None;
            }
            j -= self.gamma * self.barrier.weight[r] * s.ln();
        }
        Some(j)
    }

    fn derivatives(&self, z: &Vector) -> (Vector, Matrix) {
        let n = z.len();
        let mut grad = &self.qp.h * z + &self.qp.f;
        let mut hess = self.qp.h.clone();
        for v in 0..n {
            let w = self.beta * self.qp.var_weight[v];
            grad[v] += w * (1.0 - 2.0 * z[v]);
            hess[(v, v)] -= 2.0 * w;
        }
        let b = self.barrier;
        for r in 0..b.rhs.len() {
            let s = b.slack(r, z);
            let g1 = self.gamma * b.weight[r] / s;
            let g2 = g1 / s;
            for (a, &c) in b.idx[r].iter().enumerate() {
                grad[c] += g1 * b.val[r][a];
                for (e, &d) in b.idx[r].iter().enumerate() {
                    hess[(c, d)] += g2 * b.val[r][a] * b.val[r][e];
                }
            }
        }
        (grad, hess)
    }

    fn projected_gradient_norm(z: &Vector, grad: &Vector) -> f64 {
        (0..z.len()).map(|i| (z[i] - (z[i] - grad[i]).clamp(0.0, 1.0)).abs()).fold(0.0, f64::max)
    }

    /// Projected Newton on `[0, 1]^n` with an eigenvalue-modified Hessian
    /// on the free variables and an Armijo search along the projection arc.
    fn minimize(&self, mut z: Vector) -> (Vector, usize, bool) {
        let n = z.len();
        let scale = 1.0 + self.qp.f.amax() + self.qp.h.amax();
        let tol = 1e-8 * scale;
        let Some(mut value) = self.value(&z) else { return (z, 0, false) };
        for it in 0..NEWTON_MAX_ITER {
            let (grad, hess) = self.derivatives(&z);
            if Self::projected_gradient_norm(&z, &grad) <= tol {
                return (z, it, true);
            }
            let at_bound = |i: usize| (z[i] <= 1e-12 && grad[i] > 0.0) || (z[i] >= 1.0 - 1e-12 && grad[i] < 0.0);
            let free: Vec<usize> = (0..n).filter(|&i| !at_bound(i)).collect();
            let mut dir = Vector::zeros(n);
            if !free.is_empty() {
                let hf = Matrix::from_fn(free.len(), free.len(), |a, b| hess[(free[a], free[b])]);
                let eig = nalgebra::SymmetricEigen::new(hf);
                let floor = 1e-8 * scale;
                let gf = Vector::from_fn(free.len(), |a, _| grad[free[a]]);
                let coeff = eig.eigenvectors.transpose() * &gf;
                let scaled = Vector::from_fn(free.len(), |a, _| coeff[a] / eig.eigenvalues[a].abs().max(floor));
                let step = -(&eig.eigenvectors * scaled);
                for (a, &i) in free.iter().enumerate() {
                    dir[i] = step[a];
                }
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = Vector::from_fn(n, |i, _| (z[i] + alpha * dir[i]).clamp(0.0, 1.0));
                if let Some(tv) = self.value(&trial) {
                    if tv <= value + ARMIJO * grad.dot(&(&trial - &z)) {
                        let moved = (&trial - &z).amax();
                        z = trial;
                        value = tv;
                        accepted = true;
                        if moved <= 1e-15 {
                            return (z, it + 1, true);
                        }
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No descent along the arc at working precision: treat as stationary.
                return (z, it + 1, true);
            }
        }
        (z, NEWTON_MAX_ITER, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::bnb::{enumerate_oracle, solve_miqp_bnb, BnbOptions};
    use crate::optim::condense::tests::random_spec;

    fn box_qp(h: &[f64], f: &[f64], g: &[f64], rhs: &[f64]) -> CondensedQp {
        let n = f.len();
        CondensedQp::new(
            Matrix::from_row_slice(n, n, h),
            Vector::from_column_slice(f),
            Matrix::from_row_slice(rhs.len(), n, g),
            Vector::from_column_slice(rhs),
            Vector::zeros(n),
            Vector::from_element(n, 1.0),
            (0..n).collect(),
        )
    }

    #[test]
    fn schedule_follows_geometric_law() {
        let s = PthSchedule::default();
        assert_eq!(s.weights(0), (0.0, 0.0));
        for i in 1..=s.i_max {
            let expect = 32.0 * 2f64.powi(i as i32 - 1);
            assert_eq!(s.weights(i), (expect, expect));
        }
        assert!(s.weights(12).0 > s.weights(11).0);
    }

    #[test]
    fn integral_relaxation_exits_after_first_pass() {
        let qp = box_qp(&[1.0, 0.0, 0.0, 1.0], &[-3.0, 2.0], &[], &[]);
        let sol = pth_solve_condensed(&qp, &PthSchedule::default());
        assert_eq!(sol.outcome, PthOutcome::Integral);
        assert_eq!(sol.log.len(), 1);
        assert_eq!(sol.z.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn fractional_relaxation_is_driven_to_integrality() {
        // Relaxed optimum is 0.6; the penalty pushes it to the nearer vertex.
        let qp = box_qp(&[2.0], &[-1.2], &[], &[]);
        let sol = pth_solve_condensed(&qp, &PthSchedule::default());
        assert_eq!(sol.outcome, PthOutcome::Integral);
        assert_eq!(sol.z[0], 1.0);
        assert!(sol.log.len() >= 2);
        for (k, entry) in sol.log.iter().enumerate() {
            assert_eq!(entry.i, k);
            assert_eq!((entry.beta, entry.gamma), PthSchedule::default().weights(k));
        }
    }

    #[test]
    fn iteration_limit_returns_zeros() {
        let qp = box_qp(&[2.0], &[-1.2], &[], &[]);
        let schedule = PthSchedule { i_max: 0, ..PthSchedule::default() };
        let sol = pth_solve_condensed(&qp, &schedule);
        assert_eq!(sol.outcome, PthOutcome::IterationLimit);
        assert_eq!(sol.z[0], 0.0);
        assert_eq!(sol.log.len(), 1);
    }

    #[test]
    fn barrier_undefined_at_zero_returns_zeros() {
        // Row 0.5 z <= -0.1 cannot hold at z = 0.
        let qp = box_qp(&[2.0], &[-1.2], &[0.5], &[-0.1]);
        let sol = pth_solve_condensed(&qp, &PthSchedule::default());
        assert_eq!(sol.outcome, PthOutcome::BarrierUndefined);
        assert!(sol.log.is_empty());
    }

    #[test]
    fn barrier_keeps_plan_feasible() {
        // Firing both would be cheapest but the row allows only one. The cost is
        // scaled so the barrier (gamma = 32) does not swamp it.
        let qp = box_qp(&[100.0, 0.0, 0.0, 100.0], &[-300.0, -200.0], &[1.0, 1.0], &[1.5]);
        let sol = pth_solve_condensed(&qp, &PthSchedule::default());
        assert_eq!(sol.outcome, PthOutcome::Integral);
        assert!(qp.is_feasible(&sol.z, 1e-9));
        let (best, _) = enumerate_oracle(&qp, 1e-9).unwrap();
        assert_eq!(sol.z, best);
    }

    #[test]
    fn result_is_integral_and_feasible_on_scenario_problems() {
        let mut agree = 0;
        let total = 12;
        for seed in 0..total {
            let qp = condense(&random_spec(seed, 2, 1)).unwrap();
            let sol = pth_solve_condensed(&qp, &PthSchedule::default());
            assert!(sol.log.len() <= PthSchedule::default().i_max + 1);
            assert!(sol.z.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(qp.is_feasible(&sol.z, 1e-9), "seed {seed}");
            let bnb = solve_miqp_bnb(&qp, None, &BnbOptions::default());
            assert!(sol.objective >= bnb.objective - 1e-9 * (1.0 + bnb.objective.abs()));
            if sol.z[0] == bnb.z[0] {
                agree += 1;
            }
        }
        assert!(agree * 2 >= total, "{agree}/{total}");
    }

    #[test]
    fn deterministic() {
        let qp = condense(&random_spec(3, 2, 1)).unwrap();
        let a = pth_solve_condensed(&qp, &PthSchedule::default());
        let b = pth_solve_condensed(&qp, &PthSchedule::default());
        assert_eq!(a.z, b.z);
        assert_eq!(a.log.len(), b.log.len());
    }
}
