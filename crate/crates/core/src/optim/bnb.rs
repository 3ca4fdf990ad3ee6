//! Best-first branch and bound over the binary variables, plus an exhaustive
//! enumeration oracle for small instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::numerics::Vector;
use crate::optim::condense::CondensedQp;
use crate::optim::qp::{solve_qp_with, KktResiduals, QpOptions, QpSolution, QpStatus};

#[derive(Debug, Clone, Copy)]
pub struct BnbOptions {
    pub time_budget: Option<Duration>,
    pub node_limit: usize,
    pub int_tol: f64,
    pub feas_tol: f64,
    pub qp: QpOptions,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self { time_budget: None, node_limit: 200_000, int_tol: 1e-6, feas_tol: 1e-9, qp: QpOptions::default() }
    }
}

struct Node {
    bound: f64,
    seq: usize,
    lb: Vector,
    ub: Vector,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Reversed so the max-heap pops the lowest bound, oldest node first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.seq.cmp(&self.seq))
    }
}

struct Incumbent {
    z: Vector,
    objective: f64,
}

fn prune_threshold(incumbent: &Option<Incumbent>) -> f64 {
    match incumbent {
        Some(inc) => inc.objective - 1e-10 * (1.0 + inc.objective.abs()),
        None => f64::INFINITY,
    }
}

/// Evaluate an integral point: fix the binaries and, when continuous variables
/// remain, re-solve for them.
fn evaluate_integral(qp: &CondensedQp, z: &Vector, lb: &Vector, ub: &Vector, opts: &BnbOptions) -> Option<Incumbent> {
    let mut point = z.clone();
    for &i in &qp.binaries {
        point[i] = point[i].round().clamp(lb[i], ub[i]);
    }
    if qp.binaries.len() < qp.n_z() {
        let mut flb = lb.clone();
        let mut fub = ub.clone();
        for &i in &qp.binaries {
            flb[i] = point[i];
            fub[i] = point[i];
        }
        let sol = solve_qp_with(qp, &flb, &fub, &opts.qp);
        if sol.status == QpStatus::Infeasible {
            return None;
        }
        point = sol.z;
        for &i in &qp.binaries {
            point[i] = flb[i];
        }
    }
    qp.is_feasible(&point, opts.feas_tol).then(|| Incumbent { objective: qp.objective(&point), z: point })
}

fn most_fractional(qp: &CondensedQp, z: &Vector, tol: f64) -> Option<usize> {
    let mut pick: Option<(usize, f64)> = None;
    for &i in &qp.binaries {
        let frac = (z[i] - z[i].round()).abs();
        if frac > tol && pick.is_none_or(|(_, f)| frac > f) {
            pick = Some((i, frac));
        }
    }
    pick.map(|(i, _)| i)
}

/// Solve the mixed-binary QP to global optimality (convex `H`) or until the
/// node/time budget runs out. `warm` seeds the incumbent when feasible.
pub fn solve_miqp_bnb(qp: &CondensedQp, warm: Option<&Vector>, opts: &BnbOptions) -> QpSolution {
    let start = Instant::now();
    let n = qp.n_z();
    let mut incumbent: Option<Incumbent> = None;
    let seeds = warm.into_iter().cloned().chain(std::iter::once(Vector::zeros(n)));
    for seed in seeds {
        if seed.len() != n {
            continue;
        }
        let clamped = Vector::from_fn(n, |i, _| seed[i].clamp(qp.lb[i], qp.ub[i]));
        if let Some(c) = evaluate_integral(qp, &clamped, &qp.lb, &qp.ub, opts) {
            if incumbent.as_ref().is_none_or(|inc| c.objective < inc.objective) {
                incumbent = Some(c);
            }
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: f64::NEG_INFINITY, seq: 0, lb: qp.lb.clone(), ub: qp.ub.clone() });
    let mut seq = 1;
    let mut nodes = 0;
    let mut iterations = 0;
    let mut exhausted = true;
    let mut root_kkt = KktResiduals::default();
    while let Some(node) = heap.pop() {
        if node.bound >= prune_threshold(&incumbent) {
            // Best-first: every remaining node is at least as bad.
            heap.clear();
            break;
        }
        let over_time = opts.time_budget.is_some_and(|b| start.elapsed() >= b);
        if nodes >= opts.node_limit || over_time {
            heap.push(node);
            exhausted = false;
            break;
        }
        nodes += 1;
        let relax = solve_qp_with(qp, &node.lb, &node.ub, &opts.qp);
        iterations += relax.iterations;
        if nodes == 1 {
            root_kkt = relax.kkt;
        }
        if relax.status == QpStatus::Infeasible {
            continue;
        }
        // A capped solve gives no valid bound; keep the parent's.
        let bound = if relax.status == QpStatus::IterationCap { node.bound } else { relax.objective.max(node.bound) };
        if bound >= prune_threshold(&incumbent) {
            continue;
        }
        match most_fractional(qp, &relax.z, opts.int_tol) {
            None => {
                if let Some(c) = evaluate_integral(qp, &relax.z, &node.lb, &node.ub, opts) {
                    if incumbent.as_ref().is_none_or(|inc| c.objective < inc.objective) {
                        incumbent = Some(c);
                    }
                }
            }
            Some(i) => {
                let mut down_ub = node.ub.clone();
                down_ub[i] = 0.0;
                let mut up_lb = node.lb.clone();
                up_lb[i] = 1.0;
                heap.push(Node { bound, seq, lb: node.lb.clone(), ub: down_ub });
                heap.push(Node { bound, seq: seq + 1, lb: up_lb, ub: node.ub });
                seq += 2;
            }
        }
    }

    let best_open = heap.iter().map(|nd| nd.bound).fold(f64::INFINITY, f64::min);
    let m = qp.g.nrows();
    let p = qp.a_eq.nrows();
    match incumbent {
        Some(inc) => {
            let gap = if exhausted { 0.0 } else { (inc.objective - best_open).max(0.0) };
            let primal = qp.max_violation(&inc.z);
            QpSolution {
                objective: inc.objective,
                z: inc.z,
                status: if exhausted { QpStatus::Optimal } else { QpStatus::IterationCap },
                kkt: KktResiduals { primal, ..root_kkt },
                iterations,
                nodes,
                bound_gap: gap,
                row_multipliers: Vector::zeros(m),
                eq_multipliers: Vector::zeros(p),
                lower_multipliers: Vector::zeros(n),
                upper_multipliers: Vector::zeros(n),
                infeasibility: 0.0,
            }
        }
        None => QpSolution {
            z: Vector::zeros(n),
            objective: f64::INFINITY,
            status: if exhausted { QpStatus::Infeasible } else { QpStatus::IterationCap },
            kkt: root_kkt,
            iterations,
            nodes,
            bound_gap: f64::INFINITY,
            row_multipliers: Vector::zeros(m),
            eq_multipliers: Vector::zeros(p),
            lower_multipliers: Vector::zeros(n),
            upper_multipliers: Vector::zeros(n),
            infeasibility: 0.0,
        },
    }
}

/// Exhaustive reference for small instances: every binary pattern is
/// evaluated (continuous variables re-solved). Returns `None` when no
/// pattern is feasible. Ties keep the lowest pattern index.
pub fn enumerate_oracle(qp: &CondensedQp, feas_tol: f64) -> Option<(Vector, f64)> {
    let nb = qp.binaries.len();
    assert!(nb <= 24, "enumeration over {nb} binaries is not tractable");
    let opts = BnbOptions { feas_tol, ..BnbOptions::default() };
    let mut best: Option<(Vector, f64)> = None;
    for pattern in 0u64..(1u64 << nb) {
        let mut z = Vector::zeros(qp.n_z());
        let mut lb = qp.lb.clone();
        let mut ub = qp.ub.clone();
        let mut admissible = true;
        for (b, &i) in qp.binaries.iter().enumerate() {
            let v = ((pattern >> b) & 1) as f64;
            if v < qp.lb[i] || v > qp.ub[i] {
                admissible = false;
                break;
            }
            z[i] = v;
            lb[i] = v;
            ub[i] = v;
        }
        if !admissible {
            continue;
        }
        if let Some(c) = evaluate_integral(qp, &z, &lb, &ub, &opts) {
            if best.as_ref().is_none_or(|(_, o)| c.objective < *o) {
                best = Some((c.z, c.objective));
            }
        }
    }
    best
}
