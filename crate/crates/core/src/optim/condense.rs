//! Condensing of the delayed multistage tracking problem into a dense QP over
//! the control-instant inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::scenario::ScenarioTree;

/// Optimal-control problem for one control instant, in reduced coordinates.
#[derive(Debug, Clone)]
pub struct OcpSpec {
    pub a: Matrix,
    pub c: Matrix,
    /// Input vectors `B(p)`, indexed by the tree's parameter digits.
    pub b: Vec<Vector>,
    pub tree: ScenarioTree,
    /// Prediction horizon `N` in `tau_s` steps.
    pub horizon: usize,
    /// `tau_c / tau_s`.
    pub control_period: usize,
    pub delay: usize,
    /// Steps from now until each in-flight pellet enters (`>= 0`).
    pub pending_entries: Vec<usize>,
    pub x0: Vector,
    /// `y^r_k` for `k = 0..=horizon`.
    pub reference: Vec<Vector>,
    pub q_diag: Vector,
    pub r: f64,
    pub edge_index: usize,
    pub n_lim: f64,
}

impl OcpSpec {
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// First prediction step influenced by the decision at control step `l`.
    pub fn first_effect(&self, l: usize) -> usize {
        l * self.control_period + self.delay + 1
    }

    pub fn validate(&self) -> Result<()> {
        let n_x = self.n_x();
        let n_y = self.n_y();
        let bad = |m: &str| Err(Error::InvalidArgument(format!("OCP: {m}")));
        if self.a.ncols() != n_x || self.c.ncols() != n_x || self.x0.len() != n_x {
            return bad("A, C and x0 dimensions disagree");
        }
        if self.b.is_empty() || self.b.iter().any(|b| b.len() != n_x) {
            return bad("input vectors missing or of wrong length");
        }
        let max_digit = self.tree.param.iter().flatten().copied().max().unwrap_or(0);
        if max_digit >= self.b.len() {
            return bad("tree refers to more realizations than provided");
        }
        if self.reference.len() != self.horizon + 1 || self.reference.iter().any(|r| r.len() != n_y) {
            return bad("reference must hold horizon + 1 output vectors");
        }
        if self.q_diag.len() != n_y || self.q_diag.iter().any(|&q| !(q >= 0.0)) {
            return bad("Q must be a nonnegative diagonal of length n_y");
        }
        if !(self.r >= 0.0) {
            return bad("R must be nonnegative");
        }
        if self.edge_index >= n_y {
            return bad("edge index out of range");
        }
        if self.control_period == 0 {
            return bad("control period must be positive");
        }
        if self.pending_entries.iter().any(|&e| e > self.delay) {
            return bad("pending pellet enters later than a fresh one would");
        }
        Ok(())
    }

    /// Input vector of scenario `j` at control step `l`.
    pub fn input_vector(&self, j: usize, l: usize) -> &Vector {
        &self.b[self.tree.param[j][l]]
    }
}

/// Affine state predictions `x_{k,j} = free_{k,j} + sum_l z_{v(l,j)} psi_{j,l}[k]`.
#[derive(Debug, Clone)]
pub struct PredictionMap {
    /// `free[j]`: `n_x x (N + 1)` free response including in-flight pellets.
    pub free: Vec<Matrix>,
    /// `impulse[j][l]`: `n_x x (N + 1)` response to a unit decision at control step `l`.
    pub impulse: Vec<Vec<Matrix>>,
    /// `var[j][l]`: decision-variable index of `u_{l,j}`.
    pub var: Vec<Vec<usize>>,
}

impl PredictionMap {
    /// States `x_{k,j}` as columns of one matrix per scenario.
    pub fn states(&self, z: &Vector) -> Vec<Matrix> {
        self.free
            .iter()
            .enumerate()
            .map(|(j, free)| {
                let mut x = free.clone();
                for (l, psi) in self.impulse[j].iter().enumerate() {
                    let u = z[self.var[j][l]];
                    if u != 0.0 {
                        x += psi * u;
                    }
                }
                x
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CondenseAudit {
    /// Edge rows with no decision dependence, dropped from `G`.
    pub vacuous_rows: usize,
    /// Vacuous rows already above the limit (the problem is infeasible).
    pub vacuous_violations: usize,
    /// Smallest `n_lim - y` over the vacuous rows.
    pub vacuous_min_slack: Option<f64>,
    /// Decisions whose first effect lies beyond the horizon.
    pub dead_decisions: Vec<usize>,
}

/// Dense QP `min 1/2 z'Hz + f'z + c0` s.t. `Gz <= h`, `A_eq z = b_eq`, `lb <= z <= ub`,
/// with `z_i` binary for `i` in `binaries`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondensedQp {
    #[serde(with = "crate::serde_mat::matrix")]
    pub h: Matrix,
    #[serde(with = "crate::serde_mat::vector")]
    pub f: Vector,
    pub c0: f64,
    #[serde(with = "crate::serde_mat::matrix")]
    pub g: Matrix,
    #[serde(with = "crate::serde_mat::vector")]
    pub g_rhs: Vector,
    #[serde(with = "crate::serde_mat::matrix")]
    pub a_eq: Matrix,
    #[serde(with = "crate::serde_mat::vector")]
    pub b_eq: Vector,
    #[serde(with = "crate::serde_mat::vector")]
    pub lb: Vector,
    #[serde(with = "crate::serde_mat::vector")]
    pub ub: Vector,
    pub binaries: Vec<usize>,
    /// Weight of each `G` row in the barrier of the homotopy passes.
    #[serde(with = "crate::serde_mat::vector")]
    pub row_weight: Vector,
    /// Weight of each variable in the complementarity penalty.
    #[serde(with = "crate::serde_mat::vector")]
    pub var_weight: Vector,
    pub audit: CondenseAudit,
    /// Per-row `(scenario, k)` origin of `G`.
    pub row_origin: Vec<(usize, usize)>,
    #[serde(skip)]
    pub prediction: Option<PredictionMap>,
}

impl CondensedQp {
    /// Plain QP with unit barrier/penalty weights and no prediction metadata.
    pub fn new(h: Matrix, f: Vector, g: Matrix, g_rhs: Vector, lb: Vector, ub: Vector, binaries: Vec<usize>) -> Self {
        let n = f.len();
        let m = g.nrows();
        Self {
            h,
            f,
            c0: 0.0,
            g,
            g_rhs,
            a_eq: Matrix::zeros(0, n),
            b_eq: Vector::zeros(0),
            lb,
            ub,
            binaries,
            row_weight: Vector::from_element(m, 1.0),
            var_weight: Vector::from_element(n, 1.0),
            audit: CondenseAudit::default(),
            row_origin: (0..m).map(|i| (0, i)).collect(),
            prediction: None,
        }
    }

    pub fn with_equalities(mut self, a_eq: Matrix, b_eq: Vector) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn n_z(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_z();
        let ok = self.h.shape() == (n, n)
            && self.g.ncols() == n
            && self.g.nrows() == self.g_rhs.len()
            && self.a_eq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.lb.len() == n
            && self.ub.len() == n
            && self.row_weight.len() == self.g.nrows()
            && self.var_weight.len() == n;
        if !ok {
            return Err(Error::InvalidArgument("QP dimensions are inconsistent".into()));
        }
        if (0..n).any(|i| !(self.lb[i] <= self.ub[i])) {
            return Err(Error::InvalidArgument("QP bounds are empty".into()));
        }
        if self.binaries.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("binary index out of range".into()));
        }
        if (&self.h - self.h.transpose()).abs().max() > 1e-9 * self.h.abs().max().max(1.0) {
            return Err(Error::InvalidArgument("Hessian is not symmetric".into()));
        }
        Ok(())
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z) + self.c0
    }

    /// Largest violation of rows, equalities and bounds at `z` (0 when feasible).
    pub fn max_violation(&self, z: &Vector) -> f64 {
        let mut v: f64 = 0.0;
        if self.g.nrows() > 0 {
            let r = &self.g * z - &self.g_rhs;
            v = v.max(r.max().max(0.0));
        }
        if self.a_eq.nrows() > 0 {
            v = v.max((&self.a_eq * z - &self.b_eq).abs().max());
        }
        for i in 0..z.len() {
            v = v.max(self.lb[i] - z[i]).max(z[i] - self.ub[i]);
        }
        v
    }

    /// Feasible to `tol`, including vacuous rows recorded by condensing.
    pub fn is_feasible(&self, z: &Vector, tol: f64) -> bool {
        self.audit.vacuous_violations == 0 && self.max_violation(z) <= tol
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut qp: Self = serde_json::from_str(s)?;
        // Row-major arrays lose the column count of empty matrices.
        let n = qp.n_z();
        if qp.g.nrows() == 0 {
            qp.g = Matrix::zeros(0, n);
        }
        if qp.a_eq.nrows() == 0 {
            qp.a_eq = Matrix::zeros(0, n);
        }
        qp.validate()?;
        Ok(qp)
    }
}

pub fn condense(spec: &OcpSpec) -> Result<CondensedQp> {
    spec.validate()?;
    let tree = &spec.tree;
    let n_x = spec.n_x();
    let n_s = tree.n_scenarios;
    let n_c = tree.n_c;
    let n_z = tree.n_variables();
    let steps = spec.horizon + 1;

    // A^m b for every realization; shared by all scenarios.
    let powers: Vec<Matrix> = spec
        .b
        .iter()
        .map(|b| {
            let mut p = Matrix::zeros(n_x, steps);
            let mut v = b.clone();
            for m in 0..steps {
                p.set_column(m, &v);
                v = &spec.a * v;
            }
            p
        })
        .collect();

    let q = &spec.q_diag;
    let qc = Matrix::from_fn(spec.n_y(), n_x, |i, j| q[i] * spec.c[(i, j)]);
    let m_mat = spec.c.transpose() * &qc;
    let ct = spec.c.transpose();
    let c_edge = spec.c.row(spec.edge_index).transpose();

    let mut h = Matrix::zeros(n_z, n_z);
    let mut f = Vector::zeros(n_z);
    let mut c0 = 0.0;
    let mut g_rows: Vec<Vector> = Vec::new();
    let mut g_rhs: Vec<f64> = Vec::new();
    let mut row_weight: Vec<f64> = Vec::new();
    let mut row_origin = Vec::new();
    let mut var_weight = Vector::zeros(n_z);
    let mut audit = CondenseAudit::default();
    audit.dead_decisions = (0..n_c).filter(|&l| spec.first_effect(l) > spec.horizon).collect();

    // Reference terms are scenario independent.
    let g_ref: Vec<Vector> = spec.reference.iter().map(|r| &ct * q.component_mul(r)).collect();
    let c_ref: Vec<f64> = spec.reference.iter().map(|r| r.dot(&q.component_mul(r))).collect();

    let mut free_all = Vec::with_capacity(n_s);
    let mut impulse_all = Vec::with_capacity(n_s);
    let mut var_all = Vec::with_capacity(n_s);

    for j in 0..n_s {
        let w = tree.weights[j];
        let vars: Vec<usize> = (0..n_c).map(|l| tree.variable(l, j)).collect();
        let starts: Vec<usize> = (0..n_c).map(|l| spec.first_effect(l)).collect();

        let b_pending = spec.input_vector(j, 0);
        let mut free = Matrix::zeros(n_x, steps);
        let mut x = spec.x0.clone();
        for k in 0..steps {
            free.set_column(k, &x);
            if k + 1 < steps {
                let mut next = &spec.a * &x;
                for &e in &spec.pending_entries {
                    if e == k {
                        next += b_pending;
                    }
                }
                x = next;
            }
        }

        let impulse: Vec<Matrix> = (0..n_c)
            .map(|l| {
                let p = &powers[tree.param[j][l]];
                let mut psi = Matrix::zeros(n_x, steps);
                for k in starts[l]..steps {
                    psi.set_column(k, &p.column(k - starts[l]));
                }
                psi
            })
            .collect();

        let mut hj = Matrix::zeros(n_c, n_c);
        let mut fj = Vector::zeros(n_c);
        let mut cj = 0.0;
        for k in 0..steps {
            let xk = free.column(k);
            let mx = &m_mat * xk;
            cj += xk.dot(&mx) - 2.0 * g_ref[k].dot(&xk) + c_ref[k];
            let active: Vec<usize> = (0..n_c).filter(|&l| starts[l] <= k).collect();
            let lin = &mx - &g_ref[k];
            for &l1 in &active {
                let psi1 = impulse[l1].column(k);
                let mpsi = &m_mat * psi1;
                fj[l1] += 2.0 * psi1.dot(&lin);
                for &l2 in &active {
                    hj[(l1, l2)] += 2.0 * impulse[l2].column(k).dot(&mpsi);
                }
            }

            let constant = c_edge.dot(&xk);
            if active.is_empty() {
                audit.vacuous_rows += 1;
                let slack = spec.n_lim - constant;
                audit.vacuous_min_slack = Some(audit.vacuous_min_slack.map_or(slack, |s| s.min(slack)));
                if slack < 0.0 {
                    audit.vacuous_violations += 1;
                }
            } else {
                let mut row = Vector::zeros(n_z);
                for &l in &active {
                    row[vars[l]] += c_edge.dot(&impulse[l].column(k));
                }
                g_rows.push(row);
                g_rhs.push(spec.n_lim - constant);
                row_weight.push(w);
                row_origin.push((j, k));
            }
        }
        for l in 0..n_c {
            hj[(l, l)] += 2.0 * spec.r;
        }

        for l1 in 0..n_c {
            f[vars[l1]] += w * fj[l1];
            var_weight[vars[l1]] += w;
            for l2 in 0..n_c {
                h[(vars[l1], vars[l2])] += w * hj[(l1, l2)];
            }
        }
        c0 += w * cj;

        free_all.push(free);
        impulse_all.push(impulse);
        var_all.push(vars);
    }
    let h = (&h + h.transpose()) * 0.5;
    let m = g_rows.len();
    let g = Matrix::from_fn(m, n_z, |r, c| g_rows[r][c]);
    Ok(CondensedQp {
        h,
        f,
        c0,
        g,
        g_rhs: Vector::from_vec(g_rhs),
        a_eq: Matrix::zeros(0, n_z),
        b_eq: Vector::zeros(0),
        lb: Vector::zeros(n_z),
        ub: Vector::from_element(n_z, 1.0),
        binaries: (0..n_z).collect(),
        row_weight: Vector::from_vec(row_weight),
        var_weight,
        audit,
        row_origin,
        prediction: Some(PredictionMap { free: free_all, impulse: impulse_all, var: var_all }),
    })
}

/// Step-by-step simulation of every scenario under decisions `z`, independent of the
/// condensed matrices. Returns `x_{k,j}` as columns of one matrix per scenario.
pub fn rollout(spec: &OcpSpec, z: &Vector) -> Vec<Matrix> {
    let tree = &spec.tree;
    let steps = spec.horizon + 1;
    (0..tree.n_scenarios)
        .map(|j| {
            let mut x = spec.x0.clone();
            let mut out = Matrix::zeros(spec.n_x(), steps);
            for k in 0..steps {
                out.set_column(k, &x);
                let mut next = &spec.a * &x;
                for &e in &spec.pending_entries {
                    if e == k {
                        next += spec.input_vector(j, 0);
                    }
                }
                // u_{k-d} is nonzero only on control instants.
                if let Some(fired) = k.checked_sub(spec.delay) {
                    if fired % spec.control_period == 0 && fired / spec.control_period < tree.n_c {
                        let l = fired / spec.control_period;
                        next += spec.input_vector(j, l) * z[tree.variable(l, j)];
                    }
                }
                x = next;
            }
            out
        })
        .collect()
}
