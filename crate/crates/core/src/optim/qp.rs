//! Primal-dual interior-point solver (Mehrotra predictor-corrector) for the
//! condensed QPs, with box screening of redundant rows and elimination of
//! fixed variables.

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, Vector};
use crate::optim::condense::CondensedQp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    LocalStationary,
    Infeasible,
    IterationCap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: Vector,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    /// Branch-and-bound nodes explored (1 for a plain QP solve).
    pub nodes: usize,
    /// Incumbent minus best open bound when a search stops early.
    pub bound_gap: f64,
    /// Multipliers of the `G` rows (zero for rows screened out as redundant).
    pub row_multipliers: Vector,
    pub eq_multipliers: Vector,
    pub lower_multipliers: Vector,
    pub upper_multipliers: Vector,
    /// Positive certificate of infeasibility: the smallest achievable uniform row excess.
    pub infeasibility: f64,
}

impl QpSolution {
    fn infeasible(n: usize, m: usize, p: usize, excess: f64, iterations: usize) -> Self {
        Self {
            z: Vector::zeros(n),
            objective: f64::INFINITY,
            status: QpStatus::Infeasible,
            kkt: KktResiduals::default(),
            iterations,
            nodes: 1,
            bound_gap: 0.0,
            row_multipliers: Vector::zeros(m),
            eq_multipliers: Vector::zeros(p),
            lower_multipliers: Vector::zeros(n),
            upper_multipliers: Vector::zeros(n),
            infeasibility: excess,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Absolute row tolerance used for feasibility decisions.
    pub feas_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, feas_tol: 1e-9 }
    }
}

/// Continuous relaxation of `qp` (binaries ignored) over its own bounds.
pub fn solve_qp(qp: &CondensedQp) -> QpSolution {
    solve_qp_with(qp, &qp.lb, &qp.ub, &QpOptions::default())
}

/// Continuous relaxation over the box `[lb, ub]` (used by branch and bound).
pub fn solve_qp_with(qp: &CondensedQp, lb: &Vector, ub: &Vector, opts: &QpOptions) -> QpSolution {
    let n = qp.n_z();
    let m = qp.g.nrows();
    let p = qp.a_eq.nrows();
    if qp.audit.vacuous_violations > 0 {
        let excess = -qp.audit.vacuous_min_slack.unwrap_or(0.0);
        return QpSolution::infeasible(n, m, p, excess.max(opts.feas_tol), 0);
    }
    if (0..n).any(|i| lb[i] > ub[i]) {
        return QpSolution::infeasible(n, m, p, (0..n).map(|i| lb[i] - ub[i]).fold(0.0, f64::max), 0);
    }
    let free: Vec<usize> = (0..n).filter(|&i| ub[i] - lb[i] > 1e-14).collect();
    let fixed: Vec<usize> = (0..n).filter(|&i| ub[i] - lb[i] <= 1e-14).collect();
    let mut z_full = Vector::zeros(n);
    for &i in &fixed {
        z_full[i] = lb[i];
    }
    let nf = free.len();

    // Reduced data over the free variables.
    let h_ff = Matrix::from_fn(nf, nf, |a, b| qp.h[(free[a], free[b])]);
    let f_f = Vector::from_fn(nf, |a, _| {
        qp.f[free[a]] + fixed.iter().map(|&x| qp.h[(free[a], x)] * z_full[x]).sum::<f64>()
    });
    let lb_f = Vector::from_fn(nf, |a, _| lb[free[a]]);
    let ub_f = Vector::from_fn(nf, |a, _| ub[free[a]]);

    let mut kept: Vec<usize> = Vec::new();
    let mut rhs_kept: Vec<f64> = Vec::new();
    for r in 0..m {
        let rhs = qp.g_rhs[r] - fixed.iter().map(|&x| qp.g[(r, x)] * z_full[x]).sum::<f64>();
        let (mut lo, mut hi) = (0.0, 0.0);
        for (a, &i) in free.iter().enumerate() {
            let c = qp.g[(r, i)];
            let (u, v) = (c * lb_f[a], c * ub_f[a]);
            lo += u.min(v);
            hi += u.max(v);
        }
        if lo > rhs + opts.feas_tol {
            return QpSolution::infeasible(n, m, p, lo - rhs, 0);
        }
        if hi > rhs {
            kept.push(r);
            rhs_kept.push(rhs);
        }
    }
    let g_k = Matrix::from_fn(kept.len(), nf, |a, b| qp.g[(kept[a], free[b])]);
    let rhs_k = Vector::from_vec(rhs_kept);
    let a_f = Matrix::from_fn(p, nf, |a, b| qp.a_eq[(a, free[b])]);
    let b_f = Vector::from_fn(p, |a, _| {
        qp.b_eq[a] - fixed.iter().map(|&x| qp.a_eq[(a, x)] * z_full[x]).sum::<f64>()
    });

    let mut iterations = 0;
    let mut row_mult = Vector::zeros(m);
    let mut eq_mult = Vector::zeros(p);
    let mut lo_mult = Vector::zeros(n);
    let mut up_mult = Vector::zeros(n);
    let mut converged = true;
    if nf > 0 {
        let problem = Ipm { h: &h_ff, f: &f_f, g: &g_k, rhs: &rhs_k, a: &a_f, b: &b_f, lb: &lb_f, ub: &ub_f };
        let out = problem.solve(opts);
        iterations = out.iterations;
        converged = out.converged;
        if !converged {
            let excess = problem.phase_one(opts);
            if excess > opts.feas_tol {
                return QpSolution::infeasible(n, m, p, excess, iterations);
            }
        }
        for (a, &i) in free.iter().enumerate() {
            z_full[i] = out.z[a];
            lo_mult[i] = out.lam_lo[a];
            up_mult[i] = out.lam_up[a];
        }
        for (a, &r) in kept.iter().enumerate() {
            row_mult[r] = out.lam[a];
        }
        eq_mult = out.nu;
    } else if qp.max_violation(&z_full) > opts.feas_tol {
        return QpSolution::infeasible(n, m, p, qp.max_violation(&z_full), 0);
    }

    // Fixed variables carry whatever bound multiplier closes stationarity.
    let grad = &qp.h * &z_full + &qp.f;
    let mut reduced = grad.clone();
    if m > 0 {
        reduced += qp.g.transpose() * &row_mult;
    }
    if p > 0 {
        reduced += qp.a_eq.transpose() * &eq_mult;
    }
    for &i in &fixed {
        let r = reduced[i] - lo_mult[i] + up_mult[i];
        if r >= 0.0 {
            lo_mult[i] += r;
        } else {
            up_mult[i] -= r;
        }
    }
    let kkt = kkt_residuals(qp, &z_full, lb, ub, &row_mult, &eq_mult, &lo_mult, &up_mult);
    let convex = nf == 0 || is_positive_semidefinite(&h_ff);
    let status = match (converged, convex) {
        (false, _) => QpStatus::IterationCap,
        (true, true) => QpStatus::Optimal,
        (true, false) => QpStatus::LocalStationary,
    };
    QpSolution {
        objective: qp.objective(&z_full),
        z: z_full,
        status,
        kkt,
        iterations,
        nodes: 1,
        bound_gap: 0.0,
        row_multipliers: row_mult,
        eq_multipliers: eq_mult,
        lower_multipliers: lo_mult,
        upper_multipliers: up_mult,
        infeasibility: 0.0,
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kkt_residuals(
    qp: &CondensedQp,
    z: &Vector,
    lb: &Vector,
    ub: &Vector,
    lam: &Vector,
    nu: &Vector,
    lam_lo: &Vector,
    lam_up: &Vector,
) -> KktResiduals {
    let hz = &qp.h * z;
    let mut stat = &hz + &qp.f - lam_lo + lam_up;
    if qp.g.nrows() > 0 {
        stat += qp.g.transpose() * lam;
    }
    if qp.a_eq.nrows() > 0 {
        stat += qp.a_eq.transpose() * nu;
    }
    let scale = 1f64.max(qp.f.amax()).max(hz.amax());
    let mut primal: f64 = 0.0;
    let mut comp: f64 = 0.0;
    if qp.g.nrows() > 0 {
        let slack = &qp.g_rhs - &qp.g * z;
        primal = primal.max((-slack.min()).max(0.0));
        comp = comp.max(slack.component_mul(lam).amax());
    }
    if qp.a_eq.nrows() > 0 {
        primal = primal.max((&qp.a_eq * z - &qp.b_eq).amax());
    }
    for i in 0..z.len() {
        primal = primal.max(lb[i] - z[i]).max(z[i] - ub[i]);
        comp = comp.max((lam_lo[i] * (z[i] - lb[i])).abs()).max((lam_up[i] * (ub[i] - z[i])).abs());
    }
    let mut dual: f64 = 0.0;
    for v in lam.iter().chain(lam_lo.iter()).chain(lam_up.iter()) {
        dual = dual.max(-v);
    }
    let rscale = 1f64.max(qp.g_rhs.amax());
    KktResiduals {
        stationarity: stat.amax() / scale,
        primal: primal / rscale,
        dual: dual / scale,
        complementarity: comp / scale,
    }
}

fn is_positive_semidefinite(h: &Matrix) -> bool {
    let n = h.nrows();
    let shift = 1e-12 * h.amax().max(1.0);
    (h + Matrix::identity(n, n) * shift).cholesky().is_some()
}

/// Scaled residual at which a stalled run still counts as converged.
const STALL_ACCEPT: f64 = 1e-8;

struct Ipm<'a> {
    h: &'a Matrix,
    f: &'a Vector,
    g: &'a Matrix,
    rhs: &'a Vector,
    a: &'a Matrix,
    b: &'a Vector,
    lb: &'a Vector,
    ub: &'a Vector,
}

struct IpmOutcome {
    z: Vector,
    lam: Vector,
    lam_lo: Vector,
    lam_up: Vector,
    nu: Vector,
    iterations: usize,
    converged: bool,
}

/// Largest step in `(0, 1]` keeping `v + alpha dv >= 0`, damped by `tau`.
fn step_to_boundary(v: &Vector, dv: &Vector) -> f64 {
    let mut alpha: f64 = 1.0;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

impl Ipm<'_> {
    fn solve(&self, opts: &QpOptions) -> IpmOutcome {
        let n = self.f.len();
        let m = self.g.nrows();
        let p = self.a.nrows();
        let pairs = (m + 2 * n) as f64;
        let mut z = (self.lb + self.ub) * 0.5;
        let mut s = (self.rhs - self.g * &z).map(|v| v.max(1.0));
        let mut sl = (&z - self.lb).map(|v| v.max(1.0));
        let mut su = (self.ub - &z).map(|v| v.max(1.0));
        let mut lam = Vector::from_element(m, 1.0);
        let mut ll = Vector::from_element(n, 1.0);
        let mut lu = Vector::from_element(n, 1.0);
        let mut nu = Vector::zeros(p);
        let gt = self.g.transpose();
        let at = self.a.transpose();
        let fscale = 1.0 + self.f.amax();
        // Proximal shift for nonconvex problems; residuals still use the true Hessian.
        let hshift = if is_positive_semidefinite(self.h) {
            0.0
        } else {
            let lmin = nalgebra::SymmetricEigen::new(self.h.clone()).eigenvalues.min();
            -lmin + 1e-6 * self.h.amax().max(1.0)
        };
        let mut best: Option<(f64, Vector, Vector, Vector, Vector, Vector, usize)> = None;
        let pscale = 1.0 + self.rhs.amax().max(self.lb.amax()).max(self.ub.amax()).max(self.b.amax());

        for it in 0..opts.max_iter {
            let mut rd = self.h * &z + self.f - &ll + &lu;
            if m > 0 {
                rd += &gt * &lam;
            }
            if p > 0 {
                rd += &at * &nu;
            }
            let rp = self.g * &z + &s - self.rhs;
            let rpl = -&z + &sl + self.lb;
            let rpu = &z + &su - self.ub;
            let re = self.a * &z - self.b;
            let gap = s.dot(&lam) + sl.dot(&ll) + su.dot(&lu);
            let mu = gap / pairs;
            let obj = 0.5 * z.dot(&(self.h * &z)) + self.f.dot(&z);
            let res_p = rp.amax().max(rpl.amax()).max(rpu.amax()).max(if p > 0 { re.amax() } else { 0.0 });
            let merit = (rd.amax() / fscale).max(res_p / pscale).max(gap / (1.0 + obj.abs()));
            if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, z.clone(), lam.clone(), ll.clone(), lu.clone(), nu.clone(), it));
            }
            if rd.amax() <= opts.feas_tol * fscale
                && res_p <= opts.feas_tol * pscale
                && gap <= opts.tol * (1.0 + obj.abs())
            {
                return IpmOutcome { z, lam, lam_lo: ll, lam_up: lu, nu, iterations: it, converged: true };
            }
            // Complementarity exhausted: further steps only amplify round-off in the normal equations.
            if gap <= 1e-4 * opts.tol * (1.0 + obj.abs()) {
                break;
            }
            if !gap.is_finite() || lam.iter().chain(ll.iter()).chain(lu.iter()).any(|&v| v > 1e14 * fscale) {
                break;
            }

            let d = lam.component_div(&s);
            let dl = ll.component_div(&sl);
            let du = lu.component_div(&su);
            let mut k = self.h.clone();
            for i in 0..n {
                k[(i, i)] += hshift;
            }
            if m > 0 {
                let gd = Matrix::from_fn(m, n, |r, c| self.g[(r, c)] * d[r]);
                k += &gt * gd;
            }
            for i in 0..n {
                k[(i, i)] += dl[i] + du[i];
            }
            let Some(solver) = KktSolver::new(k, self.a) else { break };

            let direction = |rc: &Vector, rcl: &Vector, rcu: &Vector| {
                let t = (-rc + lam.component_mul(&rp)).component_div(&s);
                let tl = (-rcl + ll.component_mul(&rpl)).component_div(&sl);
                let tu = (-rcu + lu.component_mul(&rpu)).component_div(&su);
                let mut r = -&rd + &tl - &tu;
                if m > 0 {
                    r -= &gt * &t;
                }
                let (dz, dnu) = solver.solve(&r, &(-&re));
                let ds = -&rp - self.g * &dz;
                let dsl = -&rpl + &dz;
                let dsu = -&rpu - &dz;
                let dlam = (-rc - lam.component_mul(&ds)).component_div(&s);
                let dll = (-rcl - ll.component_mul(&dsl)).component_div(&sl);
                let dlu = (-rcu - lu.component_mul(&dsu)).component_div(&su);
                (dz, dnu, ds, dsl, dsu, dlam, dll, dlu)
            };

            let rc = s.component_mul(&lam);
            let rcl = sl.component_mul(&ll);
            let rcu = su.component_mul(&lu);
            let (_, _, ds, dsl, dsu, dlam, dll, dlu) = direction(&rc, &rcl, &rcu);
            let alpha_aff = [
                step_to_boundary(&s, &ds),
                step_to_boundary(&sl, &dsl),
                step_to_boundary(&su, &dsu),
                step_to_boundary(&lam, &dlam),
                step_to_boundary(&ll, &dll),
                step_to_boundary(&lu, &dlu),
            ]
            .into_iter()
            .fold(1.0, f64::min);
            let gap_aff = (&s + &ds * alpha_aff).dot(&(&lam + &dlam * alpha_aff))
                + (&sl + &dsl * alpha_aff).dot(&(&ll + &dll * alpha_aff))
                + (&su + &dsu * alpha_aff).dot(&(&lu + &dlu * alpha_aff));
            let sigma = (gap_aff / gap).powi(3).clamp(0.0, 1.0);

            let target = sigma * mu;
            let rc2 = rc + ds.component_mul(&dlam) - Vector::from_element(m, target);
            let rcl2 = rcl + dsl.component_mul(&dll) - Vector::from_element(n, target);
            let rcu2 = rcu + dsu.component_mul(&dlu) - Vector::from_element(n, target);
            let (dz, dnu, ds, dsl, dsu, dlam, dll, dlu) = direction(&rc2, &rcl2, &rcu2);
            let alpha_max = [
                step_to_boundary(&s, &ds),
                step_to_boundary(&sl, &dsl),
                step_to_boundary(&su, &dsu),
                step_to_boundary(&lam, &dlam),
                step_to_boundary(&ll, &dll),
                step_to_boundary(&lu, &dlu),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            let alpha = (0.995 * alpha_max).min(1.0);
            z += &dz * alpha;
            nu += &dnu * alpha;
            s += &ds * alpha;
            sl += &dsl * alpha;
            su += &dsu * alpha;
            lam += &dlam * alpha;
            ll += &dll * alpha;
            lu += &dlu * alpha;
        }
        match best {
            Some((merit, z, lam, ll, lu, nu, it)) => {
                IpmOutcome { z, lam, lam_lo: ll, lam_up: lu, nu, iterations: it, converged: merit <= STALL_ACCEPT }
            }
            None => IpmOutcome { z, lam, lam_lo: ll, lam_up: lu, nu, iterations: opts.max_iter, converged: false },
        }
    }

    /// Smallest uniform excess `t` with `Gz - t <= rhs`, `Az = b` over the box.
    fn phase_one(&self, opts: &QpOptions) -> f64 {
        let n = self.f.len();
        let m = self.g.nrows();
        let mid = (self.lb + self.ub) * 0.5;
        let start_excess = if m > 0 { (self.g * &mid - self.rhs).max().max(0.0) } else { 0.0 };
        let mut h = Matrix::zeros(n + 1, n + 1);
        // Tiny curvature keeps the reduced system definite on LP-degenerate faces.
        for i in 0..=n {
            h[(i, i)] = 1e-12;
        }
        let mut f = Vector::zeros(n + 1);
        f[n] = 1.0;
        let g = Matrix::from_fn(m, n + 1, |r, c| if c < n { self.g[(r, c)] } else { -1.0 });
        let a = Matrix::from_fn(self.a.nrows(), n + 1, |r, c| if c < n { self.a[(r, c)] } else { 0.0 });
        let mut lb = Vector::zeros(n + 1);
        let mut ub = Vector::zeros(n + 1);
        lb.rows_mut(0, n).copy_from(self.lb);
        ub.rows_mut(0, n).copy_from(self.ub);
        lb[n] = -1.0;
        ub[n] = start_excess + 1.0;
        let lp = Ipm { h: &h, f: &f, g: &g, rhs: self.rhs, a: &a, b: self.b, lb: &lb, ub: &ub };
        let out = lp.solve(&QpOptions { max_iter: 2 * opts.max_iter, ..*opts });
        if self.a.nrows() > 0 && (self.a * out.z.rows(0, n) - self.b).amax() > opts.feas_tol {
            return f64::INFINITY;
        }
        out.z[n]
    }
}

/// Factorization of `[K A'; A 0]`, Cholesky when there are no equalities.
enum KktSolver {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, usize),
}

impl KktSolver {
    fn new(k: Matrix, a: &Matrix) -> Option<Self> {
        let n = k.nrows();
        let p = a.nrows();
        if p == 0 {
            if let Some(c) = k.clone().cholesky() {
                return Some(Self::Chol(c));
            }
            // Inertia correction for indefinite or singular reduced systems.
            let mut shift = 1e-10 * k.amax().max(1.0);
            while shift < 1e20 {
                if let Some(c) = (&k + Matrix::identity(n, n) * shift).cholesky() {
                    return Some(Self::Chol(c));
                }
                shift *= 100.0;
            }
            return None;
        }
        let mut big = Matrix::zeros(n + p, n + p);
        big.view_mut((0, 0), (n, n)).copy_from(&k);
        big.view_mut((n, 0), (p, n)).copy_from(a);
        big.view_mut((0, n), (n, p)).copy_from(&a.transpose());
        for i in 0..p {
            big[(n + i, n + i)] = -1e-12;
        }
        let lu = big.lu();
        lu.is_invertible().then_some(Self::Lu(lu, n))
    }

    fn solve(&self, rz: &Vector, re: &Vector) -> (Vector, Vector) {
        match self {
            Self::Chol(c) => (c.solve(rz), Vector::zeros(0)),
            Self::Lu(lu, n) => {
                let mut rhs = Vector::zeros(n + re.len());
                rhs.rows_mut(0, *n).copy_from(rz);
                rhs.rows_mut(*n, re.len()).copy_from(re);
                let sol = lu.solve(&rhs).unwrap_or_else(|| Vector::zeros(rhs.len()));
                (sol.rows(0, *n).into_owned(), sol.rows(*n, re.len()).into_owned())
            }
        }
    }
}
