//! Reduced-order identification (DMD with control) from output snapshots, the
//! pellet-step disturbance cloud, and model validation metrics.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pca, pseudoinverse, thin_svd, Matrix, Pca, Vector};

/// Output snapshots at `tau_s` spacing with plant-entry aligned binary inputs.
///
/// `inputs[t] = 1` means a pellet entered the plasma during step `t`, so its
/// deposit shows up in `outputs[t + 1]`. The firing delay is already resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLog {
    /// Time stamp of the first row, in `tau_s` steps.
    pub t0: i64,
    pub inputs: Vec<u8>,
    pub outputs: Vec<Vector>,
}

impl SnapshotLog {
    pub fn new(t0: i64, inputs: Vec<u8>, outputs: Vec<Vector>) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs for {} output samples",
                inputs.len(),
                outputs.len()
            )));
        }
        if let Some(u) = inputs.iter().find(|&&u| u > 1) {
            return Err(Error::InvalidArgument(format!("non-binary input {u}")));
        }
        let n_y = outputs.first().map_or(0, |y| y.len());
        if outputs.iter().any(|y| y.len() != n_y || y.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(
                "output samples must share one dimension and be finite".into(),
            ));
        }
        Ok(Self { t0, inputs, outputs })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn n_y(&self) -> usize {
        self.outputs.first().map_or(0, |y| y.len())
    }

    pub fn pellet_count(&self) -> usize {
        self.inputs.iter().filter(|&&u| u == 1).count()
    }

    /// Densities are physically nonnegative; identification data should respect that.
    pub fn check_densities(&self) -> Result<()> {
        for (t, y) in self.outputs.iter().enumerate() {
            if y.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "negative density at t = {}",
                    self.t0 + t as i64
                )));
            }
        }
        Ok(())
    }

    /// Columns `t, u_eff, y_0 .. y_{n_y-1}`, one row per step.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "u_eff".to_string()];
        header.extend((0..self.n_y()).map(|i| format!("y_{i}")));
        out.write_record(&header).map_err(csv_err)?;
        for (t, (u, y)) in self.inputs.iter().zip(&self.outputs).enumerate() {
            let mut rec = vec![(self.t0 + t as i64).to_string(), u.to_string()];
            rec.extend(y.iter().map(|v| v.to_string()));
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut t0 = None;
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() < 3 {
                return Err(Error::Parse(format!("row {row}: expected t, u_eff and outputs")));
            }
            let field = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {row}, column {i}: {e}")))
            };
            let t = field(0)? as i64;
            match t0 {
                None => t0 = Some(t),
                Some(start) if t != start + row as i64 => {
                    return Err(Error::Parse(format!("row {row}: non-contiguous time stamp {t}")))
                }
                _ => {}
            }
            let u = field(1)?;
            if u != 0.0 && u != 1.0 {
                return Err(Error::Parse(format!("row {row}: non-binary u_eff {u}")));
            }
            inputs.push(u as u8);
            let y: Result<Vec<f64>> = (2..rec.len()).map(field).collect();
            outputs.push(Vector::from_vec(y?));
        }
        Self::new(t0.unwrap_or(0), inputs, outputs)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Reduced-order model `x(t+1) = A x(t) + B(p) u(t - d)`, `y = C x`, with `n_u = 1`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StateSpaceModel {
    #[serde(with = "crate::serde_mat::matrix")]
    pub a: Matrix,
    #[serde(with = "crate::serde_mat::vector")]
    pub b0: Vector,
    #[serde(with = "crate::serde_mat::matrix")]
    pub c: Matrix,
    /// Input delay in `tau_s` steps.
    pub delay: usize,
    /// RMS least-squares residual of the reduced regression.
    pub fit_residual: f64,
}

impl StateSpaceModel {
    pub fn new(a: Matrix, b0: Vector, c: Matrix, delay: usize) -> Result<Self> {
        let n_x = a.nrows();
        if a.ncols() != n_x || b0.len() != n_x || c.ncols() != n_x || n_x == 0 {
            return Err(Error::InvalidArgument(format!(
                "inconsistent model shapes: A {:?}, B0 {}, C {:?}",
                a.shape(),
                b0.len(),
                c.shape()
            )));
        }
        Ok(Self { a, b0, c, delay, fit_residual: 0.0 })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// The DMD projection basis; the output map lifts through it.
    pub fn reduction_basis(&self) -> &Matrix {
        &self.c
    }

    pub fn c_pinv(&self) -> Matrix {
        pseudoinverse(&self.c, None).expect("output map is finite")
    }

    /// `x = C^+ y`.
    pub fn lift_inverse(&self, y: &Vector) -> Vector {
        self.c_pinv() * y
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }

    fn one_step(&self, c_pinv: &Matrix, y: &Vector, u: u8) -> Vector {
        let mut x = &self.a * (c_pinv * y);
        if u == 1 {
            x += &self.b0;
        }
        &self.c * x
    }
}

/// Fits `[A B0]` by least squares in the coordinates of the leading `n_x` POD
/// modes of the output snapshot matrix.
pub fn dmdc_fit(log: &SnapshotLog, n_x: usize, delay: usize) -> Result<StateSpaceModel> {
    let t_len = log.len();
    let n_y = log.n_y();
    if n_x == 0 || n_x > n_y {
        return Err(Error::InvalidArgument(format!("state order {n_x} with {n_y} outputs")));
    }
    if t_len < n_x + 2 {
        return Err(Error::InsufficientData(format!(
            "{t_len} snapshots cannot identify an order-{n_x} model"
        )));
    }
    if log.pellet_count() == 0 {
        return Err(Error::Unidentifiable(
            "input column is identically zero; excite the plant with pellets".into(),
        ));
    }

    let y = Matrix::from_fn(n_y, t_len, |i, t| log.outputs[t][i]);
    let svd = thin_svd(&y)?;
    let tol = svd.default_tolerance();
    let rank = svd.rank(tol);
    if rank < n_x {
        return Err(Error::RankDeficient(format!(
            "snapshot matrix has rank {rank} < n_x = {n_x}"
        )));
    }
    let mut basis = svd.u.columns(0, n_x).clone_owned();
    for mut col in basis.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }

    let x = basis.transpose() * &y;
    let steps = t_len - 1;
    let mut omega = Matrix::zeros(n_x + 1, steps);
    omega.view_mut((0, 0), (n_x, steps)).copy_from(&x.columns(0, steps));
    for t in 0..steps {
        omega[(n_x, t)] = log.inputs[t] as f64;
    }
    if omega.row(n_x).iter().all(|&u| u == 0.0) {
        return Err(Error::Unidentifiable(
            "no pellet entry precedes a recorded successor snapshot".into(),
        ));
    }
    let x_next = x.columns(1, steps).clone_owned();
    let osvd = thin_svd(&omega)?;
    if osvd.rank(osvd.default_tolerance()) < n_x + 1 {
        return Err(Error::RankDeficient("regressor matrix [X; U] is rank deficient".into()));
    }
    let ab = &x_next * pseudoinverse(&omega, None)?;
    let residual = (&x_next - &ab * &omega).norm() / (steps as f64).sqrt();

    let a = ab.columns(0, n_x).clone_owned();
    let b0 = ab.column(n_x).clone_owned();
    let mut model = StateSpaceModel::new(a, b0, basis, delay)?;
    model.fit_residual = residual;
    let rho = model.spectral_radius();
    if rho >= 1.0 + 1e-6 {
        log::warn!("identified A has spectral radius {rho:.6} >= 1");
    }
    Ok(model)
}

/// Realizations of the input-matrix perturbation `p` observed at pellet steps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterCloud {
    /// `m x n_x`, one realization per row.
    #[serde(with = "crate::serde_mat::matrix")]
    pub p: Matrix,
    pub pca: Pca,
    pub source_event_times: Vec<i64>,
}

impl ParameterCloud {
    pub fn from_rows(p: Matrix, source_event_times: Vec<i64>) -> Result<Self> {
        let pca = pca(&p, true)?;
        Ok(Self { p, pca, source_event_times })
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn row(&self, i: usize) -> Vector {
        self.p.row(i).transpose()
    }
}

/// `p = C^+ y(t+1) - A C^+ y(t) - B0` at every step with `u_eff(t) = 1`.
pub fn extract_parameter_cloud(log: &SnapshotLog, model: &StateSpaceModel) -> Result<ParameterCloud> {
    let c_pinv = model.c_pinv();
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for t in 0..log.len().saturating_sub(1) {
        if log.inputs[t] != 1 {
            continue;
        }
        let x = &c_pinv * &log.outputs[t];
        let x_next = &c_pinv * &log.outputs[t + 1];
        rows.push(x_next - &model.a * x - &model.b0);
        times.push(log.t0 + t as i64);
    }
    if rows.is_empty() {
        return Err(Error::EmptyCloud("log contains no pellet entry events".into()));
    }
    let n_x = model.n_x();
    let p = Matrix::from_fn(rows.len(), n_x, |i, j| rows[i][j]);
    ParameterCloud::from_rows(p, times)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ModelMetrics {
    pub one_step_rmse: f64,
    pub open_loop_rmse: f64,
    /// `None` when the validation log contains no pellet step.
    pub pellet_step_rmse: Option<f64>,
}

fn rms(v: &Vector) -> f64 {
    (v.norm_squared() / v.len() as f64).sqrt()
}

pub fn model_metrics(model: &StateSpaceModel, validation: &SnapshotLog) -> Result<ModelMetrics> {
    if validation.len() < 2 {
        return Err(Error::InsufficientData("validation log needs at least 2 samples".into()));
    }
    if validation.n_y() != model.n_y() {
        return Err(Error::InvalidArgument(format!(
            "validation has {} outputs, model {}",
            validation.n_y(),
            model.n_y()
        )));
    }
    let c_pinv = model.c_pinv();
    let steps = validation.len() - 1;
    let mut one_step = 0.0;
    let mut pellet = (0.0, 0usize);
    for t in 0..steps {
        let pred = model.one_step(&c_pinv, &validation.outputs[t], validation.inputs[t]);
        let e = rms(&(pred - &validation.outputs[t + 1]));
        one_step += e;
        if validation.inputs[t] == 1 {
            pellet.0 += e;
            pellet.1 += 1;
        }
    }

    let mut x = &c_pinv * &validation.outputs[0];
    let mut open_loop = 0.0;
    for t in 0..validation.len() {
        open_loop += rms(&(&model.c * &x - &validation.outputs[t]));
        x = &model.a * x;
        if validation.inputs[t] == 1 {
            x += &model.b0;
        }
    }

    Ok(ModelMetrics {
        one_step_rmse: one_step / steps as f64,
        open_loop_rmse: open_loop / validation.len() as f64,
        pellet_step_rmse: (pellet.1 > 0).then(|| pellet.0 / pellet.1 as f64),
    })
}
