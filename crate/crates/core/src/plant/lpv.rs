//! LPV surrogate plant: the identified reduced model with the input matrix
//! perturbed at every pellet entry by a realization drawn from the cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::sysid::{ParameterCloud, StateSpaceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawMode {
    /// Uniform over the rows of the cloud.
    UniformFromCloud,
    /// Cycles through a fixed list of realizations in order.
    FixedSequence(#[serde(with = "crate::serde_mat::vectors")] Vec<Vector>),
    /// Uniform over a small list (typically the selected scenarios).
    ScenariosOnly(#[serde(with = "crate::serde_mat::vectors")] Vec<Vector>),
}

#[derive(Debug, Clone)]
pub struct LpvPlant {
    model: StateSpaceModel,
    cloud: Matrix,
    draw_mode: DrawMode,
    /// Multiplies every drawn perturbation; values above one give the stress configuration.
    perturbation_scale: f64,
    rng: ChaCha8Rng,
    draws: usize,
    x: Vector,
}

impl LpvPlant {
    pub fn new(
        model: StateSpaceModel,
        cloud: &ParameterCloud,
        draw_mode: DrawMode,
        seed: u64,
        x0: Vector,
    ) -> Result<Self> {
        if x0.len() != model.n_x() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial state must be finite with length n_x".into()));
        }
        let lists_ok = match &draw_mode {
            DrawMode::UniformFromCloud => !cloud.is_empty(),
            DrawMode::FixedSequence(v) | DrawMode::ScenariosOnly(v) => {
                !v.is_empty() && v.iter().all(|p| p.len() == model.n_x())
            }
        };
        if !lists_ok || cloud.p.ncols() != model.n_x() {
            return Err(Error::InvalidArgument("draw source is empty or has the wrong dimension".into()));
        }
        Ok(Self {
            model,
            cloud: cloud.p.clone(),
            draw_mode,
            perturbation_scale: 1.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
            x: x0,
        })
    }

    pub fn with_perturbation_scale(mut self, scale: f64) -> Self {
        self.perturbation_scale = scale;
        self
    }

    pub fn state(&self) -> &Vector {
        &self.x
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }

    pub fn output(&self) -> Vector {
        &self.model.c * &self.x
    }

    /// Number of pellet entries seen so far.
    pub fn draw_count(&self) -> usize {
        self.draws
    }

    /// The `n`-th draw depends only on the seed and `n`, so every controller run
    /// with the same seed meets the same perturbation sequence.
    fn draw(&mut self) -> Vector {
        let p = match &self.draw_mode {
            DrawMode::UniformFromCloud => {
                let i = self.rng.random_range(0..self.cloud.nrows());
                self.cloud.row(i).transpose()
            }
            DrawMode::FixedSequence(seq) => seq[self.draws % seq.len()].clone(),
            DrawMode::ScenariosOnly(set) => set[self.rng.random_range(0..set.len())].clone(),
        };
        self.draws += 1;
        p * self.perturbation_scale
    }

    /// `x <- A x + (B0 + p) u`, returning `y = C x`.
    pub fn lpv_step(&mut self, pellet_entering: bool) -> Vector {
        let mut next = &self.model.a * &self.x;
        if pellet_entering {
            let p = self.draw();
            next += &self.model.b0 + p;
        }
        self.x = next;
        self.output()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(a: Matrix) -> (StateSpaceModel, ParameterCloud) {
        let model = StateSpaceModel::new(a, Vector::from_vec(vec![0.2, -0.1]), Matrix::identity(2, 2), 0).unwrap();
        let p = Matrix::from_row_slice(4, 2, &[0.01, 0.0, -0.01, 0.02, 0.03, -0.02, 0.05, 0.04]);
        let cloud = ParameterCloud::from_rows(p, vec![0, 1, 2, 3]).unwrap();
        (model, cloud)
    }

    #[test]
    fn cancelling_perturbation() {
        let a = Matrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.7]);
        let (model, cloud) = fixture(a.clone());
        let x0 = Vector::from_vec(vec![1.0, 2.0]);
        let mode = DrawMode::FixedSequence(vec![-model.b0.clone()]);
        let mut plant = LpvPlant::new(model, &cloud, mode, 0, x0.clone()).unwrap();
        plant.lpv_step(true);
        assert!((plant.state() - &a * x0).abs().max() < 1e-15);
    }

    #[test]
    fn identity_dynamics_without_pellet() {
        let (model, cloud) = fixture(Matrix::identity(2, 2));
        let x0 = Vector::from_vec(vec![0.3, 0.4]);
        let mut plant = LpvPlant::new(model, &cloud, DrawMode::UniformFromCloud, 1, x0.clone()).unwrap();
        let y = plant.lpv_step(false);
        assert_eq!(y, x0);
        assert_eq!(plant.draw_count(), 0);
    }

    #[test]
    fn pellet_uses_cloud_row() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.5]);
        let (model, cloud) = fixture(a.clone());
        let x0 = Vector::from_vec(vec![1.0, 1.0]);
        let mode = DrawMode::FixedSequence(vec![cloud.row(3)]);
        let mut plant = LpvPlant::new(model.clone(), &cloud, mode, 0, x0.clone()).unwrap();
        plant.lpv_step(true);
        let want = &a * x0 + &model.b0 + cloud.row(3);
        assert!((plant.state() - want).abs().max() < 1e-15);
    }

    #[test]
    fn draw_stream_depends_only_on_seed() {
        let (model, cloud) = fixture(Matrix::identity(2, 2) * 0.9);
        let x0 = Vector::zeros(2);
        let mut a = LpvPlant::new(model.clone(), &cloud, DrawMode::UniformFromCloud, 42, x0.clone()).unwrap();
        let mut b = LpvPlant::new(model, &cloud, DrawMode::UniformFromCloud, 42, x0).unwrap();
        // Different pellet timing, same sequence of realizations per entry.
        let mut seq_a = Vec::new();
        let mut seq_b = Vec::new();
        for t in 0..60 {
            if t % 3 == 0 {
                let before = &a.model.a * a.state();
                a.lpv_step(true);
                seq_a.push(a.state() - before - &a.model.b0);
            } else {
                a.lpv_step(false);
            }
            if t % 5 == 0 {
                let before = &b.model.a * b.state();
                b.lpv_step(true);
                seq_b.push(b.state() - before - &b.model.b0);
            } else {
                b.lpv_step(false);
            }
        }
        for (pa, pb) in seq_a.iter().zip(&seq_b) {
            assert!((pa - pb).abs().max() < 1e-12);
        }
    }

    #[test]
    fn stress_scale_amplifies() {
        let (model, cloud) = fixture(Matrix::zeros(2, 2));
        let mode = DrawMode::FixedSequence(vec![cloud.row(1)]);
        let mut plant = LpvPlant::new(model.clone(), &cloud, mode, 0, Vector::zeros(2)).unwrap().with_perturbation_scale(3.0);
        plant.lpv_step(true);
        assert!((plant.state() - (&model.b0 + cloud.row(1) * 3.0)).abs().max() < 1e-15);
    }
}
