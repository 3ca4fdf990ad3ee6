use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Piecewise-constant core-density target.
///
/// The first `n_core` outputs track the active target; the remaining outputs
/// track `base_profile` (only lightly weighted in the cost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSchedule {
    /// `(start step, target)` pairs, strictly increasing in start, first at 0.
    pub segments: Vec<(usize, f64)>,
    pub n_core: usize,
    #[serde(with = "crate::serde_mat::vector")]
    pub base_profile: Vector,
}

impl ReferenceSchedule {
    pub fn new(segments: Vec<(usize, f64)>, n_core: usize, base_profile: Vector) -> Result<Self> {
        let s = Self { segments, n_core, base_profile };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(target: f64, n_core: usize, base_profile: Vector) -> Self {
        Self { segments: vec![(0, target)], n_core, base_profile }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.first().map(|s| s.0) != Some(0) {
            return Err(Error::InvalidConfig("reference must start with a segment at t = 0".into()));
        }
        if self.segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig("reference segments must be strictly increasing".into()));
        }
        if self.segments.iter().any(|s| !s.1.is_finite()) {
            return Err(Error::InvalidConfig("reference targets must be finite".into()));
        }
        if self.n_core > self.base_profile.len() {
            return Err(Error::InvalidConfig("core window exceeds profile length".into()));
        }
        Ok(())
    }

    pub fn n_y(&self) -> usize {
        self.base_profile.len()
    }

    pub fn core_target(&self, t: usize) -> f64 {
        self.segments.iter().take_while(|s| s.0 <= t).last().map_or(self.segments[0].1, |s| s.1)
    }

    pub fn profile_at(&self, t: usize) -> Vector {
        let mut r = self.base_profile.clone();
        let target = self.core_target(t);
        r.rows_mut(0, self.n_core).fill(target);
        r
    }

    /// Every switch time must fall on a control instant.
    pub fn check_switch_alignment(&self, period: usize, offset: usize) -> Result<()> {
        for &(start, _) in &self.segments[1..] {
            if start < offset || (start - offset) % period != 0 {
                return Err(Error::InvalidConfig(format!("reference switch at {start} is off the control grid")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_schedule() {
        let r = ReferenceSchedule::new(vec![(0, 1.0), (5000, 1.2)], 2, Vector::from_vec(vec![0.0, 0.0, 0.5])).unwrap();
        assert_eq!(r.core_target(4999), 1.0);
        assert_eq!(r.core_target(5000), 1.2);
        assert_eq!(r.profile_at(6000), Vector::from_vec(vec![1.2, 1.2, 0.5]));
        assert!(r.check_switch_alignment(100, 0).is_ok());
        assert!(r.check_switch_alignment(300, 0).is_err());
    }

    #[test]
    fn rejects_unsorted() {
        assert!(ReferenceSchedule::new(vec![(0, 1.0), (0, 1.2)], 1, Vector::zeros(1)).is_err());
        assert!(ReferenceSchedule::new(vec![(10, 1.0)], 1, Vector::zeros(1)).is_err());
    }
}
