//! Scenario selection from the parameter cloud and the multistage scenario tree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::sysid::ParameterCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioSource {
    /// Row index into the cloud.
    Row(usize),
    /// The cloud mean, appended on request.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    #[serde(with = "crate::serde_mat::vectors")]
    pub realizations: Vec<Vector>,
    pub weights: Vec<f64>,
    pub provenance: Vec<ScenarioSource>,
    /// Explained-variance fractions of the cloud, kept for reporting.
    #[serde(default)]
    pub explained_variance: Vec<f64>,
}

impl ScenarioSet {
    /// Uniformly weighted set without cloud provenance (for tests and ablations).
    pub fn uniform(realizations: Vec<Vector>) -> Result<Self> {
        if realizations.is_empty() {
            return Err(Error::InvalidArgument("scenario set must not be empty".into()));
        }
        let n = realizations.len();
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
            provenance: (0..n).map(ScenarioSource::Row).collect(),
            realizations,
            explained_variance: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.realizations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.realizations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.realizations.len();
        if n == 0 || self.weights.len() != n || self.provenance.len() != n {
            return Err(Error::InvalidArgument("scenario set fields have inconsistent lengths".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("scenario weights must be positive and sum to one".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }
}

/// Picks, for each of the first `n_p / 2` principal components, the cloud rows
/// with the largest positive and largest negative centered projection.
///
/// A row whose value was already selected is skipped in favour of the next
/// farthest one; equal projections go to the smaller row index.
pub fn select_scenarios_pca(cloud: &ParameterCloud, n_p: usize, include_centroid: bool) -> Result<ScenarioSet> {
    if n_p == 0 || n_p % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n_p = {n_p} must be positive and even")));
    }
    let m = cloud.len();
    if m < n_p {
        return Err(Error::InsufficientData(format!("cloud has {m} rows, need at least n_p = {n_p}")));
    }
    let pca = &cloud.pca;
    let sigma1 = pca.singular_values.iter().copied().fold(0.0, f64::max);
    let scale = cloud.p.abs().max().max(1.0);
    if sigma1 <= 1e-12 * scale * (m as f64).sqrt() {
        return Err(Error::ZeroVariance("all cloud rows are identical".into()));
    }
    if n_p / 2 > pca.n_components() {
        return Err(Error::InvalidArgument(format!(
            "n_p / 2 = {} exceeds the {} available components",
            n_p / 2,
            pca.n_components()
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(n_p);
    for c in 0..n_p / 2 {
        let scores: Vec<f64> = (0..m).map(|i| pca.score(&cloud.row(i), c)).collect();
        for sign in [1.0, -1.0] {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| (sign * scores[b]).total_cmp(&(sign * scores[a])).then(a.cmp(&b)));
            let pick = order
                .into_iter()
                .find(|&i| chosen.iter().all(|&k| cloud.p.row(k) != cloud.p.row(i)))
                .ok_or_else(|| Error::InsufficientData("fewer distinct rows than scenarios".into()))?;
            chosen.push(pick);
        }
    }
    let mut realizations: Vec<Vector> = chosen.iter().map(|&i| cloud.row(i)).collect();
    let mut provenance: Vec<ScenarioSource> = chosen.iter().map(|&i| ScenarioSource::Row(i)).collect();
    if include_centroid {
        realizations.push(pca.mean.clone());
        provenance.push(ScenarioSource::Centroid);
    }
    let n = realizations.len();
    Ok(ScenarioSet {
        realizations,
        weights: vec![1.0 / n as f64; n],
        provenance,
        explained_variance: pca.explained_variance_fractions.iter().copied().collect(),
    })
}

/// One non-anticipativity equality `u[step][plus] - u[step][minus] = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonAnticipativity {
    pub step: usize,
    pub row: usize,
    pub plus: usize,
    pub minus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub n_p: usize,
    pub robust_horizon: usize,
    pub n_c: usize,
    pub n_scenarios: usize,
    /// `param[j][l]`: index into the scenario set used by scenario `j` at control step `l`.
    pub param: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub nonanticipativity: Vec<NonAnticipativity>,
}

/// Builds the tree with `S = n_p^N_R` scenarios, uniformly weighted.
pub fn build_tree(n_p: usize, robust_horizon: usize, n_c: usize) -> Result<ScenarioTree> {
    build_tree_weighted(&vec![1.0 / n_p.max(1) as f64; n_p], robust_horizon, n_c)
}

/// As [`build_tree`], with each scenario weighted by the product of its branch weights.
pub fn build_tree_weighted(branch_weights: &[f64], robust_horizon: usize, n_c: usize) -> Result<ScenarioTree> {
    let n_p = branch_weights.len();
    if n_p == 0 {
        return Err(Error::InvalidArgument("n_p must be >= 1".into()));
    }
    if robust_horizon == 0 || robust_horizon > n_c {
        return Err(Error::InvalidArgument(format!(
            "robust horizon {robust_horizon} must lie in [1, N_c = {n_c}]"
        )));
    }
    let s = n_p
        .checked_pow(robust_horizon as u32)
        .filter(|&s| s <= 1 << 16)
        .ok_or_else(|| Error::InvalidArgument("scenario tree too large".into()))?;
    let digit = |j: usize, l: usize| (j / n_p.pow((robust_horizon - 1 - l) as u32)) % n_p;
    let param: Vec<Vec<usize>> = (0..s)
        .map(|j| (0..n_c).map(|l| digit(j, l.min(robust_horizon - 1))).collect())
        .collect();
    let weights = param
        .iter()
        .map(|p| p[..robust_horizon].iter().map(|&k| branch_weights[k]).product())
        .collect();
    let mut nonanticipativity = Vec::new();
    for l in 0..robust_horizon {
        let group = n_p.pow((robust_horizon - l) as u32);
        let mut row = 0;
        for start in (0..s).step_by(group) {
            for j in start..start + group - 1 {
                nonanticipativity.push(NonAnticipativity { step: l, row, plus: j, minus: j + 1 });
                row += 1;
            }
        }
    }
    Ok(ScenarioTree { n_p, robust_horizon, n_c, n_scenarios: s, param, weights, nonanticipativity })
}

impl ScenarioTree {
    /// Node id of scenario `j` at control step `l`; scenarios sharing it must share the input.
    pub fn node(&self, j: usize, l: usize) -> usize {
        if l < self.robust_horizon {
            j / self.n_p.pow((self.robust_horizon - l) as u32)
        } else {
            j
        }
    }

    /// Number of distinct decision variables after merging equal-node inputs.
    pub fn n_variables(&self) -> usize {
        let branching: usize = (0..self.robust_horizon).map(|l| self.n_p.pow(l as u32)).sum();
        branching + (self.n_c - self.robust_horizon) * self.n_scenarios
    }

    /// Decision-variable index holding `u[l][j]`, ordered by step then node.
    pub fn variable(&self, l: usize, j: usize) -> usize {
        if l < self.robust_horizon {
            let offset: usize = (0..l).map(|k| self.n_p.pow(k as u32)).sum();
            offset + self.node(j, l)
        } else {
            let branching: usize = (0..self.robust_horizon).map(|k| self.n_p.pow(k as u32)).sum();
            branching + (l - self.robust_horizon) * self.n_scenarios + j
        }
    }

    /// `(step, scenario)` pairs sharing decision variable `v`.
    pub fn variable_members(&self, v: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for l in 0..self.n_c {
            for j in 0..self.n_scenarios {
                if self.variable(l, j) == v {
                    out.push((l, j));
                }
            }
        }
        out
    }

    /// Dense `E_l` (rows x S), so that `E_l u_l = 0`.
    pub fn e_matrix(&self, l: usize) -> Matrix {
        let rows: Vec<&NonAnticipativity> = self.nonanticipativity.iter().filter(|e| e.step == l).collect();
        let mut e = Matrix::zeros(rows.len(), self.n_scenarios);
        for r in rows {
            e[(r.row, r.plus)] = 1.0;
            e[(r.row, r.minus)] = -1.0;
        }
        e
    }

    pub fn equality_count(&self, l: usize) -> usize {
        self.nonanticipativity.iter().filter(|e| e.step == l).count()
    }

    /// Checks `u[j][l]` against every equality exactly.
    pub fn is_nonanticipative(&self, u: &[Vec<f64>]) -> bool {
        self.nonanticipativity.iter().all(|e| u[e.plus][e.step] == u[e.minus][e.step])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rows: &[[f64; 4]]) -> ParameterCloud {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        ParameterCloud::from_rows(Matrix::from_row_slice(rows.len(), 4, &flat), (0..rows.len() as i64).collect()).unwrap()
    }

    fn jittered_cross() -> ParameterCloud {
        cloud(&[
            [1.0, 0.001, 0.0, 0.0],
            [-1.0, 0.0, 0.002, 0.0],
            [0.002, 1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.001],
            [0.1, 0.1, 0.0, 0.0],
            [-0.1, 0.05, 0.0, 0.0],
        ])
    }

    fn random_cloud(m: usize, seed: u64) -> ParameterCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Matrix::from_fn(m, 4, |_, j| rng.random_range(-1.0..1.0) * [3.0, 2.0, 0.3, 0.1][j]);
        ParameterCloud::from_rows(p, (0..m as i64).collect()).unwrap()
    }

    #[test]
    fn axis_extremes_selected() {
        let set = select_scenarios_pca(&jittered_cross(), 4, false).unwrap();
        let mut rows: Vec<usize> = set
            .provenance
            .iter()
            .map(|s| match s {
                ScenarioSource::Row(i) => *i,
                ScenarioSource::Centroid => unreachable!(),
            })
            .collect();
        rows.sort();
        assert_eq!(rows, vec![0, 1, 2, 3]);
        assert!(set.weights.iter().all(|&w| w == 0.25));
        set.validate().unwrap();
    }

    #[test]
    fn line_endpoints() {
        let c = cloud(&[[0.0, 0.0, 0.0, 0.0], [1.0, 2.0, 0.0, 0.0], [3.0, 6.0, 0.0, 0.0], [-2.0, -4.0, 0.0, 0.0]]);
        let set = select_scenarios_pca(&c, 2, false).unwrap();
        assert_eq!(set.provenance, vec![ScenarioSource::Row(2), ScenarioSource::Row(3)]);
    }

    #[test]
    fn matches_brute_force_scan() {
        let c = random_cloud(60, 9);
        let set = select_scenarios_pca(&c, 4, false).unwrap();
        for comp in 0..2 {
            let v = c.pca.components.column(comp);
            let proj: Vec<f64> = (0..c.len()).map(|i| (c.row(i) - &c.pca.mean).dot(&v)).collect();
            let argmax = (0..proj.len()).max_by(|&a, &b| proj[a].total_cmp(&proj[b])).unwrap();
            let argmin = (0..proj.len()).min_by(|&a, &b| proj[a].total_cmp(&proj[b])).unwrap();
            assert_eq!(set.provenance[2 * comp], ScenarioSource::Row(argmax));
            assert_eq!(set.provenance[2 * comp + 1], ScenarioSource::Row(argmin));
        }
    }

    #[test]
    fn centroid_flag_appends_mean() {
        let c = jittered_cross();
        let set = select_scenarios_pca(&c, 4, true).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.provenance[4], ScenarioSource::Centroid);
        assert_eq!(set.realizations[4], c.pca.mean);
        assert!((set.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cloud_is_zero_variance() {
        let c = cloud(&[[0.5, 0.1, 0.0, 0.0]; 5]);
        assert!(matches!(select_scenarios_pca(&c, 2, false), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn bad_arguments() {
        let c = jittered_cross();
        assert!(select_scenarios_pca(&c, 3, false).is_err());
        assert!(select_scenarios_pca(&c, 0, false).is_err());
        assert!(matches!(select_scenarios_pca(&c, 10, false), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn json_round_trip() {
        let set = select_scenarios_pca(&jittered_cross(), 4, true).unwrap();
        let back = ScenarioSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn two_stage_binary_tree_e_matrix() {
        let tree = build_tree(2, 2, 5).unwrap();
        assert_eq!(tree.n_scenarios, 4);
        let e1 = tree.e_matrix(1);
        let want = Matrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        assert_eq!(e1, want);
        assert_eq!(tree.equality_count(0), 3);
        assert_eq!(tree.param[2], vec![1, 0, 0, 0, 0]);
        assert_eq!(tree.param[1], vec![0, 1, 1, 1, 1]);
    }

    #[test]
    fn single_stage_four_scenarios() {
        let tree = build_tree(4, 1, 5).unwrap();
        assert_eq!(tree.n_scenarios, 4);
        assert_eq!(tree.e_matrix(0).nrows(), 3);
        assert!(tree.weights.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        assert_eq!(tree.n_variables(), 17);
        assert_eq!(tree.variable(0, 3), 0);
        assert_eq!(tree.variable(1, 0), 1);
        assert_eq!(tree.variable(4, 3), 16);
        for j in 0..4 {
            assert_eq!(tree.param[j], vec![j; 5]);
        }
    }

    #[test]
    fn single_scenario_has_no_equalities() {
        for n_r in 1..=3 {
            let tree = build_tree(1, n_r, 5).unwrap();
            assert_eq!(tree.n_scenarios, 1);
            assert!(tree.nonanticipativity.is_empty());
            assert_eq!(tree.n_variables(), 5);
        }
    }

    #[test]
    fn invalid_robust_horizon() {
        assert!(build_tree(2, 0, 5).is_err());
        assert!(build_tree(2, 6, 5).is_err());
    }

    #[test]
    fn counts_and_brute_force_sharing() {
        for n_p in 1..=4usize {
            for n_r in 1..=3usize {
                let tree = build_tree(n_p, n_r, 3.max(n_r)).unwrap();
                let s = n_p.pow(n_r as u32);
                assert_eq!(tree.n_scenarios, s);
                for l in 0..n_r {
                    assert_eq!(tree.equality_count(l), s - n_p.pow(l as u32));
                    // Rank of E_l equals its row count.
                    let e = tree.e_matrix(l);
                    if e.nrows() > 0 {
                        let svd = crate::numerics::thin_svd(&e).unwrap();
                        assert_eq!(svd.rank(1e-9), e.nrows());
                    }
                }
                if s > 16 {
                    continue;
                }
                // Every binary assignment at step l satisfying E_l equalizes shared ancestors.
                for l in 0..n_r {
                    for mask in 0u32..(1 << s) {
                        let u: Vec<Vec<f64>> =
                            (0..s).map(|j| (0..tree.n_c).map(|k| if k == l { f64::from((mask >> j) & 1) } else { 0.0 }).collect()).collect();
                        let ok = tree.is_nonanticipative(&u);
                        let shared = (0..s).all(|a| (0..s).all(|b| tree.node(a, l) != tree.node(b, l) || u[a][l] == u[b][l]));
                        assert_eq!(ok, shared);
                    }
                }
            }
        }
    }

    #[test]
    fn variables_partition_inputs() {
        let tree = build_tree(2, 2, 4).unwrap();
        let mut seen = vec![0; tree.n_variables()];
        for l in 0..tree.n_c {
            for j in 0..tree.n_scenarios {
                seen[tree.variable(l, j)] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c >= 1));
        assert_eq!(tree.variable_members(0).len(), 4);
        assert_eq!(tree.variable_members(1), vec![(1, 0), (1, 1)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn selection_invariant_to_permutation(m in 8usize..40, seed in any::<u64>(), rot in 0usize..40) {
                let c = random_cloud(m, seed);
                let mut perm: Vec<usize> = (0..m).collect();
                perm.reverse();
                perm.rotate_left(rot % m);
                let pp = Matrix::from_fn(m, 4, |i, j| c.p[(perm[i], j)]);
                let cp = ParameterCloud::from_rows(pp, (0..m as i64).collect()).unwrap();
                let a = select_scenarios_pca(&c, 4, false).unwrap();
                let b = select_scenarios_pca(&cp, 4, false).unwrap();
                for (x, y) in a.realizations.iter().zip(&b.realizations) {
                    prop_assert!((x - y).abs().max() < 1e-12);
                }
            }

            #[test]
            fn selection_invariant_to_duplicating_data(m in 8usize..30, seed in any::<u64>()) {
                let c = random_cloud(m, seed);
                let dup = Matrix::from_fn(2 * m, 4, |i, j| c.p[(i % m, j)]);
                let cd = ParameterCloud::from_rows(dup, (0..2 * m as i64).collect()).unwrap();
                let a = select_scenarios_pca(&c, 4, false).unwrap();
                let b = select_scenarios_pca(&cd, 4, false).unwrap();
                prop_assert_eq!(&a.provenance, &b.provenance);
            }
        }
    }
}
