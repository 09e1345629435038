//! Grouped paired datasets, within-group centering, and the sample
//! cross-covariance difference matrix.

use nalgebra::DMatrix;

use crate::error::{CcrError, Result};

/// Tolerance on per-group column means for data to count as centered.
pub const CENTERING_TOL: f64 = 1e-10;

/// Two paired observation blocks (x: N×p1, y: N×p2) with a group label per
/// row. Immutable after construction; centering returns a new dataset.
#[derive(Debug, Clone)]
pub struct GroupedDataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    group_ids: Vec<usize>,
    group_names: Vec<String>,
    x_names: Vec<String>,
    y_names: Vec<String>,
    centered: bool,
}

impl GroupedDataset {
    /// Builds a dataset with default variable names (`x1..`, `y1..`).
    ///
    /// `group_ids[i]` is the 0-based group of row `i`, indexing into
    /// `group_names`, whose order is the canonical group order (group 1
    /// first). Every group must contain at least two observations.
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        group_ids: Vec<usize>,
        group_names: Vec<String>,
    ) -> Result<Self> {
        let x_names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        let y_names = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        Self::with_names(x, y, group_ids, group_names, x_names, y_names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        group_ids: Vec<usize>,
        group_names: Vec<String>,
        x_names: Vec<String>,
        y_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(CcrError::Dimension(format!(
                "x block has {} rows, y block has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(CcrError::Validation("empty data block".into()));
        }
        if group_ids.len() != x.nrows() {
            return Err(CcrError::Dimension(format!(
                "{} group labels for {} rows",
                group_ids.len(),
                x.nrows()
            )));
        }
        if group_names.is_empty() {
            return Err(CcrError::Validation("no groups declared".into()));
        }
        if x_names.len() != x.ncols() || y_names.len() != y.ncols() {
            return Err(CcrError::Dimension("variable name count mismatch".into()));
        }
        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Err(CcrError::Validation("data contains non-finite entries".into()));
        }
        let k = group_names.len();
        let mut counts = vec![0usize; k];
        for &g in &group_ids {
            if g >= k {
                return Err(CcrError::UnknownGroup(format!("row label id {g} out of range (K = {k})")));
            }
            counts[g] += 1;
        }
        for (g, &c) in counts.iter().enumerate() {
            if c < 2 {
                return Err(CcrError::Validation(format!(
                    "group '{}' has {} observation(s); at least 2 required",
                    group_names[g], c
                )));
            }
        }
        Ok(Self {
            x,
            y,
            group_ids,
            group_names,
            x_names,
            y_names,
            centered: false,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn p1(&self) -> usize {
        self.x.ncols()
    }

    pub fn p2(&self) -> usize {
        self.y.ncols()
    }

    pub fn group_count(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_ids(&self) -> &[usize] {
        &self.group_ids
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn y_names(&self) -> &[String] {
        &self.y_names
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Row indices belonging to group `g`, in dataset order.
    pub fn group_rows(&self, g: usize) -> Result<Vec<usize>> {
        self.check_group(g)?;
        Ok((0..self.n_obs()).filter(|&i| self.group_ids[i] == g).collect())
    }

    pub fn group_size(&self, g: usize) -> Result<usize> {
        Ok(self.group_rows(g)?.len())
    }

    fn check_group(&self, g: usize) -> Result<()> {
        if g >= self.group_count() {
            return Err(CcrError::UnknownGroup(format!(
                "group id {g} out of range (K = {})",
                self.group_count()
            )));
        }
        Ok(())
    }

    /// Subtracts each group's column means from both blocks. Idempotent;
    /// observation order is preserved.
    pub fn center_within_group(&self) -> GroupedDataset {
        let mut x = self.x.clone();
        let mut y = self.y.clone();
        for g in 0..self.group_count() {
            let rows: Vec<usize> = (0..self.n_obs()).filter(|&i| self.group_ids[i] == g).collect();
            let n = rows.len() as f64;
            for j in 0..self.p1() {
                let mean = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n;
                for &i in &rows {
                    x[(i, j)] -= mean;
                }
            }
            for j in 0..self.p2() {
                let mean = rows.iter().map(|&i| y[(i, j)]).sum::<f64>() / n;
                for &i in &rows {
                    y[(i, j)] -= mean;
                }
            }
        }
        GroupedDataset {
            x,
            y,
            group_ids: self.group_ids.clone(),
            group_names: self.group_names.clone(),
            x_names: self.x_names.clone(),
            y_names: self.y_names.clone(),
            centered: true,
        }
    }

    /// Group-conditional cross-covariance `Σ̂_XY(g) = (1/n_g) Σ_{i∈g} x_i y_iᵀ`.
    ///
    /// The divisor is `n_g`, not `n_g − 1`: the estimator is the plain mean
    /// of outer products of the within-group-centered rows. Statistical
    /// packages that divide by `n_g − 1` will disagree by a factor
    /// `n_g/(n_g − 1)`.
    pub fn group_cross_covariance(&self, g: usize) -> Result<DMatrix<f64>> {
        self.check_group(g)?;
        if !self.centered {
            return Err(CcrError::NotCentered(
                "cross-covariance requires within-group centered data".into(),
            ));
        }
        let rows = self.group_rows(g)?;
        let n = rows.len();
        let mut xg = DMatrix::zeros(n, self.p1());
        let mut yg = DMatrix::zeros(n, self.p2());
        for (out, &i) in rows.iter().enumerate() {
            xg.set_row(out, &self.x.row(i));
            yg.set_row(out, &self.y.row(i));
        }
        Ok(xg.transpose() * yg / n as f64)
    }

    /// Sample cross-covariance difference `Φ̃ = Σ̂_XY(g1) − Σ̂_XY(g2)`.
    ///
    /// The sign depends on the pair order: swapping `g1` and `g2` negates
    /// the matrix.
    pub fn phi_tilde(&self, g1: usize, g2: usize) -> Result<CrossCovDifference> {
        if g1 == g2 {
            return Err(CcrError::Argument(format!("cannot difference group {g1} with itself")));
        }
        let c1 = self.group_cross_covariance(g1)?;
        let c2 = self.group_cross_covariance(g2)?;
        Ok(CrossCovDifference {
            phi: c1 - c2,
            group_sizes: (self.group_size(g1)?, self.group_size(g2)?),
            group_pair: (g1, g2),
        })
    }

    /// New dataset keeping exactly the given rows (duplicates allowed, as in
    /// bootstrap resampling). The result is uncentered.
    pub fn retain_rows(&self, keep: &[usize]) -> Result<GroupedDataset> {
        for &i in keep {
            if i >= self.n_obs() {
                return Err(CcrError::Dimension(format!("row {i} out of range")));
            }
        }
        let mut x = DMatrix::zeros(keep.len(), self.p1());
        let mut y = DMatrix::zeros(keep.len(), self.p2());
        let mut ids = Vec::with_capacity(keep.len());
        for (out, &i) in keep.iter().enumerate() {
            x.set_row(out, &self.x.row(i));
            y.set_row(out, &self.y.row(i));
            ids.push(self.group_ids[i]);
        }
        GroupedDataset::with_names(
            x,
            y,
            ids,
            self.group_names.clone(),
            self.x_names.clone(),
            self.y_names.clone(),
        )
    }

    /// Maximum absolute per-group column mean over both blocks; zero (up to
    /// [`CENTERING_TOL`]) after [`center_within_group`].
    pub fn max_group_mean(&self) -> f64 {
        let mut worst = 0.0f64;
        for g in 0..self.group_count() {
            let rows: Vec<usize> = (0..self.n_obs()).filter(|&i| self.group_ids[i] == g).collect();
            let n = rows.len() as f64;
            for j in 0..self.p1() {
                let mean = rows.iter().map(|&i| self.x[(i, j)]).sum::<f64>() / n;
                worst = worst.max(mean.abs());
            }
            for j in 0..self.p2() {
                let mean = rows.iter().map(|&i| self.y[(i, j)]).sum::<f64>() / n;
                worst = worst.max(mean.abs());
            }
        }
        worst
    }
}

/// The sample matrix Φ̃ together with its provenance.
#[derive(Debug, Clone)]
pub struct CrossCovDifference {
    pub phi: DMatrix<f64>,
    /// (n_{g1}, n_{g2}).
    pub group_sizes: (usize, usize),
    /// Ordered pair (g1, g2) the difference was taken over.
    pub group_pair: (usize, usize),
}

impl CrossCovDifference {
    pub fn p1(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p2(&self) -> usize {
        self.phi.ncols()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_group_names() -> Vec<String> {
        vec!["g1".into(), "g2".into()]
    }

    pub(crate) fn random_dataset(
        n_per_group: &[usize],
        p1: usize,
        p2: usize,
        seed: u64,
    ) -> GroupedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = n_per_group.iter().sum();
        let x = DMatrix::from_fn(n, p1, |_, _| rng.random_range(-2.0..2.0));
        let y = DMatrix::from_fn(n, p2, |_, _| rng.random_range(-2.0..2.0));
        let mut ids = Vec::new();
        for (g, &ng) in n_per_group.iter().enumerate() {
            ids.extend(std::iter::repeat(g).take(ng));
        }
        let names = (1..=n_per_group.len()).map(|g| format!("g{g}")).collect();
        GroupedDataset::new(x, y, ids, names).unwrap()
    }

    #[test]
    fn rejects_single_member_group() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = x.clone();
        let err = GroupedDataset::new(x, y, vec![0, 0, 1], two_group_names());
        assert!(matches!(err, Err(CcrError::Validation(_))));
    }

    #[test]
    fn centering_two_point_groups() {
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 10.0, 14.0]);
        let y = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 4.0]);
        let d = GroupedDataset::new(x, y, vec![0, 0, 1, 1], two_group_names()).unwrap();
        let c = d.center_within_group();
        assert_eq!(
            c.x().column(0).iter().copied().collect::<Vec<_>>(),
            vec![-1.0, 1.0, -2.0, 2.0]
        );
        assert!(c.is_centered());
    }

    #[test]
    fn centering_is_idempotent() {
        let d = random_dataset(&[25, 25], 4, 3, 9).center_within_group();
        let again = d.center_within_group();
        assert!((d.x() - again.x()).abs().max() <= 1e-12);
        assert!((d.y() - again.y()).abs().max() <= 1e-12);
    }

    #[test]
    fn centering_zeroes_group_means() {
        let d = random_dataset(&[30, 20], 4, 3, 5);
        let c = d.center_within_group();
        // Oracle: direct mean recomputation.
        assert!(c.max_group_mean() <= 1e-12);
    }

    #[test]
    fn cross_covariance_hand_sum() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 5.0, 1.0, -5.0, -1.0]);
        let y = DMatrix::from_row_slice(4, 1, &[2.0, -2.0, 1.0, -1.0]);
        let mut d = GroupedDataset::new(x, y, vec![0, 0, 1, 1], two_group_names()).unwrap();
        d.centered = true; // already centered by construction
        let c = d.group_cross_covariance(0).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 0)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cross_covariance_requires_centering() {
        let d = random_dataset(&[5, 5], 2, 2, 3);
        assert!(matches!(d.group_cross_covariance(0), Err(CcrError::NotCentered(_))));
    }

    #[test]
    fn cross_covariance_matches_matrix_product() {
        let d = random_dataset(&[30, 10], 4, 3, 17).center_within_group();
        let c = d.group_cross_covariance(0).unwrap();
        // Oracle: dense product over the group rows.
        let rows = d.group_rows(0).unwrap();
        let mut direct = DMatrix::zeros(4, 3);
        for &i in &rows {
            direct += d.x().row(i).transpose() * d.y().row(i);
        }
        direct /= rows.len() as f64;
        assert!((c - direct).abs().max() <= 1e-12);
    }

    #[test]
    fn phi_tilde_is_antisymmetric_in_pair_order() {
        let d = random_dataset(&[8, 12], 3, 4, 21).center_within_group();
        let a = d.phi_tilde(0, 1).unwrap();
        let b = d.phi_tilde(1, 0).unwrap();
        assert!((&a.phi + &b.phi).abs().max() <= 1e-14);
        assert_eq!(a.group_pair, (0, 1));
        assert_eq!(a.group_sizes, (8, 12));
    }

    #[test]
    fn phi_tilde_of_identical_groups_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let yblock = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let mut x = DMatrix::zeros(10, 3);
        let mut y = DMatrix::zeros(10, 2);
        for i in 0..5 {
            x.set_row(i, &block.row(i));
            x.set_row(i + 5, &block.row(i));
            y.set_row(i, &yblock.row(i));
            y.set_row(i + 5, &yblock.row(i));
        }
        let ids = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let d = GroupedDataset::new(x, y, ids, two_group_names())
            .unwrap()
            .center_within_group();
        let phi = d.phi_tilde(0, 1).unwrap();
        assert!(phi.phi.abs().max() <= 1e-14);
    }

    #[test]
    fn phi_tilde_rejects_same_group() {
        let d = random_dataset(&[4, 4], 2, 2, 1).center_within_group();
        assert!(matches!(d.phi_tilde(1, 1), Err(CcrError::Argument(_))));
    }

    #[test]
    fn phi_tilde_hand_dataset() {
        // Two observations per group, 1 x-variable, 1 y-variable.
        let x = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 2.0, -2.0]);
        let y = DMatrix::from_row_slice(4, 1, &[3.0, -3.0, -1.0, 1.0]);
        let mut d = GroupedDataset::new(x, y, vec![0, 0, 1, 1], two_group_names()).unwrap();
        d.centered = true;
        let phi = d.phi_tilde(0, 1).unwrap();
        // Group 1: (1·3 + 1·3)/2 = 3; group 2: (−2 − 2)/2 = −2; difference 5.
        assert_abs_diff_eq!(phi.phi[(0, 0)], 5.0, epsilon = 1e-15);
    }

    #[test]
    fn translation_before_centering_does_not_change_phi() {
        let d = random_dataset(&[10, 10], 3, 2, 33);
        let phi_a = d.center_within_group().phi_tilde(0, 1).unwrap();
        let mut shifted = d.x().clone();
        for i in 0..10 {
            for j in 0..3 {
                shifted[(i, j)] += 100.0; // constant shift of group 1 only
            }
        }
        let d2 = GroupedDataset::new(
            shifted,
            d.y().clone(),
            d.group_ids().to_vec(),
            d.group_names().to_vec(),
        )
        .unwrap();
        let phi_b = d2.center_within_group().phi_tilde(0, 1).unwrap();
        assert!((&phi_a.phi - &phi_b.phi).abs().max() <= 1e-10);
    }

    #[test]
    fn scaling_x_scales_phi_linearly() {
        let d = random_dataset(&[10, 10], 3, 2, 8);
        let phi_a = d.center_within_group().phi_tilde(0, 1).unwrap();
        let d2 = GroupedDataset::new(
            d.x() * 2.5,
            d.y().clone(),
            d.group_ids().to_vec(),
            d.group_names().to_vec(),
        )
        .unwrap();
        let phi_b = d2.center_within_group().phi_tilde(0, 1).unwrap();
        assert!((&phi_a.phi * 2.5 - &phi_b.phi).abs().max() <= 1e-12);
    }
}
