//! Extension to three or more groups: all pairwise cross-covariance
//! differences are stacked and a single shared sparse basis pair is fitted
//! by the same two-way iterative thresholding.

use nalgebra::DMatrix;

use crate::data::{CrossCovDifference, GroupedDataset};
use crate::error::{CcrError, Result};
use crate::estimator::{iterate_thresholded, score_correlations, CcrConfig, CcrFit};
use crate::linalg::{truncated_svd, OrthonormalBasis};

/// Pairwise Φ̃ blocks of a K-group dataset together with their horizontal
/// (p1 × B·p2) and vertical (B·p1 × p2) stackings, B = K(K−1)/2.
#[derive(Debug, Clone)]
pub struct StackedPhi {
    pub pairwise: Vec<CrossCovDifference>,
    pub horizontal: DMatrix<f64>,
    pub vertical: DMatrix<f64>,
}

impl StackedPhi {
    pub fn p1(&self) -> usize {
        self.horizontal.nrows()
    }

    pub fn p2(&self) -> usize {
        self.vertical.ncols()
    }

    pub fn block_count(&self) -> usize {
        self.pairwise.len()
    }
}

/// Group pairs in block order: the three-group case uses the cyclic order
/// (1,2), (2,3), (3,1); with more groups, all unordered pairs in
/// lexicographic order (an extension beyond the three-group construction).
fn pair_order(k: usize) -> Vec<(usize, usize)> {
    if k == 3 {
        vec![(0, 1), (1, 2), (2, 0)]
    } else {
        let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
        for a in 0..k {
            for b in (a + 1)..k {
                pairs.push((a, b));
            }
        }
        pairs
    }
}

/// Builds the pairwise Φ̃ blocks and their stackings from a centered
/// dataset with K ≥ 3 groups.
pub fn build_stacked_phi(d: &GroupedDataset) -> Result<StackedPhi> {
    let k = d.group_count();
    if k == 2 {
        return Err(CcrError::UseBinary(
            "two groups: fit the plain cross-covariance difference instead".into(),
        ));
    }
    if k < 2 {
        return Err(CcrError::Validation("at least two groups required".into()));
    }
    let pairs = pair_order(k);
    let pairwise: Vec<CrossCovDifference> = pairs
        .iter()
        .map(|&(a, b)| d.phi_tilde(a, b))
        .collect::<Result<_>>()?;

    let (p1, p2) = (d.p1(), d.p2());
    let b = pairwise.len();
    let mut horizontal = DMatrix::zeros(p1, b * p2);
    let mut vertical = DMatrix::zeros(b * p1, p2);
    for (i, block) in pairwise.iter().enumerate() {
        horizontal
            .view_mut((0, i * p2), (p1, p2))
            .copy_from(&block.phi);
        vertical
            .view_mut((i * p1, 0), (p1, p2))
            .copy_from(&block.phi);
    }

    Ok(StackedPhi {
        pairwise,
        horizontal,
        vertical,
    })
}

/// Fits one shared sparse basis pair to the stacked pairwise differences.
///
/// Initialization takes the top-r left singular vectors of the horizontal
/// stack for Û and of the transposed vertical stack for V̂; each iteration
/// multiplies every pairwise block by the current basis and sums, then
/// thresholds and orthonormalizes exactly as in the binary fit.
///
/// In the returned fit, `phi_hat` is the projected horizontal stack
/// (p1 × B·p2) and `deltas` are the singular values of the projected
/// cross-block matrix. Column signs are aligned so the first pairwise block
/// has a nonnegative projected coefficient, which pins the signs of
/// per-group score correlations.
pub fn fit_multigroup(sp: &StackedPhi, cfg: &CcrConfig) -> Result<CcrFit> {
    let (p1, p2) = (sp.p1(), sp.p2());
    cfg.validate(p1, p2)?;
    if !sp.horizontal.iter().all(|v| v.is_finite()) {
        return Err(CcrError::Validation("stacked Φ̃ contains non-finite entries".into()));
    }

    let init_u = truncated_svd(&sp.horizontal, cfg.rank)?.left;
    let init_v = truncated_svd(&sp.vertical.transpose(), cfg.rank)?.left;

    let blocks = &sp.pairwise;
    let outcome = iterate_thresholded(
        cfg,
        &init_u,
        &init_v,
        |v| blocks.iter().map(|b| &b.phi * v).sum(),
        |u| blocks.iter().map(|b| b.phi.transpose() * u).sum(),
    );

    let r = cfg.rank;
    // Rotate Û against the stacked cross terms, then V̂ against the rotated
    // Û; for r = 1 these are sign choices, overridden below by the
    // first-block convention.
    let cross_u = {
        let mut w = DMatrix::zeros(r, blocks.len() * r);
        for (i, b) in blocks.iter().enumerate() {
            let term = outcome.u.transpose() * &b.phi * &outcome.v;
            w.view_mut((0, i * r), (r, r)).copy_from(&term);
        }
        w
    };
    let svd_u = truncated_svd(&cross_u, r)?;
    let deltas = svd_u.singular_values.clone();
    let u = &outcome.u * svd_u.left.matrix();

    let cross_v = {
        let mut w = DMatrix::zeros(r, blocks.len() * r);
        for (i, b) in blocks.iter().enumerate() {
            let term = outcome.v.transpose() * b.phi.transpose() * &u;
            w.view_mut((0, i * r), (r, r)).copy_from(&term);
        }
        w
    };
    let svd_v = truncated_svd(&cross_v, r)?;
    let mut v = &outcome.v * svd_v.left.matrix();

    // Sign convention: make the first block's projected coefficient
    // nonnegative for each column pair (falling back to later blocks when it
    // vanishes), so group correlations come out with reproducible signs.
    for col in 0..r {
        let ucol = u.column(col);
        let mut flip = false;
        for b in blocks {
            let coef = (ucol.transpose() * &b.phi * v.column(col))[(0, 0)];
            if coef.abs() > 1e-12 * b.phi.norm().max(1e-300) {
                flip = coef < 0.0;
                break;
            }
        }
        if flip {
            for i in 0..p2 {
                v[(i, col)] = -v[(i, col)];
            }
        }
    }

    let u_hat = OrthonormalBasis::new(u)?;
    let v_hat = OrthonormalBasis::new(v)?;
    let pu = u_hat.projector();
    let pv = v_hat.projector();
    let mut phi_hat = DMatrix::zeros(p1, blocks.len() * p2);
    for (i, b) in blocks.iter().enumerate() {
        let projected = pu.matrix() * &b.phi * pv.matrix();
        phi_hat.view_mut((0, i * p2), (p1, p2)).copy_from(&projected);
    }

    let mut selected_x = outcome.selected_x;
    let mut selected_y = outcome.selected_y;
    selected_x.sort_unstable();
    selected_y.sort_unstable();

    Ok(CcrFit {
        u_hat,
        v_hat,
        phi_hat,
        selected_x,
        selected_y,
        deltas,
        etas: None,
        iterations: outcome.iterations,
        converged: outcome.converged,
        convergence_trace: outcome.trace,
        failure: outcome.failure,
    })
}

/// Pearson correlation of the first projected score pair `(X u₁, Y v₁)`
/// within each group, in group order.
pub fn group_score_correlations(fit: &CcrFit, d: &GroupedDataset) -> Result<Vec<f64>> {
    if !d.is_centered() {
        return Err(CcrError::NotCentered("score correlations need centered data".into()));
    }
    score_correlations(&fit.u_hat, &fit.v_hat, d, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::fit;
    use crate::linalg::subspace_distance;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_group_dataset(seed: u64, copy_group2_to_3: bool) -> GroupedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let mut x = DMatrix::from_fn(3 * n, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut y = DMatrix::from_fn(3 * n, 3, |_, _| rng.random_range(-1.0..1.0));
        if copy_group2_to_3 {
            for i in 0..n {
                let (xr, yr) = (x.row(n + i).into_owned(), y.row(n + i).into_owned());
                x.set_row(2 * n + i, &xr);
                y.set_row(2 * n + i, &yr);
            }
        }
        let ids: Vec<usize> = (0..3 * n).map(|i| i / n).collect();
        let names = vec!["g1".into(), "g2".into(), "g3".into()];
        GroupedDataset::new(x, y, ids, names).unwrap()
    }

    #[test]
    fn stack_shapes_and_block_order() {
        let d = three_group_dataset(1, false).center_within_group();
        let sp = build_stacked_phi(&d).unwrap();
        assert_eq!(sp.block_count(), 3);
        assert_eq!(sp.horizontal.shape(), (4, 9));
        assert_eq!(sp.vertical.shape(), (12, 3));
        assert_eq!(sp.pairwise[0].group_pair, (0, 1));
        assert_eq!(sp.pairwise[1].group_pair, (1, 2));
        assert_eq!(sp.pairwise[2].group_pair, (2, 0));
        // Oracle: blocks equal independent phi_tilde calls.
        let direct = d.phi_tilde(1, 2).unwrap();
        assert!((&sp.pairwise[1].phi - &direct.phi).abs().max() <= 1e-15);
    }

    #[test]
    fn duplicate_group_gives_zero_block() {
        let d = three_group_dataset(2, true).center_within_group();
        let sp = build_stacked_phi(&d).unwrap();
        assert!(sp.pairwise[1].phi.abs().max() <= 1e-14, "Φ̃₂₃ should vanish");
    }

    #[test]
    fn binary_dataset_is_rejected() {
        let d = crate::data::tests::random_dataset(&[4, 4], 3, 3, 5).center_within_group();
        assert!(matches!(build_stacked_phi(&d), Err(CcrError::UseBinary(_))));
    }

    #[test]
    fn four_groups_use_lexicographic_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let ids = vec![0, 0, 1, 1, 2, 2, 3, 3];
        let names = (1..=4).map(|g| format!("g{g}")).collect();
        let d = GroupedDataset::new(x, y, ids, names).unwrap().center_within_group();
        let sp = build_stacked_phi(&d).unwrap();
        let pairs: Vec<(usize, usize)> = sp.pairwise.iter().map(|b| b.group_pair).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn identical_groups_report_degenerate_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block_x = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let block_y = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let mut x = DMatrix::zeros(12, 4);
        let mut y = DMatrix::zeros(12, 3);
        for g in 0..3 {
            for i in 0..4 {
                x.set_row(4 * g + i, &block_x.row(i));
                y.set_row(4 * g + i, &block_y.row(i));
            }
        }
        let ids: Vec<usize> = (0..12).map(|i| i / 4).collect();
        let names = vec!["a".into(), "b".into(), "c".into()];
        let d = GroupedDataset::new(x, y, ids, names).unwrap().center_within_group();
        let sp = build_stacked_phi(&d).unwrap();
        assert!(sp.horizontal.abs().max() <= 1e-14);
        let f = fit_multigroup(&sp, &CcrConfig::new(1, 2, 2)).unwrap();
        assert!(!f.converged);
        assert!(f.failure.is_some());
    }

    /// Noiseless rank-1 construction shared by the equivalence tests below.
    fn synthetic_stack(u: &DVector<f64>, v: &DVector<f64>, coefs: &[f64]) -> StackedPhi {
        let pairwise: Vec<CrossCovDifference> = coefs
            .iter()
            .enumerate()
            .map(|(i, &c)| CrossCovDifference {
                phi: c * u * v.transpose(),
                group_sizes: (5, 5),
                group_pair: (i, (i + 1) % 3),
            })
            .collect();
        let (p1, p2) = (u.len(), v.len());
        let mut horizontal = DMatrix::zeros(p1, 3 * p2);
        let mut vertical = DMatrix::zeros(3 * p1, p2);
        for (i, b) in pairwise.iter().enumerate() {
            horizontal.view_mut((0, i * p2), (p1, p2)).copy_from(&b.phi);
            vertical.view_mut((i * p1, 0), (p1, p2)).copy_from(&b.phi);
        }
        StackedPhi {
            pairwise,
            horizontal,
            vertical,
        }
    }

    #[test]
    fn zero_block_reduces_to_binary_fit() {
        // One of three pairwise blocks is zero; the stacked fit must agree
        // with the binary fit on a representative nonzero block (spans
        // compared through projectors).
        let u = DVector::from_vec(vec![0.8, 0.6, 0.0, 0.0, 0.0]);
        let v = DVector::from_vec(vec![0.6, 0.8, 0.0, 0.0]);
        let sp = synthetic_stack(&u, &v, &[2.0, 0.0, -2.0]);
        let cfg = CcrConfig::new(1, 2, 2);
        let stacked = fit_multigroup(&sp, &cfg).unwrap();
        let binary = fit(&sp.pairwise[0], &cfg).unwrap();
        assert_eq!(stacked.selected_x, binary.selected_x);
        assert_eq!(stacked.selected_y, binary.selected_y);
        let du = subspace_distance(&stacked.u_hat, &binary.u_hat).unwrap();
        assert!(du <= 1e-6, "projector distance {du}");
    }

    #[test]
    fn support_matches_brute_force_on_small_stack() {
        use itertools::Itertools;
        let u = DVector::from_vec(vec![0.1, 0.7, 0.65, 0.28]);
        let v = DVector::from_vec(vec![0.9, 0.05, 0.42, 0.1]);
        let sp = synthetic_stack(&u, &v, &[0.8, 1.0, -1.8]);
        let cfg = CcrConfig::new(1, 2, 2);
        let f = fit_multigroup(&sp, &cfg).unwrap();
        assert!(f.converged);

        // Oracle: exhaustive support search maximizing Σ_pairs ‖u_I Φ v_J‖²
        // over unit vectors supported on (I, J); for rank-1 blocks c·uvᵀ the
        // optimum is Σ c²·‖u_I‖²‖v_J‖² at the normalized restrictions.
        let mut best = (0.0, vec![], vec![]);
        for i_set in (0..4).combinations(2) {
            for j_set in (0..4).combinations(2) {
                let un: f64 = i_set.iter().map(|&i| u[i] * u[i]).sum();
                let vn: f64 = j_set.iter().map(|&j| v[j] * v[j]).sum();
                let objective: f64 = [0.8f64, 1.0, -1.8]
                    .iter()
                    .map(|c| c * c * un * vn)
                    .sum();
                if objective > best.0 {
                    best = (objective, i_set.clone(), j_set.clone());
                }
            }
        }
        assert_eq!(f.selected_x, best.1);
        assert_eq!(f.selected_y, best.2);
    }

    #[test]
    fn relabeling_groups_preserves_selection_and_deltas() {
        let u = DVector::from_vec(vec![0.1, 0.7, 0.65, 0.28]);
        let v = DVector::from_vec(vec![0.9, 0.05, 0.42, 0.1]);
        let sp = synthetic_stack(&u, &v, &[0.8, 1.0, -1.8]);
        let rotated = synthetic_stack(&u, &v, &[1.0, -1.8, 0.8]);
        let cfg = CcrConfig::new(1, 2, 2);
        let a = fit_multigroup(&sp, &cfg).unwrap();
        let b = fit_multigroup(&rotated, &cfg).unwrap();
        assert_eq!(a.selected_x, b.selected_x);
        assert_eq!(a.selected_y, b.selected_y);
        assert_abs_diff_eq!(a.deltas[0], b.deltas[0], epsilon = 1e-10);
    }

    #[test]
    fn score_correlation_is_one_for_collinear_group() {
        // Group scores engineered exactly collinear in group 1.
        let x = DMatrix::from_row_slice(
            9,
            1,
            &[1.0, 2.0, 3.0, 1.0, -2.0, 1.5, 0.5, -1.0, 2.0],
        );
        let y = DMatrix::from_row_slice(
            9,
            1,
            &[2.0, 4.0, 6.0, 0.3, 1.0, -0.7, 1.0, 0.4, -0.9],
        );
        let ids = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let names = vec!["a".into(), "b".into(), "c".into()];
        let d = GroupedDataset::new(x, y, ids, names).unwrap().center_within_group();
        let sp = build_stacked_phi(&d).unwrap();
        let f = fit_multigroup(&sp, &CcrConfig::new(1, 1, 1)).unwrap();
        let rho = group_score_correlations(&f, &d).unwrap();
        assert_abs_diff_eq!(rho[0].abs(), 1.0, epsilon = 1e-12);
        // Oracle: direct Pearson on the projected scores.
        let u0 = f.u_hat.matrix()[(0, 0)];
        let v0 = f.v_hat.matrix()[(0, 0)];
        let a: Vec<f64> = (0..3).map(|i| d.x()[(i, 0)] * u0).collect();
        let b: Vec<f64> = (0..3).map(|i| d.y()[(i, 0)] * v0).collect();
        let ma = a.iter().sum::<f64>() / 3.0;
        let mb = b.iter().sum::<f64>() / 3.0;
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let den = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>()
            * b.iter().map(|y| (y - mb).powi(2)).sum::<f64>())
        .sqrt();
        assert_abs_diff_eq!(rho[0], num / den, epsilon = 1e-12);
    }
}
