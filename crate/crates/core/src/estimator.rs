//! Sparse rank-r estimation of the cross-covariance difference by two-way
//! iterative hard thresholding, plus the per-direction covariance (δ̂) and
//! correlation (η̂) difference summaries.

use nalgebra::DMatrix;

use crate::data::{CrossCovDifference, GroupedDataset};
use crate::error::{CcrError, Result};
use crate::linalg::{qr_orthonormalize, truncated_svd, OrthonormalBasis};

/// Estimation settings: target rank, row-sparsity levels for the two blocks,
/// and the convergence rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CcrConfig {
    pub rank: usize,
    /// (s1, s2): number of x rows / y rows allowed to stay nonzero.
    pub sparsity: (usize, usize),
    /// Threshold on the squared Frobenius projector difference.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl CcrConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-11;
    pub const DEFAULT_MAX_ITERATIONS: usize = 1000;

    pub fn new(rank: usize, s1: usize, s2: usize) -> Self {
        Self {
            rank,
            sparsity: (s1, s2),
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    /// Checks the configuration against problem dimensions.
    pub fn validate(&self, p1: usize, p2: usize) -> Result<()> {
        let (s1, s2) = self.sparsity;
        if self.rank == 0 {
            return Err(CcrError::Validation("rank must be at least 1".into()));
        }
        if s1 == 0 || s1 > p1 || s2 == 0 || s2 > p2 {
            return Err(CcrError::Dimension(format!(
                "sparsity ({s1}, {s2}) outside 1..={p1} × 1..={p2}"
            )));
        }
        if self.rank > s1.min(s2) {
            return Err(CcrError::Validation(format!(
                "rank {} exceeds min sparsity {}; thresholded blocks cannot support it",
                self.rank,
                s1.min(s2)
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(CcrError::Validation("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(CcrError::Validation("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fitted sparse bases and summaries.
#[derive(Debug, Clone)]
pub struct CcrFit {
    /// p1×r left basis; rows outside `selected_x` are exactly zero.
    pub u_hat: OrthonormalBasis,
    /// p2×r right basis; rows outside `selected_y` are exactly zero.
    pub v_hat: OrthonormalBasis,
    /// The doubly projected estimate `P_Û Φ̃ P_V̂` (for the stacked
    /// multi-group variant: the projected horizontal stack).
    pub phi_hat: DMatrix<f64>,
    /// Selected x-variable indices, ascending, |selected_x| = s1.
    pub selected_x: Vec<usize>,
    /// Selected y-variable indices, ascending, |selected_y| = s2.
    pub selected_y: Vec<usize>,
    /// Covariance differences δ̂_i: singular values of `phi_hat`,
    /// nonnegative and nonincreasing.
    pub deltas: Vec<f64>,
    /// Correlation differences η̂_i; filled on request from a dataset.
    pub etas: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration max squared projector difference.
    pub convergence_trace: Vec<f64>,
    /// Diagnostic when the iteration stopped on a degenerate block instead
    /// of converging.
    pub failure: Option<String>,
}

/// Row-threshold a p×r matrix: keep the `s` rows with largest Euclidean
/// norms (ties keep the lower index), zero the rest. Returns the kept row
/// indices (ascending) and the compacted s×r block.
fn threshold_rows(m: &DMatrix<f64>, s: usize) -> (Vec<usize>, DMatrix<f64>) {
    let p = m.nrows();
    let mut idx: Vec<usize> = (0..p).collect();
    let norms: Vec<f64> = (0..p).map(|i| m.row(i).norm()).collect();
    idx.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let mut keep: Vec<usize> = idx.into_iter().take(s).collect();
    keep.sort_unstable();
    let mut compact = DMatrix::zeros(s, m.ncols());
    for (out, &i) in keep.iter().enumerate() {
        compact.set_row(out, &m.row(i));
    }
    (keep, compact)
}

/// Scatter an orthonormal s×r block back into p×r with exact zeros outside
/// `support`. Orthonormalizing the compacted block and re-embedding equals
/// orthonormalizing the padded matrix, but keeps the zero rows bit-exact.
fn scatter(support: &[usize], compact: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(p, compact.ncols());
    for (src, &i) in support.iter().enumerate() {
        out.set_row(i, &compact.row(src));
    }
    out
}

/// `‖P_A − P_B‖²_F` for orthonormal A, B of equal rank r, via
/// `2r − 2‖AᵀB‖²_F`.
fn projector_diff_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = a.ncols() as f64;
    let cross = a.transpose() * b;
    (2.0 * r - 2.0 * cross.norm_squared()).max(0.0)
}

pub(crate) struct IterationOutcome {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub selected_x: Vec<usize>,
    pub selected_y: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub failure: Option<String>,
}

/// Alternating threshold/orthonormalize driver shared by the binary and
/// stacked multi-group fits. `left_mul` maps the current V̂ to the p1×r
/// multiplication form, `right_mul` maps the current Û to the p2×r one.
pub(crate) fn iterate_thresholded(
    cfg: &CcrConfig,
    init_u: &OrthonormalBasis,
    init_v: &OrthonormalBasis,
    left_mul: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
    right_mul: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> IterationOutcome {
    let (s1, s2) = cfg.sparsity;
    let p1 = init_u.dim();
    let p2 = init_v.dim();
    let mut u_prev = init_u.matrix().clone();
    let mut v_prev = init_v.matrix().clone();
    let mut selected_x = init_u.nonzero_rows(0.0);
    let mut selected_y = init_v.nonzero_rows(0.0);
    let mut trace = Vec::new();

    for t in 1..=cfg.max_iterations {
        let u_mul = left_mul(&v_prev);
        let (sup_x, u_compact) = threshold_rows(&u_mul, s1);
        let u_new = match qr_orthonormalize(&u_compact) {
            Ok(b) => scatter(&sup_x, b.matrix(), p1),
            Err(e) => {
                return IterationOutcome {
                    u: u_prev,
                    v: v_prev,
                    selected_x,
                    selected_y,
                    iterations: t,
                    converged: false,
                    trace,
                    failure: Some(format!("left thresholded block degenerate at iteration {t}: {e}")),
                }
            }
        };

        let v_mul = right_mul(&u_new);
        let (sup_y, v_compact) = threshold_rows(&v_mul, s2);
        let v_new = match qr_orthonormalize(&v_compact) {
            Ok(b) => scatter(&sup_y, b.matrix(), p2),
            Err(e) => {
                return IterationOutcome {
                    u: u_prev,
                    v: v_prev,
                    selected_x,
                    selected_y,
                    iterations: t,
                    converged: false,
                    trace,
                    failure: Some(format!("right thresholded block degenerate at iteration {t}: {e}")),
                }
            }
        };

        let diff = projector_diff_sq(&u_new, &u_prev).max(projector_diff_sq(&v_new, &v_prev));
        trace.push(diff);
        u_prev = u_new;
        v_prev = v_new;
        selected_x = sup_x;
        selected_y = sup_y;

        if diff <= cfg.tolerance {
            return IterationOutcome {
                u: u_prev,
                v: v_prev,
                selected_x,
                selected_y,
                iterations: t,
                converged: true,
                trace,
                failure: None,
            };
        }
    }

    IterationOutcome {
        u: u_prev,
        v: v_prev,
        selected_x,
        selected_y,
        iterations: cfg.max_iterations,
        converged: false,
        trace,
        failure: None,
    }
}

/// Rotate the column pairs of (U, V) so that `UᵀMVᵀ`-style cross terms
/// diagonalize: with `W = UᵀMV = A diag(d) Bᵀ`, returns `(UA, VB, d)`.
/// Row supports are preserved exactly (zero rows stay zero) and `d` is the
/// nonnegative, nonincreasing singular-value vector of the projected matrix.
fn align_columns(
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    cross: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let r = u.ncols();
    let svd = truncated_svd(cross, r)?;
    let u_rot = &u * svd.left.matrix();
    let v_rot = &v * svd.right.matrix();
    Ok((u_rot, v_rot, svd.singular_values))
}

/// Fit the sparse rank-r decomposition of Φ̃ by two-way iterative
/// thresholding.
///
/// Initialization is the top-r SVD of Φ̃. Each iteration multiplies Φ̃ by
/// the current basis, keeps the s largest rows by Euclidean norm, and
/// re-orthonormalizes via QR; it stops when the larger of the two squared
/// projector differences falls to `tolerance`. A degenerate thresholded
/// block (rank below r) yields a non-converged fit carrying a diagnostic
/// rather than an error.
pub fn fit(phi: &CrossCovDifference, cfg: &CcrConfig) -> Result<CcrFit> {
    let m = &phi.phi;
    cfg.validate(m.nrows(), m.ncols())?;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(CcrError::Validation("Φ̃ contains non-finite entries".into()));
    }

    let init = truncated_svd(m, cfg.rank)?;
    let outcome = iterate_thresholded(
        cfg,
        &init.left,
        &init.right,
        |v| m * v,
        |u| m.transpose() * u,
    );
    finalize_binary(m, outcome)
}

fn finalize_binary(m: &DMatrix<f64>, outcome: IterationOutcome) -> Result<CcrFit> {
    let cross = outcome.u.transpose() * m * &outcome.v;
    let (u, v, deltas) = align_columns(outcome.u, outcome.v, &cross)?;
    let u_hat = OrthonormalBasis::new(u)?;
    let v_hat = OrthonormalBasis::new(v)?;
    let phi_hat = u_hat.projector().matrix() * m * v_hat.projector().matrix();
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

/// Recompute the covariance differences `δ̂_i = Û_iᵀ Φ̃ V̂_i`,
/// sign-normalized to be nonnegative (a negative product corresponds to
/// flipping the sign of V̂_i).
pub fn covariance_differences(fit: &CcrFit, phi: &CrossCovDifference) -> Result<Vec<f64>> {
    if fit.u_hat.dim() != phi.p1() || fit.v_hat.dim() != phi.p2() {
        return Err(CcrError::Dimension(
            "fit dimensions do not match the cross-covariance difference".into(),
        ));
    }
    let u = fit.u_hat.matrix();
    let v = fit.v_hat.matrix();
    Ok((0..fit.u_hat.rank())
        .map(|i| {
            let val = (u.column(i).transpose() * &phi.phi * v.column(i))[(0, 0)];
            val.abs()
        })
        .collect())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Per-group Pearson correlation of projected scores `(X u_i, Y v_i)`.
/// Returns one value per group for column pair `i`.
pub(crate) fn score_correlations(
    u: &OrthonormalBasis,
    v: &OrthonormalBasis,
    d: &GroupedDataset,
    col: usize,
) -> Result<Vec<f64>> {
    if u.dim() != d.p1() || v.dim() != d.p2() {
        return Err(CcrError::Dimension("basis dimensions do not match the dataset".into()));
    }
    let ucol = u.matrix().column(col);
    let vcol = v.matrix().column(col);
    let mut out = Vec::with_capacity(d.group_count());
    for g in 0..d.group_count() {
        let rows = d.group_rows(g)?;
        let a: Vec<f64> = rows.iter().map(|&i| (d.x().row(i) * ucol)[(0, 0)]).collect();
        let b: Vec<f64> = rows.iter().map(|&i| (d.y().row(i) * vcol)[(0, 0)]).collect();
        match pearson(&a, &b) {
            Some(c) => out.push(c),
            None => {
                return Err(CcrError::UndefinedCorrelation {
                    group: d.group_names()[g].clone(),
                    direction: col + 1,
                })
            }
        }
    }
    Ok(out)
}

/// Correlation differences `η̂_i`: within-group Pearson correlation of the
/// i-th projected score pair in group 1 minus the same in group 2.
///
/// The directions come from the covariance-difference fit; η̂ is evaluated
/// at them, never optimized directly.
pub fn correlation_differences(fit: &CcrFit, d: &GroupedDataset) -> Result<Vec<f64>> {
    if d.group_count() != 2 {
        return Err(CcrError::Argument(format!(
            "correlation differences need exactly 2 groups, dataset has {}",
            d.group_count()
        )));
    }
    if !d.is_centered() {
        return Err(CcrError::NotCentered("correlation differences need centered data".into()));
    }
    let mut etas = Vec::with_capacity(fit.u_hat.rank());
    for i in 0..fit.u_hat.rank() {
        let corr = score_correlations(&fit.u_hat, &fit.v_hat, d, i)?;
        etas.push(corr[0] - corr[1]);
    }
    Ok(etas)
}
