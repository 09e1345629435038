//! Dense linear-algebra kernels: truncated SVD, QR orthonormalization,
//! orthogonal projectors, subspace distance, and the symmetric PSD square
//! root. Everything operates on `nalgebra::DMatrix<f64>` and is pure.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CcrError, Result};

/// Tolerance on `max |BᵀB − I|` for a matrix to count as orthonormal.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Relative tolerance below which a QR diagonal entry signals rank deficiency.
pub const RANK_TOL: f64 = 1e-12;

fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CcrError::Validation(format!("{what} contains non-finite entries")))
    }
}

/// A p×r matrix with orthonormal columns. Only the span matters downstream;
/// column signs and order are whatever the producing operation chose.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    matrix: DMatrix<f64>,
}

impl OrthonormalBasis {
    /// Validates orthonormality (`max |BᵀB − I| ≤ 1e−10`) and `r ≤ p`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        ensure_finite(&matrix, "basis")?;
        let (p, r) = matrix.shape();
        if r == 0 || r > p {
            return Err(CcrError::Dimension(format!(
                "basis must be p×r with 1 ≤ r ≤ p, got {p}×{r}"
            )));
        }
        let gram = matrix.transpose() * &matrix;
        let err = (gram - DMatrix::identity(r, r)).abs().max();
        if err > ORTHONORMALITY_TOL {
            return Err(CcrError::Validation(format!(
                "columns are not orthonormal (max |BᵀB − I| = {err:.3e})"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Ambient dimension p.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Subspace rank r.
    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// The orthogonal projector `BBᵀ` onto the span.
    pub fn projector(&self) -> Projector {
        let mut p = &self.matrix * self.matrix.transpose();
        // Symmetrize to keep the projector invariants exact under round-off.
        let pt = p.transpose();
        p = (p + pt) * 0.5;
        Projector { matrix: p }
    }

    /// Indices of rows with any entry of magnitude above `tol`.
    pub fn nonzero_rows(&self, tol: f64) -> Vec<usize> {
        (0..self.matrix.nrows())
            .filter(|&i| self.matrix.row(i).iter().any(|v| v.abs() > tol))
            .collect()
    }
}

/// A symmetric idempotent projection matrix `P = BBᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    matrix: DMatrix<f64>,
}

impl Projector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Result of [`truncated_svd`].
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub left: OrthonormalBasis,
    pub singular_values: Vec<f64>,
    pub right: OrthonormalBasis,
}

/// Top-`r` singular value decomposition of a dense matrix.
///
/// Singular values are sorted in descending order. Each singular vector pair
/// is sign-normalized so the entry of largest magnitude in the left vector is
/// positive; comparisons across SVD backends must still go through spans or
/// projectors, never raw columns.
pub fn truncated_svd(m: &DMatrix<f64>, r: usize) -> Result<TruncatedSvd> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    if r == 0 || r > k {
        return Err(CcrError::Dimension(format!(
            "requested rank {r} outside 1..={k} for a {rows}×{cols} matrix"
        )));
    }

    if m.norm() == 0.0 {
        // The SVD of the zero matrix is not unique; pick coordinate bases so
        // callers still get valid orthonormal factors.
        let left = DMatrix::from_fn(rows, r, |i, j| if i == j { 1.0 } else { 0.0 });
        let right = DMatrix::from_fn(cols, r, |i, j| if i == j { 1.0 } else { 0.0 });
        return Ok(TruncatedSvd {
            left: OrthonormalBasis::new(left)?,
            singular_values: vec![0.0; r],
            right: OrthonormalBasis::new(right)?,
        });
    }

    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with compute_u");
    let v_t = svd.v_t.expect("svd with compute_v");
    let sigma = svd.singular_values;

    // nalgebra sorts descending already; enforce it to stay independent of
    // backend behavior (stable under ties).
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap().then(a.cmp(&b)));

    let mut left = DMatrix::zeros(rows, r);
    let mut right = DMatrix::zeros(cols, r);
    let mut values = Vec::with_capacity(r);
    for (out_col, &src) in order.iter().take(r).enumerate() {
        let mut ucol: Vec<f64> = u.column(src).iter().copied().collect();
        let mut vcol: Vec<f64> = v_t.row(src).iter().copied().collect();
        // Largest-magnitude entry of the left vector made positive.
        let pivot = ucol
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.abs().partial_cmp(&b.abs()).unwrap().then(j.cmp(i)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if ucol[pivot] < 0.0 {
            ucol.iter_mut().for_each(|v| *v = -*v);
            vcol.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, v) in ucol.into_iter().enumerate() {
            left[(i, out_col)] = v;
        }
        for (i, v) in vcol.into_iter().enumerate() {
            right[(i, out_col)] = v;
        }
        values.push(sigma[src]);
    }

    Ok(TruncatedSvd {
        left: OrthonormalBasis::new(left)?,
        singular_values: values,
        right: OrthonormalBasis::new(right)?,
    })
}

/// Orthonormalizes the columns of a full-column-rank matrix via QR.
///
/// The output spans exactly the input's column space. Rank-deficient input
/// (numerical rank below the column count at `1e−12·‖m‖`) is an error; the
/// estimator turns it into a non-convergence diagnostic.
pub fn qr_orthonormalize(m: &DMatrix<f64>) -> Result<OrthonormalBasis> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if cols == 0 || rows < cols {
        return Err(CcrError::Dimension(format!(
            "cannot orthonormalize a {rows}×{cols} matrix into {cols} independent columns"
        )));
    }
    let scale = m.norm();
    if scale == 0.0 {
        return Err(CcrError::DegenerateBasis("zero matrix has no column basis".into()));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    for i in 0..cols {
        if r[(i, i)].abs() <= RANK_TOL * scale {
            return Err(CcrError::DegenerateBasis(format!(
                "column {i} is numerically dependent (|R[{i},{i}]| ≤ {RANK_TOL:.0e}·‖m‖)"
            )));
        }
    }
    OrthonormalBasis::new(qr.q())
}

/// Normalized projector distance `‖P_a − P_b‖_F / √(2r)` between two
/// subspaces of equal ambient dimension and rank. Lies in [0, 1]: zero for
/// identical spans, one for orthogonal spans.
pub fn subspace_distance(a: &OrthonormalBasis, b: &OrthonormalBasis) -> Result<f64> {
    if a.dim() != b.dim() || a.rank() != b.rank() {
        return Err(CcrError::Dimension(format!(
            "subspace distance needs matching shapes, got {}×{} vs {}×{}",
            a.dim(),
            a.rank(),
            b.dim(),
            b.rank()
        )));
    }
    let diff = a.projector().matrix - b.projector().matrix;
    let d = diff.norm() / (2.0 * a.rank() as f64).sqrt();
    Ok(d.clamp(0.0, 1.0))
}

/// Symmetric PSD square root: returns S with `S·S = m`.
///
/// Eigenvalues down to `−1e−6·‖m‖` are treated as round-off and clipped to
/// zero; anything more negative is a genuine PSD violation.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_finite(m, "matrix")?;
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(CcrError::Dimension(format!("psd_sqrt needs a square matrix, got {rows}×{cols}")));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(CcrError::Validation(format!(
            "matrix is not symmetric (max |m − mᵀ| = {asym:.3e})"
        )));
    }
    let scale = m.norm();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut values = eig.eigenvalues;
    for v in values.iter_mut() {
        if *v < -1e-6 * scale {
            return Err(CcrError::NotPsd(format!(
                "eigenvalue {v:.6e} below −1e−6·‖m‖ = {:.6e}",
                -1e-6 * scale
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = eig.eigenvectors;
    let s = &q * DMatrix::from_diagonal(&values) * q.transpose();
    let st = s.transpose();
    Ok((s + st) * 0.5)
}
