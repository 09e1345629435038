//! Synthetic-data generators and the replication harness: Gaussian group
//! populations with a controlled low-rank cross-covariance difference,
//! support/subspace recovery metrics, sparsity sweeps, and resampling
//! selection-frequency studies.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::error::{CcrError, Result};
use crate::estimator::{correlation_differences, fit, CcrConfig, CcrFit};
use crate::linalg::{psd_sqrt, qr_orthonormalize, subspace_distance, OrthonormalBasis};
use crate::multigroup::{build_stacked_phi, fit_multigroup, group_score_correlations};
use crate::seeding::{derive_seed, tag};

/// Correlation structure of the signal block of each marginal covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceFamily {
    /// Autoregressive: entry (i, j) is `theta^|i−j|`.
    Ar { theta: f64 },
    /// Compound symmetric: ones on the diagonal, `theta` off it.
    Cs { theta: f64 },
}

impl CovarianceFamily {
    pub fn correlation_matrix(&self, dim: usize) -> DMatrix<f64> {
        match *self {
            CovarianceFamily::Ar { theta } => {
                DMatrix::from_fn(dim, dim, |i, j| theta.powi((i as i32 - j as i32).abs()))
            }
            CovarianceFamily::Cs { theta } => {
                DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { theta })
            }
        }
    }
}

/// Complete generative specification of one synthetic design.
///
/// `group_correlations[g]` holds the `rank` cross-covariance coefficients of
/// group `g`: the off-diagonal block of that group's joint covariance is
/// `U diag(ρ_g) Vᵀ` with `U = Σ_X^{1/2} O₁`, `V = Σ_Y^{1/2} O₂`. The same
/// structure serializes to/from scenario files used by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub p1: usize,
    pub p2: usize,
    /// True numbers of signal variables (s1*, s2*).
    pub true_sparsity: (usize, usize),
    pub rank: usize,
    /// One row of `rank` coefficients per group.
    pub group_correlations: Vec<Vec<f64>>,
    /// (c1, c2): variance scale of the signal block and the noise block.
    pub signal_scales: (f64, f64),
    pub covariance_family: CovarianceFamily,
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

impl SimScenario {
    /// The default binary rank-1 design: p1 = 18, p2 = 15, three signal
    /// variables per side, ρ = (0.9, −0.9), c = (3, 1), AR(0.7).
    pub fn binary_rank1_default(n1: usize, n2: usize, seed: u64) -> Self {
        Self {
            p1: 18,
            p2: 15,
            true_sparsity: (3, 3),
            rank: 1,
            group_correlations: vec![vec![0.9], vec![-0.9]],
            signal_scales: (3.0, 1.0),
            covariance_family: CovarianceFamily::Ar { theta: 0.7 },
            group_sizes: vec![n1, n2],
            seed,
        }
    }

    /// The default binary rank-2 design: ρ₁ = (0.9, 0.7), ρ₂ = (−0.9, −0.7).
    pub fn binary_rank2_default(n1: usize, n2: usize, seed: u64) -> Self {
        Self {
            rank: 2,
            group_correlations: vec![vec![0.9, 0.7], vec![-0.9, -0.7]],
            ..Self::binary_rank1_default(n1, n2, seed)
        }
    }

    /// The default three-group rank-1 design with per-group ρ values.
    pub fn three_group_default(rhos: [f64; 3], n: usize, seed: u64) -> Self {
        Self {
            group_correlations: rhos.iter().map(|&r| vec![r]).collect(),
            group_sizes: vec![n, n, n],
            ..Self::binary_rank1_default(n, n, seed)
        }
    }

    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (s1, s2) = self.true_sparsity;
        if self.p1 == 0 || self.p2 == 0 {
            return Err(CcrError::Scenario("dimensions must be positive".into()));
        }
        if s1 == 0 || s1 > self.p1 || s2 == 0 || s2 > self.p2 {
            return Err(CcrError::Scenario(format!(
                "true sparsity ({s1}, {s2}) outside 1..={} × 1..={}",
                self.p1, self.p2
            )));
        }
        if self.rank == 0 || self.rank > 2 {
            return Err(CcrError::Scenario("rank must be 1 or 2".into()));
        }
        if self.rank == 2 && (s1 < 2 || s2 < 2) {
            return Err(CcrError::Scenario("rank-2 designs need at least 2 signal variables".into()));
        }
        if self.group_sizes.len() < 2 {
            return Err(CcrError::Scenario("at least two groups required".into()));
        }
        if self.group_sizes.iter().any(|&n| n < 2) {
            return Err(CcrError::Scenario("each group needs at least 2 observations".into()));
        }
        if self.group_correlations.len() != self.group_sizes.len() {
            return Err(CcrError::Scenario(format!(
                "{} correlation rows for {} groups",
                self.group_correlations.len(),
                self.group_sizes.len()
            )));
        }
        if self.group_correlations.iter().any(|r| r.len() != self.rank) {
            return Err(CcrError::Scenario(format!(
                "every correlation row must have {} value(s)",
                self.rank
            )));
        }
        if self.group_count() == 2 && self.rank == 1 {
            let diff = self.group_correlations[0][0] - self.group_correlations[1][0];
            if diff <= 0.0 {
                return Err(CcrError::Scenario(format!(
                    "binary rank-1 designs require ρ1 − ρ2 > 0, got {diff}"
                )));
            }
        }
        let (c1, c2) = self.signal_scales;
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(CcrError::Scenario("signal scales must be positive".into()));
        }
        match self.covariance_family {
            CovarianceFamily::Ar { theta } | CovarianceFamily::Cs { theta } => {
                if theta.abs() >= 1.0 {
                    return Err(CcrError::Scenario(format!("|θ| = {} must be below 1", theta.abs())));
                }
            }
        }
        Ok(())
    }
}

/// Population quantities implied by a scenario.
#[derive(Debug, Clone)]
pub struct Population {
    /// Joint (p1+p2)² covariance of each group.
    pub sigma_per_group: Vec<DMatrix<f64>>,
    /// PSD square roots of the group covariances, used for sampling.
    pub sqrt_per_group: Vec<DMatrix<f64>>,
    /// Orthonormal basis of the true left subspace (support = signal rows).
    pub u_true: OrthonormalBasis,
    /// Orthonormal basis of the true right subspace.
    pub v_true: OrthonormalBasis,
    /// Cross-covariance difference of the first two groups.
    pub phi_true: DMatrix<f64>,
    pub x_support: Vec<usize>,
    pub y_support: Vec<usize>,
    group_sizes: Vec<usize>,
}

/// Unit-vector loading matrix: first column is the normalized indicator of
/// the signal block; the rank-2 second column puts (−1, 1)/√2 on the last
/// two signal coordinates.
fn loading_matrix(p: usize, s: usize, rank: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(p, rank);
    let w = 1.0 / (s as f64).sqrt();
    for i in 0..s {
        o[(i, 0)] = w;
    }
    if rank == 2 {
        let v = 1.0 / 2.0f64.sqrt();
        o[(s - 2, 1)] = -v;
        o[(s - 1, 1)] = v;
    }
    o
}

/// Orthonormalize a support-limited loading matrix, keeping the zero rows
/// bit-exact.
fn support_basis(raw: &DMatrix<f64>, support: usize) -> Result<OrthonormalBasis> {
    let block = raw.view((0, 0), (support, raw.ncols())).into_owned();
    let q = qr_orthonormalize(&block)?;
    let mut full = DMatrix::zeros(raw.nrows(), raw.ncols());
    for i in 0..support {
        full.set_row(i, &q.matrix().row(i));
    }
    OrthonormalBasis::new(full)
}

/// Assembles the group covariances, true subspaces, and true Φ implied by a
/// scenario. Each joint covariance is verified PSD (minimum eigenvalue at
/// least −1e−8).
pub fn build_population(sc: &SimScenario) -> Result<Population> {
    sc.validate()?;
    let (s1, s2) = sc.true_sparsity;
    let (c1, c2) = sc.signal_scales;
    let fam = sc.covariance_family;

    let block_diag = |p: usize, s: usize| {
        let mut m = DMatrix::zeros(p, p);
        let signal = fam.correlation_matrix(s) * c1;
        m.view_mut((0, 0), (s, s)).copy_from(&signal);
        for i in s..p {
            m[(i, i)] = c2;
        }
        m
    };
    let sigma_x = block_diag(sc.p1, s1);
    let sigma_y = block_diag(sc.p2, s2);
    let sx_half = psd_sqrt(&sigma_x)?;
    let sy_half = psd_sqrt(&sigma_y)?;

    // Block-diagonal square roots preserve the signal support, so the raw
    // loadings live exactly on the first s rows.
    let u_raw = &sx_half * loading_matrix(sc.p1, s1, sc.rank);
    let v_raw = &sy_half * loading_matrix(sc.p2, s2, sc.rank);
    let u_true = support_basis(&u_raw, s1)?;
    let v_true = support_basis(&v_raw, s2)?;

    let p = sc.p1 + sc.p2;
    let mut sigma_per_group = Vec::with_capacity(sc.group_count());
    let mut sqrt_per_group = Vec::with_capacity(sc.group_count());
    for (g, rho) in sc.group_correlations.iter().enumerate() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(rho.clone()));
        let cross = &u_raw * d * v_raw.transpose();
        let mut sigma = DMatrix::zeros(p, p);
        sigma.view_mut((0, 0), (sc.p1, sc.p1)).copy_from(&sigma_x);
        sigma
            .view_mut((sc.p1, sc.p1), (sc.p2, sc.p2))
            .copy_from(&sigma_y);
        sigma.view_mut((0, sc.p1), (sc.p1, sc.p2)).copy_from(&cross);
        sigma
            .view_mut((sc.p1, 0), (sc.p2, sc.p1))
            .copy_from(&cross.transpose());
        let min_eig = nalgebra::SymmetricEigen::new(sigma.clone())
            .eigenvalues
            .min();
        if min_eig < -1e-8 {
            return Err(CcrError::Scenario(format!(
                "joint covariance of group {} (ρ = {rho:?}) is not PSD (min eigenvalue {min_eig:.3e})",
                g + 1
            )));
        }
        sqrt_per_group.push(psd_sqrt(&sigma)?);
        sigma_per_group.push(sigma);
    }

    let d01 = DMatrix::from_diagonal(&DVector::from_vec(
        sc.group_correlations[0]
            .iter()
            .zip(&sc.group_correlations[1])
            .map(|(a, b)| a - b)
            .collect(),
    ));
    let phi_true = &u_raw * d01 * v_raw.transpose();

    Ok(Population {
        sigma_per_group,
        sqrt_per_group,
        u_true,
        v_true,
        phi_true,
        x_support: (0..s1).collect(),
        y_support: (0..s2).collect(),
        group_sizes: sc.group_sizes.clone(),
    })
}

impl Population {
    pub fn p1(&self) -> usize {
        self.u_true.dim()
    }

    pub fn p2(&self) -> usize {
        self.v_true.dim()
    }

    /// Draws one dataset: per group, i.i.d. mean-zero Gaussian rows with the
    /// group's joint covariance, generated as `Σ^{1/2} z`. Each group reads
    /// an independent stream derived from `seed`, so draws are reproducible
    /// and independent of threading.
    pub fn sample(&self, seed: u64) -> GroupedDataset {
        let p1 = self.p1();
        let p2 = self.p2();
        let n: usize = self.group_sizes.iter().sum();
        let mut x = DMatrix::zeros(n, p1);
        let mut y = DMatrix::zeros(n, p2);
        let mut ids = Vec::with_capacity(n);
        let mut row = 0;
        for (g, &ng) in self.group_sizes.iter().enumerate() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::GROUP, g as u64]));
            let sqrt = &self.sqrt_per_group[g];
            for _ in 0..ng {
                let z = DVector::from_fn(p1 + p2, |_, _| StandardNormal.sample(&mut rng));
                let joint = sqrt * z;
                for j in 0..p1 {
                    x[(row, j)] = joint[j];
                }
                for j in 0..p2 {
                    y[(row, j)] = joint[p1 + j];
                }
                ids.push(g);
                row += 1;
            }
        }
        let names = (1..=self.group_sizes.len()).map(|g| format!("g{g}")).collect();
        GroupedDataset::new(x, y, ids, names).expect("population dimensions are consistent")
    }
}

/// Draws one dataset from the scenario; identical seeds give bit-identical
/// datasets.
pub fn sample_dataset(sc: &SimScenario) -> Result<GroupedDataset> {
    Ok(build_population(sc)?.sample(sc.seed))
}

/// Per-replicate evaluation row.
#[derive(Debug, Clone)]
pub struct ReplicateRow {
    pub tpr_x: f64,
    pub tpr_y: f64,
    pub fpr_x: f64,
    pub fpr_y: f64,
    pub d_u: f64,
    pub d_v: f64,
    pub deltas: Vec<f64>,
    pub etas: Vec<f64>,
    pub group_correlations: Vec<f64>,
}

fn support_rates(selected: &[usize], truth: &[usize], p: usize) -> (f64, f64) {
    let hits = selected.iter().filter(|i| truth.contains(i)).count();
    let false_hits = selected.len() - hits;
    let tpr = hits as f64 / truth.len() as f64;
    let negatives = p - truth.len();
    let fpr = if negatives == 0 {
        0.0
    } else {
        false_hits as f64 / negatives as f64
    };
    (tpr, fpr)
}

/// Support and subspace recovery metrics of a fit against the population
/// truth: TPR/FPR from the selected index sets, D_U/D_V as normalized
/// projector distances. δ̂ and η̂ are copied from the fit.
pub fn evaluate(fit: &CcrFit, pop: &Population) -> Result<ReplicateRow> {
    if fit.u_hat.dim() != pop.p1() || fit.v_hat.dim() != pop.p2() {
        return Err(CcrError::Dimension("fit dimensions do not match the population".into()));
    }
    if fit.u_hat.rank() != pop.u_true.rank() {
        return Err(CcrError::Dimension(format!(
            "fit rank {} differs from population rank {}; subspace distance undefined",
            fit.u_hat.rank(),
            pop.u_true.rank()
        )));
    }
    let (tpr_x, fpr_x) = support_rates(&fit.selected_x, &pop.x_support, pop.p1());
    let (tpr_y, fpr_y) = support_rates(&fit.selected_y, &pop.y_support, pop.p2());
    Ok(ReplicateRow {
        tpr_x,
        tpr_y,
        fpr_x,
        fpr_y,
        d_u: subspace_distance(&fit.u_hat, &pop.u_true)?,
        d_v: subspace_distance(&fit.v_hat, &pop.v_true)?,
        deltas: fit.deltas.clone(),
        etas: fit.etas.clone().unwrap_or_default(),
        group_correlations: Vec::new(),
    })
}

/// Mean and standard error (`sd/√replicates`) of one metric; `se` is absent
/// for a single replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub se: Option<f64>,
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Some((var / n).sqrt())
    } else {
        None
    };
    MetricSummary { mean, se }
}

fn summarize_columns(rows: &[&Vec<f64>]) -> Vec<MetricSummary> {
    let width = rows.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..width)
        .map(|j| summarize(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect()
}

/// Aggregated replication results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Replicates that produced a converged fit and entered the means.
    pub replicate_count: usize,
    pub failed_replicates: usize,
    pub tpr_x: MetricSummary,
    pub tpr_y: MetricSummary,
    pub fpr_x: MetricSummary,
    pub fpr_y: MetricSummary,
    pub d_u: MetricSummary,
    pub d_v: MetricSummary,
    pub deltas: Vec<MetricSummary>,
    pub etas: Vec<MetricSummary>,
    /// Per-group score correlations; filled by multi-group scenarios.
    pub group_correlations: Vec<MetricSummary>,
}

/// Replication harness settings.
#[derive(Debug, Clone)]
pub struct ReplicationConfig {
    /// Estimation settings of the support/subspace fit; its rank should be
    /// the scenario rank for the distance metrics to be defined.
    pub ccr: CcrConfig,
    /// Optional second rank at which δ̂/η̂ are measured (the convention in
    /// the reference results is rank 2 regardless of the true rank). `None`
    /// reuses the support fit.
    pub diff_rank: Option<usize>,
    pub replicates: usize,
}

impl ReplicationConfig {
    pub fn new(ccr: CcrConfig, replicates: usize) -> Self {
        Self {
            ccr,
            diff_rank: None,
            replicates,
        }
    }

    pub fn with_diff_rank(mut self, diff_rank: Option<usize>) -> Self {
        self.diff_rank = diff_rank;
        self
    }
}

/// Runs seeded independent replicates of sample → center → Φ̃ → fit →
/// evaluate and aggregates per-metric means and standard errors. Replicates
/// whose fit fails or does not converge are counted and excluded.
///
/// Binary scenarios measure TPR/FPR/D at the configured rank and δ̂/η̂ at
/// `diff_rank` when given. Scenarios with three or more groups go through
/// the stacked pairwise fit and report per-group score correlations instead
/// of η̂.
pub fn run_replications(sc: &SimScenario, rc: &ReplicationConfig) -> Result<EvalReport> {
    if rc.replicates == 0 {
        return Err(CcrError::Validation("at least one replicate required".into()));
    }
    let pop = build_population(sc)?;
    rc.ccr.validate(sc.p1, sc.p2)?;
    if let Some(rd) = rc.diff_rank {
        CcrConfig::new(rd, rc.ccr.sparsity.0, rc.ccr.sparsity.1).validate(sc.p1, sc.p2)?;
    }

    let rows: Vec<Result<Option<ReplicateRow>>> = (0..rc.replicates)
        .into_par_iter()
        .map(|rep| replicate_row(sc, rc, &pop, rep as u64))
        .collect();

    let mut ok = Vec::new();
    let mut failed = 0usize;
    for row in rows {
        match row? {
            Some(r) => ok.push(r),
            None => failed += 1,
        }
    }
    if ok.is_empty() {
        return Err(CcrError::Numerical(format!(
            "all {} replicates failed to converge",
            rc.replicates
        )));
    }

    Ok(EvalReport {
        replicate_count: ok.len(),
        failed_replicates: failed,
        tpr_x: summarize(&ok.iter().map(|r| r.tpr_x).collect::<Vec<_>>()),
        tpr_y: summarize(&ok.iter().map(|r| r.tpr_y).collect::<Vec<_>>()),
        fpr_x: summarize(&ok.iter().map(|r| r.fpr_x).collect::<Vec<_>>()),
        fpr_y: summarize(&ok.iter().map(|r| r.fpr_y).collect::<Vec<_>>()),
        d_u: summarize(&ok.iter().map(|r| r.d_u).collect::<Vec<_>>()),
        d_v: summarize(&ok.iter().map(|r| r.d_v).collect::<Vec<_>>()),
        deltas: summarize_columns(&ok.iter().map(|r| &r.deltas).collect::<Vec<_>>()),
        etas: summarize_columns(&ok.iter().map(|r| &r.etas).collect::<Vec<_>>()),
        group_correlations: summarize_columns(
            &ok.iter().map(|r| &r.group_correlations).collect::<Vec<_>>(),
        ),
    })
}

fn replicate_row(
    sc: &SimScenario,
    rc: &ReplicationConfig,
    pop: &Population,
    rep: u64,
) -> Result<Option<ReplicateRow>> {
    let data = pop
        .sample(derive_seed(sc.seed, &[tag::REPLICATE, rep]))
        .center_within_group();

    if sc.group_count() == 2 {
        let phi = data.phi_tilde(0, 1)?;
        let support_fit = fit(&phi, &rc.ccr)?;
        if !support_fit.converged {
            return Ok(None);
        }
        let mut row = evaluate(&support_fit, pop)?;
        let (deltas, etas) = match rc.diff_rank {
            Some(rd) if rd != rc.ccr.rank => {
                let cfg = CcrConfig {
                    rank: rd,
                    ..rc.ccr.clone()
                };
                let diff_fit = fit(&phi, &cfg)?;
                if !diff_fit.converged {
                    return Ok(None);
                }
                let etas = correlation_differences(&diff_fit, &data)?;
                (diff_fit.deltas, etas)
            }
            _ => {
                let etas = correlation_differences(&support_fit, &data)?;
                (support_fit.deltas, etas)
            }
        };
        row.deltas = deltas;
        row.etas = etas;
        Ok(Some(row))
    } else {
        let stacked = build_stacked_phi(&data)?;
        let mfit = fit_multigroup(&stacked, &rc.ccr)?;
        if !mfit.converged {
            return Ok(None);
        }
        let mut row = evaluate(&mfit, pop)?;
        row.group_correlations = group_score_correlations(&mfit, &data)?;
        row.etas = Vec::new();
        Ok(Some(row))
    }
}

/// One row of a sparsity sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: usize,
    pub mean_delta1: f64,
    pub se: Option<f64>,
    pub failures: usize,
}

/// Mean δ̂₁ as a function of the fitted sparsity level `s1 = s2 = s`.
///
/// Each replicate draws one dataset and fits it at every requested level
/// (common random numbers across levels), so the per-level means are
/// directly comparable.
pub fn sparsity_sweep(
    sc: &SimScenario,
    base: &CcrConfig,
    s_values: &[usize],
    replicates: usize,
) -> Result<Vec<SweepRow>> {
    if replicates == 0 {
        return Err(CcrError::Validation("at least one replicate required".into()));
    }
    if s_values.is_empty() {
        return Err(CcrError::Validation("no sparsity levels requested".into()));
    }
    for &s in s_values {
        CcrConfig::new(base.rank, s, s).validate(sc.p1, sc.p2)?;
    }
    if sc.group_count() != 2 {
        return Err(CcrError::Argument("sparsity sweeps use binary scenarios".into()));
    }
    let pop = build_population(sc)?;

    let per_rep: Vec<Vec<Option<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let data = pop
                .sample(derive_seed(sc.seed, &[tag::REPLICATE, rep as u64]))
                .center_within_group();
            let phi = match data.phi_tilde(0, 1) {
                Ok(p) => p,
                Err(_) => return vec![None; s_values.len()],
            };
            s_values
                .iter()
                .map(|&s| {
                    let cfg = CcrConfig {
                        rank: base.rank,
                        sparsity: (s, s),
                        ..base.clone()
                    };
                    match fit(&phi, &cfg) {
                        Ok(f) if f.converged => Some(f.deltas[0]),
                        _ => None,
                    }
                })
                .collect()
        })
        .collect();

    Ok(s_values
        .iter()
        .enumerate()
        .map(|(col, &s)| {
            let values: Vec<f64> = per_rep.iter().filter_map(|r| r[col]).collect();
            let failures = replicates - values.len();
            let summary = if values.is_empty() {
                MetricSummary {
                    mean: f64::NAN,
                    se: None,
                }
            } else {
                summarize(&values)
            };
            SweepRow {
                s,
                mean_delta1: summary.mean,
                se: summary.se,
                failures,
            }
        })
        .collect())
}

/// Resampling scheme for the variable-selection frequency study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingScheme {
    /// Within-group resampling with replacement, `rounds` times per dataset.
    Bootstrap { rounds: usize },
    /// All n1·n2 leave-two-out splits (binary scenarios).
    LeaveTwoOut,
}

/// Per-variable selection frequencies under a resampling scheme.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionFrequencies {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Expected frequency under uniformly random selection: s1/p1.
    pub reference_x: f64,
    /// Expected frequency under uniformly random selection: s2/p2.
    pub reference_y: f64,
    pub rounds_completed: usize,
    pub rounds_skipped: usize,
}

/// Tallies how often each variable is selected across resampled fits,
/// averaged over `replicates` fresh datasets. Rounds whose fit fails to
/// converge (for example a degenerate bootstrap resample) are skipped and
/// counted.
pub fn resampling_ratios(
    sc: &SimScenario,
    cfg: &CcrConfig,
    scheme: ResamplingScheme,
    replicates: usize,
) -> Result<SelectionFrequencies> {
    if replicates == 0 {
        return Err(CcrError::Validation("at least one replicate required".into()));
    }
    if sc.group_count() != 2 {
        return Err(CcrError::Argument("resampling studies use binary scenarios".into()));
    }
    cfg.validate(sc.p1, sc.p2)?;
    let pop = build_population(sc)?;

    let per_rep: Vec<(Vec<u64>, Vec<u64>, usize, usize)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let data = pop.sample(derive_seed(sc.seed, &[tag::REPLICATE, rep as u64]));
            resample_one(sc, cfg, scheme, &data, rep as u64)
        })
        .collect();

    let mut x_counts = vec![0u64; sc.p1];
    let mut y_counts = vec![0u64; sc.p2];
    let mut completed = 0usize;
    let mut skipped = 0usize;
    for (xc, yc, done, skip) in per_rep {
        for (a, b) in x_counts.iter_mut().zip(xc) {
            *a += b;
        }
        for (a, b) in y_counts.iter_mut().zip(yc) {
            *a += b;
        }
        completed += done;
        skipped += skip;
    }
    if completed == 0 {
        return Err(CcrError::Numerical("every resampling round failed".into()));
    }

    Ok(SelectionFrequencies {
        x: x_counts.iter().map(|&c| c as f64 / completed as f64).collect(),
        y: y_counts.iter().map(|&c| c as f64 / completed as f64).collect(),
        reference_x: cfg.sparsity.0 as f64 / sc.p1 as f64,
        reference_y: cfg.sparsity.1 as f64 / sc.p2 as f64,
        rounds_completed: completed,
        rounds_skipped: skipped,
    })
}

fn resample_one(
    sc: &SimScenario,
    cfg: &CcrConfig,
    scheme: ResamplingScheme,
    data: &GroupedDataset,
    rep: u64,
) -> (Vec<u64>, Vec<u64>, usize, usize) {
    let mut x_counts = vec![0u64; sc.p1];
    let mut y_counts = vec![0u64; sc.p2];
    let mut completed = 0usize;
    let mut skipped = 0usize;

    let mut tally = |selected: Option<(&[usize], &[usize])>| match selected {
        Some((sx, sy)) => {
            for &i in sx {
                x_counts[i] += 1;
            }
            for &j in sy {
                y_counts[j] += 1;
            }
            completed += 1;
        }
        None => skipped += 1,
    };

    match scheme {
        ResamplingScheme::Bootstrap { rounds } => {
            let rows1 = data.group_rows(0).expect("binary dataset");
            let rows2 = data.group_rows(1).expect("binary dataset");
            for round in 0..rounds {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    sc.seed,
                    &[tag::BOOTSTRAP, rep, round as u64],
                ));
                let mut keep = Vec::with_capacity(data.n_obs());
                for pool in [&rows1, &rows2] {
                    for _ in 0..pool.len() {
                        keep.push(pool[rand::Rng::random_range(&mut rng, 0..pool.len())]);
                    }
                }
                let selected = data
                    .retain_rows(&keep)
                    .ok()
                    .map(|d| d.center_within_group())
                    .and_then(|d| d.phi_tilde(0, 1).ok().map(|phi| (d, phi)))
                    .and_then(|(_, phi)| fit(&phi, cfg).ok())
                    .filter(|f| f.converged);
                tally(selected.as_ref().map(|f| (f.selected_x.as_slice(), f.selected_y.as_slice())));
            }
        }
        ResamplingScheme::LeaveTwoOut => {
            let rows1 = data.group_rows(0).expect("binary dataset");
            let rows2 = data.group_rows(1).expect("binary dataset");
            for &i in &rows1 {
                for &j in &rows2 {
                    let keep: Vec<usize> =
                        (0..data.n_obs()).filter(|&r| r != i && r != j).collect();
                    let selected = data
                        .retain_rows(&keep)
                        .ok()
                        .map(|d| d.center_within_group())
                        .and_then(|d| d.phi_tilde(0, 1).ok())
                        .and_then(|phi| fit(&phi, cfg).ok())
                        .filter(|f| f.converged);
                    tally(
                        selected
                            .as_ref()
                            .map(|f| (f.selected_x.as_slice(), f.selected_y.as_slice())),
                    );
                }
            }
        }
    }

    (x_counts, y_counts, completed, skipped)
}
