//! Sparsity-level selection: the sequential permutation procedure on
//! leave-two-out covariance-difference increments, and a BIC-style
//! information criterion over the sparsity grid.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::GroupedDataset;
use crate::error::{CcrError, Result};
use crate::estimator::{fit, CcrConfig};
use crate::seeding::{derive_seed, tag};

/// Settings for the sequential permutation selection.
#[derive(Debug, Clone)]
pub struct SpssConfig {
    /// Sign-flip permutations per hypothesis (at least 1000).
    pub permutations: usize,
    /// Stopping significance level, strictly inside (0, 1).
    pub alpha: f64,
    pub rng_seed: u64,
    /// Keep sweeping past the stopping step so the full p-value grid is
    /// available for box plots. Does not change the selection.
    pub full_grid: bool,
}

impl SpssConfig {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            permutations: 100_000,
            alpha: 0.05,
            rng_seed,
            full_grid: false,
        }
    }

    pub fn with_permutations(mut self, permutations: usize) -> Self {
        self.permutations = permutations;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_full_grid(mut self, full_grid: bool) -> Self {
        self.full_grid = full_grid;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.permutations < 1000 {
            return Err(CcrError::Validation(format!(
                "{} permutations; at least 1000 required",
                self.permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CcrError::Validation(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// One sweep's p-values: row `step` holds `p^(i,k)` for fixed levels `k` of
/// the companion axis.
#[derive(Debug, Clone)]
pub struct PvalueGrid {
    /// Sparsity step `i` for each row, in sweep order starting at the rank.
    pub steps: Vec<usize>,
    /// Companion-axis levels `k` labelling the columns.
    pub fixed_levels: Vec<usize>,
    /// `values[row][col]` = p-value at (steps[row], fixed_levels[col]).
    pub values: Vec<Vec<f64>>,
}

/// Outcome of [`spss_select`].
#[derive(Debug, Clone)]
pub struct SpssResult {
    pub selected: (usize, usize),
    pub p_grid_s1: PvalueGrid,
    pub p_grid_s2: PvalueGrid,
    /// Number of leave-two-out splits, `n1·n2`.
    pub lto_split_count: usize,
    /// Split pairs dropped because a fit failed to converge.
    pub excluded_pairs: usize,
    /// The sweep exhausted `p1 − 1` (resp. `p2 − 1`) without stopping.
    pub boundary_s1: bool,
    pub boundary_s2: bool,
}

/// Leave-two-out covariance-difference samples at one sparsity level.
#[derive(Debug, Clone)]
pub struct LtoSamples {
    /// One entry per ordered pair (i ∈ group 1, j ∈ group 2), i-major.
    /// `None` marks a split whose fit did not converge.
    pub values: Vec<Option<f64>>,
    pub n1: usize,
    pub n2: usize,
}

impl LtoSamples {
    pub fn failed(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// For every leave-two-out split (drop one observation from each group),
/// re-center, rebuild Φ̃, fit at `(s1, s2, r)`, and record the fitted
/// covariance difference (the nuclear norm of Φ̂, equal to δ̂₁ when r = 1).
///
/// Splits are ordered i-major over group-1 rows, j-minor over group-2 rows,
/// in dataset row order. Non-convergent fits are recorded as missing.
pub fn lto_delta_samples(
    d: &GroupedDataset,
    s1: usize,
    s2: usize,
    r: usize,
) -> Result<LtoSamples> {
    if d.group_count() != 2 {
        return Err(CcrError::Argument(format!(
            "leave-two-out selection needs exactly 2 groups, dataset has {}",
            d.group_count()
        )));
    }
    let rows1 = d.group_rows(0)?;
    let rows2 = d.group_rows(1)?;
    let (n1, n2) = (rows1.len(), rows2.len());
    if n1 < 3 || n2 < 3 {
        return Err(CcrError::Validation(format!(
            "group sizes ({n1}, {n2}) too small; each leave-two-out split must retain at least 2 per group"
        )));
    }
    let cfg = CcrConfig::new(r, s1, s2);
    cfg.validate(d.p1(), d.p2())?;

    let pairs: Vec<(usize, usize)> = rows1
        .iter()
        .flat_map(|&i| rows2.iter().map(move |&j| (i, j)))
        .collect();
    let values: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(drop1, drop2)| {
            let keep: Vec<usize> = (0..d.n_obs()).filter(|&i| i != drop1 && i != drop2).collect();
            let sub = d.retain_rows(&keep).ok()?.center_within_group();
            let phi = sub.phi_tilde(0, 1).ok()?;
            let f = fit(&phi, &cfg).ok()?;
            if f.converged {
                Some(f.deltas.iter().sum())
            } else {
                None
            }
        })
        .collect();

    Ok(LtoSamples { values, n1, n2 })
}

/// One-sided sign-flip permutation p-value for the mean of `differences`.
///
/// The observed statistic is the plain mean; each permutation flips the sign
/// of every entry independently and recomputes the mean. Returns
/// `(#{permuted mean ≥ observed} + 1) / (permutations + 1)`; the add-one
/// correction keeps Monte Carlo p-values away from exact zero and shifts the
/// plain proportion by less than 1e−5 at the default permutation count.
pub fn sign_flip_pvalue(differences: &[f64], permutations: usize, seed: u64) -> Result<f64> {
    if differences.is_empty() {
        return Err(CcrError::Validation("empty difference vector".into()));
    }
    if permutations == 0 {
        return Err(CcrError::Validation("at least one permutation required".into()));
    }
    let observed_sum: f64 = differences.iter().sum();
    let len = differences.len();
    let words = len.div_ceil(64);

    // Fixed-size chunks with per-chunk derived streams: the count is
    // identical no matter how the chunks are scheduled across threads.
    const CHUNK: usize = 8192;
    let chunks = permutations.div_ceil(CHUNK);
    let exceed: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tag::PERMUTATION, c as u64]));
            let in_chunk = CHUNK.min(permutations - c * CHUNK);
            let mut count = 0u64;
            let mut bits = vec![0u64; words];
            for _ in 0..in_chunk {
                for b in bits.iter_mut() {
                    *b = rand::Rng::random::<u64>(&mut rng);
                }
                let mut sum = 0.0;
                for (idx, v) in differences.iter().enumerate() {
                    let flip = (bits[idx >> 6] >> (idx & 63)) & 1 == 1;
                    sum += if flip { -v } else { *v };
                }
                if sum >= observed_sum {
                    count += 1;
                }
            }
            count
        })
        .sum();

    Ok((exceed as f64 + 1.0) / (permutations as f64 + 1.0))
}

struct LtoCache<'a> {
    data: &'a GroupedDataset,
    rank: usize,
    cells: HashMap<(usize, usize), Arc<LtoSamples>>,
}

impl<'a> LtoCache<'a> {
    fn get(&mut self, s1: usize, s2: usize) -> Result<Arc<LtoSamples>> {
        if let Some(hit) = self.cells.get(&(s1, s2)) {
            return Ok(hit.clone());
        }
        let samples = Arc::new(lto_delta_samples(self.data, s1, s2, self.rank)?);
        self.cells.insert((s1, s2), samples.clone());
        Ok(samples)
    }
}

/// Sequential permutation selection of the sparsity pair `(s1, s2)`.
///
/// For `s1`, starting at the rank: every companion level `k` yields paired
/// per-split differences `D_ℓ = δ̂₁^(i+1,k) − δ̂₁^(i,k)` over the shared
/// leave-two-out splits, tested one-sided by sign flips. While every p-value
/// stays at or below `alpha` the step advances; the first step with some
/// p-value above `alpha` is selected. The `s2` sweep is the mirror image and
/// reuses the same splits; its permutation streams are offset from the `s1`
/// sweep's, so one seed reproduces the whole run.
pub fn spss_select(d: &GroupedDataset, r: usize, cfg: &SpssConfig) -> Result<SpssResult> {
    cfg.validate()?;
    if d.group_count() != 2 {
        return Err(CcrError::Argument(format!(
            "sparsity selection needs exactly 2 groups, dataset has {}",
            d.group_count()
        )));
    }
    let (p1, p2) = (d.p1(), d.p2());
    if r >= p1 || r >= p2 {
        return Err(CcrError::Validation(format!(
            "rank {r} leaves no room to sweep sparsity over 1..{p1} × 1..{p2}"
        )));
    }
    let mut cache = LtoCache {
        data: d,
        rank: r,
        cells: HashMap::new(),
    };

    let s1 = sweep(&mut cache, Axis::S1, p1, p2, cfg)?;
    let s2 = sweep(&mut cache, Axis::S2, p1, p2, cfg)?;
    let splits = {
        let any = cache.cells.values().next().expect("sweep populated the cache");
        any.n1 * any.n2
    };
    let excluded = explored_exclusions(&cache);

    Ok(SpssResult {
        selected: (s1.selected, s2.selected),
        p_grid_s1: s1.grid,
        p_grid_s2: s2.grid,
        lto_split_count: splits,
        excluded_pairs: excluded,
        boundary_s1: s1.boundary,
        boundary_s2: s2.boundary,
    })
}

fn explored_exclusions(cache: &LtoCache) -> usize {
    cache.cells.values().map(|s| s.failed()).sum()
}

#[derive(Clone, Copy, PartialEq)]
enum Axis {
    S1,
    S2,
}

struct SweepOutcome {
    selected: usize,
    grid: PvalueGrid,
    boundary: bool,
}

fn sweep(
    cache: &mut LtoCache,
    axis: Axis,
    p1: usize,
    p2: usize,
    cfg: &SpssConfig,
) -> Result<SweepOutcome> {
    let r = cache.rank;
    let (own_dim, other_dim) = match axis {
        Axis::S1 => (p1, p2),
        Axis::S2 => (p2, p1),
    };
    let axis_tag = match axis {
        Axis::S1 => 1u64,
        Axis::S2 => 2u64,
    };
    let fixed_levels: Vec<usize> = (r..=other_dim).collect();
    let mut steps = Vec::new();
    let mut values = Vec::new();
    let mut selected = None;
    let mut boundary = false;

    for i in r..=own_dim.saturating_sub(1) {
        let mut row = Vec::with_capacity(fixed_levels.len());
        for &k in &fixed_levels {
            let (lo, hi) = match axis {
                Axis::S1 => (cache.get(i, k)?, cache.get(i + 1, k)?),
                Axis::S2 => (cache.get(k, i)?, cache.get(k, i + 1)?),
            };
            // Per-split paired differences; splits missing on either side
            // are excluded pairwise.
            let diffs: Vec<f64> = lo
                .values
                .iter()
                .zip(&hi.values)
                .filter_map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(b - a),
                    _ => None,
                })
                .collect();
            let p = if diffs.is_empty() {
                // Every split failed at this cell: no evidence of improvement.
                1.0
            } else {
                let stream = derive_seed(cfg.rng_seed, &[axis_tag, i as u64, k as u64]);
                sign_flip_pvalue(&diffs, cfg.permutations, stream)?
            };
            row.push(p);
        }
        let stop = row.iter().any(|&p| p > cfg.alpha);
        steps.push(i);
        values.push(row);
        if stop && selected.is_none() {
            selected = Some(i);
            if !cfg.full_grid {
                break;
            }
        }
    }

    let selected = selected.unwrap_or_else(|| {
        boundary = true;
        own_dim - 1
    });

    Ok(SweepOutcome {
        selected,
        grid: PvalueGrid {
            steps,
            fixed_levels,
            values,
        },
        boundary,
    })
}

/// Information-criterion surface over the sparsity grid.
#[derive(Debug, Clone)]
pub struct IcSurface {
    /// `values[s1 − 1][s2 − 1]`; infeasible or failed cells hold +∞.
    pub values: Vec<Vec<f64>>,
    pub argmin: (usize, usize),
    /// Total sample size N used in the penalty.
    pub n: usize,
}

/// Evaluates `IC(s1, s2) = −N·ln‖P_Û Φ̃ P_V̂‖_F + (s1 + s2)·ln N` at every
/// feasible cell (`s1, s2 ≥ r`), reusing one Φ̃ computed from the full
/// sample. Cells whose fit does not converge, or whose projected norm is
/// zero, receive +∞. The argmin is the first minimal cell in row-major
/// order.
pub fn ic_surface(d: &GroupedDataset, r: usize) -> Result<IcSurface> {
    if d.group_count() != 2 {
        return Err(CcrError::Argument(format!(
            "the information criterion needs exactly 2 groups, dataset has {}",
            d.group_count()
        )));
    }
    let centered;
    let data = if d.is_centered() {
        d
    } else {
        centered = d.center_within_group();
        &centered
    };
    let phi = data.phi_tilde(0, 1)?;
    let n = data.n_obs() as f64;
    let (p1, p2) = (phi.p1(), phi.p2());
    if r > p1.min(p2) {
        return Err(CcrError::Dimension(format!(
            "rank {r} exceeds min dimension {}",
            p1.min(p2)
        )));
    }

    let cells: Vec<(usize, usize)> =
        (1..=p1).flat_map(|s1| (1..=p2).map(move |s2| (s1, s2))).collect();
    let computed: Vec<f64> = cells
        .par_iter()
        .map(|&(s1, s2)| {
            if s1.min(s2) < r {
                return f64::INFINITY;
            }
            let cfg = CcrConfig::new(r, s1, s2);
            match fit(&phi, &cfg) {
                Ok(f) if f.converged => {
                    let norm = f.phi_hat.norm();
                    if norm > 0.0 {
                        -n * norm.ln() + (s1 + s2) as f64 * n.ln()
                    } else {
                        f64::INFINITY
                    }
                }
                _ => f64::INFINITY,
            }
        })
        .collect();

    let mut values = vec![vec![f64::INFINITY; p2]; p1];
    for (&(s1, s2), &ic) in cells.iter().zip(&computed) {
        values[s1 - 1][s2 - 1] = ic;
    }
    let mut argmin = None;
    let mut best = f64::INFINITY;
    for s1 in 1..=p1 {
        for s2 in 1..=p2 {
            let v = values[s1 - 1][s2 - 1];
            if v < best {
                best = v;
                argmin = Some((s1, s2));
            }
        }
    }
    let argmin = argmin.ok_or_else(|| {
        CcrError::Numerical("information criterion undefined on the whole grid".into())
    })?;

    Ok(IcSurface {
        values,
        argmin,
        n: data.n_obs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exact_pvalue(diffs: &[f64]) -> f64 {
        // Exhaustive sign enumeration oracle.
        let observed: f64 = diffs.iter().sum();
        let n = diffs.len();
        let mut hits = 0usize;
        for mask in 0..(1usize << n) {
            let sum: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, v)| if mask >> i & 1 == 1 { -v } else { *v })
                .sum();
            if sum >= observed {
                hits += 1;
            }
        }
        hits as f64 / (1usize << n) as f64
    }

    #[test]
    fn pvalue_is_one_when_all_differences_are_zero() {
        let p = sign_flip_pvalue(&[0.0; 6], 2000, 4).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pvalue_matches_exhaustive_enumeration_all_ones() {
        // Exact exceedance proportion for (1,1,1,1) is 1/16.
        let p = sign_flip_pvalue(&[1.0; 4], 100_000, 9).unwrap();
        assert!((p - 1.0 / 16.0).abs() <= 0.01, "p = {p}");
    }

    #[test]
    fn pvalue_matches_exhaustive_enumeration_mixed() {
        let diffs = [2.0, -1.0, 0.5];
        let exact = exact_pvalue(&diffs);
        let p = sign_flip_pvalue(&diffs, 100_000, 10).unwrap();
        assert!((p - exact).abs() <= 0.02, "p = {p}, exact = {exact}");
    }

    #[test]
    fn pvalue_is_invariant_to_input_order() {
        let diffs = [0.4, -0.2, 1.5, 0.3, -0.9];
        let mut rev = diffs;
        rev.reverse();
        let a = sign_flip_pvalue(&diffs, 20_000, 5).unwrap();
        let b = sign_flip_pvalue(&rev, 20_000, 5).unwrap();
        // Same distribution of permuted means; values differ only by Monte
        // Carlo noise under different bit-to-entry assignments.
        assert!((a - b).abs() <= 0.02);
    }

    #[test]
    fn pvalue_is_monotone_in_the_observed_statistic() {
        let base = [0.3, -0.1, 0.2, 0.05, -0.25, 0.4];
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.5).collect();
        let p_base = sign_flip_pvalue(&base, 50_000, 77).unwrap();
        let p_shift = sign_flip_pvalue(&shifted, 50_000, 77).unwrap();
        assert!(p_shift <= p_base, "{p_shift} > {p_base}");
    }

    #[test]
    fn ic_penalty_arithmetic() {
        // Two cells with identical fitted norm differ exactly by the
        // penalty increment.
        let n: f64 = 40.0;
        let norm: f64 = 3.0;
        let ic = |s1: usize, s2: usize| -n * norm.ln() + (s1 + s2) as f64 * n.ln();
        assert_abs_diff_eq!(ic(4, 5) - ic(3, 3), 3.0 * n.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ic_closed_form_on_diagonal_phi() {
        // Dataset engineered so Φ̃ = diag(10, 0): group 1 contributes
        // x1·y1 = 10 on average, group 2 contributes nothing.
        let x = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, -2.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        let y = DMatrix::from_row_slice(4, 2, &[5.0, 0.0, -5.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let d = GroupedDataset::new(x, y, vec![0, 0, 1, 1], vec!["a".into(), "b".into()])
            .unwrap()
            .center_within_group();
        let phi = d.phi_tilde(0, 1).unwrap();
        assert_abs_diff_eq!(phi.phi[(0, 0)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.phi.norm(), 10.0, epsilon = 1e-12);

        let surface = ic_surface(&d, 1).unwrap();
        let n = 4.0f64;
        let expected = -n * 10.0f64.ln() + 2.0 * n.ln();
        assert_abs_diff_eq!(surface.values[0][0], expected, epsilon = 1e-10);
        // The projected norm is 10 in every feasible cell, so the penalty
        // makes (1, 1) the unique argmin.
        assert_eq!(surface.argmin, (1, 1));
    }

    fn toy_dataset(n1: usize, n2: usize, seed: u64) -> GroupedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n1 + n2;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let ids: Vec<usize> = (0..n).map(|i| usize::from(i >= n1)).collect();
        GroupedDataset::new(x, y, ids, vec!["g1".into(), "g2".into()]).unwrap()
    }

    #[test]
    fn lto_produces_one_value_per_split() {
        let d = toy_dataset(3, 3, 1);
        let samples = lto_delta_samples(&d, 2, 2, 1).unwrap();
        assert_eq!(samples.values.len(), 9);
        assert_eq!((samples.n1, samples.n2), (3, 3));
    }

    #[test]
    fn lto_matches_independent_pipeline() {
        let d = toy_dataset(3, 3, 2);
        let samples = lto_delta_samples(&d, 2, 2, 1).unwrap();
        // Oracle: re-run two splits by hand (drop rows, center, Φ̃, fit).
        for (i, j) in [(0usize, 0usize), (2, 1)] {
            let drop1 = i; // group-1 rows are 0..3
            let drop2 = 3 + j;
            let keep: Vec<usize> = (0..6).filter(|&r| r != drop1 && r != drop2).collect();
            let sub = d.retain_rows(&keep).unwrap().center_within_group();
            let phi = sub.phi_tilde(0, 1).unwrap();
            let f = fit(&phi, &CcrConfig::new(1, 2, 2)).unwrap();
            let expected = f.deltas[0];
            let got = samples.values[i * 3 + j].unwrap();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn lto_rejects_tiny_groups() {
        let d = toy_dataset(2, 3, 3);
        assert!(matches!(
            lto_delta_samples(&d, 1, 1, 1),
            Err(CcrError::Validation(_))
        ));
    }

    #[test]
    fn spss_on_null_data_selects_the_rank_step() {
        // Duplicated groups: Φ̃ increments carry no signal, so the first
        // tested step already fails to improve.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block_x = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let block_y = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut x = DMatrix::zeros(10, 4);
        let mut y = DMatrix::zeros(10, 4);
        for i in 0..5 {
            x.set_row(i, &block_x.row(i));
            x.set_row(i + 5, &block_x.row(i));
            y.set_row(i, &block_y.row(i));
            y.set_row(i + 5, &block_y.row(i));
        }
        let ids = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let d = GroupedDataset::new(x, y, ids, vec!["g1".into(), "g2".into()]).unwrap();
        let cfg = SpssConfig::new(11).with_permutations(1000);
        let result = spss_select(&d, 1, &cfg).unwrap();
        assert_eq!(result.selected, (1, 1));
        assert_eq!(result.lto_split_count, 25);
    }

    #[test]
    fn spss_respects_alpha_boundaries() {
        let d = toy_dataset(4, 4, 8);
        // Near-one alpha: every p-value ≤ alpha, so both sweeps run to the
        // boundary p − 1.
        let hi = SpssConfig::new(3).with_permutations(1000).with_alpha(0.9999999);
        let r_hi = spss_select(&d, 1, &hi).unwrap();
        assert_eq!(r_hi.selected, (2, 2));
        assert!(r_hi.boundary_s1 && r_hi.boundary_s2);
        // Near-zero alpha: the first step already has p > alpha.
        let lo = SpssConfig::new(3).with_permutations(1000).with_alpha(1e-9);
        let r_lo = spss_select(&d, 1, &lo).unwrap();
        assert_eq!(r_lo.selected, (1, 1));
    }

    #[test]
    fn spss_is_reproducible_from_one_seed() {
        let d = toy_dataset(4, 4, 13);
        let cfg = SpssConfig::new(99).with_permutations(1000);
        let a = spss_select(&d, 1, &cfg).unwrap();
        let b = spss_select(&d, 1, &cfg).unwrap();
        assert_eq!(a.selected, b.selected);
        assert_eq!(a.p_grid_s1.values, b.p_grid_s1.values);
        assert_eq!(a.p_grid_s2.values, b.p_grid_s2.values);
    }

    #[test]
    fn full_grid_covers_every_step() {
        let d = toy_dataset(4, 4, 21);
        let cfg = SpssConfig::new(7).with_permutations(1000).with_full_grid(true);
        let r = spss_select(&d, 1, &cfg).unwrap();
        assert_eq!(r.p_grid_s1.steps, vec![1, 2]);
        assert_eq!(r.p_grid_s2.steps, vec![1, 2]);
    }
}
