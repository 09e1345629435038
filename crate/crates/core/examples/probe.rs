use ccr_core::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe(d: &GroupedDataset, label: &str, cells: &[(usize, usize)]) {
    for &(i, k) in cells {
        let lo = lto_delta_samples(d, i, k, 1).unwrap();
        let hi = lto_delta_samples(d, i + 1, k, 1).unwrap();
        let diffs: Vec<f64> = lo.values.iter().zip(&hi.values)
            .filter_map(|(a, b)| match (a, b) { (Some(a), Some(b)) => Some(b - a), _ => None })
            .collect();
        let neg = diffs.iter().filter(|v| **v < 0.0).count();
        let mean: f64 = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let p = sign_flip_pvalue(&diffs, 10000, 1).unwrap();
        println!("{label} cell ({i},{k}): n={} neg={neg} mean={mean:.5} p={p:.4}", diffs.len());
    }
}

fn main() {
    // Pure-noise null at paper scale: p1=18, p2=15, n1=n2=10.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = DMatrix::from_fn(20, 18, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(20, 15, |_, _| rng.random_range(-1.0..1.0));
    let ids: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
    let d = GroupedDataset::new(x, y, ids, vec!["a".into(), "b".into()]).unwrap();
    probe(&d, "noise", &[(1, 1), (1, 5), (1, 15), (2, 3), (5, 5)]);

    // Strong signal c=10: first 3 rows/cols of x,y carry a rank-1 group-difference.
    // Crude construction: x_sig = c * shared t * 1_3 + noise, y similar, sign flips by group.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n1 = 10usize; let n2 = 11usize;
    let mut x = DMatrix::from_fn(n1 + n2, 18, |_, _| rng.random_range(-1.0..1.0));
    let mut y = DMatrix::from_fn(n1 + n2, 15, |_, _| rng.random_range(-1.0..1.0));
    for i in 0..(n1 + n2) {
        let t: f64 = rng.random_range(-2.0..2.0);
        let sign = if i < n1 { 1.0 } else { -1.0 };
        for j in 0..3 {
            x[(i, j)] = 3.0 * t + 0.3 * x[(i, j)];
            y[(i, j)] = 3.0 * sign * t + 0.3 * y[(i, j)];
        }
    }
    let ids: Vec<usize> = (0..n1 + n2).map(|i| usize::from(i >= n1)).collect();
    let d = GroupedDataset::new(x, y, ids, vec!["a".into(), "b".into()]).unwrap();
    probe(&d, "signal", &[(1, 3), (2, 3), (3, 3), (3, 1), (4, 3), (3, 8)]);
}
