//! Sampling endpoint index pairs from a transport plan.

use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{Error, Result};

/// Draws `count` index pairs (i, j) i.i.d. with probability proportional to
/// `plan[i, j]`. The plan only needs non-negative entries and positive total
/// mass; it does not have to be normalized.
pub fn sample_pairs_from_plan<R: Rng + ?Sized>(
    plan: ArrayView2<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let (n, m) = (plan.nrows(), plan.ncols());
    if n == 0 || m == 0 {
        return Err(Error::Shape("sample_pairs_from_plan: empty plan".into()));
    }
    let mut cumsum = Vec::with_capacity(n * m);
    let mut acc = 0.0f64;
    for &w in plan.iter() {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Domain(format!(
                "sample_pairs_from_plan: plan entries must be finite and >= 0, got {w}"
            )));
        }
        acc += w;
        cumsum.push(acc);
    }
    if acc <= 0.0 {
        return Err(Error::Domain(
            "sample_pairs_from_plan: plan has zero total mass".into(),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * acc;
        // First index with cumsum > u; cumsum is non-decreasing.
        let flat = cumsum.partition_point(|&c| c <= u).min(n * m - 1);
        out.push((flat / m, flat % m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frequencies(pairs: &[(usize, usize)], n: usize, m: usize) -> Vec<f64> {
        let mut counts = vec![0.0; n * m];
        for &(i, j) in pairs {
            counts[i * m + j] += 1.0;
        }
        let total = pairs.len() as f64;
        counts.iter().map(|c| c / total).collect()
    }

    #[test]
    fn diagonal_plan_draws_only_diagonal() {
        let plan = array![[0.5, 0.0], [0.0, 0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_pairs_from_plan(plan.view(), 10_000, &mut rng).unwrap();
        let f = frequencies(&pairs, 2, 2);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 0.0);
        assert!((f[0] - 0.5).abs() < 0.02, "f00 = {}", f[0]);
        assert!((f[3] - 0.5).abs() < 0.02, "f11 = {}", f[3]);
    }

    /// Frequencies follow the normalized plan: with entries
    /// [[0.45, 0.05], [0.05, 0.45]] the off-diagonal rate is 0.05 each.
    #[test]
    fn frequencies_proportional_to_entries() {
        let plan = array![[0.45, 0.05], [0.05, 0.45]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = sample_pairs_from_plan(plan.view(), 40_000, &mut rng).unwrap();
        let f = frequencies(&pairs, 2, 2);
        for (got, want) in f.iter().zip([0.45, 0.05, 0.05, 0.45]) {
            assert!((got - want).abs() < 0.01, "freq {got} vs {want}");
        }
    }

    /// Scaling the whole plan leaves the sampling distribution unchanged.
    #[test]
    fn scale_invariance() {
        let plan = array![[0.45, 0.05], [0.05, 0.45]];
        let scaled = plan.mapv(|x| x * 7.3);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let p1 = sample_pairs_from_plan(plan.view(), 5_000, &mut r1).unwrap();
        let p2 = sample_pairs_from_plan(scaled.view(), 5_000, &mut r2).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn rejects_zero_mass_negative_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zero = array![[0.0, 0.0], [0.0, 0.0]];
        assert!(matches!(
            sample_pairs_from_plan(zero.view(), 1, &mut rng),
            Err(Error::Domain(_))
        ));
        let neg = array![[0.5, -0.1], [0.1, 0.5]];
        assert!(matches!(
            sample_pairs_from_plan(neg.view(), 1, &mut rng),
            Err(Error::Domain(_))
        ));
        let empty = ndarray::Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            sample_pairs_from_plan(empty.view(), 1, &mut rng),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rectangular_plans_index_correctly() {
        let plan = array![[0.0, 0.0, 1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs = sample_pairs_from_plan(plan.view(), 100, &mut rng).unwrap();
        assert!(pairs.iter().all(|&p| p == (0, 2)));
    }
}
