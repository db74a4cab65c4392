//! k-nearest-neighbour KL divergence estimator for samples.
//!
//! For samples X₁..Xₙ ~ p and Y₁..Yₘ ~ q in ℝᵈ,
//!
//! ```text
//! KL(p‖q) ≈ (d/n) Σᵢ log(νₖ(i)/ρₖ(i)) + log(m/(n−1))
//! ```
//!
//! where ρₖ(i) is the distance from Xᵢ to its k-th nearest neighbour inside
//! the X sample (excluding itself) and νₖ(i) the k-th nearest distance to the
//! Y sample. Coincident points (zero distance) are skipped in the neighbour
//! ranking so that duplicated samples do not send the estimate to −∞; when
//! that happens a warning is logged once per call.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

const DIST_FLOOR: f64 = 1e-12;

/// Distance from `x` to its k-th nearest point of `pts`, skipping
/// zero-distance matches. `skip_self` additionally ignores index `self_idx`.
/// Returns `(distance, coincidences_skipped)`.
fn kth_distance(
    x: &[f64],
    pts: ArrayView2<f64>,
    k: usize,
    self_idx: Option<usize>,
) -> (f64, usize) {
    // Max-heap of the k smallest positive distances, kept as a sorted insert
    // into a tiny buffer (k is small: typically 5).
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    let mut skipped = 0usize;
    for (j, row) in pts.outer_iter().enumerate() {
        if Some(j) == self_idx {
            continue;
        }
        let mut d2 = 0.0;
        for (a, b) in x.iter().zip(row.iter()) {
            let diff = a - b;
            d2 += diff * diff;
        }
        if d2 == 0.0 {
            skipped += 1;
            continue;
        }
        if best.len() < k {
            best.push(d2);
            if best.len() == k {
                best.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }
        } else if d2 < best[k - 1] {
            let pos = best.partition_point(|&v| v < d2);
            best.insert(pos, d2);
            best.pop();
        }
    }
    let d2 = if best.len() == k {
        best[k - 1]
    } else {
        // Everything coincided; fall back to the floor.
        DIST_FLOOR * DIST_FLOOR
    };
    (d2.sqrt().max(DIST_FLOOR), skipped)
}

/// k-NN estimate of KL(p‖q) from samples `p` (n×d) and `q` (m×d).
///
/// Requires `1 ≤ k < n` and `k ≤ m`; both sample sets must share the
/// dimension d. The estimate is asymptotically unbiased but noisy at small n;
/// it can legitimately be slightly negative when p ≈ q.
pub fn knn_kl(p: ArrayView2<f64>, q: ArrayView2<f64>, k: usize) -> Result<f64> {
    let (n, d) = (p.nrows(), p.ncols());
    let m = q.nrows();
    if d == 0 || q.ncols() != d {
        return Err(Error::Shape(format!(
            "knn_kl dimension mismatch: p is {}-dim, q is {}-dim",
            d,
            q.ncols()
        )));
    }
    if k == 0 {
        return Err(Error::Domain("knn_kl needs k >= 1".into()));
    }
    if n < 2 || k >= n || k > m {
        return Err(Error::Domain(format!(
            "knn_kl needs k < n and k <= m (k={k}, n={n}, m={m})"
        )));
    }
    let rows: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi: Vec<f64> = p.row(i).to_vec();
            let (rho, s1) = kth_distance(&xi, p, k, Some(i));
            let (nu, s2) = kth_distance(&xi, q, k, None);
            ((nu / rho).ln(), s1 + s2)
        })
        .collect();
    let skipped: usize = rows.iter().map(|r| r.1).sum();
    if skipped > 0 {
        log::warn!("knn_kl skipped {skipped} coincident point pairs in neighbour ranking");
    }
    let sum: f64 = rows.iter().map(|r| r.0).sum();
    Ok((d as f64 / n as f64) * sum + (m as f64 / (n as f64 - 1.0)).ln())
}
