//! Polarizing mean-field drift for the opinion scene.
//!
//! Every agent receives the same random information vector ξ per time step
//! and moves toward the (normalized) opinions of agents it agrees with and
//! away from those it disagrees with — agreement meaning the same sign of
//! the projection onto ξ. Left uncontrolled this segregates the population
//! into two opposing clusters.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean-field drift `f(x) = mean_y a(x, y, ξ)·ȳ` over the batch, where
/// `a = +1` when sign⟨x, ξ⟩ = sign⟨y, ξ⟩ and −1 otherwise, and
/// `ȳ = y/‖y‖^{1/2}` (zero opinions contribute ȳ = 0).
///
/// Returns one drift row per batch row.
pub fn polarize_drift(
    batch: ArrayView2<'_, f64>,
    xi: ArrayView1<'_, f64>,
) -> Result<Array2<f64>> {
    let (n, d) = batch.dim();
    if n == 0 {
        return Err(Error::Domain("polarize drift needs a non-empty batch".into()));
    }
    if xi.len() != d {
        return Err(Error::Shape(format!(
            "information vector has length {}, batch dimension is {d}",
            xi.len()
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("polarize drift inputs must be finite".into()));
    }

    // Group the normalized opinions by the sign of ⟨y, ξ⟩; the drift for a
    // query x is then (Σ same-sign ȳ − Σ other-signs ȳ)/n, an O(n·d) form
    // of the pairwise mean.
    let mut sums = [
        Array1::<f64>::zeros(d), // sign −1
        Array1::<f64>::zeros(d), // sign 0
        Array1::<f64>::zeros(d), // sign +1
    ];
    let signs: Vec<f64> = batch
        .axis_iter(Axis(0))
        .map(|y| sign0(y.dot(&xi)))
        .collect();
    for (y, &s) in batch.axis_iter(Axis(0)).zip(signs.iter()) {
        let norm = y.dot(&y).sqrt();
        if norm > 0.0 {
            let scale = norm.powf(-0.5);
            let idx = (s as isize + 1) as usize;
            sums[idx].scaled_add(scale, &y);
        }
    }
    let total = &sums[0] + &sums[1] + &sums[2];

    let mut out = Array2::zeros((n, d));
    for (i, &s) in signs.iter().enumerate() {
        let idx = (s as isize + 1) as usize;
        // same-sign − everyone-else = 2·same-sign − total
        let drift = (2.0 * &sums[idx] - &total) / n as f64;
        out.row_mut(i).assign(&drift);
    }
    Ok(out)
}
