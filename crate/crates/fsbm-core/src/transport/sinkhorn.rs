//! Log-domain Sinkhorn iterations with ε-scaling.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Validated pairwise cost matrix: finite, non-negative, non-empty.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    c: Array2<f64>,
}

impl CostMatrix {
    /// Wrap an explicit matrix, rejecting NaN/∞/negative entries.
    pub fn new(c: Array2<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Shape("cost matrix must be non-empty".into()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cost matrix has non-finite entries".into()));
        }
        if c.iter().any(|v| *v < 0.0) {
            return Err(Error::Domain("cost matrix has negative entries".into()));
        }
        Ok(Self { c })
    }

    /// Pairwise squared Euclidean costs between two point sets (n×d, m×d).
    pub fn squared_euclidean(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::Shape(format!(
                "point dimension mismatch: {} vs {}",
                a.ncols(),
                b.ncols()
            )));
        }
        if a.nrows() == 0 || b.nrows() == 0 {
            return Err(Error::Shape("empty point set".into()));
        }
        let mut c = Array2::zeros((a.nrows(), b.nrows()));
        for (i, p) in a.outer_iter().enumerate() {
            for (j, q) in b.outer_iter().enumerate() {
                let mut s = 0.0;
                for (x, y) in p.iter().zip(q.iter()) {
                    let dlt = x - y;
                    s += dlt * dlt;
                }
                c[(i, j)] = s;
            }
        }
        Self::new(c)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.c.view()
    }

    pub fn nrows(&self) -> usize {
        self.c.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.c.ncols()
    }

    /// Largest entry (used to normalize scales before sharp-ε solves).
    pub fn max_entry(&self) -> f64 {
        self.c.iter().cloned().fold(0.0, f64::max)
    }

    /// Divide all entries by `s` (s > 0).
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Domain("cost scale must be positive".into()));
        }
        Self::new(&self.c / s)
    }
}

/// An (approximately) optimal entropic transport plan with uniform marginals.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// Plan entries, total mass 1 at convergence.
    pub plan: Array2<f64>,
    /// Prescribed row marginal (uniform 1/n).
    pub row_marginal: Array1<f64>,
    /// Prescribed column marginal (uniform 1/m).
    pub col_marginal: Array1<f64>,
    /// Whether the marginal tolerance was met before the iteration cap.
    pub converged: bool,
    /// Total full sweeps performed (across ε-scaling levels).
    pub iterations: usize,
    /// L1 marginal violation at exit.
    pub marginal_error: f64,
    /// Dual objective after each sweep at the final ε level. Sinkhorn is
    /// exact coordinate ascent on the dual, so this is non-decreasing.
    pub dual_objective: Vec<f64>,
}

impl TransportPlan {
    /// Linear transport cost ⟨C, π⟩ of this plan.
    pub fn transport_cost(&self, cost: &CostMatrix) -> Result<f64> {
        if cost.view().dim() != self.plan.dim() {
            return Err(Error::Shape("plan/cost dimension mismatch".into()));
        }
        Ok((&self.plan * &cost.view()).sum())
    }
}

fn logsumexp(row: ArrayView1<f64>) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Solve the entropic problem at a single fixed ε starting from the given
/// potentials. Returns the number of sweeps used; fills `duals` with the dual
/// objective after each sweep.
#[allow(clippy::too_many_arguments)]
fn sweeps_at_eps(
    c: ArrayView2<f64>,
    lmu: &Array1<f64>,
    lnu: &Array1<f64>,
    eps: f64,
    tol: f64,
    max_iter: usize,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    duals: Option<&mut Vec<f64>>,
) -> (usize, f64, bool) {
    let (n, m) = c.dim();
    let mut scratch = Array1::zeros(m.max(n));
    let mut duals_out = duals;
    let mut err = f64::INFINITY;
    for it in 0..max_iter {
        // f_i ← −ε log Σ_j exp(ln ν_j + (g_j − C_ij)/ε)
        for i in 0..n {
            for j in 0..m {
                scratch[j] = lnu[j] + (g[j] - c[(i, j)]) / eps;
            }
            f[i] = -eps * logsumexp(scratch.slice(ndarray::s![..m]));
        }
        // g_j ← −ε log Σ_i exp(ln μ_i + (f_i − C_ij)/ε)
        for j in 0..m {
            for i in 0..n {
                scratch[i] = lmu[i] + (f[i] - c[(i, j)]) / eps;
            }
            g[j] = -eps * logsumexp(scratch.slice(ndarray::s![..n]));
        }
        // After the g-update columns are tight; measure the row violation.
        let mut row_err = 0.0;
        let mut mass = 0.0;
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..m {
                row_sum += (lmu[i] + lnu[j] + (f[i] + g[j] - c[(i, j)]) / eps).exp();
            }
            row_err += (row_sum - lmu[i].exp()).abs();
            mass += row_sum;
        }
        err = row_err;
        if let Some(d) = duals_out.as_deref_mut() {
            // ⟨f,μ⟩ + ⟨g,ν⟩ − ε(mass(π) − 1); coordinate ascent ⇒ non-decreasing.
            let fm: f64 = f
                .iter()
                .zip(lmu.iter())
                .map(|(fi, lm)| fi * lm.exp())
                .sum();
            let gn: f64 = g
                .iter()
                .zip(lnu.iter())
                .map(|(gj, ln)| gj * ln.exp())
                .sum();
            d.push(fm + gn - eps * (mass - 1.0));
        }
        if err < tol {
            return (it + 1, err, true);
        }
    }
    (max_iter, err, false)
}

/// Log-domain Sinkhorn at a single fixed ε with uniform marginals.
///
/// Exposed separately from [`sinkhorn_plan`] because the dual-monotonicity
/// guarantee only holds within one ε level.
pub fn sinkhorn_fixed_eps(
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    solve(cost, epsilon, max_iter, tol, false)
}

/// Log-domain Sinkhorn with ε-scaling: starts at 10× the target ε and halves
/// per level until the target is reached, warm-starting the potentials.
///
/// Marginals are uniform. Non-convergence within `max_iter` sweeps per level
/// is reported through `converged = false` on the result, not an error.
pub fn sinkhorn_plan(
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    solve(cost, epsilon, max_iter, tol, true)
}

fn solve(
    cost: &CostMatrix,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
    scale_eps: bool,
) -> Result<TransportPlan> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Domain("tol must be positive and max_iter nonzero".into()));
    }
    let c = cost.view();
    let (n, m) = c.dim();
    let mu = Array1::from_elem(n, 1.0 / n as f64);
    let nu = Array1::from_elem(m, 1.0 / m as f64);
    let lmu = mu.mapv(f64::ln);
    let lnu = nu.mapv(f64::ln);

    let mut levels = vec![epsilon];
    if scale_eps {
        let mut e = 10.0 * epsilon;
        while e > epsilon * 1.0001 {
            levels.push(e);
            e *= 0.5;
        }
        levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    }

    let mut f = Array1::zeros(n);
    let mut g = Array1::zeros(m);
    let mut total_iters = 0;
    let mut duals = Vec::new();
    let mut err = f64::INFINITY;
    let mut converged = false;
    let last = levels.len() - 1;
    for (li, &eps) in levels.iter().enumerate() {
        let dual_sink = if li == last { Some(&mut duals) } else { None };
        let (iters, e, ok) = sweeps_at_eps(c, &lmu, &lnu, eps, tol, max_iter, &mut f, &mut g, dual_sink);
        total_iters += iters;
        if li == last {
            err = e;
            converged = ok;
        }
    }

    let mut plan = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            plan[(i, j)] = (lmu[i] + lnu[j] + (f[i] + g[j] - c[(i, j)]) / epsilon).exp();
        }
    }
    Ok(TransportPlan {
        plan,
        row_marginal: mu,
        col_marginal: nu,
        converged,
        iterations: total_iters,
        marginal_error: err,
        dual_objective: duals,
    })
}

/// Primal objective ⟨C,π⟩ + ε·KL(π | μ⊗ν) of an arbitrary plan (0·log 0 = 0;
/// the KL uses the unnormalized form Σ π log(π/ρ) − Σπ + Σρ so that plans with
/// off-unit mass are still comparable).
pub fn primal_objective(
    cost: &CostMatrix,
    plan: ArrayView2<f64>,
    mu: ArrayView1<f64>,
    nu: ArrayView1<f64>,
    epsilon: f64,
) -> f64 {
    let c = cost.view();
    let mut lin = 0.0;
    let mut kl = 1.0; // Σρ = 1 for probability marginals
    for i in 0..plan.nrows() {
        for j in 0..plan.ncols() {
            let p = plan[(i, j)];
            lin += c[(i, j)] * p;
            if p > 0.0 {
                kl += p * (p / (mu[i] * nu[j])).ln() - p;
            }
        }
    }
    lin + epsilon * kl
}
