//! Design-based variance of a weighted total over `S_B`.
//!
//! For a vector function `g` evaluated on the reference sample,
//!
//! ```text
//! V̂ = N̂_B⁻¹ Σ_i Σ_j (π_ij − π_i π_j)/π_ij · (g_i/π_i)(g_j/π_j)ᵀ
//! ```
//!
//! estimates `V_B(N^{-1/2} Σ_B d_i g_i)`.
//!
//! # SRSWOR in O(n)
//!
//! With `f = n/N`, `π_i = f` and `π_ij = n(n−1)/{N(N−1)}` for `i ≠ j`,
//! the diagonal coefficient is `(π_i − π_i²)/π_i = 1 − f` and every
//! off-diagonal coefficient equals `a = 1 − f²/π_ij = (n − N)/{N(n − 1)}`.
//! Writing `S = Σ g_i`,
//!
//! ```text
//! ΣΣ = f⁻² [ (1 − f) Σ g_i g_iᵀ + a (S Sᵀ − Σ g_i g_iᵀ) ]
//!    = f⁻² (1 − f − a) [ Σ g_i g_iᵀ − S Sᵀ / n ]          (since a = −(1 − f)/(n − 1))
//!    = N (N − n) / {n (n − 1)} · Σ (g_i − ḡ)(g_i − ḡ)ᵀ,
//! ```
//!
//! the familiar `N² (1 − f) s²_g / n`. For `n = 1` only the diagonal term
//! exists and the sum is `(1 − f) f⁻² g gᵀ`.

use nalgebra::DMatrix;

use crate::data::{DesignInfo, SampleB};
use crate::error::{Error, Result};
use crate::par::map_indexed;

fn check_rows(g: &DMatrix<f64>, b: &SampleB) -> Result<()> {
    if g.nrows() != b.n() {
        return Err(Error::dim("design-variance rows (one per S_B unit)", b.n(), g.nrows()));
    }
    Ok(())
}

/// `Σ (g_i − ḡ)(g_i − ḡ)ᵀ`, two-pass.
fn centered_cross(g: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = g.nrows();
    let k = g.ncols();
    let mean = g.row_mean();
    let mut out = DMatrix::zeros(k, k);
    for i in 0..n {
        let e = g.row(i) - &mean;
        out.ger(1.0, &e.transpose(), &e.transpose(), 1.0);
    }
    (out, n)
}

/// SRSWOR closed form.
pub fn srswor_variance(g: &DMatrix<f64>, n: usize, population: usize, n_hat_b: f64) -> Result<DMatrix<f64>> {
    if n == 0 || n > population {
        return Err(Error::Design(format!("SRSWOR requires 1 <= n <= N (n = {n}, N = {population})")));
    }
    if g.nrows() != n {
        return Err(Error::dim("SRSWOR design-variance rows", n, g.nrows()));
    }
    let big_n = population as f64;
    let nf = n as f64;
    if n == 1 {
        let f = nf / big_n;
        let row = g.row(0).transpose();
        return Ok(&row * row.transpose() * ((1.0 - f) / (f * f) / n_hat_b));
    }
    let (cross, _) = centered_cross(g);
    Ok(cross * (big_n * (big_n - nf) / (nf * (nf - 1.0)) / n_hat_b))
}

/// Direct double sum over all pairs. Rows are reduced in parallel and the
/// per-row partial sums added in row order, so the result does not depend
/// on `threads`.
pub fn pairwise_variance<F, J>(g: &DMatrix<f64>, first: F, joint: J, n_hat_b: f64, threads: usize) -> DMatrix<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
    J: Fn(usize, usize) -> f64 + Sync + Send,
{
    let n = g.nrows();
    let k = g.ncols();
    let expanded: Vec<_> = (0..n).map(|i| g.row(i).transpose() / first(i)).collect();
    let rows = map_indexed(n, threads, |i| {
        let pi_i = first(i);
        let mut acc = DMatrix::zeros(k, k);
        for j in 0..n {
            let pij = if i == j { pi_i } else { joint(i, j) };
            let coef = (pij - pi_i * first(j)) / pij;
            if coef != 0.0 {
                acc.ger(coef, &expanded[i], &expanded[j], 1.0);
            }
        }
        acc
    });
    let mut total = DMatrix::zeros(k, k);
    for r in rows {
        total += r;
    }
    total / n_hat_b
}

/// Hájek-type approximation for designs with unknown joint probabilities:
/// `n/(n−1) Σ (1 − π_i) e_i e_iᵀ` with `e_i = g_i/π_i − Ĝ` and `Ĝ` the
/// `(1 − π)`-weighted mean of `g/π`, divided by `N̂_B`. Exact for SRSWOR.
pub fn hajek_variance(g: &DMatrix<f64>, pi: &[f64], n_hat_b: f64) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let k = g.ncols();
    if pi.len() != n {
        return Err(Error::dim("first-order inclusion probabilities", n, pi.len()));
    }
    if let Some(i) = pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::Design(format!(
            "unit {i}: inclusion probability {} outside (0, 1] (weight below 1?)",
            pi[i]
        )));
    }
    if n < 2 {
        return Ok(DMatrix::zeros(k, k));
    }
    let c_sum: f64 = pi.iter().map(|p| 1.0 - p).sum();
    if c_sum == 0.0 {
        return Ok(DMatrix::zeros(k, k));
    }
    let mut center = nalgebra::DVector::zeros(k);
    for i in 0..n {
        center += g.row(i).transpose() * ((1.0 - pi[i]) / pi[i]);
    }
    center /= c_sum;
    let mut out = DMatrix::zeros(k, k);
    for i in 0..n {
        let e = g.row(i).transpose() / pi[i] - &center;
        out.ger(1.0 - pi[i], &e, &e, 1.0);
    }
    Ok(out * (n as f64 / (n as f64 - 1.0) / n_hat_b))
}

/// Design variance of `g` (one row per `S_B` unit) under the sample's design.
pub fn design_variance(g: &DMatrix<f64>, b: &SampleB, threads: usize) -> Result<DMatrix<f64>> {
    check_rows(g, b)?;
    let n_hat_b = b.n_hat();
    match b.design() {
        DesignInfo::Srswor { n, population } => srswor_variance(g, *n, *population, n_hat_b),
        DesignInfo::GeneralHt { inclusion, .. } => Ok(pairwise_variance(
            g,
            |i| inclusion.first(i),
            |i, j| inclusion.joint(i, j),
            n_hat_b,
            threads,
        )),
        DesignInfo::HajekApprox { .. } => {
            let pi: Vec<f64> = b.d().iter().map(|d| 1.0 / d).collect();
            hajek_variance(g, &pi, n_hat_b)
        }
    }
}

/// Scalar convenience wrapper.
pub fn design_variance_scalar(g: &[f64], b: &SampleB, threads: usize) -> Result<f64> {
    let m = DMatrix::from_column_slice(g.len(), 1, g);
    Ok(design_variance(&m, b, threads)?[(0, 0)])
}
