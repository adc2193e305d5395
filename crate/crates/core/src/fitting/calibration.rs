//! Calibration estimator of θ: solve
//!
//! ```text
//! g(θ) = Σ_A (1, x_i) / π^A(x_i, y_i; θ) − Σ_B d_i (1, x_i) = 0
//! ```
//!
//! by minimizing `g(θ)ᵀg(θ)` from several starting points. `x` here is the
//! full covariate vector, so with one instrument the system is square.
//! Converged solutions are clustered; more than one cluster means the
//! system has multiple roots.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::optim::levenberg_marquardt;
use super::{FitResult, Multiplicity};
use crate::data::{check_same_schema, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::model::Theta;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    pub n_starts: usize,
    pub seed: u64,
    /// `‖g‖` at or below this counts as a root.
    pub root_tol: f64,
    /// Smallest `‖g‖` above this over all starts is a failure.
    pub no_root_tol: f64,
    /// Roots closer than this (Euclidean, in θ) are the same root.
    pub cluster_radius: f64,
    /// Standard deviation of the random start perturbations.
    pub start_spread: f64,
    pub max_iter: usize,
    /// Worker threads for the multistart loop (1 = sequential).
    pub threads: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_starts: 20,
            seed: 0x5eed_ca1b,
            root_tol: 1e-6,
            no_root_tol: 1e-4,
            cluster_radius: 1e-3,
            start_spread: 1.0,
            max_iter: 300,
            threads: 1,
        }
    }
}

/// Constant part `Σ_B d_i (1, x_i)`.
fn reference_totals(b: &SampleB) -> DVector<f64> {
    let p = b.schema().p();
    let mut t = DVector::zeros(p + 1);
    for (x, d) in b.rows() {
        t[0] += d;
        for (k, v) in x.values().iter().enumerate() {
            t[k + 1] += d * v;
        }
    }
    t
}

/// `(g(θ), ∂g/∂θ)`, or `None` when a weight overflows.
fn equations(theta: &Theta, a: &SampleA, totals: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let p = a.schema().p();
    let q = theta.dim();
    let mut g = -totals.clone();
    let mut jac = DMatrix::zeros(p + 1, q);
    let mut dh = DVector::zeros(q);
    for (x, y) in a.rows() {
        // 1/π^A = 1 + e^{η}, ∂(1/π^A)/∂θ = e^{η} (1, x_shared, y)
        let eta = theta.eta_x(x) + theta.gamma * y;
        let e = eta.exp();
        if !e.is_finite() {
            return None;
        }
        let w = 1.0 + e;
        g[0] += w;
        for (k, v) in x.values().iter().enumerate() {
            g[k + 1] += w * v;
        }
        dh[0] = e;
        for (k, v) in x.shared().enumerate() {
            dh[k + 1] = e * v;
        }
        dh[q - 1] = e * y;
        for (r, zr) in std::iter::once(1.0).chain(x.values().iter().copied()).enumerate() {
            for c in 0..q {
                jac[(r, c)] += zr * dh[c];
            }
        }
    }
    Some((g, jac))
}

/// `g(θ)`.
pub fn calibration_equations(theta: &Theta, a: &SampleA, b: &SampleB) -> Result<DVector<f64>> {
    check_same_schema(a, b)?;
    theta.check(a.schema())?;
    equations(theta, a, &reference_totals(b))
        .map(|(g, _)| g)
        .ok_or_else(|| Error::InvalidInput("calibration weights overflow at this θ".into()))
}

/// `∂g/∂θ`, a `(p + 1) × dim θ` matrix.
pub fn calibration_jacobian(theta: &Theta, a: &SampleA, b: &SampleB) -> Result<DMatrix<f64>> {
    check_same_schema(a, b)?;
    theta.check(a.schema())?;
    equations(theta, a, &reference_totals(b))
        .map(|(_, j)| j)
        .ok_or_else(|| Error::InvalidInput("calibration weights overflow at this θ".into()))
}

/// Multistart calibration fit.
///
/// Starts alternate between perturbations of `center` (typically the
/// pseudo-likelihood estimate) and perturbations of 0; start 0 is `center`
/// itself and start 1 is 0. The reported parameter is the root closest to
/// `center` (or with the smallest residual when no center is given);
/// `roots` lists one representative per cluster.
pub fn fit_theta_calibration(
    a: &SampleA,
    b: &SampleB,
    center: Option<&Theta>,
    opts: &CalibrationOptions,
) -> Result<FitResult<Theta>> {
    check_same_schema(a, b)?;
    if opts.n_starts == 0 {
        return Err(Error::InvalidInput("calibration needs at least one start".into()));
    }
    let q = a.schema().n_shared() + 2;
    let zero = Theta::zeros(q - 2);
    let center = match center {
        Some(c) => {
            c.check(a.schema())?;
            c.clone()
        }
        None => zero.clone(),
    };
    let totals = reference_totals(b);

    let starts: Vec<DVector<f64>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.n_starts)
            .map(|k| {
                let base = if k % 2 == 0 { center.to_vector() } else { zero.to_vector() };
                if k < 2 {
                    base
                } else {
                    base.map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + opts.start_spread * z
                    })
                }
            })
            .collect()
    };

    let rj = |v: &DVector<f64>| equations(&Theta::from_slice(v.as_slice()), a, &totals);
    let runs = map_indexed(starts.len(), opts.threads, |k| {
        levenberg_marquardt(rj, starts[k].clone(), opts.max_iter, opts.root_tol * 1e-3)
    });

    let mut best_norm = f64::INFINITY;
    let mut best: Option<(DVector<f64>, usize)> = None;
    let mut iterations = 0;
    let mut clusters: Vec<(DVector<f64>, f64)> = Vec::new();
    for run in runs.into_iter().flatten() {
        iterations += run.iterations;
        if run.residual_norm < best_norm {
            best_norm = run.residual_norm;
            best = Some((run.x.clone(), run.iterations));
        }
        if run.residual_norm <= opts.root_tol {
            match clusters
                .iter_mut()
                .find(|(rep, _)| (rep - &run.x).norm() <= opts.cluster_radius)
            {
                Some(cluster) => {
                    if run.residual_norm < cluster.1 {
                        *cluster = (run.x, run.residual_norm);
                    }
                }
                None => clusters.push((run.x, run.residual_norm)),
            }
        }
    }
    if best_norm > opts.no_root_tol {
        return Err(Error::NoRoot { min_norm: best_norm });
    }

    let (params, converged, multiplicity) = if clusters.is_empty() {
        let (x, _) = best.expect("finite residual implies a run");
        (x, false, Multiplicity::Unknown)
    } else {
        let c = center.to_vector();
        let chosen = clusters
            .iter()
            .min_by(|l, r| (&l.0 - &c).norm().total_cmp(&(&r.0 - &c).norm()))
            .expect("nonempty")
            .0
            .clone();
        let m = if clusters.len() == 1 {
            Multiplicity::Unique
        } else {
            Multiplicity::MultipleRoots(clusters.len())
        };
        (chosen, true, m)
    };

    let theta = Theta::from_slice(params.as_slice());
    let (g, jac) = equations(&theta, a, &totals).expect("finite at a converged point");
    Ok(FitResult {
        objective_value: g.norm_squared(),
        gradient_norm: g.amax(),
        iterations,
        converged,
        multiplicity,
        // Gauss–Newton curvature of gᵀg
        info_matrix: jac.transpose() * &jac * 2.0,
        warnings: Vec::new(),
        roots: clusters
            .into_iter()
            .map(|(x, _)| Theta::from_slice(x.as_slice()))
            .collect(),
        params: theta,
    })
}
