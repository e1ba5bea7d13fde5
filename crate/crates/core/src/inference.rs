//! Asymptotic inference corrected for active constraints.
//!
//! At a constrained optimum some inequalities `m_bᵀη ≥ 0` hold with equality;
//! the sampling distribution of the estimator is then degenerate along the
//! normals of those active rows. With `U` an orthonormal basis of the null
//! space of the active constraint matrix `M_A`, the corrected covariance is
//!
//! ```text
//! V = U (Uᵀ (−∇²Φ(η̂)) U)⁻¹ Uᵀ,
//! ```
//!
//! which is positive semidefinite, vanishes along boundary directions (those
//! coefficients are flagged instead of given a z-statistic), and reduces to
//! the usual inverse information when no constraint is active.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::baseline::BinGrid;
use crate::constraints::ConstraintMatrix;
use crate::data::{BlockLayout, CovariateProfile, ParamVector};
use crate::error::{Error, Result};
use crate::model;

/// Absolute slack threshold (scaled by each row's coefficient magnitude)
/// below which a constraint counts as active.
const ACTIVE_SLACK_TOL: f64 = 1e-6;
/// Relative eigenvalue threshold separating the null space of `M_AᵀM_A`.
const NULL_EIG_REL_TOL: f64 = 1e-10;
/// Relative variance threshold below which a coefficient is reported as
/// pinned to the constraint boundary.
const BOUNDARY_VAR_REL_TOL: f64 = 1e-10;
/// Relative eigenvalue threshold below which a projected-information
/// direction is treated as carrying no information at all.
const FLAT_EIG_REL_TOL: f64 = 1e-10;
/// Relative magnitude beyond which a negative projected eigenvalue marks a
/// genuine descent direction (the point is not a maximum) rather than
/// convergence noise.
const NEGATIVE_CURV_REL_TOL: f64 = 1e-8;
/// Sweep budget for the Jacobi eigensolver; cyclic Jacobi reaches machine
/// precision in well under this on any symmetric matrix of this size.
const JACOBI_MAX_SWEEPS: usize = 50;
/// Off-diagonal Frobenius mass, relative to the whole matrix, at which the
/// Jacobi iteration counts as diagonalised.
const JACOBI_REL_TOL: f64 = 1e-14;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations,
/// returning `(eigenvalues, eigenvectors)` with the eigenvector of `λ_j` in
/// column `j`. Jacobi converges unconditionally on symmetric input, where
/// shifted tridiagonal QR — the usual library default — can stall on tightly
/// clustered spectra and quietly emit NaN; a failed decomposition here would
/// corrupt every reported standard error downstream, so robustness beats
/// speed.
fn jacobi_eigen(sym: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = sym.nrows();
    if sym.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular(
            "information matrix has non-finite entries".into(),
        ));
    }
    let mut a = sym.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    let frob2: f64 = a.iter().map(|x| x * x).sum::<f64>();
    let tol2 = JACOBI_REL_TOL * JACOBI_REL_TOL * frob2.max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off2 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off2 += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        if off2 <= tol2 {
            return Ok((DVector::from_fn(n, |i, _| a[(i, i)]), q));
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                // Rotation angle that zeroes a_pr; the guarded quotient keeps
                // t = tan(angle) stable for any diagonal gap.
                let theta = (a[(r, r)] - a[(p, p)]) / (2.0 * apr);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = a[(p, p)];
                let arr = a[(r, r)];
                a[(p, p)] = app - t * apr;
                a[(r, r)] = arr + t * apr;
                a[(p, r)] = 0.0;
                a[(r, p)] = 0.0;
                for i in 0..n {
                    if i == p || i == r {
                        continue;
                    }
                    let aip = a[(i, p)];
                    let air = a[(i, r)];
                    a[(i, p)] = c * aip - s * air;
                    a[(p, i)] = a[(i, p)];
                    a[(i, r)] = s * aip + c * air;
                    a[(r, i)] = a[(i, r)];
                }
                for i in 0..n {
                    let qip = q[(i, p)];
                    let qir = q[(i, r)];
                    q[(i, p)] = c * qip - s * qir;
                    q[(i, r)] = s * qip + c * qir;
                }
            }
        }
    }
    Err(Error::Singular(
        "eigendecomposition of the information matrix did not converge".into(),
    ))
}

/// Indices of constraints active at the solution: tiny slack *and* a
/// multiplier clearly above the converged complementarity noise floor
/// (`λ_b > √mu_tol`).
pub fn active_set(
    constraints: &ConstraintMatrix,
    slack: &[f64],
    lambda: &[f64],
    mu_tol: f64,
) -> Vec<usize> {
    let dual_floor = mu_tol.sqrt();
    constraints
        .rows()
        .iter()
        .enumerate()
        .filter(|(b, row)| {
            slack[*b] < ACTIVE_SLACK_TOL * (1.0 + row.scale()) && lambda[*b] > dual_floor
        })
        .map(|(b, _)| b)
        .collect()
}

/// Orthonormal basis of `{x : M_A x = 0}` via the symmetric eigendecomposition
/// of `M_AᵀM_A` (an empty `M_A` yields the identity).
pub fn null_space_basis(m_active: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let v = m_active.ncols();
    if m_active.nrows() == 0 {
        return Ok(DMatrix::identity(v, v));
    }
    let gram = m_active.transpose() * m_active;
    let (eigenvalues, eigenvectors) = jacobi_eigen(&gram)?;
    let max_eig = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = NULL_EIG_REL_TOL * max_eig.max(f64::MIN_POSITIVE);
    let null_cols: Vec<usize> = (0..v).filter(|&j| eigenvalues[j] <= tol).collect();
    let mut u = DMatrix::zeros(v, null_cols.len());
    for (out_j, &j) in null_cols.iter().enumerate() {
        u.set_column(out_j, &eigenvectors.column(j));
    }
    Ok(u)
}

/// Active-constraint-corrected covariance `U (Uᵀ A U)⁺ Uᵀ` with
/// `A = −∇²Φ(η̂)`, inverted on the positive-curvature eigenspace of the
/// projected information. Directions whose curvature vanishes relative to
/// the largest eigenvalue carry no information about the estimand — the
/// canonical case is a logistic coefficient drifting off under separation —
/// so they are dropped from the inverse; coefficients pinned to them then
/// show near-zero variance and surface through the boundary flag instead of
/// quoting a meaningless interval. A clearly negative eigenvalue means the
/// point is not a local maximum and is reported as an error.
pub fn covariance(neg_hess_phi: &DMatrix<f64>, m_active: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let v = neg_hess_phi.nrows();
    let u = null_space_basis(m_active)?;
    if u.ncols() == 0 {
        return Ok(DMatrix::zeros(v, v));
    }
    let projected = u.transpose() * neg_hess_phi * &u;
    let projected = (&projected + projected.transpose()) * 0.5;
    let (eigenvalues, eigenvectors) = jacobi_eigen(&projected)?;
    let max_eig = eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(Error::Singular(
            "projected information has no positive-curvature direction; \
             standard errors are unavailable at this solution"
                .into(),
        ));
    }
    let flat_tol = FLAT_EIG_REL_TOL * max_eig;
    let neg_tol = NEGATIVE_CURV_REL_TOL * max_eig;
    let k = eigenvalues.len();
    let mut reduced = DMatrix::zeros(k, k);
    for (j, &e) in eigenvalues.iter().enumerate() {
        if e < -neg_tol {
            return Err(Error::Singular(
                "projected information has a negative-curvature eigendirection; \
                 the point is not a local maximum, so standard errors are \
                 unavailable"
                    .into(),
            ));
        }
        if e > flat_tol {
            let q = eigenvectors.column(j);
            reduced.ger(1.0 / e, &q, &q, 1.0);
        }
    }
    Ok(&u * reduced * u.transpose())
}

/// Which part of the model a summarised coefficient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefBlock {
    /// Logistic incidence coefficient γ (reported with an odds ratio).
    Incidence,
    /// Time-varying latency coefficient β (a hazard difference).
    LatencyTimeVarying,
    /// Time-fixed latency coefficient α (a hazard difference).
    LatencyFixed,
}

/// One row of the coefficient table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub block: CoefBlock,
    pub estimate: f64,
    pub se: f64,
    /// `estimate / se`; absent for boundary-pinned coefficients.
    pub z: Option<f64>,
    /// `Φ(−|z|)`, the one-sided tail probability.
    pub p_one_sided: Option<f64>,
    /// `2·Φ(−|z|)`.
    pub p_two_sided: Option<f64>,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// `exp(estimate)` (odds ratio) for incidence coefficients.
    pub exp_estimate: Option<f64>,
    pub exp_ci_lower: Option<f64>,
    pub exp_ci_upper: Option<f64>,
    /// True when the corrected variance vanishes along this coordinate.
    pub boundary: bool,
}

/// Names for the regression blocks, in model order.
pub struct CoefficientNames<'a> {
    pub x_names: &'a [String],
    pub w_names: &'a [String],
    pub z_names: &'a [String],
}

/// Builds the β/α/γ coefficient table at confidence `level` (e.g. 0.95).
pub fn summarize_coefficients(
    layout: BlockLayout,
    names: &CoefficientNames,
    eta: &[f64],
    cov: &DMatrix<f64>,
    level: f64,
) -> Vec<CoefficientSummary> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z_crit = normal.inverse_cdf(0.5 + level / 2.0);
    let max_var = (0..layout.v())
        .map(|j| cov[(j, j)])
        .fold(0.0f64, f64::max);
    let boundary_tol = BOUNDARY_VAR_REL_TOL * max_var.max(f64::MIN_POSITIVE);

    let mut rows = Vec::with_capacity(layout.p + layout.r + layout.q);
    let blocks = [
        (layout.beta_offset(), layout.p, CoefBlock::LatencyTimeVarying, names.x_names),
        (layout.alpha_offset(), layout.r, CoefBlock::LatencyFixed, names.w_names),
        (layout.gamma_offset(), layout.q, CoefBlock::Incidence, names.z_names),
    ];
    for (offset, len, block, block_names) in blocks {
        for k in 0..len {
            let j = offset + k;
            let estimate = eta[j];
            let var = cov[(j, j)].max(0.0);
            let boundary = cov[(j, j)] <= boundary_tol;
            let se = if boundary { 0.0 } else { var.sqrt() };
            let (z, p1, p2) = if boundary {
                (None, None, None)
            } else {
                let z = estimate / se;
                let p1 = normal.cdf(-z.abs());
                (Some(z), Some(p1), Some(2.0 * p1))
            };
            let ci_lower = estimate - z_crit * se;
            let ci_upper = estimate + z_crit * se;
            let (exp_estimate, exp_lo, exp_hi) = if block == CoefBlock::Incidence {
                (Some(estimate.exp()), Some(ci_lower.exp()), Some(ci_upper.exp()))
            } else {
                (None, None, None)
            };
            let name = block_names
                .get(k)
                .cloned()
                .unwrap_or_else(|| format!("{block:?}[{k}]"));
            rows.push(CoefficientSummary {
                name,
                block,
                estimate,
                se,
                z,
                p_one_sided: p1,
                p_two_sided: p2,
                ci_lower,
                ci_upper,
                exp_estimate,
                exp_ci_lower: exp_lo,
                exp_ci_upper: exp_hi,
                boundary,
            });
        }
    }
    rows
}

/// Pointwise standard errors of the baseline coefficients θ.
pub fn theta_standard_errors(cov: &DMatrix<f64>, m: usize) -> Vec<f64> {
    (0..m).map(|j| cov[(j, j)].max(0.0).sqrt()).collect()
}

/// A mixture survival estimate with its delta-method confidence band.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Delta-method pointwise band for the mixture survival
/// `S~(t) = π(z)S(t) + 1 − π(z)` of one covariate profile. The gradient is
/// `−π·S·U(t)` on the latency block and `π(1−π)(S−1)·z` on γ; bands are
/// clipped to [0, 1].
pub fn predict_survival(
    grid: &BinGrid,
    profile: &CovariateProfile,
    layout: BlockLayout,
    eta: &ParamVector,
    cov: &DMatrix<f64>,
    times: &[f64],
    level: f64,
) -> Result<Vec<SurvivalPoint>> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z_crit = normal.inverse_cdf(0.5 + level / 2.0);
    let v = layout.v();
    let pi = model::incidence_prob(&eta.gamma, &profile.z);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let s = model::survival_at(grid, profile, &eta.theta, &eta.beta, &eta.alpha, t)?;
        let estimate = pi * s + 1.0 - pi;
        let mut g = DVector::zeros(v);
        let psi = grid.basis_integral_at(t)?;
        let lat_coef = -pi * s;
        for (j, &p) in psi.iter().enumerate() {
            g[j] = lat_coef * p;
        }
        for (k, &x) in profile.x_integral_at(t).iter().enumerate() {
            g[layout.beta_offset() + k] = lat_coef * x;
        }
        for (k, &w) in profile.w.iter().enumerate() {
            g[layout.alpha_offset() + k] = lat_coef * w * t;
        }
        let gamma_coef = pi * (1.0 - pi) * (s - 1.0);
        for (k, &z) in profile.z.iter().enumerate() {
            g[layout.gamma_offset() + k] = gamma_coef * z;
        }
        let var = (cov * &g).dot(&g);
        let se = var.max(0.0).sqrt();
        out.push(SurvivalPoint {
            t,
            estimate,
            se,
            lower: (estimate - z_crit * se).clamp(0.0, 1.0),
            upper: (estimate + z_crit * se).clamp(0.0, 1.0),
        });
    }
    Ok(out)
}
