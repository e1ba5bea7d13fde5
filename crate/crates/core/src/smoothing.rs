//! Automatic smoothing selection by approximate marginal likelihood.
//!
//! The roughness penalty `ω·θᵀRθ` is the log-density of a partially improper
//! Gaussian prior with variance `σ² = 1/(2ω)`. Treating the penalized fit as
//! a Laplace approximation to the posterior, the marginal likelihood
//!
//! ```text
//! ℓ_m(σ²) = −(m/2)·ln σ² + Φ(η̂) − ½·ln det(Ĝ + Q),   Q = R/σ² (θ,θ block)
//! ```
//!
//! is maximised by the fixed point  `σ̂² = θ̂ᵀRθ̂ / (m − ν)`  with
//! `ν = tr[(Ĝ + Q)⁻¹ Q]`, where `Ĝ = −∇²ℓ(η̂)`. The selection loop
//! alternates constrained fits with this variance update until the penalty
//! degrees of freedom and the variance both stabilise.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::constraints::ConstraintMatrix;
use crate::error::{Error, Result};
use crate::model::{self, ModelWorkspace};
use crate::solver::{self, SolveReport, SolverConfig};

/// Smallest admissible prior variance (equivalently `ω ≤ 5·10⁷`).
const SIGMA2_FLOOR: f64 = 1e-8;
/// Largest admissible prior variance, to keep `ω = 1/(2σ²)` positive.
const SIGMA2_CAP: f64 = 1e12;

/// Outer-loop controls for the variance update.
#[derive(Debug, Clone)]
pub struct SmoothingConfig {
    /// Maximum variance updates before accepting the last iterate.
    pub max_outer: usize,
    /// Stop once the penalty degrees of freedom move by less than this.
    pub df_tol: f64,
    /// Stop once the relative variance change falls below this.
    pub sigma2_rel_tol: f64,
    /// Fraction of `|ℓ(η₀)|` the initial penalty is sized to.
    pub init_frac: f64,
    /// Fixed smoothing value; `Some` skips the selection loop entirely.
    pub omega: Option<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            max_outer: 20,
            df_tol: 1.0,
            sigma2_rel_tol: 1e-3,
            init_frac: 0.01,
            omega: None,
        }
    }
}

/// One outer iteration of the selection loop.
#[derive(Debug, Clone)]
pub struct SmoothingStep {
    pub omega: f64,
    pub sigma2: f64,
    /// `ν = tr[(Ĝ+Q)⁻¹Q]` at this iterate.
    pub nu: f64,
    pub penalized_loglik: f64,
    pub loglik: f64,
}

/// Final fit at the selected smoothing value plus the selection trace.
#[derive(Debug, Clone)]
pub struct SmoothingReport {
    pub fit: SolveReport,
    pub omega: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub outer_iterations: usize,
    pub smoothing_converged: bool,
    /// Laplace marginal log-likelihood surrogate at the final fit; `None`
    /// when `Ĝ + Q` is not positive definite.
    pub marginal_loglik: Option<f64>,
    pub trace: Vec<SmoothingStep>,
}

/// Penalty degrees of freedom `ν = tr[(Ĝ + Q)⁻¹ Q]`, where `g_hat = −∇²ℓ`
/// and `Q` embeds `penalty/σ²` in the (θ,θ) block of the full parameter
/// space.
pub fn penalty_degrees_of_freedom(
    g_hat: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    sigma2: f64,
) -> Result<f64> {
    let m = penalty.nrows();
    let v = g_hat.nrows();
    if !sigma2.is_finite() {
        return Ok(0.0);
    }
    let mut a = g_hat.clone();
    for j in 0..m {
        for i in 0..m {
            a[(i, j)] += penalty[(i, j)] / sigma2;
        }
    }
    // Ĝ is not guaranteed positive definite at a boundary solution (a bin
    // with no events contributes no curvature), so Ĝ + Q can be singular.
    // A tiny escalating ridge keeps the trace defined; ν only steers the
    // smoothing fixed point, so the perturbation is immaterial.
    let scale = a
        .diagonal()
        .iter()
        .fold(0.0f64, |acc, d| acc.max(d.abs()))
        .max(1.0);
    let mut ridge = 0.0;
    'attempt: loop {
        let mut k = a.clone();
        if ridge > 0.0 {
            for j in 0..v {
                k[(j, j)] += ridge * scale;
            }
        }
        let lu = k.lu();
        let mut nu = 0.0;
        let mut q_col = DVector::zeros(v);
        for j in 0..m {
            q_col.fill(0.0);
            for i in 0..m {
                q_col[i] = penalty[(i, j)] / sigma2;
            }
            match lu.solve(&q_col) {
                Some(x) => nu += x[j],
                None => {
                    ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
                    if ridge > 1e-2 {
                        return Err(Error::Singular(
                            "Ĝ + Q is singular in the degrees-of-freedom trace".into(),
                        ));
                    }
                    continue 'attempt;
                }
            }
        }
        return Ok(nu);
    }
}

/// `½·ln det(Ĝ + Q)` via Cholesky; `None` when the matrix is not positive
/// definite (the marginal surrogate is then undefined).
fn half_log_det(g_hat: &DMatrix<f64>, penalty: &DMatrix<f64>, sigma2: f64) -> Option<f64> {
    let m = penalty.nrows();
    let mut a = g_hat.clone();
    if sigma2.is_finite() {
        for j in 0..m {
            for i in 0..m {
                a[(i, j)] += penalty[(i, j)] / sigma2;
            }
        }
    }
    let chol = Cholesky::new(a)?;
    Some(chol.l().diagonal().iter().map(|d| d.ln()).sum())
}

fn marginal_surrogate(
    fit: &SolveReport,
    g_hat: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    sigma2: f64,
) -> Option<f64> {
    let m = penalty.nrows() as f64;
    let half_ld = half_log_det(g_hat, penalty, sigma2)?;
    if sigma2.is_finite() {
        Some(-0.5 * m * sigma2.ln() + fit.value - half_ld)
    } else {
        None
    }
}

/// Fits the model with automatic (or fixed) smoothing.
///
/// `events` and `total_time` seed the solver's cold start; each outer
/// iteration warm-starts from the previous fit.
#[allow(clippy::too_many_arguments)]
pub fn select(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    constraints: &ConstraintMatrix,
    solver_cfg: &SolverConfig,
    smoothing_cfg: &SmoothingConfig,
    events: usize,
    total_time: f64,
) -> Result<SmoothingReport> {
    let m = ws.layout().m;
    let penalty_is_zero = penalty.iter().all(|&x| x == 0.0);

    // Fixed smoothing or a structurally empty penalty: one fit, no loop.
    if smoothing_cfg.omega.is_some() || penalty_is_zero {
        let omega = smoothing_cfg.omega.unwrap_or(0.0);
        let fit = solver::solve(
            ws, penalty, omega, constraints, solver_cfg, events, total_time, None,
        )?;
        let sigma2 = if omega > 0.0 { 1.0 / (2.0 * omega) } else { f64::INFINITY };
        let g_hat = -model::hessian(ws, penalty, 0.0, &fit.eta)?;
        let nu = penalty_degrees_of_freedom(&g_hat, penalty, sigma2)?;
        let marginal_loglik = marginal_surrogate(&fit, &g_hat, penalty, sigma2);
        let step = SmoothingStep {
            omega,
            sigma2,
            nu,
            penalized_loglik: fit.value,
            loglik: fit.loglik,
        };
        return Ok(SmoothingReport {
            fit,
            omega,
            sigma2,
            nu,
            outer_iterations: 1,
            smoothing_converged: true,
            marginal_loglik,
            trace: vec![step],
        });
    }

    // Initial ω sized so the penalty is a small fraction of |ℓ| at the cold
    // start. The cold-start θ is constant, so its own roughness θᵀRθ is
    // exactly zero; a reference roughness tr(R)·mean(θ²) stands in for it.
    let (eta0, _, _) = solver::initialize(ws, constraints, events, total_time);
    let ll0 = model::log_likelihood(ws, &eta0)?;
    let theta0 = &eta0[..m];
    let j0 = crate::baseline::penalty_value(theta0);
    let j_ref = {
        let tr: f64 = (0..m).map(|j| penalty[(j, j)]).sum();
        let mean_sq = theta0.iter().map(|t| t * t).sum::<f64>() / m as f64;
        tr * mean_sq
    };
    let j_eff = if j0 > 0.0 { j0 } else { j_ref };
    let mut omega = if j_eff > 0.0 && ll0.abs() > 0.0 {
        (smoothing_cfg.init_frac * ll0.abs() / j_eff).min(1.0 / (2.0 * SIGMA2_FLOOR))
    } else {
        1.0
    };

    let mut trace = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    let mut prev_nu: Option<f64> = None;
    let mut converged = false;
    let mut last: Option<(SolveReport, f64, f64, DMatrix<f64>)> = None;

    let trace_env = std::env::var_os("MCAH_TRACE").is_some();
    for outer in 0..smoothing_cfg.max_outer {
        if trace_env {
            eprintln!("outer {outer}: omega {omega:.6e} warm {}", warm.is_some());
        }
        let fit = solver::solve(
            ws,
            penalty,
            omega,
            constraints,
            solver_cfg,
            events,
            total_time,
            warm.as_deref(),
        )?;
        let sigma2 = 1.0 / (2.0 * omega);
        let g_hat = -model::hessian(ws, penalty, 0.0, &fit.eta)?;
        let nu = penalty_degrees_of_freedom(&g_hat, penalty, sigma2)?;
        trace.push(SmoothingStep {
            omega,
            sigma2,
            nu,
            penalized_loglik: fit.value,
            loglik: fit.loglik,
        });

        let theta = &fit.eta[..m];
        let roughness = crate::baseline::penalty_value(theta);
        let denom = m as f64 - nu;

        warm = Some(fit.eta.clone());
        last = Some((fit, omega, sigma2, g_hat));

        // Degenerate ratio 0/0 (θ̂ in the penalty null space with the
        // penalty absorbing all m degrees of freedom): hold σ² and stop.
        if roughness == 0.0 && denom < 1e-3 {
            converged = true;
            break;
        }
        let sigma2_new = (roughness / denom.max(1e-3)).clamp(SIGMA2_FLOOR, SIGMA2_CAP);

        let df_stable = prev_nu.is_some_and(|p| (nu - p).abs() < smoothing_cfg.df_tol);
        let sigma_stable = (sigma2_new - sigma2).abs() < smoothing_cfg.sigma2_rel_tol * sigma2;
        if df_stable || sigma_stable {
            converged = true;
            break;
        }
        prev_nu = Some(nu);
        omega = 1.0 / (2.0 * sigma2_new);
    }

    let (fit, omega, sigma2, g_hat) = last.expect("at least one smoothing iteration runs");
    let nu = trace.last().map(|s| s.nu).unwrap_or(0.0);
    let marginal_loglik = marginal_surrogate(&fit, &g_hat, penalty, sigma2);
    Ok(SmoothingReport {
        fit,
        omega,
        sigma2,
        nu,
        outer_iterations: trace.len(),
        smoothing_converged: converged,
        marginal_loglik,
        trace,
    })
}
