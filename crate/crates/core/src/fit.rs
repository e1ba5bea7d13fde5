//! End-to-end fitting pipeline: bin construction, constrained maximum
//! penalized likelihood, smoothing selection, and corrected inference.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::{penalty_matrix, BinGrid};
use crate::constraints::ConstraintMatrix;
use crate::data::{BlockLayout, CovariateProfile, Dataset, ParamVector};
use crate::error::{Error, Result};
use crate::inference::{
    self, CoefficientNames, CoefficientSummary, SurvivalPoint,
};
use crate::model::{self, ModelWorkspace};
use crate::smoothing::{self, SmoothingConfig};
use crate::solver::SolverConfig;

/// Fitting controls. `m` (a bin-count target) takes precedence over
/// `n_obs` (observations per bin); with neither set the bin count defaults
/// to `round(n^{1/3})`.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub n_obs: Option<usize>,
    pub m: Option<usize>,
    pub solver: SolverConfig,
    pub smoothing: SmoothingConfig,
    /// Confidence level for intervals (e.g. 0.95).
    pub level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_obs: None,
            m: None,
            solver: SolverConfig::default(),
            smoothing: SmoothingConfig::default(),
            level: 0.95,
        }
    }
}

/// Solver and smoothing-loop diagnostics of a completed fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub mu: f64,
    pub dual_residual: f64,
    pub primal_residual: f64,
    pub smoothing_iterations: usize,
    pub smoothing_converged: bool,
}

/// One point of the fitted baseline hazard curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselinePoint {
    pub t: f64,
    pub hazard: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// A fitted mixture cure additive hazards model with its corrected
/// covariance and summaries.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub grid: BinGrid,
    pub layout: BlockLayout,
    pub estimate: ParamVector,
    pub eta: Vec<f64>,
    /// Dual multipliers and slacks per deduplicated constraint row.
    pub lambda: Vec<f64>,
    pub slack: Vec<f64>,
    pub constraint_labels: Vec<String>,
    pub omega: f64,
    pub sigma2: f64,
    pub nu: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub marginal_loglik: Option<f64>,
    pub covariance: DMatrix<f64>,
    pub active_rows: Vec<usize>,
    pub active_labels: Vec<String>,
    pub coefficients: Vec<CoefficientSummary>,
    pub theta_se: Vec<f64>,
    pub level: f64,
    pub diagnostics: FitDiagnostics,
}

/// Builds the bin grid per the options (explicit `m`, explicit `n_obs`, or
/// the `round(n^{1/3})` default).
pub fn build_grid(dataset: &Dataset, options: &FitOptions) -> Result<BinGrid> {
    if let Some(m) = options.m {
        BinGrid::build_with_bin_target(dataset, m)
    } else if let Some(n_obs) = options.n_obs {
        BinGrid::build(dataset, n_obs)
    } else {
        let m = (dataset.n() as f64).cbrt().round().max(1.0) as usize;
        BinGrid::build_with_bin_target(dataset, m)
    }
}

/// Fits the model: constrained MPL with smoothing selection, followed by
/// active-constraint-corrected covariance and coefficient summaries.
pub fn fit_dataset(dataset: &Dataset, options: &FitOptions) -> Result<FittedModel> {
    let grid = build_grid(dataset, options)?;
    let ws = ModelWorkspace::new(dataset, &grid)?;
    let constraints = ConstraintMatrix::build(dataset, &grid)?;
    let penalty = penalty_matrix(grid.m());
    let events = dataset.n_events();
    let total_time: f64 = dataset.subjects.iter().map(|s| s.observed_time()).sum();

    let selection = smoothing::select(
        &ws,
        &penalty,
        &constraints,
        &options.solver,
        &options.smoothing,
        events,
        total_time,
    )?;
    let fit = &selection.fit;

    let active_rows = inference::active_set(
        &constraints,
        &fit.slack,
        &fit.lambda,
        options.solver.mu_tol,
    );
    let m_active = constraints.dense_rows(&active_rows);
    let neg_hess_phi = -model::hessian(&ws, &penalty, selection.omega, &fit.eta)?;
    let covariance = inference::covariance(&neg_hess_phi, &m_active)?;

    let layout = ws.layout();
    let names = CoefficientNames {
        x_names: &dataset.x_names,
        w_names: &dataset.w_names,
        z_names: &dataset.z_names,
    };
    let coefficients =
        inference::summarize_coefficients(layout, &names, &fit.eta, &covariance, options.level);
    let theta_se = inference::theta_standard_errors(&covariance, layout.m);
    let active_labels: Vec<String> = active_rows
        .iter()
        .map(|&b| constraints.rows()[b].label.clone())
        .collect();
    let constraint_labels: Vec<String> =
        constraints.rows().iter().map(|r| r.label.clone()).collect();

    Ok(FittedModel {
        grid,
        layout,
        estimate: ParamVector::from_flat(layout, &fit.eta),
        eta: fit.eta.clone(),
        lambda: fit.lambda.clone(),
        slack: fit.slack.clone(),
        constraint_labels,
        omega: selection.omega,
        sigma2: selection.sigma2,
        nu: selection.nu,
        loglik: fit.loglik,
        penalized_loglik: fit.value,
        marginal_loglik: selection.marginal_loglik,
        covariance,
        active_rows,
        active_labels,
        coefficients,
        theta_se,
        level: options.level,
        diagnostics: FitDiagnostics {
            iterations: fit.iterations,
            mu: fit.mu,
            dual_residual: fit.dual_residual,
            primal_residual: fit.primal_residual,
            smoothing_iterations: selection.outer_iterations,
            smoothing_converged: selection.smoothing_converged,
        },
    })
}

impl FittedModel {
    /// Fitted baseline hazard with pointwise Wald bands at bin midpoints
    /// (the lower band is clipped at zero: the hazard is nonnegative).
    pub fn baseline_curve(&self) -> Vec<BaselinePoint> {
        let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal");
        let z_crit =
            statrs::distribution::ContinuousCDF::inverse_cdf(&normal, 0.5 + self.level / 2.0);
        (0..self.layout.m)
            .map(|u| {
                let hazard = self.estimate.theta[u];
                let se = self.theta_se[u];
                BaselinePoint {
                    t: self.grid.midpoint(u),
                    hazard,
                    se,
                    lower: (hazard - z_crit * se).max(0.0),
                    upper: hazard + z_crit * se,
                }
            })
            .collect()
    }

    /// Mixture survival curve with delta-method bands for one covariate
    /// profile. Times beyond `upper·(1 + extrapolation_cap)` are refused:
    /// the baseline hazard is unidentified past the data.
    pub fn predict(
        &self,
        profile: &CovariateProfile,
        times: &[f64],
        extrapolation_cap: f64,
    ) -> Result<Vec<SurvivalPoint>> {
        if profile.z.len() != self.layout.q {
            return Err(Error::Config(format!(
                "profile has {} incidence covariates, the model expects {}",
                profile.z.len(),
                self.layout.q
            )));
        }
        if profile.w.len() != self.layout.r {
            return Err(Error::Config(format!(
                "profile has {} time-fixed covariates, the model expects {}",
                profile.w.len(),
                self.layout.r
            )));
        }
        if self.layout.p > 0
            && (profile.tv_values.is_empty()
                || profile.tv_values.iter().any(|row| row.len() != self.layout.p))
        {
            return Err(Error::Config(format!(
                "profile must carry a schedule of {} time-varying covariates",
                self.layout.p
            )));
        }
        let horizon = self.grid.upper() * (1.0 + extrapolation_cap);
        let tol = 1e-9 * self.grid.upper().max(1.0);
        if let Some(&bad) = times.iter().find(|&&t| t > horizon + tol) {
            return Err(Error::Config(format!(
                "prediction time {bad} exceeds the fitted horizon {horizon}; \
                 raise the extrapolation cap to extrapolate"
            )));
        }
        inference::predict_survival(
            &self.grid,
            profile,
            self.layout,
            &self.estimate,
            &self.covariance,
            times,
            self.level,
        )
    }

    /// Incidence probability π(z) under the fitted incidence model.
    pub fn incidence(&self, z: &[f64]) -> f64 {
        model::incidence_prob(&self.estimate.gamma, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::simgen::{simulate_dataset, Scenario};
    use approx::assert_relative_eq;

    fn small_fit() -> (Dataset, FittedModel) {
        let sc = Scenario { n: 120, seed: 31, censor_prop: 0.3, ..Scenario::default() };
        let (data, _) = simulate_dataset(&sc);
        let fitted = fit_dataset(&data, &FitOptions::default()).unwrap();
        (data, fitted)
    }

    #[test]
    fn default_grid_uses_cube_root_rule() {
        let (data, fitted) = small_fit();
        let expected = (data.n() as f64).cbrt().round() as usize;
        assert_eq!(fitted.layout.m, expected);
        assert_eq!(fitted.layout.p, 1);
        assert_eq!(fitted.layout.r, 2);
        assert_eq!(fitted.layout.q, 2);
    }

    #[test]
    fn fit_converges_with_certified_diagnostics() {
        let (_, fitted) = small_fit();
        assert!(fitted.diagnostics.mu < 1e-8);
        assert!(fitted.diagnostics.smoothing_converged);
        assert!(fitted.estimate.theta.iter().all(|&t| t >= 0.0));
        assert!(fitted.omega > 0.0);
        assert_eq!(fitted.coefficients.len(), 5);
        assert_eq!(fitted.theta_se.len(), fitted.layout.m);
        assert!(fitted.loglik <= 0.0);
        assert!(fitted.penalized_loglik <= fitted.loglik + 1e-12);
        // Covariance is symmetric PSD on its diagonal.
        for j in 0..fitted.layout.v() {
            assert!(fitted.covariance[(j, j)] >= -1e-10);
        }
    }

    #[test]
    fn explicit_bin_controls_are_honored() {
        let sc = Scenario { n: 90, seed: 8, ..Scenario::default() };
        let (data, _) = simulate_dataset(&sc);
        let opts = FitOptions { m: Some(3), ..FitOptions::default() };
        let fitted = fit_dataset(&data, &opts).unwrap();
        assert_eq!(fitted.layout.m, 3);

        let opts = FitOptions { n_obs: Some(10), ..FitOptions::default() };
        let grid = build_grid(&data, &opts).unwrap();
        // Chunks of 10 observations, possibly fewer bins after tie merging.
        assert!(grid.m() >= 1);
    }

    #[test]
    fn baseline_curve_sits_at_bin_midpoints() {
        let (_, fitted) = small_fit();
        let curve = fitted.baseline_curve();
        assert_eq!(curve.len(), fitted.layout.m);
        for (u, pt) in curve.iter().enumerate() {
            assert_relative_eq!(pt.t, fitted.grid.midpoint(u));
            assert_relative_eq!(pt.hazard, fitted.estimate.theta[u]);
            assert!(pt.lower >= 0.0);
            assert!(pt.lower <= pt.hazard && pt.hazard <= pt.upper);
        }
    }

    #[test]
    fn prediction_refuses_extrapolation_by_default() {
        let (_, fitted) = small_fit();
        let upper = fitted.grid.upper();
        let profile = CovariateProfile {
            z: vec![1.0, 1.1],
            w: vec![1.0, 1.5],
            tv_times: vec![2.0 * upper],
            tv_values: vec![vec![0.0]],
        };
        // Malformed profiles are input errors, not panics.
        let bare = CovariateProfile { z: vec![1.0, 1.1], w: vec![1.0, 1.5], tv_times: vec![], tv_values: vec![] };
        assert!(matches!(fitted.predict(&bare, &[0.5], 0.0), Err(Error::Config(_))));
        let short_z = CovariateProfile { z: vec![1.0], ..profile.clone() };
        assert!(matches!(fitted.predict(&short_z, &[0.5], 0.0), Err(Error::Config(_))));
        let inside = fitted.predict(&profile, &[0.0, upper * 0.5, upper], 0.0).unwrap();
        assert_eq!(inside.len(), 3);
        assert_relative_eq!(inside[0].estimate, 1.0);
        let err = fitted.predict(&profile, &[upper * 1.2], 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // An explicit cap admits the same point.
        assert!(fitted.predict(&profile, &[upper * 1.2], 0.25).is_ok());
    }

    #[test]
    fn empty_bin_boundary_is_flagged_through_the_pipeline() {
        // Events in the first bin only; censoring pressure in the second
        // pins θ₂ to zero, which must surface as an active row, a zero SE,
        // and the annihilation identity M_A V = 0.
        let mut subjects = vec![
            Subject::new(0.5, 0.5, vec![1.0], vec![], vec![], vec![], 0).unwrap(),
            Subject::new(0.8, 0.8, vec![1.0], vec![], vec![], vec![], 0).unwrap(),
            Subject::new(0.6, 0.6, vec![1.0], vec![], vec![], vec![], 0).unwrap(),
            Subject::new(0.7, 0.7, vec![1.0], vec![], vec![], vec![], 0).unwrap(),
        ];
        for t in [2.0, 2.5, 2.8, 2.2, 2.6] {
            subjects
                .push(Subject::new(t, f64::INFINITY, vec![1.0], vec![], vec![], vec![], 0).unwrap());
        }
        let data = Dataset::from_subjects(subjects).unwrap();
        // Force the two-bin layout the construction needs.
        let grid = BinGrid::from_edges(vec![0.0, 1.0, 2.8]).unwrap();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let constraints = ConstraintMatrix::build(&data, &grid).unwrap();
        let penalty = penalty_matrix(grid.m());
        let total: f64 = data.subjects.iter().map(|s| s.observed_time()).sum();
        let sel = smoothing::select(
            &ws,
            &penalty,
            &constraints,
            &SolverConfig::default(),
            &SmoothingConfig::default(),
            data.n_events(),
            total,
        )
        .unwrap();
        let active = inference::active_set(
            &constraints,
            &sel.fit.slack,
            &sel.fit.lambda,
            1e-8,
        );
        assert!(!active.is_empty());
        let m_active = constraints.dense_rows(&active);
        let neg_hess = -model::hessian(&ws, &penalty, sel.omega, &sel.fit.eta).unwrap();
        let v = inference::covariance(&neg_hess, &m_active).unwrap();
        let prod = &m_active * &v;
        assert!(prod.iter().all(|x| x.abs() < 1e-8), "M_A V must vanish");
        let se = inference::theta_standard_errors(&v, 2);
        assert!(se[1] < 1e-8, "boundary θ₂ must report zero SE");
    }
}
