//! Acceptance gate: one test per criterion, each printing a single
//! `PASS criterion N: …` line with the measured quantities (run with
//! `cargo test --test acceptance -- --nocapture` to see them). Failures
//! carry a matching `FAIL criterion N: …` message. Tolerances are pinned
//! here and must not be loosened to make a run green.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcah::baseline::{penalty_matrix, BinGrid};
use mcah::constraints::ConstraintMatrix;
use mcah::data::{CovariateProfile, Dataset, Subject};
use mcah::fit::{self, fit_dataset, FitOptions, FittedModel};
use mcah::inference;
use mcah::model::{self, ModelWorkspace};
use mcah::replicate::{run, ReplicationConfig, ReplicationReport};
use mcah::simgen::{simulate_dataset, simulate_with_latents, Scenario};
use mcah::smoothing::{self, SmoothingConfig};
use mcah::solver::{self, SolverConfig};

fn inf_norm(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// The heavy-censoring, high-incidence scenario used by the desk-scale
/// replication criteria: 80% non-cured target with π_c = 70%.
fn table_scenario(n: usize) -> Scenario {
    Scenario {
        n,
        d1: 3.0,
        d2: 3.5,
        censor_prop: 0.7,
        seed: 1,
        ..Scenario::default()
    }
}

fn replication(n: usize, n_obs: usize, censor_prop: f64) -> ReplicationReport {
    let mut scenario = table_scenario(n);
    scenario.censor_prop = censor_prop;
    let config = ReplicationConfig {
        scenario,
        reps: 100,
        fit: FitOptions {
            n_obs: Some(n_obs),
            ..FitOptions::default()
        },
        jobs: 1,
    };
    run(&config).expect("replication study failed outright")
}

/// The n=200 study is consumed by criteria 4 and 5; run it once.
fn study_200() -> &'static (ReplicationReport, f64) {
    static STUDY: OnceLock<(ReplicationReport, f64)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let t0 = Instant::now();
        let report = replication(200, 2, 0.7);
        (report, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_1_analytic_derivatives_match_finite_differences() {
    let t0 = Instant::now();
    let sc = Scenario {
        n: 100,
        seed: 42,
        ..Scenario::default()
    };
    let (data, _) = simulate_dataset(&sc);
    let options = FitOptions::default();
    let grid = fit::build_grid(&data, &options).unwrap();
    let ws = ModelWorkspace::new(&data, &grid).unwrap();
    let constraints = ConstraintMatrix::build(&data, &grid).unwrap();
    let penalty = penalty_matrix(grid.m());
    let layout = ws.layout();
    let (v, m) = (layout.v(), layout.m);
    let omega = 1.3;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0usize;
    let mut attempts = 0usize;
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    while checked < 20 {
        attempts += 1;
        assert!(
            attempts < 2000,
            "FAIL criterion 1: could not sample 20 feasible points"
        );
        let mut eta = vec![0.0; v];
        for x in eta.iter_mut().take(m) {
            *x = rng.gen_range(0.1..2.0);
        }
        for x in eta.iter_mut().skip(m) {
            *x = rng.gen_range(-0.3..0.3);
        }
        for k in 0..layout.q {
            eta[layout.gamma_offset() + k] = rng.gen_range(-0.8..0.8);
        }
        // A comfortable feasibility margin keeps every FD evaluation inside
        // the likelihood's domain and the truncation error well below tol.
        if constraints.min_slack(&eta) < 0.08
            || model::penalized_loglik(&ws, &penalty, omega, &eta).is_err()
        {
            continue;
        }

        let grad = model::gradient(&ws, &penalty, omega, &eta).unwrap();
        let hess = model::hessian(&ws, &penalty, omega, &eta).unwrap();
        for j in 0..v {
            let h = 4e-6 * (1.0 + eta[j].abs());
            let mut up = eta.clone();
            up[j] += h;
            let mut dn = eta.clone();
            dn[j] -= h;
            let phi_up = model::penalized_loglik(&ws, &penalty, omega, &up).unwrap();
            let phi_dn = model::penalized_loglik(&ws, &penalty, omega, &dn).unwrap();
            let fd = (phi_up - phi_dn) / (2.0 * h);
            let err = (fd - grad[j]).abs() / (1.0 + grad[j].abs());
            worst_grad = worst_grad.max(err);
            assert!(
                err < 1e-6,
                "FAIL criterion 1: gradient coordinate {j} off by relative {err:.3e}"
            );

            let g_up = model::gradient(&ws, &penalty, omega, &up).unwrap();
            let g_dn = model::gradient(&ws, &penalty, omega, &dn).unwrap();
            for i in 0..v {
                let fd_h = (g_up[i] - g_dn[i]) / (2.0 * h);
                let err = (fd_h - hess[(i, j)]).abs() / (1.0 + hess[(i, j)].abs());
                worst_hess = worst_hess.max(err);
                assert!(
                    err < 1e-4,
                    "FAIL criterion 1: Hessian entry ({i},{j}) off by relative {err:.3e}"
                );
            }
        }
        checked += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    assert!(
        secs < 60.0,
        "FAIL criterion 1: derivative check took {secs:.1}s (budget 60s)"
    );
    println!(
        "PASS criterion 1: {checked} feasible points, worst gradient rel err {worst_grad:.2e}, \
         worst Hessian rel err {worst_hess:.2e}, {secs:.1}s"
    );
}

/// Recomputed first-order optimality quantities of a converged fit.
fn kkt_quantities(data: &Dataset, fitted: &FittedModel) -> (f64, f64, f64, f64, f64) {
    let ws = ModelWorkspace::new(data, &fitted.grid).unwrap();
    let constraints = ConstraintMatrix::build(data, &fitted.grid).unwrap();
    let penalty = penalty_matrix(fitted.grid.m());
    let grad = model::gradient(&ws, &penalty, fitted.omega, &fitted.eta).unwrap();
    let mut kkt = grad.clone();
    constraints.mul_transpose_acc(&fitted.lambda, &mut kkt);
    let m_eta = constraints.mul(&fitted.eta);
    let min_m_eta = m_eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_comp = fitted
        .lambda
        .iter()
        .zip(&m_eta)
        .map(|(l, s)| l * s)
        .fold(0.0f64, f64::max);
    let w = constraints.n_rows() as f64;
    (inf_norm(&grad), inf_norm(&kkt), min_m_eta, max_comp, w)
}

#[test]
fn criterion_2_converged_fits_satisfy_the_kkt_conditions() {
    let cases = vec![
        (Scenario { n: 200, seed: 1, ..Scenario::default() }, FitOptions::default()),
        (
            Scenario { n: 200, seed: 2, d1: 3.0, d2: 3.5, censor_prop: 0.7, ..Scenario::default() },
            FitOptions { n_obs: Some(2), ..FitOptions::default() },
        ),
        (
            Scenario { n: 120, seed: 4, censor_prop: 0.6, ..Scenario::default() },
            FitOptions::default(),
        ),
        // Degenerate exposure: the MPL optimum pins exposed-segment hazards
        // to zero, so this one certifies the active-constraint branch.
        (Scenario { n: 60, seed: 13, ..Scenario::default() }, FitOptions::default()),
        (Scenario { n: 60, seed: 17, ..Scenario::default() }, FitOptions::default()),
        (
            Scenario { n: 150, seed: 8, censor_prop: 0.2, ..Scenario::default() },
            FitOptions { m: Some(4), ..FitOptions::default() },
        ),
    ];
    let n_cases = cases.len();
    let mut with_active = 0usize;
    let mut worst_rel_kkt = 0.0f64;
    for (idx, (sc, options)) in cases.into_iter().enumerate() {
        let (data, _) = simulate_dataset(&sc);
        let fitted = fit_dataset(&data, &options)
            .unwrap_or_else(|e| panic!("FAIL criterion 2: case {idx} did not converge: {e}"));
        let (grad_inf, kkt_inf, min_m_eta, max_comp, w) = kkt_quantities(&data, &fitted);
        assert!(
            fitted.diagnostics.mu < 1e-8,
            "FAIL criterion 2: case {idx} converged with mu {:.3e} >= 1e-8",
            fitted.diagnostics.mu
        );
        assert!(
            kkt_inf < 1e-6 * (1.0 + grad_inf),
            "FAIL criterion 2: case {idx} stationarity {kkt_inf:.3e} vs scale {grad_inf:.3e}"
        );
        assert!(
            min_m_eta >= -1e-10,
            "FAIL criterion 2: case {idx} feasibility violated: min Mη = {min_m_eta:.3e}"
        );
        assert!(
            max_comp < w * 1e-8,
            "FAIL criterion 2: case {idx} complementarity {max_comp:.3e} vs bound {:.3e}",
            w * 1e-8
        );
        worst_rel_kkt = worst_rel_kkt.max(kkt_inf / (1.0 + grad_inf));
        if !fitted.active_rows.is_empty() {
            with_active += 1;
        }
    }
    assert!(
        with_active > 0,
        "FAIL criterion 2: no case exercised an active constraint set"
    );
    println!(
        "PASS criterion 2: {n_cases} fits certified (mu < 1e-8, worst relative stationarity \
         {worst_rel_kkt:.2e}, {with_active} with active constraints)"
    );
}

/// Damped Newton maximizer of Φ ignoring the constraints entirely, used as
/// the independent oracle for the no-binding-constraint comparison.
fn unconstrained_newton(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    omega: f64,
    mut eta: Vec<f64>,
) -> Vec<f64> {
    for _ in 0..500 {
        let grad = model::gradient(ws, penalty, omega, &eta).expect("oracle gradient");
        if inf_norm(&grad) < 1e-12 {
            return eta;
        }
        let hess = model::hessian(ws, penalty, omega, &eta).expect("oracle Hessian");
        let dir = (-hess)
            .lu()
            .solve(&DVector::from_column_slice(&grad))
            .expect("FAIL criterion 3: oracle Newton system is singular");
        let phi0 = model::penalized_loglik(ws, penalty, omega, &eta).expect("oracle value");
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = eta
                .iter()
                .zip(dir.iter())
                .map(|(x, d)| x + alpha * d)
                .collect();
            if let Ok(phi) = model::penalized_loglik(ws, penalty, omega, &trial) {
                if phi >= phi0 - 1e-12 * (1.0 + phi0.abs()) {
                    eta = trial;
                    break;
                }
            }
            alpha *= 0.5;
            assert!(alpha > 1e-12, "FAIL criterion 3: oracle line search collapsed");
        }
    }
    panic!("FAIL criterion 3: oracle Newton did not reach ‖∇Φ‖∞ < 1e-12");
}

#[test]
fn criterion_3_interior_solution_matches_an_unconstrained_newton_oracle() {
    // Mild effects, light censoring and three wide bins keep every hazard
    // comfortably positive, so no constraint binds at the optimum.
    let sc = Scenario {
        n: 150,
        seed: 5,
        censor_prop: 0.15,
        gamma: [0.4, 0.3],
        alpha: [0.05, -0.05],
        beta1: 0.1,
        ..Scenario::default()
    };
    let (data, _) = simulate_dataset(&sc);
    let options = FitOptions {
        m: Some(3),
        smoothing: SmoothingConfig {
            omega: Some(0.0),
            ..SmoothingConfig::default()
        },
        ..FitOptions::default()
    };
    let fitted = fit_dataset(&data, &options).expect("interior-point fit failed");
    let grid = &fitted.grid;
    let ws = ModelWorkspace::new(&data, grid).unwrap();
    let constraints = ConstraintMatrix::build(&data, grid).unwrap();
    let penalty = penalty_matrix(grid.m());
    let min_slack = constraints.min_slack(&fitted.eta);
    assert!(
        fitted.active_rows.is_empty() && min_slack > 1e-3,
        "FAIL criterion 3 precondition: a constraint binds (min slack {min_slack:.3e})"
    );

    let events = data.n_events();
    let total: f64 = data.subjects.iter().map(|s| s.observed_time()).sum();
    let (start, _, _) = solver::initialize(&ws, &constraints, events, total);
    let oracle = unconstrained_newton(&ws, &penalty, 0.0, start);
    let gap = fitted
        .eta
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        gap < 1e-6,
        "FAIL criterion 3: interior-point and oracle solutions differ by {gap:.3e}"
    );
    println!(
        "PASS criterion 3: no binding constraints (min slack {min_slack:.3e}); \
         solutions agree to {gap:.2e}"
    );
}

#[test]
fn criterion_4_desk_scale_replication_reproduces_the_reference_row() {
    let (report, secs) = study_200();
    // Reference values for the time-fixed coefficient α₁ under
    // (n=200, 80% non-cured, π_c = 70%, two observations per bin):
    // ABIAS 0.0641, MCSD 0.2177, AASD 0.2244, CP 0.96.
    let row = report
        .coefficients
        .iter()
        .find(|r| r.name == "w1")
        .expect("w1 metric row");
    assert!(
        report.reps_used >= 90,
        "FAIL criterion 4: only {}/{} replicates converged",
        report.reps_used,
        report.reps_requested
    );
    assert!(
        row.abias < 0.13,
        "FAIL criterion 4: |ABIAS| {:.4} >= 0.13",
        row.abias
    );
    let mcsd_window = (0.2177 * 0.6, 0.2177 * 1.4);
    assert!(
        row.mcsd > mcsd_window.0 && row.mcsd < mcsd_window.1,
        "FAIL criterion 4: MCSD {:.4} outside ±40% of 0.2177",
        row.mcsd
    );
    let aasd_window = (0.2244 * 0.6, 0.2244 * 1.4);
    assert!(
        row.aasd > aasd_window.0 && row.aasd < aasd_window.1,
        "FAIL criterion 4: AASD {:.4} outside ±40% of 0.2244",
        row.aasd
    );
    let ratio = row.aasd / row.mcsd;
    assert!(
        (0.7..=1.4).contains(&ratio),
        "FAIL criterion 4: AASD/MCSD {ratio:.3} outside [0.7, 1.4]"
    );
    assert!(
        (0.88..=1.0).contains(&row.coverage),
        "FAIL criterion 4: coverage {:.3} outside [0.88, 1.00]",
        row.coverage
    );
    assert!(
        *secs < 1800.0,
        "FAIL criterion 4: study took {secs:.0}s (budget 1800s)"
    );
    println!(
        "PASS criterion 4: α₁ ABIAS {:.4} MCSD {:.4} AASD {:.4} CP {:.2} over {} reps \
         ({secs:.0}s; reference 0.0641/0.2177/0.2244/0.96)",
        row.abias, row.mcsd, row.aasd, row.coverage, report.reps_used
    );
}

#[test]
fn criterion_5_baseline_hazard_aise_decreases_with_sample_size() {
    let aise_200 = study_200().0.aise;
    let report_500 = replication(500, 3, 0.7);
    let report_1000 = replication(1000, 4, 0.7);
    let (aise_500, aise_1000) = (report_500.aise, report_1000.aise);
    assert!(
        aise_200 > aise_500 && aise_500 > aise_1000,
        "FAIL criterion 5: AISE not monotone: {aise_200:.4} -> {aise_500:.4} -> {aise_1000:.4}"
    );
    println!(
        "PASS criterion 5: AISE {aise_200:.4} -> {aise_500:.4} -> {aise_1000:.4} over \
         n = 200/500/1000 (reference 1.6119 -> 0.9333 -> 0.7418)"
    );
}

#[test]
fn criterion_6_baseline_hazard_coverage_at_quantile_points() {
    let report = replication(1000, 4, 0.4);
    assert!(
        report.reps_used >= 90,
        "FAIL criterion 6: only {}/{} replicates converged",
        report.reps_used,
        report.reps_requested
    );
    let mut shown = Vec::new();
    for row in &report.hazard {
        assert!(
            (0.88..=1.0).contains(&row.coverage),
            "FAIL criterion 6: h₀ coverage {:.3} at {} outside [0.88, 1.00]",
            row.coverage,
            row.name
        );
        shown.push(format!("{} {:.2}", row.name, row.coverage));
    }
    assert_eq!(report.hazard.len(), 3, "FAIL criterion 6: expected three quantile rows");
    println!(
        "PASS criterion 6: baseline hazard coverage {} over {} reps (reference 0.95–0.96)",
        shown.join(", "),
        report.reps_used
    );
}

#[test]
fn criterion_7_active_constraint_covariance_annihilates_boundary_directions() {
    // Events in the first bin only; the censoring mass beyond pins θ₂ at
    // zero, so its constraint row must be active and annihilated by V.
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
    .expect("boundary fit failed");
    let active = inference::active_set(&constraints, &sel.fit.slack, &sel.fit.lambda, 1e-8);
    assert!(
        !active.is_empty(),
        "FAIL criterion 7: the empty-bin coordinate did not go active"
    );
    let m_active = constraints.dense_rows(&active);
    let neg_hess = -model::hessian(&ws, &penalty, sel.omega, &sel.fit.eta).unwrap();
    let v = inference::covariance(&neg_hess, &m_active).unwrap();
    let annihilation = (&m_active * &v).iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    assert!(
        annihilation < 1e-8,
        "FAIL criterion 7: max |M_A V| = {annihilation:.3e} >= 1e-8"
    );
    let se = inference::theta_standard_errors(&v, grid.m());
    assert!(
        se[1] < 1e-8,
        "FAIL criterion 7: boundary θ₂ reports SE {:.3e} instead of 0",
        se[1]
    );
    println!(
        "PASS criterion 7: {} active rows, max |M_A V| {annihilation:.2e}, boundary SE {:.1e}",
        active.len(),
        se[1]
    );
}

#[test]
fn criterion_8_generator_calibration_hits_composition_targets() {
    // (non-cured target, z₂ draw bounds, expected right-censoring share).
    let targets = [(0.6, 1.0, 1.2, 0.53), (0.8, 3.0, 3.5, 0.37)];
    let mut shown = Vec::new();
    for (target, d1, d2, pi_r) in targets {
        let mut mean_non_cured = 0.0;
        let mut mean_right = 0.0;
        for rep in 0..100u64 {
            let sc = Scenario {
                n: 1000,
                d1,
                d2,
                censor_prop: 0.7,
                seed: 300 + rep,
                ..Scenario::default()
            };
            let (_, diag) = simulate_dataset(&sc);
            mean_non_cured += diag.non_cured_fraction();
            mean_right += diag.right_censoring_proportion();
        }
        mean_non_cured /= 100.0;
        mean_right /= 100.0;
        assert!(
            (mean_non_cured - target).abs() < 0.03,
            "FAIL criterion 8: realized non-cured {mean_non_cured:.3} vs target {target}"
        );
        assert!(
            (mean_right - pi_r).abs() < 0.04,
            "FAIL criterion 8: realized π_R {mean_right:.3} vs reference {pi_r}"
        );
        shown.push(format!(
            "target {target:.0}%: non-cured {:.1}% π_R {:.1}%",
            100.0 * mean_non_cured,
            100.0 * mean_right
        ));
    }
    println!("PASS criterion 8: {} (100 reps of n=1000 each)", shown.join("; "));
}

#[test]
fn criterion_9_event_times_invert_the_latent_survival_draws() {
    let sc = Scenario {
        n: 18_000,
        seed: 9,
        ..Scenario::default()
    };
    let (data, latents, _) = simulate_with_latents(&sc);
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for (subject, latent) in data.subjects.iter().zip(&latents) {
        if latent.cured {
            continue;
        }
        let t = latent.event_time.expect("susceptible subject has an event time");
        let tau = latent.tau.expect("susceptible subject has a survival draw");
        let c = sc.alpha[0] * subject.w[0] + sc.alpha[1] * subject.w[1];
        let cum = t * t * t + c * t + sc.beta1 * (t - latent.t_star).max(0.0);
        let err = ((-cum).exp() - tau).abs();
        worst = worst.max(err);
        assert!(
            err < 1e-8,
            "FAIL criterion 9: |S(t) − τ| = {err:.3e} for a susceptible subject"
        );
        checked += 1;
    }
    assert!(
        checked >= 10_000,
        "FAIL criterion 9: only {checked} susceptible subjects (need ≥ 10⁴)"
    );
    println!("PASS criterion 9: {checked} susceptible subjects, worst |S(t) − τ| {worst:.2e}");
}

#[test]
fn substitute_application_six_categorical_covariates_conform() {
    // Stand-in for the proprietary clinical dataset: realistic mixed
    // censoring times with four binary and two three-level covariates
    // (eight dummy columns), an incidence intercept, and no time-varying
    // block. The fit must produce the full reporting surface with every
    // invariant intact.
    let base = Scenario {
        n: 360,
        seed: 77,
        d1: 3.0,
        d2: 3.5,
        censor_prop: 0.5,
        ..Scenario::default()
    };
    let (timing, _) = simulate_dataset(&base);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut subjects = Vec::with_capacity(timing.n());
    for s in &timing.subjects {
        let mut dummies = Vec::with_capacity(8);
        for prob in [0.45, 0.5, 0.35, 0.25] {
            dummies.push(if rng.gen::<f64>() < prob { 1.0 } else { 0.0 });
        }
        for _ in 0..2 {
            let level = rng.gen_range(0..3u8);
            dummies.push(if level == 1 { 1.0 } else { 0.0 });
            dummies.push(if level == 2 { 1.0 } else { 0.0 });
        }
        let mut z = vec![1.0];
        z.extend_from_slice(&dummies);
        subjects.push(
            Subject::new(s.t_left, s.t_right, z, dummies, vec![], vec![], 0).unwrap(),
        );
    }
    let dummy_names = [
        "ulceration",
        "male",
        "site_trunk",
        "stage_late",
        "thickness_mid",
        "thickness_high",
        "age_mid",
        "age_high",
    ];
    let mut z_names = vec!["intercept".to_string()];
    z_names.extend(dummy_names.iter().map(|s| s.to_string()));
    let w_names: Vec<String> = dummy_names.iter().map(|s| s.to_string()).collect();
    let data = Dataset::new(subjects, z_names, w_names, vec![]).unwrap();

    let options = FitOptions {
        n_obs: Some(3),
        ..FitOptions::default()
    };
    let fitted = fit_dataset(&data, &options).expect("categorical-covariate fit failed");

    assert_eq!(
        fitted.coefficients.len(),
        17,
        "FAIL substitute application: expected 8 latency + 9 incidence rows"
    );
    let mut boundary_rows = 0usize;
    for row in &fitted.coefficients {
        assert!(row.se.is_finite() && row.se >= 0.0);
        assert!(row.ci_lower <= row.ci_upper);
        if row.boundary {
            boundary_rows += 1;
            assert!(row.z.is_none() && row.p_two_sided.is_none());
        } else {
            let p = row.p_two_sided.expect("free coefficient has a p-value");
            assert!((0.0..=1.0).contains(&p));
        }
    }
    let m_active = ConstraintMatrix::build(&data, &fitted.grid)
        .unwrap()
        .dense_rows(&fitted.active_rows);
    let annihilation = (&m_active * &fitted.covariance)
        .iter()
        .fold(0.0f64, |a, &x| a.max(x.abs()));
    assert!(
        annihilation < 1e-8,
        "FAIL substitute application: max |M_A V| = {annihilation:.3e}"
    );

    let curve = fitted.baseline_curve();
    assert_eq!(curve.len(), fitted.grid.m());
    for pt in &curve {
        assert!(pt.hazard >= 0.0 && pt.lower >= 0.0);
        assert!(pt.lower <= pt.hazard && pt.hazard <= pt.upper);
    }

    let profile = CovariateProfile {
        z: {
            let mut z = vec![1.0];
            z.extend(std::iter::repeat(0.0).take(8));
            z
        },
        w: vec![0.0; 8],
        tv_times: vec![],
        tv_values: vec![],
    };
    let upper = fitted.grid.upper();
    let times: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * upper).collect();
    let survival = fitted.predict(&profile, &times, 0.0).unwrap();
    for pair in survival.windows(2) {
        assert!(
            pair[1].estimate <= pair[0].estimate + 1e-12,
            "FAIL substitute application: mixture survival must be non-increasing"
        );
    }
    for pt in &survival {
        assert!((0.0..=1.0).contains(&pt.estimate));
        assert!(pt.lower >= 0.0 && pt.upper <= 1.0 && pt.lower <= pt.upper);
    }
    println!(
        "PASS substitute application: 17 coefficient rows ({boundary_rows} boundary-flagged), \
         {} bins, survival curve monotone within bands",
        fitted.grid.m()
    );
}
