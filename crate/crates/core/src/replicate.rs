//! Monte Carlo replication harness: repeated simulate-fit cycles with
//! frequentist operating characteristics (bias, Monte Carlo and average
//! asymptotic standard deviations, coverage, integrated squared error).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_dataset, FitOptions, FittedModel};
use crate::simgen::{simulate_with_latents, Scenario, SubjectLatent};

/// Evaluation points of the per-replicate integrated squared error of the
/// fitted baseline hazard.
const ISE_GRID_POINTS: usize = 200;
/// Quantile levels at which the baseline hazard is tracked.
const HAZARD_QUANTILES: [f64; 3] = [0.25, 0.50, 0.75];
/// The ISE integrates up to this quantile of the observed times, past which
/// the baseline estimate rests on too few subjects to be meaningful.
const ISE_UPPER_QUANTILE: f64 = 0.90;

/// Controls for one replication study.
#[derive(Debug, Clone)]
pub struct ReplicationConfig {
    pub scenario: Scenario,
    /// Number of simulate-fit replicates.
    pub reps: usize,
    pub fit: FitOptions,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            scenario: Scenario::default(),
            reps: 100,
            fit: FitOptions::default(),
            jobs: 0,
        }
    }
}

/// Baseline hazard tracked at one time point of one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HazardSample {
    /// Quantile level of the latent event times defining `t`.
    pub level: f64,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub truth: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// One successful replicate: coefficient estimates aligned with
/// [`coefficient_truths`], hazard samples, and composition diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub seed: u64,
    pub estimates: Vec<f64>,
    pub ses: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub hazard: Vec<HazardSample>,
    /// Integrated squared error of the fitted baseline hazard.
    pub ise: f64,
    pub non_cured_fraction: f64,
    pub right_censoring_proportion: f64,
    pub iterations: usize,
}

/// A replicate dropped from the summaries, with the failure it reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedReplicate {
    pub rep: usize,
    pub seed: u64,
    pub reason: String,
}

/// Operating characteristics of one tracked quantity across replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    /// Mean of the per-replicate true values (constant for coefficients).
    pub truth: f64,
    /// Absolute bias `|mean(estimate − truth)|`.
    pub abias: f64,
    /// Monte Carlo standard deviation of `estimate − truth`.
    pub mcsd: f64,
    /// Average asymptotic standard deviation (mean reported SE).
    pub aasd: f64,
    pub mse: f64,
    /// Fraction of replicates whose confidence interval covers the truth.
    pub coverage: f64,
}

/// Full replication output: per-quantity summaries plus the raw records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub reps_requested: usize,
    pub reps_used: usize,
    pub excluded: Vec<ExcludedReplicate>,
    pub coefficients: Vec<MetricRow>,
    /// Baseline hazard rows at the tracked quantiles, in level order.
    pub hazard: Vec<MetricRow>,
    /// Mean integrated squared error of the baseline hazard.
    pub aise: f64,
    pub mean_non_cured_fraction: f64,
    pub mean_right_censoring_proportion: f64,
    pub records: Vec<ReplicateRecord>,
}

/// True coefficient values of a scenario, in the model's reporting order
/// (β for x₁, α for w₁ w₂, γ for z₁ z₂).
pub fn coefficient_truths(sc: &Scenario) -> Vec<(String, f64)> {
    vec![
        ("x1".into(), sc.beta1),
        ("w1".into(), sc.alpha[0]),
        ("w2".into(), sc.alpha[1]),
        ("z1".into(), sc.gamma[0]),
        ("z2".into(), sc.gamma[1]),
    ]
}

/// Type-7 (linear interpolation) sample quantile of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * level;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Simulates one dataset with `seed = base + rep` and fits it.
fn run_one(config: &ReplicationConfig, rep: usize) -> Result<ReplicateRecord> {
    let scenario = Scenario {
        seed: config.scenario.seed + rep as u64,
        ..config.scenario.clone()
    };
    let (data, latents, diag) = simulate_with_latents(&scenario);
    let fitted = fit_dataset(&data, &config.fit)?;

    let truths = coefficient_truths(&scenario);
    if fitted.coefficients.len() != truths.len() {
        return Err(Error::Config(format!(
            "replicate fit produced {} coefficients, expected {}",
            fitted.coefficients.len(),
            truths.len()
        )));
    }
    let mut estimates = Vec::with_capacity(truths.len());
    let mut ses = Vec::with_capacity(truths.len());
    let mut ci_lower = Vec::with_capacity(truths.len());
    let mut ci_upper = Vec::with_capacity(truths.len());
    for (summary, (name, _)) in fitted.coefficients.iter().zip(&truths) {
        debug_assert_eq!(&summary.name, name);
        estimates.push(summary.estimate);
        ses.push(summary.se);
        ci_lower.push(summary.ci_lower);
        ci_upper.push(summary.ci_upper);
    }

    let hazard = hazard_samples(&fitted, &latents)?;
    let ise = baseline_ise(&fitted, &data.subjects.iter().map(|s| s.observed_time()).collect::<Vec<_>>())?;

    Ok(ReplicateRecord {
        rep,
        seed: scenario.seed,
        estimates,
        ses,
        ci_lower,
        ci_upper,
        hazard,
        ise,
        non_cured_fraction: diag.non_cured_fraction(),
        right_censoring_proportion: diag.right_censoring_proportion(),
        iterations: fitted.diagnostics.iterations,
    })
}

/// Baseline hazard estimate, SE and truth at the quantiles of this
/// replicate's latent event times.
fn hazard_samples(fitted: &FittedModel, latents: &[SubjectLatent]) -> Result<Vec<HazardSample>> {
    let mut event_times: Vec<f64> = latents.iter().filter_map(|l| l.event_time).collect();
    if event_times.is_empty() {
        return Err(Error::Config(
            "replicate produced no susceptible subjects; hazard quantiles are undefined".into(),
        ));
    }
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal");
    let z_crit =
        statrs::distribution::ContinuousCDF::inverse_cdf(&normal, 0.5 + fitted.level / 2.0);
    HAZARD_QUANTILES
        .iter()
        .map(|&level| {
            // Clamp to the fitted grid: the hazard is only estimated there.
            let t = quantile_sorted(&event_times, level).min(fitted.grid.upper());
            let bin = fitted.grid.bin_index(t)?;
            let estimate = fitted.estimate.theta[bin];
            let se = fitted.theta_se[bin];
            Ok(HazardSample {
                level,
                t,
                estimate,
                se,
                truth: Scenario::true_baseline_hazard(t),
                ci_lower: (estimate - z_crit * se).max(0.0),
                ci_upper: estimate + z_crit * se,
            })
        })
        .collect()
}

/// Trapezoid `∫ (ĥ₀ − h₀)² dt` over `[0, t₀]`, `t₀` the 90th observed-time
/// percentile.
fn baseline_ise(fitted: &FittedModel, observed_times: &[f64]) -> Result<f64> {
    let mut times = observed_times.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let t0 = quantile_sorted(&times, ISE_UPPER_QUANTILE);
    let step = t0 / (ISE_GRID_POINTS - 1) as f64;
    let mut acc = 0.0;
    for k in 0..ISE_GRID_POINTS {
        let t = step * k as f64;
        let diff = fitted.estimate.theta[fitted.grid.bin_index(t)?]
            - Scenario::true_baseline_hazard(t);
        let weight = if k == 0 || k == ISE_GRID_POINTS - 1 { 0.5 } else { 1.0 };
        acc += weight * diff * diff;
    }
    Ok(acc * step)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    sum / n as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs.iter().copied());
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

fn metric_row(
    name: String,
    diffs: &[f64],
    truths: &[f64],
    ses: &[f64],
    covered: usize,
) -> MetricRow {
    let n = diffs.len();
    MetricRow {
        name,
        truth: mean(truths.iter().copied()),
        abias: mean(diffs.iter().copied()).abs(),
        mcsd: sample_sd(diffs),
        aasd: mean(ses.iter().copied()),
        mse: mean(diffs.iter().map(|d| d * d)),
        coverage: covered as f64 / n as f64,
    }
}

/// Aggregates per-replicate records into operating characteristics. Pure so
/// the metric definitions are testable on synthetic records.
pub fn summarize_replicates(
    scenario: &Scenario,
    records: &[ReplicateRecord],
) -> (Vec<MetricRow>, Vec<MetricRow>, f64) {
    let truths = coefficient_truths(scenario);
    let coefficients = truths
        .iter()
        .enumerate()
        .map(|(j, (name, truth))| {
            let diffs: Vec<f64> = records.iter().map(|r| r.estimates[j] - truth).collect();
            let ses: Vec<f64> = records.iter().map(|r| r.ses[j]).collect();
            let truth_vec = vec![*truth; records.len()];
            let covered = records
                .iter()
                .filter(|r| r.ci_lower[j] <= *truth && *truth <= r.ci_upper[j])
                .count();
            metric_row(name.clone(), &diffs, &truth_vec, &ses, covered)
        })
        .collect();

    let hazard = HAZARD_QUANTILES
        .iter()
        .enumerate()
        .map(|(k, &level)| {
            let diffs: Vec<f64> = records
                .iter()
                .map(|r| r.hazard[k].estimate - r.hazard[k].truth)
                .collect();
            let truth_vec: Vec<f64> = records.iter().map(|r| r.hazard[k].truth).collect();
            let ses: Vec<f64> = records.iter().map(|r| r.hazard[k].se).collect();
            let covered = records
                .iter()
                .filter(|r| {
                    r.hazard[k].ci_lower <= r.hazard[k].truth
                        && r.hazard[k].truth <= r.hazard[k].ci_upper
                })
                .count();
            metric_row(format!("h0@q{}", (level * 100.0).round()), &diffs, &truth_vec, &ses, covered)
        })
        .collect();

    let aise = mean(records.iter().map(|r| r.ise));
    (coefficients, hazard, aise)
}

/// Runs the replication study. Replicates whose fit fails are excluded and
/// reported; the run errors only if every replicate fails.
pub fn run(config: &ReplicationConfig) -> Result<ReplicationReport> {
    if config.reps == 0 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    let worker = |rep: usize| (rep, run_one(config, rep));
    let outcomes: Vec<(usize, Result<ReplicateRecord>)> = if config.jobs == 1 {
        (0..config.reps).map(worker).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| (0..config.reps).into_par_iter().map(worker).collect())
    };

    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(err) => excluded.push(ExcludedReplicate {
                rep,
                seed: config.scenario.seed + rep as u64,
                reason: err.to_string(),
            }),
        }
    }
    if records.is_empty() {
        let reason = excluded
            .first()
            .map(|e| e.reason.clone())
            .unwrap_or_else(|| "no replicates ran".into());
        return Err(Error::NonConvergence {
            reason: format!("all {} replicates failed; first failure: {reason}", config.reps),
            iterations: 0,
            mu: f64::NAN,
            dual_residual: f64::NAN,
        });
    }

    let (coefficients, hazard, aise) = summarize_replicates(&config.scenario, &records);
    Ok(ReplicationReport {
        scenario: config.scenario.clone(),
        reps_requested: config.reps,
        reps_used: records.len(),
        mean_non_cured_fraction: mean(records.iter().map(|r| r.non_cured_fraction)),
        mean_right_censoring_proportion: mean(
            records.iter().map(|r| r.right_censoring_proportion),
        ),
        excluded,
        coefficients,
        hazard,
        aise,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synthetic_record(rep: usize, estimates: Vec<f64>, ses: Vec<f64>, z_crit: f64) -> ReplicateRecord {
        let ci_lower: Vec<f64> = estimates.iter().zip(&ses).map(|(e, s)| e - z_crit * s).collect();
        let ci_upper: Vec<f64> = estimates.iter().zip(&ses).map(|(e, s)| e + z_crit * s).collect();
        let hazard = HAZARD_QUANTILES
            .iter()
            .map(|&level| HazardSample {
                level,
                t: level,
                estimate: 3.0 * level * level,
                se: 0.1,
                truth: 3.0 * level * level,
                ci_lower: 3.0 * level * level - 0.196,
                ci_upper: 3.0 * level * level + 0.196,
            })
            .collect();
        ReplicateRecord {
            rep,
            seed: rep as u64,
            estimates,
            ses,
            ci_lower,
            ci_upper,
            hazard,
            ise: 0.25,
            non_cured_fraction: 0.6,
            right_censoring_proportion: 0.3,
            iterations: 10,
        }
    }

    #[test]
    fn quantile_matches_linear_interpolation_oracle() {
        // Type-7 on [1, 2, 3, 4]: h = 3q.
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile_sorted(&xs, 0.5), 2.5);
        assert_relative_eq!(quantile_sorted(&xs, 0.25), 1.75);
        assert_relative_eq!(quantile_sorted(&[7.0], 0.4), 7.0);
    }

    #[test]
    fn exact_estimates_give_zero_bias_and_full_coverage() {
        let sc = Scenario::default();
        let truths = coefficient_truths(&sc);
        let est: Vec<f64> = truths.iter().map(|(_, v)| *v).collect();
        let records: Vec<ReplicateRecord> = (0..7)
            .map(|j| synthetic_record(j, est.clone(), vec![0.2; 5], 1.96))
            .collect();
        let (coefs, hazard, aise) = summarize_replicates(&sc, &records);
        for row in &coefs {
            assert_relative_eq!(row.abias, 0.0);
            assert_relative_eq!(row.mcsd, 0.0);
            assert_relative_eq!(row.mse, 0.0);
            assert_relative_eq!(row.coverage, 1.0);
            assert_relative_eq!(row.aasd, 0.2);
        }
        for row in &hazard {
            assert_relative_eq!(row.abias, 0.0);
            assert_relative_eq!(row.coverage, 1.0);
        }
        assert_relative_eq!(aise, 0.25);
    }

    #[test]
    fn shrinking_ses_lowers_coverage() {
        // Estimates offset from the truth by a fixed 0.3; with SE 0.2 the
        // 95% CI half-width 0.392 covers, with SE 0.1 (half-width 0.196) it
        // does not.
        let sc = Scenario::default();
        let truths = coefficient_truths(&sc);
        let est: Vec<f64> = truths.iter().map(|(_, v)| v + 0.3).collect();
        let wide: Vec<ReplicateRecord> =
            (0..5).map(|j| synthetic_record(j, est.clone(), vec![0.2; 5], 1.96)).collect();
        let narrow: Vec<ReplicateRecord> =
            (0..5).map(|j| synthetic_record(j, est.clone(), vec![0.1; 5], 1.96)).collect();
        let (cov_wide, _, _) = summarize_replicates(&sc, &wide);
        let (cov_narrow, _, _) = summarize_replicates(&sc, &narrow);
        for (w, n) in cov_wide.iter().zip(&cov_narrow) {
            assert_relative_eq!(w.coverage, 1.0);
            assert_relative_eq!(n.coverage, 0.0);
            assert_relative_eq!(w.abias, 0.3, epsilon = 1e-12);
            // MSE decomposition: bias² + variance, zero variance here.
            assert_relative_eq!(w.mse, 0.09, epsilon = 1e-12);
            assert!(w.mse + 1e-12 >= w.abias * w.abias);
            let _ = n;
        }
    }

    #[test]
    fn summaries_are_invariant_to_record_order() {
        let sc = Scenario::default();
        let mut records: Vec<ReplicateRecord> = (0..6)
            .map(|j| {
                let est: Vec<f64> =
                    coefficient_truths(&sc).iter().map(|(_, v)| v + 0.05 * j as f64).collect();
                synthetic_record(j, est, vec![0.15; 5], 1.96)
            })
            .collect();
        let (a, ha, aise_a) = summarize_replicates(&sc, &records);
        records.reverse();
        records.swap(1, 4);
        let (b, hb, aise_b) = summarize_replicates(&sc, &records);
        for (x, y) in a.iter().zip(&b).chain(ha.iter().zip(&hb)) {
            assert_relative_eq!(x.abias, y.abias);
            assert_relative_eq!(x.mcsd, y.mcsd);
            assert_relative_eq!(x.aasd, y.aasd);
            assert_relative_eq!(x.mse, y.mse);
            assert_relative_eq!(x.coverage, y.coverage);
        }
        assert_relative_eq!(aise_a, aise_b);
    }

    #[test]
    fn small_study_runs_end_to_end() {
        let config = ReplicationConfig {
            scenario: Scenario { n: 60, seed: 11, ..Scenario::default() },
            reps: 3,
            fit: FitOptions::default(),
            jobs: 1,
        };
        let report = run(&config).unwrap();
        assert_eq!(report.reps_requested, 3);
        assert_eq!(report.reps_used + report.excluded.len(), 3);
        assert!(report.reps_used >= 1);
        assert_eq!(report.coefficients.len(), 5);
        assert_eq!(report.hazard.len(), 3);
        assert!(report.aise.is_finite() && report.aise >= 0.0);
        assert!(report.mean_non_cured_fraction > 0.0);
        for row in report.coefficients.iter().chain(&report.hazard) {
            assert!(row.abias.is_finite());
            assert!(row.mcsd.is_finite());
            assert!(row.aasd.is_finite());
            assert!((0.0..=1.0).contains(&row.coverage));
            assert!(row.mse + 1e-12 >= row.abias * row.abias);
        }
        // Distinct seeds per replicate.
        let seeds: Vec<u64> = report.records.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![11, 12, 13]);
    }

    #[test]
    fn zero_reps_is_an_input_error() {
        let config = ReplicationConfig { reps: 0, ..ReplicationConfig::default() };
        assert!(matches!(run(&config), Err(Error::Config(_))));
    }
}
