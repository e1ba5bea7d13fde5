//! File formats: dataset CSV (with a long-format time-varying companion),
//! scenario TOML, fitted-model JSON, and the curve/metric CSV emitters.
//!
//! Floats are written with Rust's shortest round-trip `Display`, so reading
//! a file back reproduces every value bit for bit; `inf` is the
//! right-censoring token in `t_right`. All emitters are deterministic:
//! identical inputs give byte-identical files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::baseline::BinGrid;
use crate::data::{BlockLayout, Dataset, ParamVector, Subject};
use crate::error::{Error, Result};
use crate::fit::{BaselinePoint, FitDiagnostics, FittedModel};
use crate::inference::{CoefficientSummary, SurvivalPoint};
use crate::replicate::ReplicationReport;
use crate::simgen::{Scenario, SubjectLatent};
use crate::solver::SolveReport;

/// Serde adapter encoding a possibly non-finite `f64` as the strings
/// `"inf"`, `"-inf"` or `"nan"` (JSON has no tokens for these).
mod float_token {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct TokenVisitor;

    impl Visitor<'_> for TokenVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            write!(f, "a float or one of the tokens \"inf\", \"-inf\", \"nan\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<f64, E> {
            v.parse()
                .map_err(|_| de::Error::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        d.deserialize_any(TokenVisitor)
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn csv_err(context: &str, e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::data(pos.record() as usize, format!("{context}: {e}")),
        None => Error::Parse(format!("{context}: {e}")),
    }
}

fn parse_field(raw: &str, row: usize, col: &str) -> Result<f64> {
    raw.trim()
        .parse()
        .map_err(|_| Error::data(row, format!("column {col}: cannot parse {raw:?} as a number")))
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/// Writes the main dataset file: `t_left,t_right,z_*,w_*`, one row per
/// subject, `inf` marking right censoring.
pub fn write_dataset_csv<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t_left".to_string(), "t_right".to_string()];
    header.extend(dataset.z_names.iter().cloned());
    header.extend(dataset.w_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err("dataset", e))?;
    for s in &dataset.subjects {
        let mut rec = vec![fmt_f64(s.t_left), fmt_f64(s.t_right)];
        rec.extend(s.z.iter().copied().map(fmt_f64));
        rec.extend(s.w.iter().copied().map(fmt_f64));
        w.write_record(&rec).map_err(|e| csv_err("dataset", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the long-format companion: `id,time,x_*`, one row per covariate
/// interval, `time` its right endpoint. Every subject's full schedule is
/// written so a read-back reproduces the dataset exactly.
pub fn write_tv_csv<W: Write>(out: W, dataset: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "time".to_string()];
    header.extend(dataset.x_names.iter().cloned());
    w.write_record(&header)
        .map_err(|e| csv_err("time-varying file", e))?;
    for (i, s) in dataset.subjects.iter().enumerate() {
        for (time, values) in s.tv_times.iter().zip(&s.tv_values) {
            let mut rec = vec![i.to_string(), fmt_f64(*time)];
            rec.extend(values.iter().copied().map(fmt_f64));
            w.write_record(&rec)
                .map_err(|e| csv_err("time-varying file", e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the main dataset file and an optional time-varying companion.
///
/// Covariate columns are classified by name: a leading `z` marks an
/// incidence covariate, a leading `w` a time-fixed latency covariate.
/// Subjects missing from the companion get a constant-zero schedule.
pub fn read_dataset_csv<R: Read, T: Read>(main: R, tv: Option<T>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_reader(main);
    let header = reader
        .headers()
        .map_err(|e| csv_err("dataset", e))?
        .clone();
    if header.len() < 2 || &header[0] != "t_left" || &header[1] != "t_right" {
        return Err(Error::Parse(
            "dataset header must start with t_left,t_right".into(),
        ));
    }
    let mut z_cols = Vec::new();
    let mut w_cols = Vec::new();
    for (idx, name) in header.iter().enumerate().skip(2) {
        let name = name.trim();
        if name.starts_with('z') {
            z_cols.push((idx, name.to_string()));
        } else if name.starts_with('w') {
            w_cols.push((idx, name.to_string()));
        } else {
            return Err(Error::Parse(format!(
                "dataset column {name:?} is neither an incidence (z*) nor a \
                 time-fixed latency (w*) covariate"
            )));
        }
    }

    struct RawRow {
        t_left: f64,
        t_right: f64,
        z: Vec<f64>,
        w: Vec<f64>,
    }
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err("dataset", e))?;
        if record.len() != header.len() {
            return Err(Error::data(
                row,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let t_left = parse_field(&record[0], row, "t_left")?;
        let t_right = parse_field(&record[1], row, "t_right")?;
        let grab = |cols: &[(usize, String)]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|(idx, name)| parse_field(&record[*idx], row, name))
                .collect()
        };
        rows.push(RawRow { t_left, t_right, z: grab(&z_cols)?, w: grab(&w_cols)? });
    }

    let (x_names, mut schedules) = match tv {
        Some(tv) => read_tv_csv(tv, rows.len())?,
        None => (Vec::new(), BTreeMap::new()),
    };
    let p = x_names.len();

    let mut subjects = Vec::with_capacity(rows.len());
    for (row, raw) in rows.into_iter().enumerate() {
        let (tv_times, tv_values) = schedules.remove(&row).unwrap_or_default();
        let subject = Subject::new(raw.t_left, raw.t_right, raw.z, raw.w, tv_times, tv_values, p)
            .map_err(|e| Error::data(row, e.to_string()))?;
        subjects.push(subject);
    }
    Dataset::new(
        subjects,
        z_cols.into_iter().map(|(_, n)| n).collect(),
        w_cols.into_iter().map(|(_, n)| n).collect(),
        x_names,
    )
}

type Schedules = BTreeMap<usize, (Vec<f64>, Vec<Vec<f64>>)>;

fn read_tv_csv<R: Read>(tv: R, n_subjects: usize) -> Result<(Vec<String>, Schedules)> {
    let mut reader = csv::Reader::from_reader(tv);
    let header = reader
        .headers()
        .map_err(|e| csv_err("time-varying file", e))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "time" {
        return Err(Error::Parse(
            "time-varying header must start with id,time and carry at least one x* column".into(),
        ));
    }
    let x_names: Vec<String> = header.iter().skip(2).map(|s| s.trim().to_string()).collect();
    if let Some(bad) = x_names.iter().find(|n| !n.starts_with('x')) {
        return Err(Error::Parse(format!(
            "time-varying column {bad:?} must be named x*"
        )));
    }
    let mut schedules: Schedules = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err("time-varying file", e))?;
        if record.len() != header.len() {
            return Err(Error::data(
                row,
                format!(
                    "time-varying file: expected {} fields, found {}",
                    header.len(),
                    record.len()
                ),
            ));
        }
        let id: usize = record[0].trim().parse().map_err(|_| {
            Error::data(row, format!("time-varying file: invalid subject id {:?}", &record[0]))
        })?;
        if id >= n_subjects {
            return Err(Error::data(
                row,
                format!("time-varying file: subject id {id} exceeds the dataset ({n_subjects} rows)"),
            ));
        }
        let time = parse_field(&record[1], row, "time")?;
        let values: Vec<f64> = x_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_field(&record[2 + k], row, name))
            .collect::<Result<_>>()?;
        let entry = schedules.entry(id).or_default();
        entry.0.push(time);
        entry.1.push(values);
    }
    Ok((x_names, schedules))
}

// ---------------------------------------------------------------------------
// Latent truths CSV
// ---------------------------------------------------------------------------

/// Writes the simulation ground truth: `id,cured,tau,event_time,t_star`,
/// empty fields where a quantity does not exist for the subject.
pub fn write_latents_csv<W: Write>(out: W, latents: &[SubjectLatent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "cured", "tau", "event_time", "t_star"])
        .map_err(|e| csv_err("latents", e))?;
    for (i, l) in latents.iter().enumerate() {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        w.write_record([
            i.to_string(),
            l.cured.to_string(),
            opt(l.tau),
            opt(l.event_time),
            fmt_f64(l.t_star),
        ])
        .map_err(|e| csv_err("latents", e))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scenario TOML
// ---------------------------------------------------------------------------

pub fn read_scenario_toml(text: &str) -> Result<Scenario> {
    toml::from_str(text).map_err(|e| Error::Parse(format!("scenario file: {e}")))
}

pub fn write_scenario_toml(sc: &Scenario) -> Result<String> {
    toml::to_string_pretty(sc).map_err(|e| Error::Parse(format!("scenario file: {e}")))
}

// ---------------------------------------------------------------------------
// Fitted-model JSON
// ---------------------------------------------------------------------------

/// Serialisable image of a [`FittedModel`]; `into_model` reconstructs the
/// model exactly, so persisted fits can drive later predictions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    /// Format version of this record.
    pub format: u32,
    pub bin_edges: Vec<f64>,
    pub layout: BlockLayout,
    pub estimate: ParamVector,
    pub lambda: Vec<f64>,
    pub slack: Vec<f64>,
    pub constraint_labels: Vec<String>,
    pub omega: f64,
    /// `σ² = 1/(2ω)`; infinite when the penalty is inert (fewer than three
    /// bins), hence the token encoding.
    #[serde(with = "float_token")]
    pub sigma2: f64,
    pub nu: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub marginal_loglik: Option<f64>,
    /// Row-major corrected covariance of the full parameter vector.
    pub covariance: Vec<Vec<f64>>,
    pub active_rows: Vec<usize>,
    pub active_labels: Vec<String>,
    pub coefficients: Vec<CoefficientSummary>,
    pub theta_se: Vec<f64>,
    pub level: f64,
    pub diagnostics: FitDiagnostics,
}

pub const FIT_RECORD_FORMAT: u32 = 1;

impl FitRecord {
    pub fn from_model(model: &FittedModel) -> Self {
        let v = model.layout.v();
        let covariance = (0..v)
            .map(|i| (0..v).map(|j| model.covariance[(i, j)]).collect())
            .collect();
        FitRecord {
            format: FIT_RECORD_FORMAT,
            bin_edges: model.grid.edges().to_vec(),
            layout: model.layout,
            estimate: model.estimate.clone(),
            lambda: model.lambda.clone(),
            slack: model.slack.clone(),
            constraint_labels: model.constraint_labels.clone(),
            omega: model.omega,
            sigma2: model.sigma2,
            nu: model.nu,
            loglik: model.loglik,
            penalized_loglik: model.penalized_loglik,
            marginal_loglik: model.marginal_loglik,
            covariance,
            active_rows: model.active_rows.clone(),
            active_labels: model.active_labels.clone(),
            coefficients: model.coefficients.clone(),
            theta_se: model.theta_se.clone(),
            level: model.level,
            diagnostics: model.diagnostics.clone(),
        }
    }

    /// Rebuilds the in-memory model, validating the record's dimensions.
    pub fn into_model(self) -> Result<FittedModel> {
        if self.format != FIT_RECORD_FORMAT {
            return Err(Error::Parse(format!(
                "fit record format {} is not supported (expected {FIT_RECORD_FORMAT})",
                self.format
            )));
        }
        let grid = BinGrid::from_edges(self.bin_edges)?;
        let layout = self.layout;
        if grid.m() != layout.m {
            return Err(Error::Parse(format!(
                "fit record has {} bin edges but a {}-bin layout",
                grid.m() + 1,
                layout.m
            )));
        }
        if self.estimate.layout() != layout {
            return Err(Error::Parse("fit record estimate does not match its layout".into()));
        }
        let v = layout.v();
        if self.covariance.len() != v || self.covariance.iter().any(|r| r.len() != v) {
            return Err(Error::Parse(format!(
                "fit record covariance must be {v}x{v}"
            )));
        }
        if self.theta_se.len() != layout.m {
            return Err(Error::Parse("fit record baseline SEs do not match the bin count".into()));
        }
        let covariance =
            nalgebra::DMatrix::from_fn(v, v, |i, j| self.covariance[i][j]);
        let eta = self.estimate.flatten();
        Ok(FittedModel {
            grid,
            layout,
            estimate: self.estimate,
            eta,
            lambda: self.lambda,
            slack: self.slack,
            constraint_labels: self.constraint_labels,
            omega: self.omega,
            sigma2: self.sigma2,
            nu: self.nu,
            loglik: self.loglik,
            penalized_loglik: self.penalized_loglik,
            marginal_loglik: self.marginal_loglik,
            covariance,
            active_rows: self.active_rows,
            active_labels: self.active_labels,
            coefficients: self.coefficients,
            theta_se: self.theta_se,
            level: self.level,
            diagnostics: self.diagnostics,
        })
    }
}

/// Pretty JSON plus a trailing newline; deterministic for a given record.
pub fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Parse(format!("serialising JSON: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_fit_json<R: Read>(input: R) -> Result<FitRecord> {
    serde_json::from_reader(input).map_err(|e| Error::Parse(format!("fit record: {e}")))
}

// ---------------------------------------------------------------------------
// Curve and table CSV emitters
// ---------------------------------------------------------------------------

/// `t,hazard,se,lower,upper` rows of the fitted baseline hazard.
pub fn write_baseline_csv<W: Write>(out: W, curve: &[BaselinePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "hazard", "se", "lower", "upper"])
        .map_err(|e| csv_err("baseline curve", e))?;
    for p in curve {
        w.write_record([
            fmt_f64(p.t),
            fmt_f64(p.hazard),
            fmt_f64(p.se),
            fmt_f64(p.lower),
            fmt_f64(p.upper),
        ])
        .map_err(|e| csv_err("baseline curve", e))?;
    }
    w.flush()?;
    Ok(())
}

/// `t,estimate,se,lower,upper` rows of a predicted survival curve.
pub fn write_survival_csv<W: Write>(out: W, curve: &[SurvivalPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "estimate", "se", "lower", "upper"])
        .map_err(|e| csv_err("survival curve", e))?;
    for p in curve {
        w.write_record([
            fmt_f64(p.t),
            fmt_f64(p.estimate),
            fmt_f64(p.se),
            fmt_f64(p.lower),
            fmt_f64(p.upper),
        ])
        .map_err(|e| csv_err("survival curve", e))?;
    }
    w.flush()?;
    Ok(())
}

/// `name,estimate,se,z,p_one_sided,p_two_sided,ci_lower,ci_upper,
/// exp_estimate,exp_ci_lower,exp_ci_upper,boundary` coefficient rows.
pub fn write_coefficients_csv<W: Write>(out: W, coefs: &[CoefficientSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "block",
        "estimate",
        "se",
        "z",
        "p_one_sided",
        "p_two_sided",
        "ci_lower",
        "ci_upper",
        "exp_estimate",
        "exp_ci_lower",
        "exp_ci_upper",
        "boundary",
    ])
    .map_err(|e| csv_err("coefficients", e))?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for c in coefs {
        let block = match c.block {
            crate::inference::CoefBlock::Incidence => "incidence",
            crate::inference::CoefBlock::LatencyTimeVarying => "latency_time_varying",
            crate::inference::CoefBlock::LatencyFixed => "latency_fixed",
        };
        w.write_record([
            c.name.clone(),
            block.to_string(),
            fmt_f64(c.estimate),
            fmt_f64(c.se),
            opt(c.z),
            opt(c.p_one_sided),
            opt(c.p_two_sided),
            fmt_f64(c.ci_lower),
            fmt_f64(c.ci_upper),
            opt(c.exp_estimate),
            opt(c.exp_ci_lower),
            opt(c.exp_ci_upper),
            c.boundary.to_string(),
        ])
        .map_err(|e| csv_err("coefficients", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Replication operating characteristics:
/// `name,truth,abias,mcsd,aasd,mse,coverage`, coefficients first, then the
/// baseline hazard quantile rows, then the `aise` row.
pub fn write_metrics_csv<W: Write>(out: W, report: &ReplicationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "truth", "abias", "mcsd", "aasd", "mse", "coverage"])
        .map_err(|e| csv_err("metrics", e))?;
    for row in report.coefficients.iter().chain(&report.hazard) {
        w.write_record([
            row.name.clone(),
            fmt_f64(row.truth),
            fmt_f64(row.abias),
            fmt_f64(row.mcsd),
            fmt_f64(row.aasd),
            fmt_f64(row.mse),
            fmt_f64(row.coverage),
        ])
        .map_err(|e| csv_err("metrics", e))?;
    }
    w.write_record(["aise", "", "", "", "", "", &fmt_f64(report.aise)])
        .map_err(|e| csv_err("metrics", e))?;
    w.flush()?;
    Ok(())
}

/// Per-replicate estimates in long format:
/// `rep,seed,name,estimate,se,ci_lower,ci_upper,truth,t` (t empty for
/// regression coefficients).
pub fn write_estimates_csv<W: Write>(out: W, report: &ReplicationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rep", "seed", "name", "estimate", "se", "ci_lower", "ci_upper", "truth", "t"])
        .map_err(|e| csv_err("estimates", e))?;
    let truths = crate::replicate::coefficient_truths(&report.scenario);
    for r in &report.records {
        for (j, (name, truth)) in truths.iter().enumerate() {
            w.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                name.clone(),
                fmt_f64(r.estimates[j]),
                fmt_f64(r.ses[j]),
                fmt_f64(r.ci_lower[j]),
                fmt_f64(r.ci_upper[j]),
                fmt_f64(*truth),
                String::new(),
            ])
            .map_err(|e| csv_err("estimates", e))?;
        }
        for h in &r.hazard {
            w.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                format!("h0@q{}", (h.level * 100.0).round()),
                fmt_f64(h.estimate),
                fmt_f64(h.se),
                fmt_f64(h.ci_lower),
                fmt_f64(h.ci_upper),
                fmt_f64(h.truth),
                fmt_f64(h.t),
            ])
            .map_err(|e| csv_err("estimates", e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-replicate composition and convergence diagnostics:
/// `rep,seed,ise,non_cured_fraction,right_censoring_proportion,iterations`.
pub fn write_replicates_csv<W: Write>(out: W, report: &ReplicationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rep",
        "seed",
        "ise",
        "non_cured_fraction",
        "right_censoring_proportion",
        "iterations",
    ])
    .map_err(|e| csv_err("replicates", e))?;
    for r in &report.records {
        w.write_record([
            r.rep.to_string(),
            r.seed.to_string(),
            fmt_f64(r.ise),
            fmt_f64(r.non_cured_fraction),
            fmt_f64(r.right_censoring_proportion),
            r.iterations.to_string(),
        ])
        .map_err(|e| csv_err("replicates", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Interior-point solve diagnostics of a fit, for the non-convergence report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnosticsRecord {
    pub converged: bool,
    pub reason: String,
    pub iterations: usize,
    #[serde(with = "float_token")]
    pub mu: f64,
    #[serde(with = "float_token")]
    pub dual_residual: f64,
}

impl SolveDiagnosticsRecord {
    pub fn from_failure(reason: &str, iterations: usize, mu: f64, dual_residual: f64) -> Self {
        SolveDiagnosticsRecord {
            converged: false,
            reason: reason.to_string(),
            iterations,
            mu,
            dual_residual,
        }
    }

    pub fn from_report(report: &SolveReport) -> Self {
        SolveDiagnosticsRecord {
            converged: true,
            reason: String::new(),
            iterations: report.iterations,
            mu: report.mu,
            dual_residual: report.dual_residual,
        }
    }
}
