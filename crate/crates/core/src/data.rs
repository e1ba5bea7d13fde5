//! Subject-level data for the mixture cure additive hazards model.
//!
//! Each subject carries a censoring window `[t_left, t_right]`, covariates for
//! the incidence (logistic) part `z`, time-fixed covariates for the latency
//! (additive hazards) part `w`, and an optional piecewise-constant schedule of
//! time-varying latency covariates `x(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a subject's event time was observed.
///
/// Exactly one kind applies per subject; it is inferred from the censoring
/// window: `t_left == t_right` is an exact event, `t_right = inf` is right
/// censoring, `t_left == 0` with finite `t_right` is left censoring, and
/// anything else is a finite interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CensoringKind {
    Event,
    Left,
    Right,
    Interval,
}

impl CensoringKind {
    /// Classify a censoring window, validating it at the same time.
    pub fn from_times(t_left: f64, t_right: f64) -> Result<Self> {
        if !t_left.is_finite() || t_left < 0.0 {
            return Err(Error::Config(format!(
                "t_left must be finite and non-negative, got {t_left}"
            )));
        }
        if t_right.is_nan() || t_right < t_left {
            return Err(Error::Config(format!(
                "t_right must satisfy t_right >= t_left, got [{t_left}, {t_right}]"
            )));
        }
        Ok(if t_right.is_infinite() {
            CensoringKind::Right
        } else if t_left == t_right {
            CensoringKind::Event
        } else if t_left == 0.0 {
            CensoringKind::Left
        } else {
            CensoringKind::Interval
        })
    }

    /// One-hot indicator vector `(event, right, left, interval)`.
    pub fn indicators(self) -> [f64; 4] {
        match self {
            CensoringKind::Event => [1.0, 0.0, 0.0, 0.0],
            CensoringKind::Right => [0.0, 1.0, 0.0, 0.0],
            CensoringKind::Left => [0.0, 0.0, 1.0, 0.0],
            CensoringKind::Interval => [0.0, 0.0, 0.0, 1.0],
        }
    }
}

/// One study subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    /// Left end of the censoring window (0 for left censoring).
    pub t_left: f64,
    /// Right end of the censoring window (`f64::INFINITY` for right censoring;
    /// equals `t_left` for an exactly observed event).
    pub t_right: f64,
    pub kind: CensoringKind,
    /// Incidence (logistic) covariates, length `q`.
    pub z: Vec<f64>,
    /// Time-fixed latency covariates, length `r`.
    pub w: Vec<f64>,
    /// Right endpoints of the piecewise-constant covariate intervals; strictly
    /// increasing, last entry equals [`Subject::observed_time`]. Interval `a`
    /// spans `(tv_times[a-1], tv_times[a]]` with `tv_times[-1] := 0`.
    pub tv_times: Vec<f64>,
    /// `tv_values[a]` is the time-varying covariate vector (length `p`) on
    /// interval `a`.
    pub tv_values: Vec<Vec<f64>>,
}

impl Subject {
    /// Build a subject, inferring the censoring kind and validating the
    /// covariate schedule. An empty schedule defaults to a single interval
    /// `[0, observed_time]` with constant value `zeros(p)`.
    pub fn new(
        t_left: f64,
        t_right: f64,
        z: Vec<f64>,
        w: Vec<f64>,
        mut tv_times: Vec<f64>,
        mut tv_values: Vec<Vec<f64>>,
        p: usize,
    ) -> Result<Self> {
        let kind = CensoringKind::from_times(t_left, t_right)?;
        let t_obs = if t_right.is_finite() { t_right } else { t_left };
        if let Some(bad) = z.iter().chain(w.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite covariate value {bad}")));
        }
        if tv_times.is_empty() {
            tv_times = vec![t_obs];
            tv_values = vec![vec![0.0; p]];
        }
        if tv_times.len() != tv_values.len() {
            return Err(Error::Config(format!(
                "covariate schedule has {} times but {} value rows",
                tv_times.len(),
                tv_values.len()
            )));
        }
        let mut prev = 0.0;
        for (a, &t) in tv_times.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::Config(format!("schedule time {t} is invalid")));
            }
            if a > 0 && t <= prev {
                return Err(Error::Config(format!(
                    "schedule times must be strictly increasing ({prev} then {t})"
                )));
            }
            prev = t;
        }
        for row in &tv_values {
            if row.len() != p {
                return Err(Error::Config(format!(
                    "schedule value row has length {}, expected {p}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite schedule value {bad}")));
            }
        }
        // The schedule must cover [0, observed_time]; snap a matching last
        // endpoint so CSV round trips are not rejected over float noise.
        let last = *tv_times.last().unwrap();
        let tol = 1e-9 * t_obs.max(1.0);
        if last + tol < t_obs {
            return Err(Error::Config(format!(
                "covariate schedule ends at {last} but the observed time is {t_obs}"
            )));
        }
        if (last - t_obs).abs() <= tol {
            *tv_times.last_mut().unwrap() = t_obs;
        }
        Ok(Subject {
            t_left,
            t_right,
            kind,
            z,
            w,
            tv_times,
            tv_values,
        })
    }

    /// The observed survival time: the event time for exact events, otherwise
    /// the finite end of the censoring window.
    pub fn observed_time(&self) -> f64 {
        if self.t_right.is_finite() {
            self.t_right
        } else {
            self.t_left
        }
    }

    /// Number of covariate intervals `n_i`.
    pub fn n_intervals(&self) -> usize {
        self.tv_times.len()
    }

    /// Index of the covariate interval containing `t` (interval `a` spans
    /// `(tv_times[a-1], tv_times[a]]`; `t = 0` maps to interval 0, times past
    /// the schedule end map to the last interval).
    pub fn interval_index(&self, t: f64) -> usize {
        let k = self.tv_times.partition_point(|&end| end < t);
        k.min(self.tv_times.len() - 1)
    }

    /// Time-varying covariate value at `t`.
    pub fn x_at(&self, t: f64) -> &[f64] {
        &self.tv_values[self.interval_index(t)]
    }

    /// Componentwise `∫_0^t x(s) ds` under the piecewise-constant schedule
    /// (the last value extends past the schedule end).
    pub fn x_integral_at(&self, t: f64) -> Vec<f64> {
        let p = self.tv_values.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; p];
        let mut start = 0.0;
        for (a, &end) in self.tv_times.iter().enumerate() {
            // The last interval absorbs any overhang beyond the schedule.
            let hi = if a + 1 == self.tv_times.len() { t } else { end.min(t) };
            if hi > start {
                for (acc_j, x_j) in acc.iter_mut().zip(&self.tv_values[a]) {
                    *acc_j += x_j * (hi - start);
                }
            }
            if end >= t {
                break;
            }
            start = end;
        }
        acc
    }
}

/// A full dataset with consistent covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<Subject>,
    /// Incidence covariate dimension.
    pub q: usize,
    /// Time-fixed latency covariate dimension.
    pub r: usize,
    /// Time-varying latency covariate dimension.
    pub p: usize,
    pub z_names: Vec<String>,
    pub w_names: Vec<String>,
    pub x_names: Vec<String>,
}

impl Dataset {
    /// Assemble a dataset, checking every subject against the shared
    /// dimensions. Errors carry the 0-based subject index.
    pub fn new(
        subjects: Vec<Subject>,
        z_names: Vec<String>,
        w_names: Vec<String>,
        x_names: Vec<String>,
    ) -> Result<Self> {
        let q = z_names.len();
        let r = w_names.len();
        let p = x_names.len();
        for (i, s) in subjects.iter().enumerate() {
            if s.z.len() != q {
                return Err(Error::data(i, format!("expected {} z covariates, found {}", q, s.z.len())));
            }
            if s.w.len() != r {
                return Err(Error::data(i, format!("expected {} w covariates, found {}", r, s.w.len())));
            }
            if s.tv_values.iter().any(|row| row.len() != p) {
                return Err(Error::data(i, format!("expected {p} time-varying covariates")));
            }
        }
        Ok(Dataset {
            subjects,
            q,
            r,
            p,
            z_names,
            w_names,
            x_names,
        })
    }

    /// Assemble with default column names (`z_1..`, `w_1..`, `x_1..`),
    /// deriving dimensions from the first subject.
    pub fn from_subjects(subjects: Vec<Subject>) -> Result<Self> {
        let (q, r, p) = match subjects.first() {
            Some(s) => (s.z.len(), s.w.len(), s.tv_values.first().map_or(0, Vec::len)),
            None => (0, 0, 0),
        };
        let names = |prefix: &str, k: usize| (1..=k).map(|j| format!("{prefix}_{j}")).collect();
        Dataset::new(subjects, names("z", q), names("w", r), names("x", p))
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_events(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.kind == CensoringKind::Event)
            .count()
    }
}

/// Block layout of the parameter vector `η = (θ, β, α, γ)`.
///
/// The order is fixed and shared by the gradient, Hessian, constraint matrix
/// and covariance matrix: `m` baseline bin coefficients, then `p` time-varying
/// latency coefficients, `r` time-fixed latency coefficients, `q` incidence
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub m: usize,
    pub p: usize,
    pub r: usize,
    pub q: usize,
}

impl BlockLayout {
    pub fn v(&self) -> usize {
        self.m + self.p + self.r + self.q
    }

    pub fn theta_offset(&self) -> usize {
        0
    }

    pub fn beta_offset(&self) -> usize {
        self.m
    }

    pub fn alpha_offset(&self) -> usize {
        self.m + self.p
    }

    pub fn gamma_offset(&self) -> usize {
        self.m + self.p + self.r
    }

    /// Human-readable label of a flat coordinate, for diagnostics.
    pub fn coord_label(&self, j: usize) -> String {
        if j < self.m {
            format!("theta[{j}]")
        } else if j < self.m + self.p {
            format!("beta[{}]", j - self.m)
        } else if j < self.m + self.p + self.r {
            format!("alpha[{}]", j - self.m - self.p)
        } else {
            format!("gamma[{}]", j - self.m - self.p - self.r)
        }
    }
}

/// Parameter vector in block form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    /// Baseline hazard bin coefficients (non-negative at a feasible point).
    pub theta: Vec<f64>,
    /// Coefficients of the time-varying latency covariates.
    pub beta: Vec<f64>,
    /// Coefficients of the time-fixed latency covariates.
    pub alpha: Vec<f64>,
    /// Incidence (logistic) coefficients.
    pub gamma: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: BlockLayout) -> Self {
        ParamVector {
            theta: vec![0.0; layout.m],
            beta: vec![0.0; layout.p],
            alpha: vec![0.0; layout.r],
            gamma: vec![0.0; layout.q],
        }
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            m: self.theta.len(),
            p: self.beta.len(),
            r: self.alpha.len(),
            q: self.gamma.len(),
        }
    }

    /// Concatenate blocks in the fixed `(θ, β, α, γ)` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().v());
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.beta);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.gamma);
        out
    }

    pub fn from_flat(layout: BlockLayout, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), layout.v(), "flat parameter length mismatch");
        let (m, p, r) = (layout.m, layout.p, layout.r);
        ParamVector {
            theta: flat[..m].to_vec(),
            beta: flat[m..m + p].to_vec(),
            alpha: flat[m + p..m + p + r].to_vec(),
            gamma: flat[m + p + r..].to_vec(),
        }
    }
}

/// Covariate profile for prediction: a subject's covariates without any
/// censoring information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    pub tv_times: Vec<f64>,
    pub tv_values: Vec<Vec<f64>>,
}

impl CovariateProfile {
    /// Piecewise-constant value at `t`; the last value extends past the
    /// schedule end, and an empty schedule means "no time-varying covariates".
    pub fn x_at(&self, t: f64) -> &[f64] {
        static EMPTY: [f64; 0] = [];
        if self.tv_times.is_empty() {
            return &EMPTY;
        }
        let k = self.tv_times.partition_point(|&end| end < t);
        &self.tv_values[k.min(self.tv_times.len() - 1)]
    }

    /// Componentwise `∫_0^t x(s) ds`, extending the last value beyond the end
    /// of the schedule.
    pub fn x_integral_at(&self, t: f64) -> Vec<f64> {
        let p = self.tv_values.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; p];
        let mut start = 0.0;
        for (a, &end) in self.tv_times.iter().enumerate() {
            let hi = if a + 1 == self.tv_times.len() { t } else { end.min(t) };
            if hi > start {
                for (acc_j, x_j) in acc.iter_mut().zip(&self.tv_values[a]) {
                    *acc_j += x_j * (hi - start);
                }
            }
            if end >= t {
                break;
            }
            start = end;
        }
        acc
    }

    pub fn from_subject(s: &Subject) -> Self {
        CovariateProfile {
            z: s.z.clone(),
            w: s.w.clone(),
            tv_times: s.tv_times.clone(),
            tv_values: s.tv_values.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn censoring_kind_classification() {
        assert_eq!(CensoringKind::from_times(1.0, 1.0).unwrap(), CensoringKind::Event);
        assert_eq!(CensoringKind::from_times(0.0, 0.7).unwrap(), CensoringKind::Left);
        assert_eq!(
            CensoringKind::from_times(2.0, f64::INFINITY).unwrap(),
            CensoringKind::Right
        );
        assert_eq!(CensoringKind::from_times(1.0, 2.0).unwrap(), CensoringKind::Interval);
        // An event at the time origin is still an event.
        assert_eq!(CensoringKind::from_times(0.0, 0.0).unwrap(), CensoringKind::Event);
    }

    #[test]
    fn censoring_kind_rejects_bad_windows() {
        assert!(CensoringKind::from_times(2.0, 1.0).is_err());
        assert!(CensoringKind::from_times(-1.0, 2.0).is_err());
        assert!(CensoringKind::from_times(f64::INFINITY, f64::INFINITY).is_err());
        assert!(CensoringKind::from_times(0.0, f64::NAN).is_err());
    }

    #[test]
    fn indicators_are_one_hot() {
        for kind in [
            CensoringKind::Event,
            CensoringKind::Left,
            CensoringKind::Right,
            CensoringKind::Interval,
        ] {
            let ind = kind.indicators();
            assert_eq!(ind.iter().sum::<f64>(), 1.0);
            assert!(ind.iter().all(|&d| d == 0.0 || d == 1.0));
        }
    }

    #[test]
    fn subject_defaults_to_single_interval() {
        let s = Subject::new(2.0, f64::INFINITY, vec![1.0], vec![0.5], vec![], vec![], 0).unwrap();
        assert_eq!(s.tv_times, vec![2.0]);
        assert_eq!(s.tv_values, vec![Vec::<f64>::new()]);
        assert_eq!(s.observed_time(), 2.0);
        assert_eq!(s.n_intervals(), 1);
    }

    #[test]
    fn subject_schedule_validation() {
        // Not covering the observed time.
        let err = Subject::new(
            0.0,
            3.0,
            vec![],
            vec![],
            vec![1.0],
            vec![vec![0.0]],
            1,
        );
        assert!(err.is_err());
        // Non-increasing times.
        let err = Subject::new(
            0.0,
            3.0,
            vec![],
            vec![],
            vec![2.0, 2.0, 3.0],
            vec![vec![0.0], vec![1.0], vec![1.0]],
            1,
        );
        assert!(err.is_err());
        // Value row of the wrong width.
        let err = Subject::new(0.0, 3.0, vec![], vec![], vec![3.0], vec![vec![0.0, 1.0]], 1);
        assert!(err.is_err());
    }

    #[test]
    fn subject_schedule_snaps_to_observed_time() {
        let t_obs = 3.0;
        let s = Subject::new(
            0.0,
            t_obs,
            vec![],
            vec![],
            vec![1.0, t_obs + 1e-12],
            vec![vec![0.0], vec![1.0]],
            1,
        )
        .unwrap();
        assert_eq!(*s.tv_times.last().unwrap(), t_obs);
    }

    #[test]
    fn x_lookup_and_integral() {
        let s = Subject::new(
            0.0,
            3.0,
            vec![],
            vec![],
            vec![1.0, 3.0],
            vec![vec![0.0], vec![1.0]],
            1,
        )
        .unwrap();
        assert_eq!(s.x_at(0.0), &[0.0]);
        assert_eq!(s.x_at(1.0), &[0.0]); // interval is (0, 1]
        assert_eq!(s.x_at(1.5), &[1.0]);
        assert_eq!(s.x_integral_at(0.5), vec![0.0]);
        assert_eq!(s.x_integral_at(2.0), vec![1.0]);
        assert_eq!(s.x_integral_at(3.0), vec![2.0]);
    }

    #[test]
    fn layout_offsets_and_labels() {
        let layout = BlockLayout { m: 3, p: 1, r: 2, q: 2 };
        assert_eq!(layout.v(), 8);
        assert_eq!(layout.beta_offset(), 3);
        assert_eq!(layout.alpha_offset(), 4);
        assert_eq!(layout.gamma_offset(), 6);
        assert_eq!(layout.coord_label(0), "theta[0]");
        assert_eq!(layout.coord_label(3), "beta[0]");
        assert_eq!(layout.coord_label(5), "alpha[1]");
        assert_eq!(layout.coord_label(7), "gamma[1]");
    }

    #[test]
    fn param_vector_round_trip() {
        let eta = ParamVector {
            theta: vec![0.1, 0.2, 0.3],
            beta: vec![-0.5],
            alpha: vec![0.4, -0.1],
            gamma: vec![1.0, 2.0],
        };
        let flat = eta.flatten();
        assert_eq!(flat.len(), eta.layout().v());
        let back = ParamVector::from_flat(eta.layout(), &flat);
        assert_eq!(back, eta);
    }

    #[test]
    fn dataset_dimension_check_reports_row() {
        let good = Subject::new(1.0, 1.0, vec![1.0], vec![], vec![], vec![], 0).unwrap();
        let bad = Subject::new(1.0, 1.0, vec![1.0, 2.0], vec![], vec![], vec![], 0).unwrap();
        let err = Dataset::new(vec![good, bad], vec!["z_1".into()], vec![], vec![]).unwrap_err();
        match err {
            Error::Data { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
