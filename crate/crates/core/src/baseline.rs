//! Piecewise-constant baseline hazard: bin grid, indicator basis functions
//! and the second-difference roughness penalty.
//!
//! The baseline hazard is `h0(t) = Σ_u θ_u ψ_u(t)` where `ψ_u` is the
//! indicator of bin `(e_{u-1}, e_u]`. Bins are chosen so each contains an
//! approximately equal number of observed time points, which lets the
//! roughness penalty take over the role of knot placement.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{CensoringKind, Dataset};
use crate::error::{Error, Result};

/// Bin edges `0 = e_0 < e_1 < ... < e_m` for the baseline hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    edges: Vec<f64>,
}

/// The observed time points that drive bin placement: exact event times,
/// left-censoring endpoints, and both endpoints of finite censoring intervals.
/// Right-censoring times are excluded.
pub fn observation_times(dataset: &Dataset) -> Vec<f64> {
    let mut obs = Vec::new();
    for s in &dataset.subjects {
        match s.kind {
            CensoringKind::Event | CensoringKind::Left => obs.push(s.t_right),
            CensoringKind::Interval => {
                obs.push(s.t_left);
                obs.push(s.t_right);
            }
            CensoringKind::Right => {}
        }
    }
    obs
}

impl BinGrid {
    /// Build a grid from explicit edges. The first edge must be 0 and the
    /// edges strictly increasing.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::Config("a bin grid needs at least two edges".into()));
        }
        if edges[0] != 0.0 {
            return Err(Error::Config(format!(
                "the first bin edge must be 0, got {}",
                edges[0]
            )));
        }
        for pair in edges.windows(2) {
            if !pair[1].is_finite() || pair[1] <= pair[0] {
                return Err(Error::Config(format!(
                    "bin edges must be finite and strictly increasing ({} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(BinGrid { edges })
    }

    /// Build a grid with approximately `n_obs` observed time points per bin.
    ///
    /// The observations are sorted and cut into consecutive chunks of size
    /// `n_obs`; interior edges sit at the midpoint between adjacent chunks,
    /// and a final chunk smaller than `n_obs` merges with its predecessor.
    /// Midpoints that would duplicate an edge (tied observations across a
    /// chunk boundary) are skipped, merging those chunks.
    pub fn build(dataset: &Dataset, n_obs: usize) -> Result<Self> {
        if n_obs == 0 {
            return Err(Error::Config("n_obs must be at least 1".into()));
        }
        let mut obs = observation_times(dataset);
        if obs.is_empty() {
            return Err(Error::Config(
                "cannot build a bin grid: no exact, left-censored or interval-censored times".into(),
            ));
        }
        if n_obs > obs.len() {
            return Err(Error::Config(format!(
                "n_obs = {} exceeds the {} available observations",
                n_obs,
                obs.len()
            )));
        }
        obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let upper = *obs.last().unwrap();
        if upper <= 0.0 {
            return Err(Error::Config(
                "all observed times are 0; the baseline range is empty".into(),
            ));
        }
        let n_chunks = obs.len() / n_obs;
        let mut edges = vec![0.0];
        for j in 1..n_chunks {
            let last_prev = obs[j * n_obs - 1];
            let first_next = obs[j * n_obs];
            let mid = 0.5 * (last_prev + first_next);
            if first_next > last_prev && mid > *edges.last().unwrap() && mid < upper {
                edges.push(mid);
            }
        }
        edges.push(upper);
        BinGrid::from_edges(edges)
    }

    /// Build a grid targeting `m_target` bins by deriving the per-bin
    /// observation count. The realized bin count can differ slightly when the
    /// observation count does not divide evenly or ties force merges.
    pub fn build_with_bin_target(dataset: &Dataset, m_target: usize) -> Result<Self> {
        if m_target == 0 {
            return Err(Error::Config("the bin target must be at least 1".into()));
        }
        let n_obs_v = observation_times(dataset).len();
        if n_obs_v == 0 {
            return Err(Error::Config(
                "cannot build a bin grid: no exact, left-censored or interval-censored times".into(),
            ));
        }
        let per_bin = ((n_obs_v as f64 / m_target as f64).round() as usize).max(1);
        BinGrid::build(dataset, per_bin.min(n_obs_v))
    }

    /// Number of bins `m`.
    pub fn m(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Upper end `e_m` of the grid: the largest finite censoring-window
    /// endpoint used during construction.
    pub fn upper(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    /// Midpoint of bin `u`, a convenient reporting abscissa.
    pub fn midpoint(&self, u: usize) -> f64 {
        0.5 * (self.edges[u] + self.edges[u + 1])
    }

    /// 0-based index of the bin containing `t`. `t = 0` maps to the first
    /// bin and times beyond the grid clamp to the last bin, so hazard
    /// evaluation stays defined for right-censoring times past the largest
    /// finite endpoint.
    pub fn bin_index(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(Error::Config(format!("time {t} is outside [0, inf)")));
        }
        if t == 0.0 {
            return Ok(0);
        }
        let k = self.edges[1..].partition_point(|&e| e < t);
        Ok(k.min(self.m() - 1))
    }

    /// Indicator basis `ψ(t)`: one-hot at the containing bin.
    pub fn basis_at(&self, t: f64) -> Result<Vec<f64>> {
        let mut psi = vec![0.0; self.m()];
        psi[self.bin_index(t)?] = 1.0;
        Ok(psi)
    }

    /// Cumulative basis `Ψ(t)` with `Ψ_u(t) = |(e_{u-1}, e_u] ∩ [0, t]|`.
    /// Beyond the grid the last component keeps accruing (`t − e_{m-1}`), so
    /// `Σ_u Ψ_u(t) = t` for every `t ≥ 0`.
    pub fn basis_integral_at(&self, t: f64) -> Result<Vec<f64>> {
        let mut psi = vec![0.0; self.m()];
        let nnz = self.fill_basis_integral(t, &mut psi)?;
        debug_assert!(nnz <= self.m());
        Ok(psi)
    }

    /// In-place version of [`BinGrid::basis_integral_at`] for hot loops.
    /// Returns the number of leading entries that may be nonzero.
    pub fn fill_basis_integral(&self, t: f64, out: &mut [f64]) -> Result<usize> {
        let m = self.m();
        assert_eq!(out.len(), m, "output buffer length mismatch");
        if !(t >= 0.0) {
            return Err(Error::Config(format!("time {t} is outside [0, inf)")));
        }
        let bin = self.bin_index(t)?;
        for u in 0..bin {
            out[u] = self.edges[u + 1] - self.edges[u];
        }
        out[bin] = t - self.edges[bin];
        for slot in out.iter_mut().take(m).skip(bin + 1) {
            *slot = 0.0;
        }
        Ok(bin + 1)
    }
}

/// Second-difference roughness penalty matrix `R = DᵀD`, where the rows of
/// `D` are `(1, -2, 1)` stencils, so `θᵀRθ = Σ_{u=2}^{m-1} (θ_{u-1} - 2θ_u +
/// θ_{u+1})²`. Zero (and the penalty inert) for `m < 3`.
pub fn penalty_matrix(m: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(m, m);
    if m < 3 {
        return r;
    }
    for k in 0..m - 2 {
        let stencil = [(k, 1.0), (k + 1, -2.0), (k + 2, 1.0)];
        for &(i, ci) in &stencil {
            for &(j, cj) in &stencil {
                r[(i, j)] += ci * cj;
            }
        }
    }
    r
}

/// Roughness `θᵀRθ` for the second-difference penalty, evaluated directly
/// as `Σ (θ_u − 2θ_{u+1} + θ_{u+2})²`. The direct form is exactly
/// nonnegative; the matrix quadratic form cancels catastrophically when `θ`
/// is near the penalty null space (affine), which matters once the
/// smoothing weight is large.
pub fn penalty_value(theta: &[f64]) -> f64 {
    theta
        .windows(3)
        .map(|w| {
            let d = w[0] - 2.0 * w[1] + w[2];
            d * d
        })
        .sum()
}
