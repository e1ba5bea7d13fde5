//! Mixture cure additive hazards likelihood for partly interval-censored data.
//!
//! The observable survival function mixes a cured fraction with a susceptible
//! latency model: `S~(t) = π(z)·S(t) + 1 − π(z)`, where `π` is logistic in the
//! incidence covariates and the latency hazard is additive,
//! `h(t) = ψ(t)ᵀθ + x(t)ᵀβ + wᵀα`. Each censoring kind contributes its own
//! log-likelihood term:
//!
//! * exact event:    `log π + log h(t) − H(t)`
//! * right censored: `log(1 − π + π·S(t_L))`
//! * left censored:  `log π + log(1 − S(t_R))`
//! * interval:       `log π + log(S(t_L) − S(t_R))`
//!
//! `h` and `H` are linear in `(θ, β, α)` and `π` depends only on `γ`, which
//! keeps the Hessian a sum of structured rank-one blocks; the only γ–latency
//! coupling comes from the right-censoring term.

use nalgebra::DMatrix;

use crate::baseline::{penalty_value, BinGrid};
use crate::data::{BlockLayout, CensoringKind, CovariateProfile, Dataset, ParamVector};
use crate::error::{Error, Result};

/// Logistic incidence probability `π = exp(zᵀγ) / (1 + exp(zᵀγ))`, saturating
/// cleanly at 0 and 1 for extreme linear predictors.
pub fn incidence_prob(gamma: &[f64], z: &[f64]) -> f64 {
    sigmoid(dot(gamma, z))
}

fn sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let x = e.exp();
        x / (1.0 + x)
    }
}

/// `log σ(e)` without overflow on either tail.
fn log_sigmoid(e: f64) -> f64 {
    if e >= 0.0 {
        -(-e).exp().ln_1p()
    } else {
        e - e.exp().ln_1p()
    }
}

/// `log(1 − e^{−x})` for `x > 0`, switching between the `ln_1p` and `exp_m1`
/// forms at `ln 2` so both tails keep full precision.
fn ln_one_minus_exp_neg(x: f64) -> f64 {
    if x > std::f64::consts::LN_2 {
        (-(-x).exp()).ln_1p()
    } else {
        (-(-x).exp_m1()).ln()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Baseline-basis and covariate values cached for one time point of one
/// subject. `psi_int` holds `Ψ(t)`; only its first `nnz` entries are nonzero.
struct TimeEval {
    t: f64,
    bin: usize,
    nnz: usize,
    psi_int: Vec<f64>,
    x_at: Vec<f64>,
    x_int: Vec<f64>,
}

struct SubjectEval {
    kind: CensoringKind,
    z: Vec<f64>,
    w: Vec<f64>,
    first: TimeEval,
    second: Option<TimeEval>,
}

/// Precomputed per-subject evaluations shared by every likelihood call on a
/// given dataset and bin grid. Building it once keeps the solver's inner loop
/// free of basis lookups and allocation.
pub struct ModelWorkspace {
    layout: BlockLayout,
    grid: BinGrid,
    evals: Vec<SubjectEval>,
}

impl ModelWorkspace {
    pub fn new(dataset: &Dataset, grid: &BinGrid) -> Result<Self> {
        let layout = BlockLayout {
            m: grid.m(),
            p: dataset.p,
            r: dataset.r,
            q: dataset.q,
        };
        let mut evals = Vec::with_capacity(dataset.n());
        for s in &dataset.subjects {
            let make = |t: f64| -> Result<TimeEval> {
                let bin = grid.bin_index(t)?;
                let mut psi_int = vec![0.0; grid.m()];
                let nnz = grid.fill_basis_integral(t, &mut psi_int)?;
                Ok(TimeEval {
                    t,
                    bin,
                    nnz,
                    psi_int,
                    x_at: s.x_at(t).to_vec(),
                    x_int: s.x_integral_at(t),
                })
            };
            let (first, second) = match s.kind {
                CensoringKind::Event => (make(s.t_right)?, None),
                CensoringKind::Right => (make(s.t_left)?, None),
                CensoringKind::Left => (make(s.t_right)?, None),
                CensoringKind::Interval => (make(s.t_left)?, Some(make(s.t_right)?)),
            };
            evals.push(SubjectEval {
                kind: s.kind,
                z: s.z.clone(),
                w: s.w.clone(),
                first,
                second,
            });
        }
        Ok(ModelWorkspace { layout, grid: grid.clone(), evals })
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn grid(&self) -> &BinGrid {
        &self.grid
    }

    pub fn n_subjects(&self) -> usize {
        self.evals.len()
    }
}

/// Direction vector over the latency block `(θ, β, α)` with its nonzero
/// pattern: a leading slice of the θ block plus the dense β and α blocks.
struct LatVec {
    buf: Vec<f64>,
    segs: [(usize, usize); 3],
}

impl LatVec {
    fn new(layout: BlockLayout) -> Self {
        let (m, p, r) = (layout.m, layout.p, layout.r);
        LatVec {
            buf: vec![0.0; m + p + r],
            segs: [(0, 0), (m, m + p), (m + p, m + p + r)],
        }
    }

    /// Direction of the cumulative hazard `H`: `(Ψ(t), ∫x, w·t)`.
    fn fill_cumulative(&mut self, ev: &TimeEval, w: &[f64], layout: BlockLayout) {
        self.buf[..ev.nnz].copy_from_slice(&ev.psi_int[..ev.nnz]);
        self.segs[0] = (0, ev.nnz);
        let (m, p) = (layout.m, layout.p);
        self.buf[m..m + p].copy_from_slice(&ev.x_int);
        for (slot, wk) in self.buf[m + p..].iter_mut().zip(w) {
            *slot = wk * ev.t;
        }
    }

    /// Direction of the instantaneous hazard `h`: `(ψ(t), x(t), w)`.
    fn fill_instant(&mut self, ev: &TimeEval, w: &[f64], layout: BlockLayout) {
        self.buf[ev.bin] = 1.0;
        self.segs[0] = (ev.bin, ev.bin + 1);
        let (m, p) = (layout.m, layout.p);
        self.buf[m..m + p].copy_from_slice(&ev.x_at);
        self.buf[m + p..].copy_from_slice(w);
    }

    /// `self = ca·a + cb·b` where `b`'s θ prefix is at least as long as `a`'s
    /// (true for interval terms: the right endpoint reaches a later bin).
    fn fill_combination(&mut self, ca: f64, a: &LatVec, cb: f64, b: &LatVec) {
        let na = a.segs[0].1;
        let nb = b.segs[0].1;
        debug_assert!(na <= nb);
        for j in 0..na {
            self.buf[j] = ca * a.buf[j] + cb * b.buf[j];
        }
        for j in na..nb {
            self.buf[j] = cb * b.buf[j];
        }
        self.segs[0] = (0, nb);
        for (s, e) in &self.segs[1..] {
            for j in *s..*e {
                self.buf[j] = ca * a.buf[j] + cb * b.buf[j];
            }
        }
    }
}

/// Accumulates `grad += c·u` over the nonzero segments of `u`.
fn axpy_lat(grad: &mut [f64], c: f64, u: &LatVec) {
    if c == 0.0 {
        return;
    }
    for (s, e) in u.segs {
        for j in s..e {
            grad[j] += c * u.buf[j];
        }
    }
}

/// Accumulates the lower triangle of `c·u uᵀ` into the column-major buffer of
/// a `v×v` matrix, touching only `u`'s nonzero segments.
fn rank1_lower(h: &mut [f64], v: usize, c: f64, u: &LatVec) {
    if c == 0.0 {
        return;
    }
    for a in 0..3 {
        let (js, je) = u.segs[a];
        for j in js..je {
            let cu = c * u.buf[j];
            if cu == 0.0 {
                continue;
            }
            let col = j * v;
            for i in j..je {
                h[col + i] += cu * u.buf[i];
            }
            for (is, ie) in &u.segs[a + 1..] {
                for i in *is..*ie {
                    h[col + i] += cu * u.buf[i];
                }
            }
        }
    }
}

/// Shared evaluation core: penalized log-likelihood value with optional
/// gradient and Hessian accumulation (Hessian built as a lower triangle and
/// mirrored at the end).
fn eval_inner(
    ws: &ModelWorkspace,
    penalty: Option<(&DMatrix<f64>, f64)>,
    eta: &[f64],
    mut grad: Option<&mut [f64]>,
    mut hess: Option<&mut DMatrix<f64>>,
) -> Result<f64> {
    let layout = ws.layout;
    let (m, p, r, q) = (layout.m, layout.p, layout.r, layout.q);
    let v = layout.v();
    assert_eq!(eta.len(), v, "parameter vector length mismatch");
    let g0 = layout.gamma_offset();
    let theta = &eta[..m];
    let beta = &eta[m..m + p];
    let alpha = &eta[m + p..m + p + r];
    let gamma = &eta[g0..];

    if let Some(g) = grad.as_deref_mut() {
        assert_eq!(g.len(), v);
        g.fill(0.0);
    }
    if let Some(h) = hess.as_deref_mut() {
        assert_eq!((h.nrows(), h.ncols()), (v, v));
        h.fill(0.0);
    }

    let mut u_a = LatVec::new(layout);
    let mut u_b = LatVec::new(layout);
    let mut u_g = LatVec::new(layout);
    let mut value = 0.0;

    for (i, se) in ws.evals.iter().enumerate() {
        let cum = |ev: &TimeEval| -> f64 {
            let mut acc = 0.0;
            for u in 0..ev.nnz {
                acc += ev.psi_int[u] * theta[u];
            }
            acc + dot(&ev.x_int, beta) + dot(&se.w, alpha) * ev.t
        };
        let e_lin = dot(&se.z, gamma);
        let pi = sigmoid(e_lin);
        let d_pi = pi * (1.0 - pi);

        // log π part shared by the event, left and interval terms; the
        // right-censoring term mixes π into its own expression below.
        let mut grad_gamma_coef = 0.0;
        let mut hess_gamma_coef = 0.0;

        match se.kind {
            CensoringKind::Event => {
                let ev = &se.first;
                let h_val = theta[ev.bin] + dot(&ev.x_at, beta) + dot(&se.w, alpha);
                if h_val <= 0.0 {
                    return Err(Error::Domain { subject: i, term: "event hazard" });
                }
                value += log_sigmoid(e_lin) + h_val.ln() - cum(ev);
                grad_gamma_coef = 1.0 - pi;
                hess_gamma_coef = -d_pi;
                if grad.is_some() || hess.is_some() {
                    u_a.fill_instant(ev, &se.w, layout);
                    u_b.fill_cumulative(ev, &se.w, layout);
                    if let Some(g) = grad.as_deref_mut() {
                        axpy_lat(g, 1.0 / h_val, &u_a);
                        axpy_lat(g, -1.0, &u_b);
                    }
                    if let Some(h) = hess.as_deref_mut() {
                        rank1_lower(h.as_mut_slice(), v, -1.0 / (h_val * h_val), &u_a);
                    }
                }
            }
            CensoringKind::Right => {
                let ev = &se.first;
                let big_h = cum(ev);
                // F = 1 − S(t_L); may be negative at a point where the
                // unconstrained cumulative hazard dips below zero.
                let f_cens = -(-big_h).exp_m1();
                let a_mix = 1.0 - pi * f_cens;
                if a_mix <= 0.0 {
                    return Err(Error::Domain { subject: i, term: "right mixture" });
                }
                value += (-pi * f_cens).ln_1p();
                if grad.is_some() || hess.is_some() {
                    let s_val = (-big_h).exp();
                    let c_gam = -f_cens * d_pi / a_mix;
                    let c_lat = -pi * s_val / a_mix;
                    let c_lat_h = d_pi * s_val / (a_mix * a_mix);
                    u_b.fill_cumulative(ev, &se.w, layout);
                    if let Some(g) = grad.as_deref_mut() {
                        axpy_lat(g, c_lat, &u_b);
                        for (k, zk) in se.z.iter().enumerate() {
                            g[g0 + k] += c_gam * zk;
                        }
                    }
                    if let Some(h) = hess.as_deref_mut() {
                        let hs = h.as_mut_slice();
                        rank1_lower(hs, v, c_lat_h, &u_b);
                        // γγ block.
                        let cg2 = c_gam * (1.0 - 2.0 * pi) - c_gam * c_gam;
                        for j in 0..q {
                            let col = (g0 + j) * v;
                            for k in j..q {
                                hs[col + g0 + k] += cg2 * se.z[j] * se.z[k];
                            }
                        }
                        // γ–latency coupling (the only cross block).
                        for (s, e) in u_b.segs {
                            for j in s..e {
                                let col = j * v;
                                let cj = -c_lat_h * u_b.buf[j];
                                for (k, zk) in se.z.iter().enumerate() {
                                    hs[col + g0 + k] += cj * zk;
                                }
                            }
                        }
                    }
                }
            }
            CensoringKind::Left => {
                let ev = &se.first;
                let big_h = cum(ev);
                if big_h <= 0.0 {
                    return Err(Error::Domain { subject: i, term: "left survival" });
                }
                value += log_sigmoid(e_lin) + ln_one_minus_exp_neg(big_h);
                grad_gamma_coef = 1.0 - pi;
                hess_gamma_coef = -d_pi;
                if grad.is_some() || hess.is_some() {
                    // ratio = S/F = 1/(e^H − 1); F = 1 − S.
                    let ratio = 1.0 / big_h.exp_m1();
                    let f_cens = -(-big_h).exp_m1();
                    u_b.fill_cumulative(ev, &se.w, layout);
                    if let Some(g) = grad.as_deref_mut() {
                        axpy_lat(g, ratio, &u_b);
                    }
                    if let Some(h) = hess.as_deref_mut() {
                        rank1_lower(h.as_mut_slice(), v, -ratio / f_cens, &u_b);
                    }
                }
            }
            CensoringKind::Interval => {
                let ev_l = &se.first;
                let ev_r = se.second.as_ref().expect("interval subjects carry two evaluations");
                let h_l = cum(ev_l);
                let h_r = cum(ev_r);
                let dh = h_r - h_l;
                if dh <= 0.0 {
                    return Err(Error::Domain { subject: i, term: "interval survival difference" });
                }
                value += log_sigmoid(e_lin) - h_l + ln_one_minus_exp_neg(dh);
                grad_gamma_coef = 1.0 - pi;
                hess_gamma_coef = -d_pi;
                if grad.is_some() || hess.is_some() {
                    // q_e = 1 − e^{−ΔH}; S_L/D = 1/q_e, S_R/D = e^{−ΔH}/q_e.
                    let q_e = -(-dh).exp_m1();
                    let r_l = 1.0 / q_e;
                    let r_r = (-dh).exp() / q_e;
                    u_a.fill_cumulative(ev_l, &se.w, layout);
                    u_b.fill_cumulative(ev_r, &se.w, layout);
                    u_g.fill_combination(-r_l, &u_a, r_r, &u_b);
                    if let Some(g) = grad.as_deref_mut() {
                        axpy_lat(g, 1.0, &u_g);
                    }
                    if let Some(h) = hess.as_deref_mut() {
                        let hs = h.as_mut_slice();
                        rank1_lower(hs, v, r_l, &u_a);
                        rank1_lower(hs, v, -r_r, &u_b);
                        rank1_lower(hs, v, -1.0, &u_g);
                    }
                }
            }
        }

        if grad_gamma_coef != 0.0 || hess_gamma_coef != 0.0 {
            if let Some(g) = grad.as_deref_mut() {
                for (k, zk) in se.z.iter().enumerate() {
                    g[g0 + k] += grad_gamma_coef * zk;
                }
            }
            if let Some(h) = hess.as_deref_mut() {
                let hs = h.as_mut_slice();
                for j in 0..q {
                    let col = (g0 + j) * v;
                    for k in j..q {
                        hs[col + g0 + k] += hess_gamma_coef * se.z[j] * se.z[k];
                    }
                }
            }
        }
    }

    if let Some((r_mat, omega)) = penalty {
        debug_assert_eq!(r_mat.nrows(), m);
        if omega != 0.0 {
            value -= omega * penalty_value(theta);
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..m {
                    let mut acc = 0.0;
                    for u in 0..m {
                        acc += r_mat[(j, u)] * theta[u];
                    }
                    g[j] -= 2.0 * omega * acc;
                }
            }
            if let Some(h) = hess.as_deref_mut() {
                let hs = h.as_mut_slice();
                for j in 0..m {
                    let col = j * v;
                    for u in j..m {
                        hs[col + u] -= 2.0 * omega * r_mat[(u, j)];
                    }
                }
            }
        }
    }

    if let Some(h) = hess.as_deref_mut() {
        let hs = h.as_mut_slice();
        for j in 0..v {
            for iu in j + 1..v {
                hs[j + iu * v] = hs[iu + j * v];
            }
        }
    }

    Ok(value)
}

/// Unpenalized log-likelihood `ℓ(η)`.
pub fn log_likelihood(ws: &ModelWorkspace, eta: &[f64]) -> Result<f64> {
    eval_inner(ws, None, eta, None, None)
}

/// Penalized log-likelihood `Φ(η) = ℓ(η) − ω·θᵀRθ`.
pub fn penalized_loglik(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    omega: f64,
    eta: &[f64],
) -> Result<f64> {
    eval_inner(ws, Some((penalty, omega)), eta, None, None)
}

/// Gradient of `Φ`; the penalty contributes `−2ωRθ` to the θ block only.
pub fn gradient(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    omega: f64,
    eta: &[f64],
) -> Result<Vec<f64>> {
    let mut g = vec![0.0; ws.layout.v()];
    eval_inner(ws, Some((penalty, omega)), eta, Some(&mut g), None)?;
    Ok(g)
}

/// Hessian of `Φ`; the penalty contributes `−2ωR` to the θ,θ block only.
pub fn hessian(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    omega: f64,
    eta: &[f64],
) -> Result<DMatrix<f64>> {
    let v = ws.layout.v();
    let mut h = DMatrix::zeros(v, v);
    eval_inner(ws, Some((penalty, omega)), eta, None, Some(&mut h))?;
    Ok(h)
}

/// One-pass value + gradient + Hessian into caller-owned buffers; the
/// solver's per-iteration workhorse.
pub fn value_grad_hess(
    ws: &ModelWorkspace,
    penalty: &DMatrix<f64>,
    omega: f64,
    eta: &[f64],
    grad: &mut [f64],
    hess: &mut DMatrix<f64>,
) -> Result<f64> {
    eval_inner(ws, Some((penalty, omega)), eta, Some(grad), Some(hess))
}

/// Latency hazard `h(t) = ψ(t)ᵀθ + x(t)ᵀβ + wᵀα` for an arbitrary covariate
/// profile (times beyond the grid clamp to the last bin).
pub fn hazard_at(
    grid: &BinGrid,
    profile: &CovariateProfile,
    theta: &[f64],
    beta: &[f64],
    alpha: &[f64],
    t: f64,
) -> Result<f64> {
    let bin = grid.bin_index(t)?;
    Ok(theta[bin] + dot(profile.x_at(t), beta) + dot(&profile.w, alpha))
}

/// Cumulative latency hazard `H(t) = Ψ(t)ᵀθ + (∫x)ᵀβ + wᵀα·t`.
pub fn cum_hazard_at(
    grid: &BinGrid,
    profile: &CovariateProfile,
    theta: &[f64],
    beta: &[f64],
    alpha: &[f64],
    t: f64,
) -> Result<f64> {
    let psi = grid.basis_integral_at(t)?;
    Ok(dot(&psi, theta) + dot(&profile.x_integral_at(t), beta) + dot(&profile.w, alpha) * t)
}

/// Susceptible survival `S(t) = exp(−H(t))`.
pub fn survival_at(
    grid: &BinGrid,
    profile: &CovariateProfile,
    theta: &[f64],
    beta: &[f64],
    alpha: &[f64],
    t: f64,
) -> Result<f64> {
    Ok((-cum_hazard_at(grid, profile, theta, beta, alpha, t)?).exp())
}

/// Population (mixture) survival `S~(t) = π(z)·S(t) + 1 − π(z)`.
pub fn mixture_survival_at(
    grid: &BinGrid,
    profile: &CovariateProfile,
    eta: &ParamVector,
    t: f64,
) -> Result<f64> {
    let pi = incidence_prob(&eta.gamma, &profile.z);
    let s = survival_at(grid, profile, &eta.theta, &eta.beta, &eta.alpha, t)?;
    Ok(pi * s + 1.0 - pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn subject(
        t_left: f64,
        t_right: f64,
        z: Vec<f64>,
        w: Vec<f64>,
        tv: Option<(Vec<f64>, Vec<Vec<f64>>)>,
        p: usize,
    ) -> Subject {
        let (times, values) = tv.unwrap_or((vec![], vec![]));
        Subject::new(t_left, t_right, z, w, times, values, p).unwrap()
    }

    /// Small mixed dataset exercising every censoring kind, a time-varying
    /// covariate switch, and both covariate blocks.
    fn mixed_dataset() -> (Dataset, BinGrid) {
        let mut subjects = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..32 {
            let z = vec![1.0, rng.gen_range(-1.0..1.0)];
            let w = vec![rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5)];
            let t_switch = rng.gen_range(0.3..1.8);
            let t_end: f64 = rng.gen_range(0.2..2.4);
            let tv = |t_obs: f64| {
                if t_switch < t_obs {
                    (vec![t_switch, t_obs], vec![vec![0.0], vec![1.0]])
                } else {
                    (vec![t_obs], vec![vec![0.0]])
                }
            };
            let s = match i % 4 {
                0 => subject(t_end, t_end, z, w, Some(tv(t_end)), 1),
                1 => subject(t_end, f64::INFINITY, z, w, Some(tv(t_end)), 1),
                2 => subject(0.0, t_end, z, w, Some(tv(t_end)), 1),
                _ => {
                    let t_r = t_end + rng.gen_range(0.2..0.8);
                    subject(t_end, t_r, z, w, Some(tv(t_r)), 1)
                }
            };
            subjects.push(s);
        }
        let data = Dataset::from_subjects(subjects).unwrap();
        let grid = BinGrid::build(&data, 4).unwrap();
        (data, grid)
    }

    /// Random parameter point that keeps every hazard (and thus every
    /// likelihood term) strictly positive for `mixed_dataset`.
    fn feasible_eta(layout: BlockLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut eta = Vec::with_capacity(layout.v());
        for _ in 0..layout.m {
            eta.push(rng.gen_range(0.5..1.5));
        }
        for _ in 0..layout.p + layout.r {
            eta.push(rng.gen_range(-0.08..0.08));
        }
        for _ in 0..layout.q {
            eta.push(rng.gen_range(-0.6..0.6));
        }
        eta
    }

    #[test]
    fn incidence_prob_matches_logistic_formula() {
        assert_relative_eq!(incidence_prob(&[0.0, 0.0], &[1.0, 3.0]), 0.5);
        let e: f64 = -0.2 + 0.5 * 3.0;
        let expected = e.exp() / (1.0 + e.exp());
        assert_relative_eq!(incidence_prob(&[-0.2, 0.5], &[1.0, 3.0]), expected, epsilon = 1e-15);
        assert_relative_eq!(expected, 0.785835, epsilon = 1e-6);
    }

    #[test]
    fn incidence_prob_saturates_without_overflow() {
        assert_eq!(incidence_prob(&[700.0], &[1.0]), 1.0);
        let tiny = incidence_prob(&[-700.0], &[1.0]);
        assert!(tiny >= 0.0 && tiny < 1e-300, "expected underflow toward 0, got {tiny}");
        assert!(log_sigmoid(-700.0).is_finite());
        assert_relative_eq!(log_sigmoid(-700.0), -700.0);
    }

    fn single_subject_ws(s: Subject, edges: Vec<f64>) -> ModelWorkspace {
        let data = Dataset::from_subjects(vec![s]).unwrap();
        let grid = BinGrid::from_edges(edges).unwrap();
        ModelWorkspace::new(&data, &grid).unwrap()
    }

    #[test]
    fn event_term_by_hand() {
        // π = 0.5, h(1) = 1, H(1) = 1: term = log 0.5 + log 1 − 1.
        let ws = single_subject_ws(
            subject(1.0, 1.0, vec![1.0], vec![], None, 0),
            vec![0.0, 2.0],
        );
        let ll = log_likelihood(&ws, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(ll, 0.5f64.ln() - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn right_censored_term_by_hand() {
        // π = 0.5, S(1) = e^{-1}: term = log(0.5 + 0.5 e^{-1}) ≈ -0.380067.
        let ws = single_subject_ws(
            subject(1.0, f64::INFINITY, vec![1.0], vec![], None, 0),
            vec![0.0, 2.0],
        );
        let ll = log_likelihood(&ws, &[1.0, 0.0]).unwrap();
        let expected = (0.5 + 0.5 * (-1.0f64).exp()).ln();
        assert_relative_eq!(ll, expected, epsilon = 1e-15);
        assert_relative_eq!(ll, -0.379885, epsilon = 1e-6);
    }

    #[test]
    fn left_censored_term_by_hand() {
        let ws = single_subject_ws(
            subject(0.0, 1.5, vec![1.0], vec![], None, 0),
            vec![0.0, 2.0],
        );
        let ll = log_likelihood(&ws, &[1.0, 0.3]).unwrap();
        let pi = sigmoid(0.3);
        let expected = pi.ln() + (1.0 - (-1.5f64).exp()).ln();
        assert_relative_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn interval_term_by_hand() {
        let ws = single_subject_ws(
            subject(0.5, 1.5, vec![1.0], vec![], None, 0),
            vec![0.0, 2.0],
        );
        let ll = log_likelihood(&ws, &[1.0, 0.0]).unwrap();
        let expected = 0.5f64.ln() + ((-0.5f64).exp() - (-1.5f64).exp()).ln();
        assert_relative_eq!(ll, expected, epsilon = 1e-12);
    }

    #[test]
    fn flat_hazard_over_interval_is_a_domain_violation() {
        // θ = (1, 0) makes S(t_L) = S(t_R) across the second bin.
        let ws = single_subject_ws(
            subject(1.0, 2.0, vec![1.0], vec![], None, 0),
            vec![0.0, 1.0, 2.0],
        );
        let err = log_likelihood(&ws, &[1.0, 0.0, 0.0]).unwrap_err();
        match err {
            Error::Domain { subject: 0, term } => {
                assert_eq!(term, "interval survival difference")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn nonpositive_event_hazard_is_a_domain_violation() {
        let ws = single_subject_ws(
            subject(1.0, 1.0, vec![1.0], vec![1.0], None, 0),
            vec![0.0, 2.0],
        );
        // θ + α·w = 0.5 − 0.6 < 0.
        let err = log_likelihood(&ws, &[0.5, -0.6, 0.0]).unwrap_err();
        match err {
            Error::Domain { subject: 0, term } => assert_eq!(term, "event hazard"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn penalty_shifts_value_and_vanishes_for_constant_theta() {
        let (data, grid) = mixed_dataset();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let r = crate::baseline::penalty_matrix(ws.layout().m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut eta = feasible_eta(ws.layout(), &mut rng);
        // Constant θ: the second-difference penalty is exactly zero.
        for t in eta.iter_mut().take(ws.layout().m) {
            *t = 0.8;
        }
        let ll = log_likelihood(&ws, &eta).unwrap();
        let phi = penalized_loglik(&ws, &r, 7.5, &eta).unwrap();
        assert_relative_eq!(ll, phi, epsilon = 1e-12);
        // A spike pays the quadratic price.
        eta[0] = 1.8;
        let ll = log_likelihood(&ws, &eta).unwrap();
        let phi = penalized_loglik(&ws, &r, 2.0, &eta).unwrap();
        let theta = &eta[..ws.layout().m];
        assert_relative_eq!(phi, ll - 2.0 * penalty_value(theta), epsilon = 1e-12);
    }

    #[test]
    fn permuting_subjects_leaves_loglik_unchanged() {
        let (data, grid) = mixed_dataset();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let mut shuffled = data.clone();
        shuffled.subjects.rotate_left(13);
        shuffled.subjects.swap(0, 5);
        let ws2 = ModelWorkspace::new(&shuffled, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eta = feasible_eta(ws.layout(), &mut rng);
        let a = log_likelihood(&ws, &eta).unwrap();
        let b = log_likelihood(&ws2, &eta).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn empty_dataset_leaves_only_the_penalty() {
        let data = Dataset::new(vec![], vec![], vec![], vec![]).unwrap();
        let grid = BinGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let r = crate::baseline::penalty_matrix(4);
        let eta = vec![1.0, 0.0, 0.0, 0.0];
        let omega = 2.0;
        assert_relative_eq!(
            penalized_loglik(&ws, &r, omega, &eta).unwrap(),
            -2.0,
            epsilon = 1e-14
        );
        let g = gradient(&ws, &r, omega, &eta).unwrap();
        // ∇Φ = −2ωRθ on the θ block.
        let mut expected = vec![0.0; 4];
        for j in 0..4 {
            for u in 0..4 {
                expected[j] -= 2.0 * omega * r[(j, u)] * eta[u];
            }
        }
        for (a, b) in g.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn survival_derivative_matches_hazard() {
        // d/dt S(t) = −h(t) S(t) wherever the hazard is piecewise constant.
        let grid = BinGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let profile = CovariateProfile {
            z: vec![],
            w: vec![0.7],
            tv_times: vec![1.4, 3.0],
            tv_values: vec![vec![0.0], vec![1.0]],
        };
        let theta = [0.8, 0.5, 0.9];
        let beta = [0.25];
        let alpha = [0.3];
        for &t in &[0.4, 1.2, 1.7, 2.6] {
            let h = hazard_at(&grid, &profile, &theta, &beta, &alpha, t).unwrap();
            let s = |tt: f64| survival_at(&grid, &profile, &theta, &beta, &alpha, tt).unwrap();
            let d = 1e-6;
            let fd = (s(t + d) - s(t - d)) / (2.0 * d);
            assert_relative_eq!(fd, -h * s(t), epsilon = 1e-6);
        }
    }

    #[test]
    fn cumulative_hazard_tracks_covariate_switch() {
        let grid = BinGrid::from_edges(vec![0.0, 2.0]).unwrap();
        let profile = CovariateProfile {
            z: vec![],
            w: vec![],
            tv_times: vec![1.0, 3.0],
            tv_values: vec![vec![0.0], vec![1.0]],
        };
        let h = |t: f64| cum_hazard_at(&grid, &profile, &[0.5], &[0.5], &[], t).unwrap();
        assert_relative_eq!(h(0.5), 0.25, epsilon = 1e-15);
        // After the switch at t = 1 the x contribution accrues at rate β.
        assert_relative_eq!(h(3.0), 0.5 * 3.0 + 0.5 * 2.0, epsilon = 1e-15);
        // Continuity at the switch point.
        assert_relative_eq!(h(1.0 - 1e-9), h(1.0 + 1e-9), epsilon = 1e-7);
    }

    #[test]
    fn mixture_survival_limits() {
        let grid = BinGrid::from_edges(vec![0.0, 2.0]).unwrap();
        let profile = CovariateProfile {
            z: vec![1.0],
            w: vec![],
            tv_times: vec![],
            tv_values: vec![],
        };
        let eta = ParamVector {
            theta: vec![1.0],
            beta: vec![],
            alpha: vec![],
            gamma: vec![0.0],
        };
        assert_relative_eq!(mixture_survival_at(&grid, &profile, &eta, 0.0).unwrap(), 1.0);
        let expected = 0.5 * (-1.0f64).exp() + 0.5;
        assert_relative_eq!(
            mixture_survival_at(&grid, &profile, &eta, 1.0).unwrap(),
            expected,
            epsilon = 1e-15
        );
        assert_relative_eq!(expected, 0.683940, epsilon = 1e-6);
        // A hugely negative incidence predictor means "everyone cured".
        let cured = ParamVector {
            gamma: vec![-500.0],
            ..eta
        };
        assert_relative_eq!(
            mixture_survival_at(&grid, &profile, &cured, 1.9).unwrap(),
            1.0
        );
    }

    /// Central finite difference of Φ.
    fn fd_gradient(
        ws: &ModelWorkspace,
        r: &DMatrix<f64>,
        omega: f64,
        eta: &[f64],
        h: f64,
    ) -> Vec<f64> {
        let mut out = vec![0.0; eta.len()];
        let mut probe = eta.to_vec();
        for j in 0..eta.len() {
            probe[j] = eta[j] + h;
            let up = penalized_loglik(ws, r, omega, &probe).unwrap();
            probe[j] = eta[j] - h;
            let dn = penalized_loglik(ws, r, omega, &probe).unwrap();
            probe[j] = eta[j];
            out[j] = (up - dn) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (data, grid) = mixed_dataset();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let r = crate::baseline::penalty_matrix(ws.layout().m);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..5 {
            let omega = if trial % 2 == 0 { 0.0 } else { 1.3 };
            let eta = feasible_eta(ws.layout(), &mut rng);
            let g = gradient(&ws, &r, omega, &eta).unwrap();
            let fd = fd_gradient(&ws, &r, omega, &eta, 1e-6);
            for (j, (a, b)) in g.iter().zip(&fd).enumerate() {
                let err = (a - b).abs() / (1.0 + a.abs());
                assert!(err < 1e-6, "coordinate {j}: analytic {a}, fd {b}, err {err}");
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences_of_gradient() {
        let (data, grid) = mixed_dataset();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let r = crate::baseline::penalty_matrix(ws.layout().m);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let omega = 0.7;
        let eta = feasible_eta(ws.layout(), &mut rng);
        let hess = hessian(&ws, &r, omega, &eta).unwrap();
        let v = eta.len();
        let step = 1e-5;
        let mut probe = eta.clone();
        for j in 0..v {
            probe[j] = eta[j] + step;
            let up = gradient(&ws, &r, omega, &probe).unwrap();
            probe[j] = eta[j] - step;
            let dn = gradient(&ws, &r, omega, &probe).unwrap();
            probe[j] = eta[j];
            for i in 0..v {
                let fd = (up[i] - dn[i]) / (2.0 * step);
                let a = hess[(i, j)];
                let err = (a - fd).abs() / (1.0 + a.abs());
                assert!(err < 1e-4, "entry ({i},{j}): analytic {a}, fd {fd}, err {err}");
            }
        }
        // Symmetry comes from the mirrored accumulation.
        for jj in 0..v {
            for ii in 0..v {
                assert_eq!(hess[(ii, jj)], hess[(jj, ii)]);
            }
        }
    }

    #[test]
    fn value_grad_hess_agrees_with_separate_calls() {
        let (data, grid) = mixed_dataset();
        let ws = ModelWorkspace::new(&data, &grid).unwrap();
        let r = crate::baseline::penalty_matrix(ws.layout().m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eta = feasible_eta(ws.layout(), &mut rng);
        let v = ws.layout().v();
        let mut g = vec![0.0; v];
        let mut h = DMatrix::zeros(v, v);
        let val = value_grad_hess(&ws, &r, 0.9, &eta, &mut g, &mut h).unwrap();
        assert_relative_eq!(val, penalized_loglik(&ws, &r, 0.9, &eta).unwrap());
        assert_eq!(g, gradient(&ws, &r, 0.9, &eta).unwrap());
        assert_eq!(h, hessian(&ws, &r, 0.9, &eta).unwrap());
    }
}
