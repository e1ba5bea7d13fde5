//! Linear inequality system `Mη ≥ 0` keeping the fitted model inside the
//! likelihood domain.
//!
//! Two families of rows, all acting on the latency block `(θ, β, α)` only:
//!
//! * one row per baseline coefficient, `θ_u ≥ 0`;
//! * one row per subject and covariate measurement time `t`, requiring
//!   `ψ(t)ᵀθ + x(t)ᵀβ + wᵀα ≥ 0`.
//!
//! Subjects without time-varying covariates contribute a hazard row at their
//! observed time. Structurally identical rows (for example a hazard row for
//! a covariate-free subject, which collapses onto a plain `θ_u ≥ 0` row) are
//! merged, keeping a multiplicity count; the interior-point solver works on
//! the deduplicated system.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::baseline::BinGrid;
use crate::data::Dataset;
use crate::error::Result;

/// One inequality `Σ_j coeff_j · η_j ≥ 0`, entries sorted by coordinate.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    pub label: String,
    pub entries: Vec<(usize, f64)>,
    /// How many structurally identical rows were merged into this one.
    pub multiplicity: usize,
}

impl ConstraintRow {
    pub fn dot(&self, eta: &[f64]) -> f64 {
        self.entries.iter().map(|&(j, c)| c * eta[j]).sum()
    }

    /// Largest absolute coefficient, used to scale feasibility tolerances.
    pub fn scale(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(_, c)| c.abs())
            .fold(0.0, f64::max)
    }
}

/// Deduplicated constraint matrix `M` for a dataset/grid pair.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    rows: Vec<ConstraintRow>,
    n_cols: usize,
    logical_rows: usize,
}

impl ConstraintMatrix {
    /// Assembles θ-nonnegativity rows plus per-subject hazard rows at every
    /// covariate measurement time.
    pub fn build(dataset: &Dataset, grid: &BinGrid) -> Result<Self> {
        let m = grid.m();
        let (p, r) = (dataset.p, dataset.r);
        let n_cols = m + p + r + dataset.q;
        let mut rows: Vec<ConstraintRow> = Vec::with_capacity(m + dataset.n());
        // Key: exact bit pattern of the sorted entry list.
        let mut seen: HashMap<Vec<(usize, u64)>, usize> = HashMap::new();
        let mut logical_rows = 0usize;

        let mut push = |label: String, entries: Vec<(usize, f64)>| {
            logical_rows += 1;
            let key: Vec<(usize, u64)> =
                entries.iter().map(|&(j, c)| (j, c.to_bits())).collect();
            match seen.get(&key) {
                Some(&idx) => rows[idx].multiplicity += 1,
                None => {
                    seen.insert(key, rows.len());
                    rows.push(ConstraintRow { label, entries, multiplicity: 1 });
                }
            }
        };

        for u in 0..m {
            push(format!("theta[{u}]"), vec![(u, 1.0)]);
        }

        for (i, s) in dataset.subjects.iter().enumerate() {
            for (k, &t) in s.tv_times.iter().enumerate() {
                let bin = grid.bin_index(t)?;
                let mut entries = Vec::with_capacity(1 + p + r);
                entries.push((bin, 1.0));
                for (j, &x) in s.tv_values[k].iter().enumerate() {
                    if x != 0.0 {
                        entries.push((m + j, x));
                    }
                }
                for (j, &wv) in s.w.iter().enumerate() {
                    if wv != 0.0 {
                        entries.push((m + p + j, wv));
                    }
                }
                push(format!("hazard[{i}]@t={t}"), entries);
            }
        }

        Ok(ConstraintMatrix { rows, n_cols, logical_rows })
    }

    /// Number of deduplicated rows (the `w` in the barrier parameter
    /// `μ = λᵀs / w`).
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of columns (`v`, the full parameter dimension; γ columns are
    /// identically zero).
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Row count before merging duplicates (`m + Σᵢ nᵢ`).
    pub fn logical_row_count(&self) -> usize {
        self.logical_rows
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    /// `out = Mη`.
    pub fn mul_into(&self, eta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows.len());
        for (slot, row) in out.iter_mut().zip(&self.rows) {
            *slot = row.dot(eta);
        }
    }

    pub fn mul(&self, eta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        self.mul_into(eta, &mut out);
        out
    }

    /// `out += Mᵀy`.
    pub fn mul_transpose_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows.len());
        for (row, &yb) in self.rows.iter().zip(y) {
            if yb == 0.0 {
                continue;
            }
            for &(j, c) in &row.entries {
                out[j] += yb * c;
            }
        }
    }

    /// `target += Σ_b weight_b · m_b m_bᵀ` (both triangles), the
    /// `MᵀS⁻¹ΛM` term of the reduced Newton system.
    pub fn add_weighted_gram(&self, weights: &[f64], target: &mut DMatrix<f64>) {
        debug_assert_eq!(weights.len(), self.rows.len());
        debug_assert_eq!(target.nrows(), self.n_cols);
        let v = self.n_cols;
        let data = target.as_mut_slice();
        for (row, &wb) in self.rows.iter().zip(weights) {
            if wb == 0.0 {
                continue;
            }
            for &(j, cj) in &row.entries {
                let col = j * v;
                let wc = wb * cj;
                for &(i, ci) in &row.entries {
                    data[col + i] += wc * ci;
                }
            }
        }
    }

    /// Smallest slack `min_b (Mη)_b`; negative means infeasible.
    pub fn min_slack(&self, eta: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|row| row.dot(eta))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, eta: &[f64], tol: f64) -> bool {
        self.min_slack(eta) >= -tol
    }

    /// Dense submatrix of the selected rows (over all `v` columns), used to
    /// build the active-constraint null space for inference.
    pub fn dense_rows(&self, indices: &[usize]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(indices.len(), self.n_cols);
        for (out_i, &b) in indices.iter().enumerate() {
            for &(j, c) in &self.rows[b].entries {
                out[(out_i, j)] = c;
            }
        }
        out
    }

    /// Full dense form of `M`, for small-scale test oracles.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.rows.len()).collect();
        self.dense_rows(&all)
    }
}
