//! Least squares, MSTLS sparse regression and fit metrics.
//!
//! Every solve works on the triangular factor of `[G | b]`, obtained once by
//! a chunked (TSQR) Householder reduction, so tall systems are touched only
//! when building the factor and when computing row-wise quantities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::weakform::{Term, WeakSystem};

const TSQR_CHUNK: usize = 8192;
/// Relative rank tolerance on the pivoted-QR diagonal.
pub const RANK_RTOL: f64 = 1e-12;

/// Triangular reduction `[G | b] = Q [[R, c], [0, ρ]]`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    r: DMatrix<f64>,
    c: DVector<f64>,
    rho2: f64,
    rows: usize,
    b_norm2: f64,
    b_sum: f64,
    col_norms: Vec<f64>,
}

fn qr_r(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().r()
}

impl LeastSquares {
    pub fn from_columns(columns: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let rows = b.len();
        let j = columns.len();
        if j == 0 {
            return Err(Error::Invalid("library matrix has no columns".into()));
        }
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Invalid("library columns differ in length from b".into()));
        }
        if rows < j {
            return Err(Error::InsufficientData(format!("{rows} rows for {j} columns")));
        }
        if let Some(k) = columns.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Undefined(format!("non-finite entry in column {k} of G")));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Undefined("non-finite entry in b".into()));
        }
        let width = j + 1;
        let chunks = rows.div_ceil(TSQR_CHUNK);
        let partial = exec::map_range(chunks, |k| {
            let lo = k * TSQR_CHUNK;
            let hi = (lo + TSQR_CHUNK).min(rows);
            let mut m = DMatrix::<f64>::zeros(hi - lo, width);
            for (c, col) in columns.iter().enumerate() {
                m.column_mut(c).copy_from_slice(&col[lo..hi]);
            }
            m.column_mut(j).copy_from_slice(&b[lo..hi]);
            qr_r(m)
        });
        let stacked_rows: usize = partial.iter().map(|p| p.nrows()).sum();
        let mut stacked = DMatrix::<f64>::zeros(stacked_rows, width);
        let mut at = 0;
        for p in &partial {
            stacked.view_mut((at, 0), (p.nrows(), width)).copy_from(p);
            at += p.nrows();
        }
        let full = qr_r(stacked);
        let r = full.view((0, 0), (j, j)).upper_triangle();
        let c = full.view((0, j), (j, 1)).column(0).into_owned();
        let rho2 = full[(j, j)].powi(2);
        Ok(Self {
            r,
            c,
            rho2,
            rows,
            b_norm2: b.iter().map(|v| v * v).sum(),
            b_sum: b.iter().sum(),
            col_norms: columns.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect(),
        })
    }

    pub fn from_system(sys: &WeakSystem) -> Result<Self> {
        Self::from_columns(&sys.columns, &sys.b)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.col_norms.len()
    }

    pub fn b_norm(&self) -> f64 {
        self.b_norm2.sqrt()
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.col_norms
    }

    /// Least-squares solution restricted to `cols`. Columns found linearly
    /// dependent on the others get zero weight and are reported.
    pub fn solve_subset(&self, cols: &[usize]) -> SubsetSolution {
        let j = self.cols();
        let mut weights = vec![0.0; j];
        if cols.is_empty() {
            return SubsetSolution {
                weights,
                dependent: Vec::new(),
            };
        }
        let sub = DMatrix::from_fn(j, cols.len(), |i, k| self.r[(i, cols[k])]);
        let qr = sub.col_piv_qr();
        let mut order = DMatrix::from_fn(1, cols.len(), |_, k| k as f64);
        qr.p().permute_columns(&mut order);
        let order: Vec<usize> = order.iter().map(|&v| v as usize).collect();
        let t = qr.r();
        let diag_max = (0..t.nrows().min(t.ncols())).map(|i| t[(i, i)].abs()).fold(0.0, f64::max);
        let rank = (0..t.nrows().min(t.ncols()))
            .take_while(|&i| t[(i, i)].abs() > RANK_RTOL * diag_max && diag_max > 0.0)
            .count();
        let dependent: Vec<usize> = order[rank..].iter().map(|&k| cols[k]).collect();
        if rank > 0 {
            let qtc = qr.q().transpose() * &self.c;
            let t11 = t.view((0, 0), (rank, rank)).into_owned();
            let rhs = qtc.rows(0, rank).into_owned();
            let sol = t11
                .solve_upper_triangular(&rhs)
                .expect("non-zero diagonal above the rank threshold");
            for (i, &k) in order[..rank].iter().enumerate() {
                weights[cols[k]] = sol[i];
            }
        }
        SubsetSolution { weights, dependent }
    }

    /// `‖b − G w‖²`.
    pub fn residual_norm2(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (&self.c - &self.r * w).norm_squared() + self.rho2
    }

    /// `‖G v‖²`.
    pub fn image_norm2(&self, v: &[f64]) -> f64 {
        (&self.r * DVector::from_column_slice(v)).norm_squared()
    }

    /// `‖b − b̄‖²`.
    pub fn centred_b_norm2(&self) -> f64 {
        self.b_norm2 - self.b_sum * self.b_sum / self.rows as f64
    }

    /// Coefficient of determination; `None` when `b` is constant.
    pub fn r_squared(&self, w: &[f64]) -> Option<f64> {
        let den = self.centred_b_norm2();
        if !(den > 1e-300) || den <= 1e-14 * self.b_norm2 {
            return None;
        }
        Some(1.0 - self.residual_norm2(w) / den)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSolution {
    pub weights: Vec<f64>,
    pub dependent: Vec<usize>,
}

/// Ordinary least squares on all columns.
pub fn ols(ls: &LeastSquares) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..ls.cols()).collect();
    let s = ls.solve_subset(&all);
    if !s.dependent.is_empty() {
        let mut columns = s.dependent;
        columns.sort_unstable();
        return Err(Error::RankDeficient { columns });
    }
    Ok(s.weights)
}

/// Result of thresholded least squares at one λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstlsFit {
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    pub iterations: usize,
    /// Every column was thresholded away.
    pub zero_model: bool,
}

/// Dominant-balance bounds `[λ max(1, ‖b‖/‖G_j‖), λ⁻¹ min(1, ‖b‖/‖G_j‖)]`.
pub fn balance_bounds(ls: &LeastSquares, lambda: f64) -> Vec<(f64, f64)> {
    let bn = ls.b_norm();
    ls.column_norms()
        .iter()
        .map(|&g| {
            let ratio = if g > 0.0 { bn / g } else { f64::INFINITY };
            (lambda * ratio.max(1.0), ratio.min(1.0) / lambda)
        })
        .collect()
}

/// MSTLS starting from the given support.
pub fn mstls_from(ls: &LeastSquares, lambda: f64, start: &[usize]) -> Result<MstlsFit> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invalid(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let bounds = balance_bounds(ls, lambda);
    let mut support: Vec<usize> = start.iter().copied().filter(|&j| ls.column_norms()[j] > 0.0).collect();
    let mut iterations = 0;
    let mut weights;
    loop {
        let sol = ls.solve_subset(&support);
        weights = sol.weights;
        iterations += 1;
        let next: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&j| !sol.dependent.contains(&j))
            .filter(|&j| {
                let (lo, hi) = bounds[j];
                let a = weights[j].abs();
                lo <= a && a <= hi
            })
            .collect();
        if next == support {
            break;
        }
        support = next;
        if iterations > 2 * ls.cols() + 2 {
            break;
        }
    }
    let zero_model = support.is_empty();
    if zero_model {
        weights.iter_mut().for_each(|w| *w = 0.0);
    }
    Ok(MstlsFit {
        lambda,
        weights,
        support,
        iterations,
        zero_model,
    })
}

/// MSTLS with every column initially active.
pub fn mstls(ls: &LeastSquares, lambda: f64) -> Result<MstlsFit> {
    let all: Vec<usize> = (0..ls.cols()).collect();
    mstls_from(ls, lambda, &all)
}

/// 50 values log-uniform on `[1e-4, 10^-0.08]`.
pub fn default_lambdas() -> Vec<f64> {
    let n = 50;
    (0..n)
        .map(|i| 10f64.powf(-4.0 + (4.0 - 0.08) * i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub loss: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best: MstlsFit,
    pub path: Vec<SweepPoint>,
    /// Unthresholded least-squares weights (dependent columns zeroed).
    pub least_squares: Vec<f64>,
}

/// Loss `‖G(w_LS − w)‖² / ‖G w_LS‖² + ‖w‖₀ / J`.
pub fn sweep_loss(ls: &LeastSquares, w_ls: &[f64], w: &[f64]) -> f64 {
    let bls2 = ls.image_norm2(w_ls);
    let diff: Vec<f64> = w_ls.iter().zip(w).map(|(a, b)| a - b).collect();
    let l0 = w.iter().filter(|v| **v != 0.0).count();
    let fit = if bls2 > 0.0 { ls.image_norm2(&diff) / bls2 } else { 0.0 };
    fit + l0 as f64 / ls.cols() as f64
}

/// Run MSTLS over `lambdas` and keep the loss minimizer; ties go to the
/// larger λ. Along the increasing grid each λ restarts from the terms kept
/// both by its own full-library fit and by the previous λ, so the support
/// only shrinks along the path.
pub fn mstls_sweep(ls: &LeastSquares, lambdas: &[f64]) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    let all: Vec<usize> = (0..ls.cols()).collect();
    let w_ls = ls.solve_subset(&all).weights;
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cold: Vec<Result<MstlsFit>> = exec::map_slice(&sorted, |&l| mstls(ls, l));
    let mut path = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, MstlsFit)> = None;
    let mut start = all;
    for (&l, cold) in sorted.iter().zip(cold) {
        let cold = cold?;
        start.retain(|j| cold.support.contains(j));
        let fit = if start == cold.support { cold } else { mstls_from(ls, l, &start)? };
        start.clone_from(&fit.support);
        let loss = sweep_loss(ls, &w_ls, &fit.weights);
        path.push(SweepPoint {
            lambda: fit.lambda,
            loss,
            support_size: fit.support.len(),
        });
        if best.as_ref().is_none_or(|(b, _)| loss <= *b) {
            best = Some((loss, fit));
        }
    }
    Ok(SweepResult {
        best: best.expect("non-empty grid").1,
        path,
        least_squares: w_ls,
    })
}

/// `R² = 1 − ‖b − Gw‖² / ‖b − b̄‖²` computed directly from the columns.
pub fn r_squared(columns: &[Vec<f64>], b: &[f64], w: &[f64]) -> Option<f64> {
    if b.len() < 2 {
        return None;
    }
    let r = residual(columns, b, w);
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let den: f64 = b.iter().map(|v| (v - mean).powi(2)).sum();
    if !(den > 0.0) {
        return None;
    }
    Some(1.0 - r.iter().map(|v| v * v).sum::<f64>() / den)
}

pub fn residual(columns: &[Vec<f64>], b: &[f64], w: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    for (c, &wj) in columns.iter().zip(w) {
        if wj != 0.0 {
            r.iter_mut().zip(c).for_each(|(a, g)| *a -= wj * g);
        }
    }
    r
}

/// `AIC = 2‖w‖₀ + N ln ‖r‖²` with `N` the total particle count.
pub fn aic(support_size: usize, residual_norm2: f64, particles: usize) -> Result<f64> {
    if !(residual_norm2 > 0.0) {
        return Err(Error::Undefined("zero residual: log-likelihood is unbounded".into()));
    }
    Ok(2.0 * support_size as f64 + particles as f64 * residual_norm2.ln())
}

pub fn delta_aic(a: f64, b: f64) -> f64 {
    a - b
}

/// Sandwich covariance `(GᵀG)⁻¹ (Σ r_k² g_k g_kᵀ) (GᵀG)⁻¹` on `support`,
/// returned as standard errors for all columns (zero off support).
pub fn robust_standard_errors(columns: &[Vec<f64>], b: &[f64], w: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    let j = columns.len();
    let mut out = vec![0.0; j];
    if support.is_empty() {
        return Ok(out);
    }
    let s = support.len();
    let rows = b.len();
    let r = residual(columns, b, w);
    let chunks = rows.div_ceil(TSQR_CHUNK);
    let partial = exec::map_range(chunks, |k| {
        let lo = k * TSQR_CHUNK;
        let hi = (lo + TSQR_CHUNK).min(rows);
        let mut gw = DMatrix::<f64>::zeros(hi - lo, s);
        for (a, &col) in support.iter().enumerate() {
            for i in lo..hi {
                gw[(i - lo, a)] = columns[col][i] * r[i];
            }
        }
        gw.tr_mul(&gw)
    });
    let meat = partial.into_iter().fold(DMatrix::<f64>::zeros(s, s), |acc, m| acc + m);
    // (GᵀG)⁻¹ = T⁻¹T⁻ᵀ with T the triangular factor of the support columns
    let sub: Vec<Vec<f64>> = support.iter().map(|&c| columns[c].clone()).collect();
    let ls = LeastSquares::from_columns(&sub, b)?;
    let sol = ls.solve_subset(&(0..s).collect::<Vec<_>>());
    if !sol.dependent.is_empty() {
        let mut cols: Vec<usize> = sol.dependent.iter().map(|&k| support[k]).collect();
        cols.sort_unstable();
        return Err(Error::RankDeficient { columns: cols });
    }
    let tinv = ls
        .r
        .solve_upper_triangular(&DMatrix::identity(s, s))
        .ok_or_else(|| Error::Singular("support columns are singular".into()))?;
    let ginv = &tinv * tinv.transpose();
    let cov = &ginv * meat * &ginv;
    for (a, &col) in support.iter().enumerate() {
        out[col] = cov[(a, a)].max(0.0).sqrt();
    }
    Ok(out)
}

/// Solver choice for a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Mstls,
    Ols,
}

/// A fitted model with physical-unit weights and fit metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    pub solver: Solver,
    pub terms: Vec<Term>,
    /// Physical units, see [`Term::units`].
    pub weights: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda: Option<f64>,
    pub r_squared: Option<f64>,
    pub aic: Option<f64>,
    pub residual_norm2: f64,
    pub zero_model: bool,
    pub rows: usize,
    pub particles: usize,
}

impl SparseModel {
    pub fn weight(&self, term: Term) -> Option<f64> {
        self.terms.iter().position(|t| *t == term).map(|j| self.weights[j])
    }

    pub fn std_error(&self, term: Term) -> Option<f64> {
        self.terms.iter().position(|t| *t == term).map(|j| self.std_errors[j])
    }
}

/// Fit `sys` with the chosen solver and compute all metrics.
pub fn fit_model(sys: &WeakSystem, solver: Solver, lambdas: &[f64], particles: usize) -> Result<SparseModel> {
    let ls = LeastSquares::from_system(sys)?;
    let (w, support, lambda, zero_model) = match solver {
        Solver::Ols => {
            let w = ols(&ls)?;
            let support = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
            (w, support, None, false)
        }
        Solver::Mstls => {
            let sweep = mstls_sweep(&ls, lambdas)?;
            let best = sweep.best;
            (best.weights, best.support, Some(best.lambda), best.zero_model)
        }
    };
    let rn2 = ls.residual_norm2(&w);
    let aic = match aic(support.len(), rn2, particles) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("{e}");
            None
        }
    };
    let se = robust_standard_errors(&sys.columns, &sys.b, &w, &support)?;
    Ok(SparseModel {
        solver,
        terms: sys.terms.clone(),
        weights: w.iter().zip(&sys.column_scale).map(|(a, s)| a * s).collect(),
        std_errors: se.iter().zip(&sys.column_scale).map(|(a, s)| a * s.abs()).collect(),
        support,
        lambda,
        r_squared: ls.r_squared(&w),
        aic,
        residual_norm2: rn2,
        zero_model,
        rows: ls.rows(),
        particles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_columns(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cols)
            .map(|_| (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn identity_block() {
        let cols = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let ls = LeastSquares::from_columns(&cols, &[1.0, 0.0, 0.0]).unwrap();
        let w = ols(&ls).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-15 && w[1].abs() < 1e-15);
    }

    #[test]
    fn overdetermined_matches_normal_equations() {
        // G = [[1,0],[1,1],[1,2]], b = (1,2,2): GᵀG = [[3,3],[3,5]], Gᵀb = (5,6)
        let cols = vec![vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]];
        let ls = LeastSquares::from_columns(&cols, &[1.0, 2.0, 2.0]).unwrap();
        let w = ols(&ls).unwrap();
        let (w0, w1) = ((5.0 * 5.0 - 3.0 * 6.0) / 6.0, (3.0 * 6.0 - 3.0 * 5.0) / 6.0);
        assert!((w[0] - w0).abs() < 1e-12 && (w[1] - w1).abs() < 1e-12);
        let r = residual(&cols, &[1.0, 2.0, 2.0], &w);
        assert!((ls.residual_norm2(&w) - r.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut cols = gaussian_columns(50, 3, 1);
        cols.push(cols[0].iter().zip(&cols[2]).map(|(a, b)| a - 2.0 * b).collect());
        let b = gaussian_columns(50, 1, 2).remove(0);
        let ls = LeastSquares::from_columns(&cols, &b).unwrap();
        match ols(&ls) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ols_residual_is_orthogonal_across_chunks() {
        let rows = 3 * TSQR_CHUNK + 17;
        let cols = gaussian_columns(rows, 6, 3);
        let b = gaussian_columns(rows, 1, 4).remove(0);
        let ls = LeastSquares::from_columns(&cols, &b).unwrap();
        let w = ols(&ls).unwrap();
        let r = residual(&cols, &b, &w);
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in &cols {
            let cn = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = c.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8 * cn * rn);
        }
        assert!((ls.residual_norm2(&w) / (rn * rn) - 1.0).abs() < 1e-10);
        let direct = r_squared(&cols, &b, &w).unwrap();
        assert!((ls.r_squared(&w).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn r_squared_cases() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let b = vec![2.0, 4.0, 6.0, 8.0];
        assert!((r_squared(&cols, &b, &[2.0]).unwrap() - 1.0).abs() < 1e-15);
        let b0 = vec![1.0, -1.0, 2.0, -2.0];
        assert_eq!(r_squared(&cols, &b0, &[0.0]), Some(0.0));
        assert_eq!(r_squared(&cols, &[3.0; 4], &[0.0]), None);
    }

    #[test]
    fn aic_cases() {
        assert!(aic(2, 0.0, 100).is_err());
        let a = aic(3, 0.5, 100).unwrap();
        assert_eq!(delta_aic(a, a), 0.0);
        assert!((a - (6.0 + 100.0 * 0.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn planted_support_and_limits() {
        let rows = 400;
        let mut cols = gaussian_columns(rows, 8, 5);
        let b: Vec<f64> = (0..rows).map(|i| 3.0 * cols[2][i] - cols[5][i]).collect();
        let noise = gaussian_columns(rows, 8, 6);
        for (c, n) in cols.iter_mut().zip(&noise) {
            c.iter_mut().zip(n).for_each(|(a, e)| *a += 1e-6 * e);
        }
        let ls = LeastSquares::from_columns(&cols, &b).unwrap();
        let fit = mstls(&ls, 1e-2).unwrap();
        assert_eq!(fit.support, vec![2, 5]);
        assert!((fit.weights[2] - 3.0).abs() < 1e-4 && (fit.weights[5] + 1.0).abs() < 1e-4);

        // tiny λ keeps the full least-squares solution
        let w_ls = ols(&ls).unwrap();
        let fit = mstls(&ls, 1e-12).unwrap();
        assert_eq!(fit.support.len(), 8);
        for (a, b) in fit.weights.iter().zip(&w_ls) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }

        let fit = mstls(&ls, 0.999).unwrap();
        assert!(fit.zero_model && fit.weights.iter().all(|w| *w == 0.0));
        assert!(mstls(&ls, 1.0).is_err());

        let sweep = mstls_sweep(&ls, &default_lambdas()).unwrap();
        assert_eq!(sweep.best.support, vec![2, 5]);
    }

    #[test]
    fn robust_errors_vanish_for_exact_fit() {
        let cols = gaussian_columns(100, 3, 7);
        let b: Vec<f64> = (0..100).map(|i| cols[0][i] + 2.0 * cols[1][i]).collect();
        let ls = LeastSquares::from_columns(&cols, &b).unwrap();
        let w = ols(&ls).unwrap();
        let se = robust_standard_errors(&cols, &b, &w, &[0, 1, 2]).unwrap();
        assert!(se.iter().all(|v| *v < 1e-12));
        assert_eq!(robust_standard_errors(&cols, &b, &w, &[]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn lambda_grid() {
        let l = default_lambdas();
        assert_eq!(l.len(), 50);
        assert!((l[0] - 1e-4).abs() < 1e-18);
        assert!((l[49] - 10f64.powf(-0.08)).abs() < 1e-15);
    }
}
