//! ILU(0)-preconditioned BiCGStab and a dense LU fallback.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::sparse::{dot, norm2, CsrMatrix};

/// Dense LU is used as the last resort only up to this many unknowns.
pub const DENSE_FALLBACK_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual `‖b − Ax‖ / ‖b‖`.
    pub final_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub use_ilu: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 1000,
            use_ilu: true,
        }
    }
}

/// Incomplete LU factorization restricted to the pattern of the input.
///
/// L is unit lower triangular and stored below the diagonal; U occupies the
/// diagonal and everything above it, all inside one copy of the input pattern.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    factors: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidArgument("ILU(0) needs a square matrix".into()));
        }
        let mut factors = a.clone();
        let diag_pos = factors
            .diagonal_positions()
            .ok_or_else(|| Error::InvalidArgument("ILU(0) needs a stored diagonal".into()))?;
        let offsets = factors.row_offsets().to_vec();
        let cols = factors.col_indices().to_vec();
        let vals = factors.values_mut();

        // Position of column j within the current row, or usize::MAX.
        let mut pos_in_row = vec![usize::MAX; n];
        for i in 0..n {
            let row = offsets[i]..offsets[i + 1];
            for p in row.clone() {
                pos_in_row[cols[p]] = p;
            }
            for p in row.clone() {
                let k = cols[p];
                if k >= i {
                    break;
                }
                let pivot = vals[diag_pos[k]];
                let lik = vals[p] / pivot;
                vals[p] = lik;
                for q in diag_pos[k] + 1..offsets[k + 1] {
                    let target = pos_in_row[cols[q]];
                    if target != usize::MAX {
                        vals[target] -= lik * vals[q];
                    }
                }
            }
            for p in row {
                pos_in_row[cols[p]] = usize::MAX;
            }
            let d = vals[diag_pos[i]];
            if d == 0.0 || !d.is_finite() {
                return Err(Error::ZeroPivot { row: i });
            }
        }
        Ok(Self { factors, diag_pos })
    }

    pub fn dim(&self) -> usize {
        self.factors.nrows()
    }

    /// Diagonal of U.
    pub fn pivots(&self) -> Vec<f64> {
        self.diag_pos.iter().map(|&p| self.factors.values()[p]).collect()
    }

    /// Solves `L U z = r` by a forward and a backward sweep.
    pub fn apply_into(&self, r: &[f64], z: &mut [f64]) {
        let n = self.dim();
        let offsets = self.factors.row_offsets();
        let cols = self.factors.col_indices();
        let vals = self.factors.values();
        for i in 0..n {
            let mut s = r[i];
            for p in offsets[i]..self.diag_pos[i] {
                s -= vals[p] * z[cols[p]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for p in self.diag_pos[i] + 1..offsets[i + 1] {
                s -= vals[p] * z[cols[p]];
            }
            z[i] = s / vals[self.diag_pos[i]];
        }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        self.apply_into(r, &mut z);
        z
    }

    /// Unit lower factor as a sparse matrix.
    pub fn lower(&self) -> CsrMatrix {
        self.split(|i, j| j < i, true)
    }

    /// Upper factor as a sparse matrix.
    pub fn upper(&self) -> CsrMatrix {
        self.split(|i, j| j >= i, false)
    }

    fn split(&self, keep: impl Fn(usize, usize) -> bool, unit_diag: bool) -> CsrMatrix {
        let n = self.dim();
        let mut triplets = Vec::new();
        for i in 0..n {
            let (cols, vals) = self.factors.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j) {
                    triplets.push((i, j, v));
                }
            }
            if unit_diag {
                triplets.push((i, i, 1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, triplets).expect("indices in range")
    }
}

/// Right-preconditioned BiCGStab.
///
/// Running out of iterations yields a non-converged report, not an error;
/// a vanishing `ρ` or `r̂ᵀv` is reported as [`Error::Breakdown`].
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    precond: Option<&Ilu0>,
    tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument("BiCGStab needs a square matrix".into()));
    }
    check_len(n, b.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(p) = precond {
        check_len(n, p.dim())?;
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                final_residual: 0.0,
                converged: true,
            },
        ));
    }

    let mut x = match x0 {
        Some(x0) => {
            check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let precondition = |v: &[f64], out: &mut [f64]| match precond {
        Some(m) => m.apply_into(v, out),
        None => out.copy_from_slice(v),
    };
    let true_residual = |x: &[f64], r: &mut [f64]| {
        a.mul_vec_into(x, r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        norm2(r) / bnorm
    };

    let mut r = vec![0.0; n];
    let mut rel = true_residual(&x, &mut r);
    let mut iterations = 0;
    if rel <= tol {
        return Ok((x, SolveReport { iterations, final_residual: rel, converged: true }));
    }

    let mut r_hat = r.clone();
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let (mut rho_old, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let eps = f64::EPSILON;

    let breakdown = |iterations, final_residual| Error::Breakdown {
        report: SolveReport { iterations, final_residual, converged: false },
    };

    while iterations < max_iter {
        iterations += 1;
        let rho = dot(&r_hat, &r);
        if rho.abs() <= eps * eps * norm2(&r_hat) * norm2(&r) || !rho.is_finite() {
            return Err(breakdown(iterations, rel));
        }
        let beta = (rho / rho_old) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precondition(&p, &mut p_hat);
        a.mul_vec_into(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv.abs() <= eps * eps * norm2(&r_hat) * norm2(&v) || !rv.is_finite() {
            return Err(breakdown(iterations, rel));
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let mut recurrence_done = norm2(&s) / bnorm <= tol;
        if recurrence_done {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
        } else {
            precondition(&s, &mut s_hat);
            a.mul_vec_into(&s_hat, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * p_hat[i] + omega * s_hat[i];
                r[i] = s[i] - omega * t[i];
            }
            rel = norm2(&r) / bnorm;
            recurrence_done = rel <= tol;
            if !recurrence_done && (omega == 0.0 || !omega.is_finite()) {
                return Err(breakdown(iterations, rel));
            }
        }
        rho_old = rho;

        if recurrence_done {
            rel = true_residual(&x, &mut r);
            if rel <= tol {
                return Ok((x, SolveReport { iterations, final_residual: rel, converged: true }));
            }
            // Recurrence drifted from the true residual: restart from x.
            r_hat.copy_from_slice(&r);
            p.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            rho_old = 1.0;
            alpha = 1.0;
            omega = 1.0;
        }
    }
    rel = true_residual(&x, &mut r);
    Ok((x, SolveReport { iterations, final_residual: rel, converged: rel <= tol }))
}

/// Partial-pivoting LU solve.
pub fn dense_solve(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidArgument("dense_solve needs a square matrix".into()));
    }
    check_len(n, b.len())?;
    let lu = a.clone().lu();
    let u_diag = lu.u().diagonal();
    let scale = a.amax();
    if u_diag.iter().any(|d| d.abs() <= f64::EPSILON * scale * n as f64 * 1e-3 || !d.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or(Error::SingularMatrix)
}

/// BiCGStab with the breakdown policy used by the time steppers: retry without
/// the preconditioner, then fall back to dense LU for small systems.
pub fn solve_robust(
    a: &CsrMatrix,
    b: &[f64],
    precond: Option<&Ilu0>,
    settings: &SolverSettings,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    let first = bicgstab(a, b, precond, settings.tol, settings.max_iter, x0);
    let mut spent = 0;
    match first {
        Ok((x, rep)) if rep.converged => return Ok((x, rep)),
        Ok((_, rep)) | Err(Error::Breakdown { report: rep }) => spent += rep.iterations,
        Err(e) => return Err(e),
    }
    let mut last_report = SolveReport::default();
    if precond.is_some() {
        match bicgstab(a, b, None, settings.tol, settings.max_iter, x0) {
            Ok((x, mut rep)) if rep.converged => {
                rep.iterations += spent;
                return Ok((x, rep));
            }
            Ok((_, rep)) | Err(Error::Breakdown { report: rep }) => {
                spent += rep.iterations;
                last_report = rep;
            }
            Err(e) => return Err(e),
        }
    }
    if a.nrows() <= DENSE_FALLBACK_LIMIT {
        let x = dense_solve(&a.to_dense(), b)?;
        let ax = a.mul_vec(&x)?;
        let bnorm = norm2(b).max(f64::MIN_POSITIVE);
        let res = ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / bnorm;
        return Ok((
            x,
            SolveReport {
                iterations: spent,
                final_residual: res,
                converged: true,
            },
        ));
    }
    last_report.iterations = spent;
    Err(Error::NotConverged { report: last_report })
}
