//! Compressed-row sparse matrices and the two iterative solvers used for
//! stationary distributions: restarted GMRES on the reduced system and
//! Jacobi-preconditioned conjugate gradient on its normal equations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_RESTART: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from coordinate triplets; duplicate `(row, col)` entries are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, v) in &entries {
            if r >= n_rows || c >= n_cols {
                return Err(Error::Dimension(format!("entry ({r},{c}) outside {n_rows}x{n_cols}")));
            }
            if !v.is_finite() {
                return Err(Error::Dimension(format!("entry ({r},{c}) is not finite: {v}")));
            }
        }
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        y
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_cols];
        for (r, &xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                let dst = next[c];
                col_idx[dst] = r;
                values[dst] = self.values[k];
                next[c] += 1;
            }
        }
        Self { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr, col_idx, values }
    }

    /// Multiplies every stored value by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n_cols]; self.n_rows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final residual relative to the right-hand side norm.
    pub residual_norm: f64,
    pub converged: bool,
    /// The Jacobi preconditioner hit a zero diagonal and was replaced by the identity.
    pub preconditioner_fallback: bool,
}

/// Generator row-sum tolerance accepted by [`build_reduced_matrix`].
pub const GENERATOR_ROW_TOL: f64 = 1e-8;

/// `D = [1 | Q without column drop_state]`, so that `Dᵀν = e₁` encodes the
/// balance equations together with `Σν = 1`.
pub fn build_reduced_matrix(q: &SparseMatrix, drop_state: usize) -> Result<SparseMatrix> {
    let n = q.n_rows();
    if q.n_cols() != n {
        return Err(Error::Dimension(format!("generator must be square, got {}x{}", n, q.n_cols())));
    }
    if drop_state >= n {
        return Err(Error::Dimension(format!("drop state {drop_state} outside {n} states")));
    }
    let mut entries = Vec::with_capacity(q.nnz() + n);
    for r in 0..n {
        let mut sum = 0.0;
        let mut scale: f64 = 1.0;
        entries.push((r, 0, 1.0));
        for (c, v) in q.row(r) {
            sum += v;
            scale = scale.max(v.abs());
            if c == drop_state {
                continue;
            }
            let col = if c < drop_state { c + 1 } else { c };
            entries.push((r, col, v));
        }
        if sum.abs() > GENERATOR_ROW_TOL * scale {
            return Err(Error::NotGenerator { row: r, sum });
        }
    }
    SparseMatrix::from_triplets(n, n, entries)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restarted GMRES(`DEFAULT_RESTART`) from a zero initial guess.
pub fn gmres_solve(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    gmres_solve_restarted(a, b, tol, max_iter, DEFAULT_RESTART)
}

pub fn gmres_solve_restarted(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    restart: usize,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.n_rows();
    if a.n_cols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "GMRES needs a square system, got {}x{} with rhs {}",
            n,
            a.n_cols(),
            b.len()
        )));
    }
    let mut x = vec![0.0; n];
    let b_norm = norm2(b);
    let mut report = SolveReport::default();
    if b_norm == 0.0 {
        report.converged = true;
        return Ok((x, report));
    }
    let m = restart.max(1).min(n.max(1));
    let target = tol * b_norm;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];

    loop {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm2(&r);
        report.residual_norm = beta / b_norm;
        if beta <= target {
            report.converged = true;
            break;
        }
        if report.iterations >= max_iter {
            break;
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        for j in 0..m {
            a.matvec_into(&basis[j], &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                h[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let h_next = norm2(&w);
            h[j + 1][j] = h_next;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = h[j][j] / denom;
                sn[j] = h[j + 1][j] / denom;
            }
            h[j][j] = cs[j] * h[j][j] + sn[j] * h[j + 1][j];
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            report.iterations += 1;
            k = j + 1;
            let breakdown = h_next <= f64::EPSILON * beta;
            if g[j + 1].abs() <= target || report.iterations >= max_iter || breakdown {
                break;
            }
            basis.push(w.iter().map(|v| v / h_next).collect());
        }
        // Back substitution on the k×k triangle.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for l in (i + 1)..k {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(xk, vk)| *xk += yi * vk);
        }
    }
    Ok((x, report))
}

/// Solves `D Dᵀ ν = D e₁` by conjugate gradient with the diagonal of `D Dᵀ`
/// as preconditioner. `D Dᵀ` is only ever applied as two sparse products.
pub fn cg_normal_solve(d: &SparseMatrix, tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let mut e1 = vec![0.0; d.n_rows()];
    if let Some(v) = e1.first_mut() {
        *v = 1.0;
    }
    cg_normal_solve_rhs(d, &e1, tol, max_iter)
}

/// Solves `D Dᵀ x = D rhs`, the normal equations of `Dᵀ x = rhs`.
pub fn cg_normal_solve_rhs(d: &SparseMatrix, rhs: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let n = d.n_rows();
    if d.n_cols() != n || rhs.len() != n {
        return Err(Error::Dimension(format!(
            "reduced matrix must be square with a matching right-hand side, got {}x{} and {}",
            n,
            d.n_cols(),
            rhs.len()
        )));
    }
    let dt = d.transpose();
    let b = d.matvec(rhs);
    let mut report = SolveReport::default();

    let diag: Vec<f64> = (0..n).map(|r| d.row(r).map(|(_, v)| v * v).sum()).collect();
    let inv_diag: Vec<f64> = if diag.iter().any(|&v| v == 0.0) {
        report.preconditioner_fallback = true;
        vec![1.0; n]
    } else {
        diag.iter().map(|v| 1.0 / v).collect()
    };

    let mut x = vec![0.0; n];
    let b_norm = norm2(&b);
    if b_norm == 0.0 {
        report.converged = true;
        return Ok((x, report));
    }
    let target = tol * b_norm;
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut tmp = vec![0.0; n];
    let mut ap = vec![0.0; n];
    report.residual_norm = 1.0;
    while report.iterations < max_iter {
        dt.matvec_into(&p, &mut tmp);
        d.matvec_into(&tmp, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        x.iter_mut().zip(&p).for_each(|(xk, pk)| *xk += alpha * pk);
        r.iter_mut().zip(&ap).for_each(|(rk, ak)| *rk -= alpha * ak);
        report.iterations += 1;
        let r_norm = norm2(&r);
        report.residual_norm = r_norm / b_norm;
        if r_norm <= target {
            report.converged = true;
            break;
        }
        z.iter_mut().zip(r.iter().zip(&inv_diag)).for_each(|(zk, (rk, mk))| *zk = rk * mk);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pk, zk)| *pk = zk + beta * *pk);
    }
    Ok((x, report))
}
