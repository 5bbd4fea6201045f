//! Sparse matrices and the linear solvers used for each implicit time step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from per-row entry lists. Duplicate columns
    /// within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec(x, &mut out);
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(rows)
    }

    /// Returns `self + diag(d)`, inserting diagonal entries where missing.
    pub fn plus_diagonal(&self, d: &[f64]) -> CsrMatrix {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<_> = self.row(i).collect();
                r.push((i, d[i]));
                r
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Half-bandwidths `(lower, upper)`.
    pub fn bandwidth(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v == 0.0 {
                    continue;
                }
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol * v.abs().max(1.0)))
    }
}

/// LU factors of a banded matrix, computed without pivoting. For a
/// tridiagonal matrix this is the Thomas algorithm.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
}

impl BandLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidth();
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut row_scale = vec![0.0f64; n];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if v != 0.0 {
                    band[i * width + j + kl - i] = v;
                    row_scale[i] = row_scale[i].max(v.abs());
                }
            }
        }
        let mut lu = BandLu { n, kl, ku, width, band };
        for k in 0..n {
            let pivot = lu.at(k, k);
            if !(pivot.abs() > 1e-14 * row_scale[k]) || !pivot.is_finite() {
                return Err(Error::LinearSolveFailure(format!(
                    "pivot {pivot:.3e} at row {k} is numerically zero"
                )));
            }
            let iend = (k + kl + 1).min(n);
            let jend = (k + ku + 1).min(n);
            for i in k + 1..iend {
                let l = lu.at(i, k) / pivot;
                *lu.at_mut(i, k) = l;
                if l != 0.0 {
                    for j in k + 1..jend {
                        let ukj = lu.at(k, j);
                        *lu.at_mut(i, j) -= l * ukj;
                    }
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width + j + self.kl - i]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.band[i * self.width + j + self.kl - i]
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(self.kl);
            let mut s = x[i];
            for j in lo..i {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.ku + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }

    /// Solves `Aᵀ x = b` with the same factors.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        // Uᵀ w = b
        for i in 0..n {
            let lo = i.saturating_sub(self.ku);
            let mut s = x[i];
            for j in lo..i {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        // Lᵀ x = w
        for i in (0..n).rev() {
            let hi = (i + self.kl + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s;
        }
        x
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite matrix. Stops when `‖r‖₂ ≤ tol·‖b‖₂`.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolveFailure("conjugate gradients met a non-positive curvature".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolveFailure(format!(
        "conjugate gradients did not reach relative residual {tol:.1e} in {max_iter} iterations"
    )))
}

/// Jacobi-preconditioned BiCGSTAB for a general nonsingular matrix.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let prec = |v: &[f64]| -> Vec<f64> { v.iter().zip(&dinv).map(|(v, d)| v * d).collect() };
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let breakdown = || Error::LinearSolveFailure("BiCGSTAB broke down".into());
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            return Err(breakdown());
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = prec(&p);
        a.matvec(&ph, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            return Err(breakdown());
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = prec(&s);
        a.matvec(&sh, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(breakdown());
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(breakdown());
        }
    }
    Err(Error::LinearSolveFailure(format!(
        "BiCGSTAB did not reach relative residual {tol:.1e} in {max_iter} iterations"
    )))
}

/// How the time-step systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LinearSolver {
    /// Banded LU without pivoting (Thomas algorithm in one dimension).
    #[default]
    Direct,
    /// Preconditioned CG for symmetric step matrices, BiCGSTAB otherwise.
    Krylov { tol: f64 },
}

/// A step matrix prepared for repeated solves with it and its transpose.
#[derive(Debug, Clone)]
pub enum StepSolver {
    Direct(BandLu),
    Krylov {
        matrix: CsrMatrix,
        transpose: Option<CsrMatrix>,
        tol: f64,
    },
}

impl StepSolver {
    pub fn new(a: &CsrMatrix, kind: LinearSolver) -> Result<Self> {
        match kind {
            LinearSolver::Direct => Ok(StepSolver::Direct(BandLu::factor(a)?)),
            LinearSolver::Krylov { tol } => {
                if !(tol > 0.0 && tol < 1.0) {
                    return Err(Error::InvalidOption(format!("Krylov tolerance must be in (0, 1), got {tol}")));
                }
                let transpose = if a.is_symmetric(1e-14) { None } else { Some(a.transpose()) };
                Ok(StepSolver::Krylov {
                    matrix: a.clone(),
                    transpose,
                    tol,
                })
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            StepSolver::Direct(lu) => Ok(lu.solve(b)),
            StepSolver::Krylov { matrix, transpose, tol } => {
                let it = 10 * matrix.dim() + 100;
                match transpose {
                    None => pcg(matrix, b, *tol, it),
                    Some(_) => bicgstab(matrix, b, *tol, it),
                }
            }
        }
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            StepSolver::Direct(lu) => Ok(lu.solve_transpose(b)),
            StepSolver::Krylov { matrix, transpose, tol } => {
                let it = 10 * matrix.dim() + 100;
                match transpose {
                    None => pcg(matrix, b, *tol, it),
                    Some(t) => bicgstab(t, b, *tol, it),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
        let n = a.dim();
        DMatrix::from_fn(n, n, |i, j| a.get(i, j))
    }

    /// Nonsymmetric, diagonally dominant band matrix with offsets 0, ±1, ±m.
    fn banded(n: usize, m: usize, seed: u64) -> CsrMatrix {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 6.0 + next())];
                for off in [1, m] {
                    if i >= off {
                        r.push((i - off, next()));
                    }
                    if i + off < n {
                        r.push((i + off, next()));
                    }
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_rows(vec![vec![(1, 2.0), (0, 1.0), (1, 3.0)], vec![(1, 1.0)]]);
        assert_eq!(a.get(0, 1), 5.0);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.bandwidth(), (0, 1));
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        let a = banded(40, 6, 3);
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = to_dense(&a);
        let expect = dense.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        let lu = BandLu::factor(&a).unwrap();
        let x = lu.solve(&b);
        let xt = lu.solve_transpose(&b);
        let expect_t = dense.transpose().lu().solve(&DVector::from_vec(b.clone())).unwrap();
        for i in 0..40 {
            assert!((x[i] - expect[i]).abs() < 1e-13);
            assert!((xt[i] - expect_t[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 0.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(matches!(BandLu::factor(&a), Err(Error::LinearSolveFailure(_))));
    }

    #[test]
    fn krylov_solvers_agree_with_direct() {
        let a = banded(50, 7, 11);
        let b: Vec<f64> = (0..50).map(|i| 1.0 + (i % 3) as f64).collect();
        let direct = BandLu::factor(&a).unwrap();
        let x = bicgstab(&a, &b, 1e-13, 1000).unwrap();
        let xd = direct.solve(&b);
        for i in 0..50 {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
        // symmetric part is SPD
        let t = a.transpose();
        let rows = (0..50)
            .map(|i| {
                let mut r: Vec<_> = a.row(i).map(|(j, v)| (j, 0.5 * v)).collect();
                r.extend(t.row(i).map(|(j, v)| (j, 0.5 * v)));
                r
            })
            .collect();
        let s = CsrMatrix::from_rows(rows);
        assert!(s.is_symmetric(1e-15));
        let x = pcg(&s, &b, 1e-13, 1000).unwrap();
        let xd = BandLu::factor(&s).unwrap().solve(&b);
        for i in 0..50 {
            assert!((x[i] - xd[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn step_solver_transpose_route() {
        let a = banded(30, 5, 5);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).cos()).collect();
        let d = StepSolver::new(&a, LinearSolver::Direct).unwrap();
        let k = StepSolver::new(&a, LinearSolver::Krylov { tol: 1e-13 }).unwrap();
        let xd = d.solve_transpose(&b).unwrap();
        let xk = k.solve_transpose(&b).unwrap();
        for i in 0..30 {
            assert!((xd[i] - xk[i]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn transpose_solve_satisfies_duality(seed in 0u64..1000, m in 2usize..9) {
            // <A^{-1} b, c> = <b, A^{-T} c>
            let a = banded(36, m, seed);
            let lu = BandLu::factor(&a).unwrap();
            let b: Vec<f64> = (0..36).map(|i| ((i as u64 * 7 + seed) % 11) as f64 - 5.0).collect();
            let c: Vec<f64> = (0..36).map(|i| ((i as u64 * 3 + seed) % 5) as f64 - 2.0).collect();
            let lhs = dot(&lu.solve(&b), &c);
            let rhs = dot(&b, &lu.solve_transpose(&c));
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
