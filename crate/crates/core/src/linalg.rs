//! Sparse linear algebra: CSR storage, Jacobi-preconditioned CG, BiCGSTAB
//! for the non-symmetric variant, a dense LU oracle for small systems, and
//! condition-number estimation (Lanczos for λ_max, inverse iteration for
//! λ_min).

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Dimension guard of the dense direct solver.
pub const DENSE_LIMIT: usize = 20_000;
/// Below this size inverse iteration factorises densely instead of using CG.
const DENSE_INVERSE_LIMIT: usize = 5_000;

/// Row-compressed sparse matrix with sorted, duplicate-free rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate `(row, col, value)` entries in insertion order, so two
    /// entries receiving the same contributions in the same order are
    /// bitwise equal.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets
            .iter()
            .find(|&&(i, j, _)| i >= n_rows || j >= n_cols)
        {
            return Err(Error::IndexOutOfRange {
                what: "triplet",
                index: i.max(j),
                len: n_rows.max(n_cols),
            });
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t).expect("in range")
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

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    /// Iterator over stored `(row, col, value)` entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n_rows) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t = self.entries().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, t).expect("in range")
    }

    /// Exact (bitwise) symmetry including the sparsity pattern.
    pub fn is_symmetric_exact(&self) -> bool {
        self.n_rows == self.n_cols && self.transpose() == *self
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        let mut out = self.clone();
        for v in out.values.iter_mut() {
            *v *= c;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.entries() {
            a[(i, j)] = v;
        }
        a
    }

    /// `%%MatrixMarket matrix coordinate real general`, 1-based indices.
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.n_rows, self.n_cols, self.nnz());
        for (i, j, v) in self.entries() {
            let _ = writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        out
    }

    pub fn from_matrix_market(text: &str) -> Result<CsrMatrix> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Io("empty Matrix Market input".into()))?;
        let h: Vec<String> = header
            .split_whitespace()
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if h.len() < 5
            || h[0] != "%%matrixmarket"
            || h[1] != "matrix"
            || h[2] != "coordinate"
            || h[3] != "real"
        {
            return Err(Error::Io(format!(
                "unsupported Matrix Market header: {header}"
            )));
        }
        let symmetric = h[4] == "symmetric";
        let mut lines = lines.filter(|l| !l.starts_with('%'));
        let size = lines
            .next()
            .ok_or_else(|| Error::Io("missing size line".into()))?;
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Io(format!("{s:?}: {e}")))
        };
        let dims: Vec<&str> = size.split_whitespace().collect();
        if dims.len() != 3 {
            return Err(Error::Io(format!("bad size line: {size}")));
        }
        let (nr, nc, nnz) = (parse(dims[0])?, parse(dims[1])?, parse(dims[2])?);
        let mut t = Vec::with_capacity(nnz);
        for line in lines.by_ref().take(nnz) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Io(format!("bad entry line: {line}")));
            }
            let (i, j) = (parse(f[0])?, parse(f[1])?);
            if i == 0 || j == 0 {
                return Err(Error::Io("Matrix Market indices are 1-based".into()));
            }
            let v: f64 = f[2]
                .parse()
                .map_err(|e| Error::Io(format!("{:?}: {e}", f[2])))?;
            t.push((i - 1, j - 1, v));
            if symmetric && i != j {
                t.push((j - 1, i - 1, v));
            }
        }
        if t.len() < nnz {
            return Err(Error::Io(format!("expected {nnz} entries")));
        }
        Self::from_triplets(nr, nc, t)
    }
}

/// Writes a dense vector as an `n × 1` coordinate Matrix Market file body.
pub fn vector_to_matrix_market(v: &[f64]) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} 1 {}", v.len(), v.len());
    for (i, x) in v.iter().enumerate() {
        let _ = writeln!(out, "{} 1 {:.17e}", i + 1, x);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual ‖b − Ax‖ / ‖b‖.
    pub residual: f64,
    /// Relative recursive residual per iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inverse_diagonal(a: &CsrMatrix, precond: Preconditioner) -> Vec<f64> {
    match precond {
        Preconditioner::None => vec![1.0; a.n_rows()],
        Preconditioner::Jacobi => a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect(),
    }
}

fn check_square(a: &CsrMatrix, b: &[f64]) -> Result<()> {
    if a.n_rows() != a.n_cols() || b.len() != a.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "system {}x{} with rhs of length {}",
            a.n_rows(),
            a.n_cols(),
            b.len()
        )));
    }
    Ok(())
}

/// Preconditioned conjugate gradients for SPD `a`.
pub fn solve_cg(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    maxit: usize,
    precond: Preconditioner,
) -> Result<(Vec<f64>, SolveStats)> {
    check_square(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut stats = SolveStats {
        iterations: 0,
        residual: 0.0,
        history: Vec::new(),
    };
    if bnorm == 0.0 {
        return Ok((x, stats));
    }
    let dinv = inverse_diagonal(a, precond);
    let mut r = b.to_vec();
    let mut ap = vec![0.0; n];
    'restart: loop {
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        loop {
            if stats.iterations >= maxit {
                stats.residual = norm2(&r) / bnorm;
                return Err(Error::NonConvergence {
                    iterations: stats.iterations,
                    residual: stats.residual,
                });
            }
            a.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::NotPositiveDefinite(format!(
                    "CG curvature pᵀAp = {pap:e} at iteration {}",
                    stats.iterations
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            stats.iterations += 1;
            let rel = norm2(&r) / bnorm;
            stats.history.push(rel);
            if rel <= tol {
                // confirm with the true residual; restart on drift
                a.matvec(&x, &mut ap);
                for i in 0..n {
                    r[i] = b[i] - ap[i];
                }
                let true_rel = norm2(&r) / bnorm;
                if true_rel <= tol {
                    stats.residual = true_rel;
                    return Ok((x, stats));
                }
                continue 'restart;
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
    }
}

/// Jacobi-preconditioned BiCGSTAB for general nonsingular `a`.
pub fn solve_bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    maxit: usize,
    precond: Preconditioner,
) -> Result<(Vec<f64>, SolveStats)> {
    check_square(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    let mut stats = SolveStats {
        iterations: 0,
        residual: 0.0,
        history: Vec::new(),
    };
    if bnorm == 0.0 {
        return Ok((x, stats));
    }
    let dinv = inverse_diagonal(a, precond);
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut zz = vec![0.0; n];
    while stats.iterations < maxit {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = dinv[i] * p[i];
        }
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
            zz[i] = dinv[i] * s[i];
        }
        a.matvec(&zz, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        stats.iterations += 1;
        let rel = norm2(&r) / bnorm;
        stats.history.push(rel);
        if rel <= tol {
            break;
        }
    }
    a.matvec(&x, &mut t);
    let true_rel = norm2(&b.iter().zip(&t).map(|(b, t)| b - t).collect::<Vec<_>>()) / bnorm;
    stats.residual = true_rel;
    if true_rel <= tol * 10.0 {
        Ok((x, stats))
    } else {
        Err(Error::NonConvergence {
            iterations: stats.iterations,
            residual: true_rel,
        })
    }
}

fn dense_lu(a: &DMatrix<f64>) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= n as f64 * f64::EPSILON * max {
        return Err(Error::Singular);
    }
    Ok(lu)
}

/// Dense LU with partial pivoting (oracle for small systems).
pub fn solve_direct_dense(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_square(a, b)?;
    let n = b.len();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n,
            limit: DENSE_LIMIT,
        });
    }
    let lu = dense_lu(&a.to_dense())?;
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or(Error::Singular)?;
    Ok(x.iter().copied().collect())
}

/// Ritz values of a Lanczos run with full reorthogonalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct LanczosRitz {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

/// Extreme Ritz values after at most `max_steps` Lanczos steps; stops early
/// once the largest Ritz value changes by less than `tol` (relative).
pub fn lanczos_extremes(
    a: &CsrMatrix,
    max_steps: usize,
    tol: f64,
    seed: u64,
) -> Result<LanczosRitz> {
    let n = a.n_rows();
    if n == 0 || a.n_cols() != n {
        return Err(Error::InvalidArgument(
            "Lanczos needs a nonempty square matrix".into(),
        ));
    }
    let steps = max_steps.min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut prev_max = f64::NAN;
    let mut ritz = (0.0, 0.0);
    let anorm_guess = a
        .entries()
        .map(|(_, _, x)| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..steps {
        a.matvec(&basis[j], &mut w);
        let aj = dot(&w, &basis[j]);
        alpha.push(aj);
        for q in basis.iter() {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        for q in basis.iter() {
            let c = dot(&w, q);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        let bj = norm2(&w);
        let done = bj <= 1e-12 * anorm_guess || j + 1 == steps;
        if done || (j + 1) % 5 == 0 {
            ritz = tridiagonal_extremes(&alpha, &beta)?;
            let converged = (ritz.1 - prev_max).abs() <= tol * ritz.1.abs();
            prev_max = ritz.1;
            if done || converged {
                return Ok(LanczosRitz {
                    min: ritz.0,
                    max: ritz.1,
                    steps: j + 1,
                });
            }
        }
        beta.push(bj);
        basis.push(w.iter().map(|x| x / bj).collect());
    }
    Ok(LanczosRitz {
        min: ritz.0,
        max: ritz.1,
        steps,
    })
}

fn tridiagonal_extremes(alpha: &[f64], beta: &[f64]) -> Result<(f64, f64)> {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::try_new(t, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Breakdown("tridiagonal eigenvalue iteration failed".into()))?;
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

/// Smallest eigenvalue of SPD `a` by inverse iteration.
pub fn smallest_eigenvalue(a: &CsrMatrix, tol: f64, seed: u64) -> Result<(f64, usize)> {
    let n = a.n_rows();
    let dense =
        if n <= DENSE_INVERSE_LIMIT {
            // a failed Cholesky factorization already proves indefiniteness
            Some(a.to_dense().cholesky().ok_or_else(|| {
                Error::NotPositiveDefinite("Cholesky factorization failed".into())
            })?)
        } else {
            None
        };
    let solve = |x: &[f64]| -> Result<Vec<f64>> {
        match &dense {
            Some(ch) => Ok(ch
                .solve(&DVector::from_column_slice(x))
                .iter()
                .copied()
                .collect()),
            None => solve_cg(a, x, 1e-12, 20 * n + 1000, Preconditioner::Jacobi).map(|r| r.0),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut mu_prev = f64::NAN;
    for it in 1..=1000 {
        let y = solve(&x)?;
        let yy = dot(&y, &y);
        let mu = dot(&x, &y) / yy;
        if !(mu > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "inverse iteration Rayleigh quotient {mu:e}"
            )));
        }
        let ny = yy.sqrt();
        x = y.iter().map(|v| v / ny).collect();
        if (mu - mu_prev).abs() <= tol * mu {
            return Ok((mu, it));
        }
        mu_prev = mu;
    }
    Err(Error::Breakdown(
        "inverse iteration did not converge in 1000 steps".into(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub lanczos_steps: usize,
    pub inverse_iterations: usize,
}

/// Spectral condition number λ_max/λ_min of SPD `a`.
pub fn estimate_cond(a: &CsrMatrix, tol: f64) -> Result<CondEstimate> {
    let ritz = lanczos_extremes(a, 400, tol, 0x5eed)?;
    let (lambda_min, its) = smallest_eigenvalue(a, tol, 0xc0ffee)?;
    if !(ritz.max > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "largest Ritz value {:e}",
            ritz.max
        )));
    }
    Ok(CondEstimate {
        lambda_min,
        lambda_max: ritz.max,
        kappa: ritz.max / lambda_min,
        lanczos_steps: ritz.steps,
        inverse_iterations: its,
    })
}

/// λ_min of a symmetric matrix, failing if it is not positive: Lanczos
/// catches large negative eigenvalues, inverse iteration small ones.
pub fn check_spd(a: &CsrMatrix) -> Result<f64> {
    if !a.is_symmetric_exact() {
        return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
    }
    let ritz = lanczos_extremes(a, 60, 1e-8, 17)?;
    if !(ritz.min > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "negative Ritz value {:e}",
            ritz.min
        )));
    }
    smallest_eigenvalue(a, 1e-8, 23).map(|(l, _)| l)
}
