//! Small dense linear-algebra kernel used by every other module.
//!
//! Everything here works on tiny matrices (a handful of states, estimation
//! windows of a dozen samples), so the implementations favour robustness and
//! exactness over asymptotic speed: Householder QR for least squares, a
//! Kronecker-product solve for the continuous Lyapunov equation, cyclic Jacobi
//! for symmetric eigenvalues and a shifted complex QR iteration for general
//! ones.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use thiserror::Error;

/// Largest dimension accepted by the eigenvalue routines.
pub const MAX_EIG_DIM: usize = 8;

/// Default condition-number threshold for the normal equations in
/// [`least_squares`]. Systems above it are rejected as singular.
pub const DEFAULT_COND_THRESHOLD: f64 = 1e12;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("normal equations are ill-conditioned (cond {cond:.3e} >= {threshold:.3e})")]
    SingularSystem { cond: f64, threshold: f64 },
    #[error("matrix is not Hurwitz (largest eigenvalue real part {max_real:.6e})")]
    NotHurwitz { max_real: f64 },
    #[error("slope fit needs >= 3 finite points with x, y > 0 and distinct x")]
    DegenerateFit,
    #[error("eigenvalue routines support up to {max} states, got {dim}")]
    DimensionLimit { dim: usize, max: usize },
    #[error("singular pivot during elimination")]
    SingularElimination,
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "vector length must match columns");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= s;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// (M + Mᵀ)/2, killing asymmetric round-off.
    pub fn symmetrized(&self) -> Matrix {
        assert_eq!(self.rows, self.cols);
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Solution of `A_clᵀP + P·A_cl = -Q` with its substitution residual.
#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    /// Symmetric positive-definite solution (symmetrized on construction).
    pub p: Matrix,
    /// Frobenius norm of `A_clᵀP + P·A_cl + Q`.
    pub residual: f64,
}

impl LyapunovSolution {
    /// zᵀPz.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        let pz = self.p.matvec(z);
        z.iter().zip(&pz).map(|(a, b)| a * b).sum()
    }
}

/// Gaussian elimination with partial pivoting; `a` square, one RHS.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(NumericsError::Shape(format!(
            "solve_linear expects square system, got {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if m[(r, col)].abs() > m[(piv, col)].abs() {
                piv = r;
            }
        }
        if m[(piv, col)].abs() < 1e-300 {
            return Err(NumericsError::SingularElimination);
        }
        if piv != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(piv, j)];
                m[(piv, j)] = t;
            }
            x.swap(col, piv);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[(r, j)] -= f * m[(col, j)];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for j in (col + 1)..n {
            s -= m[(col, j)] * x[j];
        }
        x[col] = s / m[(col, col)];
    }
    Ok(x)
}

/// Condition number of a symmetric positive-definite matrix, `+inf` when it
/// is not positive definite.
pub fn spd_condition(g: &Matrix) -> f64 {
    let eigs = symmetric_eigenvalues(g);
    let max = eigs.first().copied().unwrap_or(0.0);
    let min = eigs.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// argmin ‖Mx - y‖₂ for a tall full-column-rank `M`, via Householder QR.
///
/// The normal-equations matrix MᵀM is first screened against
/// [`DEFAULT_COND_THRESHOLD`]; a failure signals an estimation window that is
/// too short or a vanishing sample time.
pub fn least_squares(m: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    least_squares_with_threshold(m, y, DEFAULT_COND_THRESHOLD)
}

pub fn least_squares_with_threshold(m: &Matrix, y: &[f64], threshold: f64) -> Result<Vec<f64>> {
    check_least_squares_inputs(m, y.len(), threshold)?;
    let mut sols = qr_solve_multi(m, &mut [y.to_vec()])?;
    Ok(sols.pop().unwrap())
}

/// Explicit pseudo-inverse `(MᵀM)⁻¹Mᵀ` of a tall full-column-rank matrix,
/// assembled column by column from least-squares solves against the identity.
pub fn pseudo_inverse(m: &Matrix, threshold: f64) -> Result<Matrix> {
    check_least_squares_inputs(m, m.rows(), threshold)?;
    let mut rhs: Vec<Vec<f64>> = (0..m.rows())
        .map(|i| {
            let mut e = vec![0.0; m.rows()];
            e[i] = 1.0;
            e
        })
        .collect();
    let cols = qr_solve_multi(m, &mut rhs)?;
    let mut pinv = Matrix::zeros(m.cols(), m.rows());
    for (j, col) in cols.iter().enumerate() {
        for i in 0..m.cols() {
            pinv[(i, j)] = col[i];
        }
    }
    Ok(pinv)
}

fn check_least_squares_inputs(m: &Matrix, rhs_len: usize, threshold: f64) -> Result<()> {
    if m.rows() < m.cols() {
        return Err(NumericsError::Shape(format!(
            "least squares needs rows >= cols, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if rhs_len != m.rows() {
        return Err(NumericsError::Shape(format!(
            "rhs length {} does not match {} rows",
            rhs_len,
            m.rows()
        )));
    }
    if !m.is_finite() {
        return Err(NumericsError::Shape("non-finite matrix entry".into()));
    }
    let gram = m.transpose().matmul(m);
    let cond = spd_condition(&gram);
    if !cond.is_finite() || cond >= threshold {
        return Err(NumericsError::SingularSystem { cond, threshold });
    }
    Ok(())
}

/// Householder QR on a copy of `m`; solves min ‖Mx - y‖ for each RHS.
fn qr_solve_multi(m: &Matrix, rhs: &mut [Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut r = m.clone();
    for k in 0..cols {
        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..rows {
            norm += r[(i, k)] * r[(i, k)];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            return Err(NumericsError::SingularElimination);
        }
        let alpha = if r[(k, k)] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..rows).map(|i| r[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|a| a * a).sum();
        if vnorm2 > 0.0 {
            for j in k..cols {
                let dot: f64 = (k..rows).map(|i| v[i - k] * r[(i, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..rows {
                    r[(i, j)] -= f * v[i - k];
                }
            }
            for y in rhs.iter_mut() {
                let dot: f64 = (k..rows).map(|i| v[i - k] * y[i]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..rows {
                    y[i] -= f * v[i - k];
                }
            }
        }
        r[(k, k)] = alpha;
    }
    let mut out = Vec::with_capacity(rhs.len());
    for y in rhs.iter() {
        let mut x = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut s = y[i];
            for j in (i + 1)..cols {
                s -= r[(i, j)] * x[j];
            }
            if r[(i, i)].abs() < 1e-300 {
                return Err(NumericsError::SingularElimination);
            }
            x[i] = s / r[(i, i)];
        }
        out.push(x);
    }
    Ok(out)
}

/// Solves the continuous Lyapunov equation `A_clᵀP + P·A_cl = -Q` by
/// vectorizing it into an n²×n² linear system (exact at these sizes).
///
/// `A_cl` must be Hurwitz and `Q` symmetric positive-definite; the returned
/// `P` is symmetrized and positive definite, with the substitution residual
/// reported.
pub fn solve_lyapunov(a_cl: &Matrix, q: &Matrix) -> Result<LyapunovSolution> {
    let n = a_cl.rows();
    if a_cl.cols() != n || q.rows() != n || q.cols() != n {
        return Err(NumericsError::Shape("Lyapunov solve needs square A_cl and Q of equal size".into()));
    }
    if !q.is_symmetric(1e-12) {
        return Err(NumericsError::Shape("Q must be symmetric".into()));
    }
    let q_eigs = symmetric_eigenvalues(q);
    if q_eigs.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(NumericsError::Shape("Q must be positive definite".into()));
    }
    let re = eig_real_parts(a_cl)?;
    let max_real = re.first().copied().unwrap_or(0.0);
    if max_real >= 0.0 {
        return Err(NumericsError::NotHurwitz { max_real });
    }

    // Row (i,j) of the vectorized system encodes
    //   sum_k A[k][i] P[k][j] + sum_k P[i][k] A[k][j] = -Q[i][j].
    let nn = n * n;
    let mut sys = Matrix::zeros(nn, nn);
    let mut rhs = vec![0.0; nn];
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            rhs[row] = -q[(i, j)];
            for k in 0..n {
                sys[(row, k * n + j)] += a_cl[(k, i)];
                sys[(row, i * n + k)] += a_cl[(k, j)];
            }
        }
    }
    let vec_p = solve_linear(&sys, &rhs)?;
    let p_raw = Matrix::from_fn(n, n, |i, j| vec_p[i * n + j]);
    let p = p_raw.symmetrized();

    let residual = a_cl.transpose().matmul(&p).add(&p.matmul(a_cl)).add(q).frobenius_norm();
    let p_eigs = symmetric_eigenvalues(&p);
    if p_eigs.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(NumericsError::Shape("Lyapunov solution lost positive definiteness".into()));
    }
    Ok(LyapunovSolution { p, residual })
}

/// Real parts of all eigenvalues, sorted descending.
///
/// Closed form up to 2x2, Hessenberg reduction plus shifted complex QR
/// iteration above that; limited to [`MAX_EIG_DIM`] states.
pub fn eig_real_parts(a: &Matrix) -> Result<Vec<f64>> {
    let eigs = eigenvalues(a)?;
    let mut re: Vec<f64> = eigs.iter().map(|e| e.re).collect();
    re.sort_by(|x, y| y.partial_cmp(x).unwrap());
    Ok(re)
}

/// All eigenvalues of a small square matrix.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::Shape("eigenvalues need a square matrix".into()));
    }
    if n > MAX_EIG_DIM {
        return Err(NumericsError::DimensionLimit { dim: n, max: MAX_EIG_DIM });
    }
    match n {
        0 => Ok(vec![]),
        1 => Ok(vec![Complex64::new(a[(0, 0)], 0.0)]),
        2 => Ok(eig_2x2(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]).to_vec()),
        _ => qr_eigenvalues(a),
    }
}

fn eig_2x2(a: f64, b: f64, c: f64, d: f64) -> [Complex64; 2] {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [Complex64::new(tr / 2.0 + s, 0.0), Complex64::new(tr / 2.0 - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [Complex64::new(tr / 2.0, s), Complex64::new(tr / 2.0, -s)]
    }
}

fn qr_eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    let n = a.rows();
    let mut h = hessenberg(a);
    let scale = a.max_abs().max(1.0);
    let tol = 1e-15 * scale;
    let mut eigs = Vec::with_capacity(n);
    let mut hi = n;
    let mut iters_on_block = 0usize;
    while hi > 0 {
        // Deflate converged trailing entries.
        if hi == 1 {
            eigs.push(h[0][0]);
            hi = 0;
            continue;
        }
        let p = hi - 1;
        let off = h[p][p - 1].norm();
        if off <= tol + 1e-14 * (h[p][p].norm() + h[p - 1][p - 1].norm()) {
            eigs.push(h[p][p]);
            hi -= 1;
            iters_on_block = 0;
            continue;
        }
        if hi >= 2 {
            let lo = active_lo(&h, hi, tol);
            if hi - lo == 2 {
                let [e1, e2] = eig_2x2_c(h[lo][lo], h[lo][lo + 1], h[lo + 1][lo], h[lo + 1][lo + 1]);
                eigs.push(e1);
                eigs.push(e2);
                hi = lo;
                iters_on_block = 0;
                continue;
            }
            iters_on_block += 1;
            let shift = if iters_on_block % 24 == 0 {
                // Exceptional shift breaks rare symmetric stalls.
                Complex64::new(h[hi - 1][hi - 2].norm() + h[hi - 1][hi - 1].norm(), 0.0)
            } else {
                wilkinson_shift(&h, hi)
            };
            qr_step(&mut h, lo, hi, shift);
            if iters_on_block > 500 {
                return Err(NumericsError::Shape("QR iteration failed to converge".into()));
            }
        }
    }
    Ok(eigs)
}

fn active_lo(h: &[Vec<Complex64>], hi: usize, tol: f64) -> usize {
    let mut lo = hi - 1;
    while lo > 0 {
        let off = h[lo][lo - 1].norm();
        if off <= tol + 1e-14 * (h[lo][lo].norm() + h[lo - 1][lo - 1].norm()) {
            break;
        }
        lo -= 1;
    }
    lo
}

fn eig_2x2_c(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> [Complex64; 2] {
    let tr = a + d;
    let det = a * d - b * c;
    let disc = (tr * tr * 0.25 - det).sqrt();
    [tr * 0.5 + disc, tr * 0.5 - disc]
}

fn wilkinson_shift(h: &[Vec<Complex64>], hi: usize) -> Complex64 {
    let [e1, e2] = eig_2x2_c(h[hi - 2][hi - 2], h[hi - 2][hi - 1], h[hi - 1][hi - 2], h[hi - 1][hi - 1]);
    let target = h[hi - 1][hi - 1];
    if (e1 - target).norm() <= (e2 - target).norm() {
        e1
    } else {
        e2
    }
}

fn qr_step(h: &mut [Vec<Complex64>], lo: usize, hi: usize, shift: Complex64) {
    let n = h.len();
    for k in lo..hi {
        h[k][k] -= shift;
    }
    let mut rots = Vec::with_capacity(hi - lo);
    for k in lo..(hi - 1) {
        let (c, s) = givens(h[k][k], h[k + 1][k]);
        for j in k..n {
            let a = h[k][j];
            let b = h[k + 1][j];
            h[k][j] = c * a + s * b;
            h[k + 1][j] = -s.conj() * a + c * b;
        }
        rots.push((c, s));
    }
    for (idx, (c, s)) in rots.iter().enumerate() {
        let k = lo + idx;
        let top = (k + 2).min(hi);
        for row in h.iter_mut().take(top) {
            let a = row[k];
            let b = row[k + 1];
            row[k] = a * c + b * s.conj();
            row[k + 1] = -a * *s + b * c;
        }
    }
    for k in lo..hi {
        h[k][k] += shift;
    }
}

/// Givens rotation zeroing `g` against `f`: returns (c, s) with c real.
fn givens(f: Complex64, g: Complex64) -> (Complex64, Complex64) {
    if g.norm() == 0.0 {
        return (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
    }
    if f.norm() == 0.0 {
        return (Complex64::new(0.0, 0.0), g.conj() / g.norm());
    }
    let d = (f.norm_sqr() + g.norm_sqr()).sqrt();
    let c = Complex64::new(f.norm() / d, 0.0);
    let s = (f / f.norm()) * g.conj() / d;
    (c, s)
}

fn hessenberg(a: &Matrix) -> Vec<Vec<Complex64>> {
    let n = a.rows();
    let mut m = a.clone();
    for k in 0..n.saturating_sub(2) {
        let mut norm = 0.0;
        for i in (k + 1)..n {
            norm += m[(i, k)] * m[(i, k)];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if m[(k + 1, k)] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = ((k + 1)..n).map(|i| m[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // Left application: rows k+1.., all columns.
        for j in 0..n {
            let dot: f64 = ((k + 1)..n).map(|i| v[i - k - 1] * m[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in (k + 1)..n {
                m[(i, j)] -= f * v[i - k - 1];
            }
        }
        // Right application: all rows, columns k+1..
        for i in 0..n {
            let dot: f64 = ((k + 1)..n).map(|j| v[j - k - 1] * m[(i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for j in (k + 1)..n {
                m[(i, j)] -= f * v[j - k - 1];
            }
        }
    }
    (0..n)
        .map(|i| (0..n).map(|j| Complex64::new(m[(i, j)], 0.0)).collect())
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps, sorted
/// descending. The input is symmetrized first.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "symmetric eigenvalues need a square matrix");
    let mut s = a.symmetrized();
    let scale = s.frobenius_norm().max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += s[(p, q)] * s[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = s[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = s[(k, p)];
                    let akq = s[(k, q)];
                    s[(k, p)] = c * akp - sn * akq;
                    s[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = s[(p, k)];
                    let aqk = s[(q, k)];
                    s[(p, k)] = c * apk - sn * aqk;
                    s[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    eigs.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eigs
}

/// Ordinary least-squares slope of log y against log x.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(NumericsError::DegenerateFit);
    }
    if points.iter().any(|&(x, y)| !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(NumericsError::DegenerateFit);
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx < 1e-20 {
        return Err(NumericsError::DegenerateFit);
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}
