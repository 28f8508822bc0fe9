//! Dense matrix kernels: PSD square roots, spectra, Lyapunov and Riccati
//! solvers, Kronecker products and minimum-norm least squares.
//!
//! Everything here is a pure function of its inputs. Matrices are small
//! (tens of rows at most), so dense factorizations are used throughout.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{dim_err, Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default symmetry / PSD tolerance used when wrapping covariances.
pub const PSD_TOL: f64 = 1e-9;

/// A symmetric positive semidefinite matrix, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPsd(Mat);

impl SymPsd {
    /// Wraps `m` after checking symmetry and the smallest eigenvalue against
    /// `tol` (both scaled by `1 + |m|_F`). The stored matrix is symmetrized.
    pub fn new(m: Mat, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(dim_err("SymPsd", "square", format!("{}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("matrix has non-finite entries".into()));
        }
        let scale = 1.0 + m.norm();
        let asym = asymmetry(&m);
        if asym > tol * scale {
            return Err(Error::NotSymmetric { asymmetry: asym, tol: tol * scale });
        }
        let s = symmetrize(&m);
        let min_eig = min_eigenvalue(&s);
        if min_eig < -tol * scale {
            return Err(Error::NotPsd { min_eig });
        }
        Ok(SymPsd(s))
    }

    pub fn from_diag(d: &[f64]) -> Result<Self> {
        Self::new(Mat::from_diagonal(&Vector::from_column_slice(d)), PSD_TOL)
    }

    pub fn identity(n: usize) -> Self {
        SymPsd(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymPsd(Mat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

impl std::ops::Deref for SymPsd {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &Mat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`. Empty matrices give +inf.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let e = SymmetricEigen::new(symmetrize(m));
    e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Symmetric square root by eigendecomposition; negative eigenvalues are
/// clamped to zero.
pub fn sym_sqrt(s: &SymPsd) -> Mat {
    let n = s.dim();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let e = SymmetricEigen::new(s.as_mat().clone());
    let roots = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &e.eigenvectors;
    symmetrize(&(v * Mat::from_diagonal(&roots) * v.transpose()))
}

/// Square root of a matrix already known to be symmetric PSD up to rounding.
pub(crate) fn psd_sqrt_unchecked(m: &Mat) -> Mat {
    sym_sqrt(&SymPsd(symmetrize(m)))
}

/// Maximum eigenvalue modulus.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    if !a.is_square() {
        return Err(dim_err("spectral_radius", "square", format!("{}x{}", a.nrows(), a.ncols())));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = a.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Column-major vectorization.
pub fn vec_cols(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Minimum-norm least-squares solution of `A X = B` via a truncated SVD
/// (singular values below `1e-10 * sigma_max` are dropped).
pub fn minnorm_lstsq(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.nrows() != b.nrows() {
        return Err(dim_err("minnorm_lstsq rhs rows", a.nrows(), b.nrows()));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Ok(Mat::zeros(n, b.ncols()));
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(Mat::zeros(n, b.ncols()));
    }
    let cut = 1e-10 * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let utb = u.transpose() * b;
    let mut scaled = Mat::zeros(svd.singular_values.len(), b.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            for j in 0..b.ncols() {
                scaled[(k, j)] = utb[(k, j)] / s;
            }
        }
    }
    Ok(vt.transpose() * scaled)
}

/// Solves `F^T N F - N = -Qc` for Schur-stable `F`.
pub fn solve_discrete_lyapunov(f: &Mat, qc: &SymPsd) -> Result<SymPsd> {
    let n = f.nrows();
    if !f.is_square() || qc.dim() != n {
        return Err(dim_err("solve_discrete_lyapunov", format!("{n}x{n}"), format!("{}x{}", qc.dim(), qc.dim())));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 - 1e-9 {
        return Err(Error::NotSchurStable(rho));
    }
    let n_sol = if n <= 24 {
        lyapunov_kron(f, qc.as_mat())?
    } else {
        lyapunov_doubling(f, qc.as_mat())?
    };
    let n_sol = symmetrize(&n_sol);
    let resid = (f.transpose() * &n_sol * f - &n_sol + qc.as_mat()).norm();
    if resid > 1e-9 * (1.0 + qc.norm()) * (1.0 + n_sol.norm()).max(1.0) {
        return Err(Error::NoConvergence { what: "discrete Lyapunov solve", iters: 1 });
    }
    Ok(SymPsd(n_sol))
}

fn lyapunov_kron(f: &Mat, qc: &Mat) -> Result<Mat> {
    let n = f.nrows();
    let ft = f.transpose();
    let sys = kron(&ft, &ft) - Mat::identity(n * n, n * n);
    let rhs = -vec_cols(qc);
    let lu = sys.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    // one step of iterative refinement
    let r = &rhs - &sys * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(unvec(x.as_slice(), n, n))
}

fn lyapunov_doubling(f: &Mat, qc: &Mat) -> Result<Mat> {
    let mut a = f.clone();
    let mut x = qc.clone();
    for k in 0..64 {
        let step = a.transpose() * &x * &a;
        let next = &x + &step;
        let done = step.norm() <= 1e-16 * (1.0 + next.norm());
        x = next;
        a = &a * &a;
        if done {
            return Ok(x);
        }
        if k == 63 {
            break;
        }
    }
    Err(Error::NoConvergence { what: "Lyapunov doubling", iters: 64 })
}

const DARE_MAX_ITERS: usize = 100_000;
const DARE_STEP_TOL: f64 = 1e-12;

/// Solves the control-form Riccati equation
/// `X = A^T X A - A^T X B (R + B^T X B)^{-1} B^T X A + Q`
/// by structured doubling, falling back to the plain Riccati recursion.
pub fn solve_control_dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(dim_err("control DARE", format!("A {n}x{n}, B {n}x{m}"), format!("B {}x{}", b.nrows(), b.ncols())));
    }
    let r_chol = r.clone().cholesky().ok_or(Error::Singular("Riccati input weight"))?;
    let x = match dare_doubling(a, b, q, &r_chol.inverse()) {
        Some(x) => x,
        None => dare_recursion(a, b, q, r)?,
    };
    // polish with a couple of exact Riccati steps
    let mut x = x;
    for _ in 0..2 {
        x = riccati_map(a, b, q, r, &x).ok_or(Error::Singular("Riccati gain"))?;
    }
    Ok(x)
}

fn riccati_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, x: &Mat) -> Option<Mat> {
    let btx = b.transpose() * x;
    let s = r + &btx * b;
    let gain = s.cholesky()?.solve(&(&btx * a));
    let next = a.transpose() * x * a - a.transpose() * x * b * gain + q;
    Some(symmetrize(&next))
}

fn dare_doubling(a: &Mat, b: &Mat, q: &Mat, r_inv: &Mat) -> Option<Mat> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * r_inv * b.transpose()));
    let mut hk = symmetrize(q);
    let eye = Mat::identity(n, n);
    for _ in 0..200 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_a = lu.solve(&ak)?;
        let w_g = lu.solve(&gk)?;
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * w_a));
        if h_next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let step = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if step <= DARE_STEP_TOL * (1.0 + hk.norm()) {
            return Some(hk);
        }
    }
    None
}

fn dare_recursion(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let mut x = q.clone();
    for _ in 0..DARE_MAX_ITERS {
        let next = riccati_map(a, b, q, r, &x).ok_or(Error::Singular("Riccati gain"))?;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let step = (&next - &x).norm();
        x = next;
        if step <= DARE_STEP_TOL * (1.0 + x.norm()) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence { what: "Riccati recursion", iters: DARE_MAX_ITERS })
}

/// Steady-state Kalman filter: returns `(Sigma_e, L)` with
/// `L = A Se C^T (C Se C^T + Sv)^{-1}` and
/// `Se = (A - L C) Se (A - L C)^T + Sw + L Sv L^T`.
pub fn solve_filter_dare(a: &Mat, c: &Mat, sw: &SymPsd, sv: &SymPsd) -> Result<(SymPsd, Mat)> {
    let n = a.nrows();
    let p = c.nrows();
    if !a.is_square() || c.ncols() != n || sw.dim() != n || sv.dim() != p {
        return Err(dim_err(
            "filter DARE",
            format!("A {n}x{n}, C {p}x{n}, Sw {n}x{n}, Sv {p}x{p}"),
            format!("C {}x{}, Sw {}, Sv {}", c.nrows(), c.ncols(), sw.dim(), sv.dim()),
        ));
    }
    if sv.as_mat().clone().cholesky().is_none() {
        return Err(Error::Invalid("Sigma_v must be positive definite".into()));
    }
    let se = solve_control_dare(&a.transpose(), &c.transpose(), sw.as_mat(), sv.as_mat())
        .map_err(|e| Error::NotDetectable(e.to_string()))?;
    let l = kalman_gain(a, c, &se, sv.as_mat())?;
    let resid = filter_dare_residual(a, c, sw.as_mat(), sv.as_mat(), &se, &l);
    if !(resid <= 1e-8 * (1.0 + se.norm())) {
        return Err(Error::NotDetectable(format!("Riccati residual {resid:.3e}")));
    }
    let rho = spectral_radius(&(a - &l * c))?;
    if rho >= 1.0 {
        return Err(Error::NotDetectable(format!("A - L C has spectral radius {rho:.6}")));
    }
    let se = SymPsd::new(se, 1e-8).map_err(|e| Error::NotDetectable(e.to_string()))?;
    Ok((se, l))
}

pub fn kalman_gain(a: &Mat, c: &Mat, se: &Mat, sv: &Mat) -> Result<Mat> {
    let innov = symmetrize(&(c * se * c.transpose() + sv));
    let chol = innov.cholesky().ok_or(Error::Singular("innovation covariance"))?;
    // L = A Se C^T S^{-1}  <=>  S L^T = C Se A^T
    let lt = chol.solve(&(c * se * a.transpose()));
    Ok(lt.transpose())
}

/// Frobenius residual of the Joseph-form filter Riccati equation.
pub fn filter_dare_residual(a: &Mat, c: &Mat, sw: &Mat, sv: &Mat, se: &Mat, l: &Mat) -> f64 {
    let acl = a - l * c;
    let rhs = &acl * se * acl.transpose() + sw + l * sv * l.transpose();
    (se - rhs).norm()
}
