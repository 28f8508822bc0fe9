//! The two-layer architecture: system matrices, noise models, initial means,
//! input bound, and the configuration of the upper-layer controller,
//! synthesis and simulation.

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, SymPsd, Vector};

/// One partially observed stochastic linear system
/// `x+ = A x + B u + w`, `y = C x + v`, `w ~ N(0, Sw)`, `v ~ N(0, Sv)`.
///
/// The initial covariance is not stored: it is the steady-state estimation
/// error covariance computed by [`crate::estimation::build_estimator`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemSpec {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub sigma_w: SymPsd,
    pub sigma_v: SymPsd,
    pub mu0: Vector,
}

impl LinearSystemSpec {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    fn validate(&self, name: &str) -> Result<()> {
        let n = self.n();
        if !self.a.is_square() {
            return Err(dim_err(format!("{name}.A"), "square", format!("{}x{}", self.a.nrows(), self.a.ncols())));
        }
        if self.b.nrows() != n {
            return Err(dim_err(format!("{name}.B rows"), n, self.b.nrows()));
        }
        if self.c.ncols() != n {
            return Err(dim_err(format!("{name}.C cols"), n, self.c.ncols()));
        }
        if self.sigma_w.dim() != n {
            return Err(dim_err(format!("{name}.Sigma_w"), n, self.sigma_w.dim()));
        }
        if self.sigma_v.dim() != self.p() {
            return Err(dim_err(format!("{name}.Sigma_v"), self.p(), self.sigma_v.dim()));
        }
        if self.mu0.len() != n {
            return Err(dim_err(format!("{name}.mu0"), n, self.mu0.len()));
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.c.iter()).chain(self.mu0.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid(format!("{name}: non-finite entries")));
        }
        if self.sigma_v.as_mat().clone().cholesky().is_none() {
            return Err(Error::Invalid(format!("{name}: Σv must be positive definite")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Lqg,
}

/// Upper-layer LQG weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperControllerCfg {
    pub kind: ControllerKind,
    pub p_q: SymPsd,
    pub p_r: SymPsd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCfg {
    pub lambda_grid: Vec<f64>,
    pub sdp_tol: f64,
    /// Floor `M̃ ⪰ strict_eps I` in the SDP.
    pub strict_eps: f64,
    pub use_constructive_fallback: bool,
    /// Minimize the spectral norm exactly when choosing R (not part of the
    /// config file; set from the command line).
    pub spectral_r: bool,
}

impl SynthCfg {
    /// `k / 41` for `k = 1..=40`.
    pub fn default_grid() -> Vec<f64> {
        (1..=40).map(|k| k as f64 / 41.0).collect()
    }
}

impl Default for SynthCfg {
    fn default() -> Self {
        SynthCfg {
            lambda_grid: Self::default_grid(),
            sdp_tol: 1e-8,
            strict_eps: 1e-6,
            use_constructive_fallback: true,
            spectral_r: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimCfg {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SimCfg {
    fn default() -> Self {
        SimCfg { horizon: 100, trials: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub upper: LinearSystemSpec,
    pub lower: LinearSystemSpec,
    /// Radius of the Euclidean ball of admissible upper-layer inputs.
    pub u_max: f64,
    pub upper_controller: UpperControllerCfg,
    pub sim: SimCfg,
    pub synth: SynthCfg,
}

/// Checks every structural invariant and hands the spec back untouched.
pub fn validate(spec: ArchitectureSpec) -> Result<ArchitectureSpec> {
    spec.upper.validate("upper")?;
    spec.lower.validate("lower")?;
    if spec.upper.p() != spec.lower.p() {
        return Err(Error::Invalid(format!(
            "output dimension mismatch: upper p={}, lower p={}",
            spec.upper.p(),
            spec.lower.p()
        )));
    }
    if !(spec.u_max > 0.0 && spec.u_max.is_finite()) {
        return Err(Error::Invalid(format!("u_max must be positive, got {}", spec.u_max)));
    }
    let ctrl = &spec.upper_controller;
    if ctrl.p_q.dim() != spec.upper.n() {
        return Err(dim_err("upper_controller.P_Q", spec.upper.n(), ctrl.p_q.dim()));
    }
    if ctrl.p_r.dim() != spec.upper.m() {
        return Err(dim_err("upper_controller.P_R", spec.upper.m(), ctrl.p_r.dim()));
    }
    if ctrl.p_r.as_mat().clone().cholesky().is_none() {
        return Err(Error::Invalid("upper_controller.P_R must be positive definite".into()));
    }
    let synth = &spec.synth;
    if synth.lambda_grid.is_empty() {
        return Err(Error::Invalid("synth.lambda_grid is empty".into()));
    }
    if let Some(l) = synth.lambda_grid.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::Invalid(format!("lambda {l} outside (0, 1)")));
    }
    if !(synth.sdp_tol > 0.0) || !(synth.strict_eps > 0.0) {
        return Err(Error::Invalid("synth.sdp_tol and synth.strict_eps must be positive".into()));
    }
    if spec.sim.horizon == 0 || spec.sim.trials == 0 {
        return Err(Error::Invalid("sim.horizon and sim.trials must be positive".into()));
    }
    Ok(spec)
}

/// PBH test: `rank [A - λI, B] = n` for every eigenvalue with `|λ| >= 1`.
pub fn check_stabilizable(a: &Mat, b: &Mat) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let eig = a.clone().complex_eigenvalues();
    for lam in eig.iter() {
        if lam.norm() < 1.0 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lam;
            for j in 0..b.ncols() {
                pbh[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        let sv = pbh.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let rank = sv.iter().filter(|s| **s > 1e-8 * smax.max(1e-300)).count();
        if smax == 0.0 || rank < n {
            return false;
        }
    }
    true
}

/// `A = I + dt Ac`, `B = dt Bc`.
pub fn discretize_forward_euler(ac: &Mat, bc: &Mat, dt: f64) -> Result<(Mat, Mat)> {
    if !ac.is_square() {
        return Err(dim_err("Ac", "square", format!("{}x{}", ac.nrows(), ac.ncols())));
    }
    if bc.nrows() != ac.nrows() {
        return Err(dim_err("Bc rows", ac.nrows(), bc.nrows()));
    }
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
    }
    let n = ac.nrows();
    Ok((Mat::identity(n, n) + ac * dt, bc * dt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    pub(crate) fn scalar_system(a: f64, b: f64) -> LinearSystemSpec {
        LinearSystemSpec {
            a: m(1, 1, &[a]),
            b: m(1, 1, &[b]),
            c: m(1, 1, &[1.0]),
            sigma_w: SymPsd::from_diag(&[0.1]).unwrap(),
            sigma_v: SymPsd::from_diag(&[0.1]).unwrap(),
            mu0: Vector::from_vec(vec![1.0]),
        }
    }

    fn scalar_arch() -> ArchitectureSpec {
        ArchitectureSpec {
            upper: scalar_system(0.9, 1.0),
            lower: scalar_system(0.8, 1.0),
            u_max: 1.0,
            upper_controller: UpperControllerCfg {
                kind: ControllerKind::Lqg,
                p_q: SymPsd::identity(1),
                p_r: SymPsd::identity(1),
            },
            sim: SimCfg::default(),
            synth: SynthCfg::default(),
        }
    }

    #[test]
    fn pbh_examples() {
        assert!(check_stabilizable(&m(1, 1, &[0.5]), &m(1, 1, &[0.0])));
        assert!(!check_stabilizable(&m(1, 1, &[2.0]), &m(1, 1, &[0.0])));
        assert!(check_stabilizable(&m(1, 1, &[2.0]), &m(1, 1, &[1.0])));
        // unstable mode hidden from the input
        assert!(!check_stabilizable(&m(2, 2, &[1.2, 0.0, 0.0, 0.5]), &m(2, 1, &[0.0, 1.0])));
    }

    #[test]
    fn euler_examples() {
        let bc = m(2, 1, &[1.0, -3.0]);
        let (a, b) = discretize_forward_euler(&Mat::zeros(2, 2), &bc, 0.02).unwrap();
        assert_eq!(a, Mat::identity(2, 2));
        assert_eq!(b, &bc * 0.02);
        assert!(discretize_forward_euler(&Mat::zeros(2, 2), &bc, 0.0).is_err());
    }

    #[test]
    fn validate_accepts_and_preserves() {
        let arch = scalar_arch();
        let out = validate(arch.clone()).unwrap();
        assert_eq!(out, arch);
    }

    #[test]
    fn validate_output_dimension_mismatch() {
        let mut arch = scalar_arch();
        arch.lower.c = m(2, 1, &[1.0, 1.0]);
        arch.lower.sigma_v = SymPsd::identity(2);
        let err = validate(arch).unwrap_err().to_string();
        assert!(err.contains("output dimension mismatch"), "{err}");
    }

    #[test]
    fn validate_singular_sigma_v() {
        let mut arch = scalar_arch();
        arch.upper.sigma_v = SymPsd::from_diag(&[0.0]).unwrap();
        let err = validate(arch).unwrap_err().to_string();
        assert!(err.contains("Σv must be positive definite"), "{err}");
    }

    #[test]
    fn validate_rejects_bad_umax_and_grid() {
        let mut arch = scalar_arch();
        arch.u_max = 0.0;
        assert!(validate(arch).is_err());
        let mut arch = scalar_arch();
        arch.synth.lambda_grid = vec![0.5, 1.0];
        assert!(validate(arch).is_err());
    }
}
