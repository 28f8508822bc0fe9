//! Interface-controller synthesis.
//!
//! Pipeline: steady-state estimators for both layers, interface maps (P, Q),
//! then for every λ on the grid an SDP in `(M̃, K̃)` whose optimum gives the
//! simulation-function weight `M` and gain `K`. The feed-through `R` is
//! recomputed from the recovered `M`, the certificate `(ρ, α, ε)` is
//! evaluated, and the λ with the smallest ε wins. When every λ fails a
//! constructive Lyapunov-based design is used instead (if enabled).
//!
//! The lower layer applies
//! `u2 = R u1 + Q x̂1 + K (x̂2 - P x̂1)`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::estimation::{build_estimator, EstimatorSpec};
use crate::linalg::{
    kron, minnorm_lstsq, psd_sqrt_unchecked, solve_control_dare, solve_discrete_lyapunov, spectral_norm,
    spectral_radius, sym_sqrt, symmetrize, unvec, Mat, SymPsd, Vector,
};
use crate::model::{check_stabilizable, ArchitectureSpec, LinearSystemSpec};
use crate::parallel::{map_indexed, Exec};
use crate::sdp::{lmi_margin, solve, AffineExpr, SdpProblem, SdpSolution, SdpStatus, Variable};

/// Smallest acceptable Lemma margin for a returned design.
pub const LEMMA_MARGIN_TOL: f64 = 1e-7;

/// Maximum number of SDP/R sweeps per λ.
const MAX_SWEEPS: usize = 3;

/// Solution of `C2 P = C1`, `P A1 = A2 P + B2 Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceMaps {
    pub p: Mat,
    pub q: Mat,
    pub residual_cp: f64,
    pub residual_paq: f64,
}

/// `(M, K, λ)` together with the scalars of the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub m: Mat,
    pub k: Mat,
    pub lambda: f64,
    pub rho: f64,
    pub alpha: f64,
    pub trace_s: f64,
    pub epsilon: f64,
}

/// Outcome of one λ grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaStatus {
    Optimal,
    Infeasible,
    MaxIters,
    /// The SDP solved but the recovered `(M, K)` missed the Lemma margin.
    RecoveryFailed,
}

impl From<SdpStatus> for LambdaStatus {
    fn from(s: SdpStatus) -> Self {
        match s {
            SdpStatus::Optimal => LambdaStatus::Optimal,
            SdpStatus::Infeasible => LambdaStatus::Infeasible,
            SdpStatus::MaxIters => LambdaStatus::MaxIters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignMeta {
    pub lambda_grid_used: Vec<f64>,
    pub sdp_status_per_lambda: Vec<LambdaStatus>,
    pub fallback_used: bool,
}

/// Everything the lower layer needs at run time plus its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceDesign {
    pub maps: InterfaceMaps,
    pub r: Mat,
    pub cert: Certificate,
    pub estimators: (EstimatorSpec, EstimatorSpec),
    pub meta: DesignMeta,
}

impl InterfaceDesign {
    pub fn k(&self) -> &Mat {
        &self.cert.k
    }
}

/// `ρ = (1 - λ) / (1 - λ/2)`.
pub fn rho_of(lambda: f64) -> f64 {
    (1.0 - lambda) / (1.0 - 0.5 * lambda)
}

/// Min-norm solution of the stacked Kronecker system for `(vec P, vec Q)`.
pub fn solve_interface_maps(upper: &LinearSystemSpec, lower: &LinearSystemSpec) -> Result<InterfaceMaps> {
    let (n1, n2, m2, p) = (upper.n(), lower.n(), lower.m(), upper.p());
    if lower.p() != p {
        return Err(dim_err("output dimension", p, lower.p()));
    }
    let i1 = Mat::identity(n1, n1);
    let i2 = Mat::identity(n2, n2);
    let np = n2 * n1;
    let nq = m2 * n1;
    let mut sys = Mat::zeros(p * n1 + np, np + nq);
    sys.view_mut((0, 0), (p * n1, np)).copy_from(&kron(&i1, &lower.c));
    sys.view_mut((p * n1, 0), (np, np))
        .copy_from(&(kron(&upper.a.transpose(), &i2) - kron(&i1, &lower.a)));
    sys.view_mut((p * n1, np), (np, nq)).copy_from(&(-kron(&i1, &lower.b)));
    let mut rhs = Mat::zeros(p * n1 + np, 1);
    rhs.view_mut((0, 0), (p * n1, 1)).copy_from_slice(upper.c.as_slice());
    let x = minnorm_lstsq(&sys, &rhs)?;
    let pm = unvec(&x.as_slice()[..np], n2, n1);
    let qm = unvec(&x.as_slice()[np..], m2, n1);
    let residual_cp = (&lower.c * &pm - &upper.c).norm();
    let residual_paq = (&pm * &upper.a - &lower.a * &pm - &lower.b * &qm).norm();
    if residual_cp > 1e-6 * (1.0 + upper.c.norm()) || residual_paq > 1e-6 * (1.0 + upper.a.norm()) {
        return Err(Error::InterfaceInfeasible { residual_cp, residual_paq });
    }
    Ok(InterfaceMaps { p: pm, q: qm, residual_cp, residual_paq })
}

/// Both Lemma blocks at `(M, K, λ)`:
/// `M - C^T C ⪰ 0` and `-(A_K^T M A_K - M + λ M) ⪰ 0`.
pub fn lemma_blocks(lower: &LinearSystemSpec, m: &Mat, k: &Mat, lambda: f64) -> [Mat; 2] {
    let ak = &lower.a + &lower.b * k;
    let output = symmetrize(&(m - lower.c.transpose() * &lower.c));
    let contraction = symmetrize(&(-(ak.transpose() * m * &ak - m * (1.0 - lambda))));
    [output, contraction]
}

pub fn lemma_margin(lower: &LinearSystemSpec, m: &Mat, k: &Mat, lambda: f64) -> Result<f64> {
    lmi_margin(&lemma_blocks(lower, m, k, lambda))
}

/// The fixed matrices entering α: `X0 = B2 R - P B1`, `P L1 C1 Σe1^½`,
/// `L2 C2 Σe2^½`, `P L1 Σv1^½`, `L2 Σv2^½`.
struct AlphaTerms {
    x0: Mat,
    noise: [Mat; 4],
    trace_s: f64,
    trace_sv: f64,
    z0: Vector,
}

fn alpha_terms(
    arch: &ArchitectureSpec,
    maps: &InterfaceMaps,
    est: (&EstimatorSpec, &EstimatorSpec),
    r: &Mat,
) -> AlphaTerms {
    let (up, lo) = (&arch.upper, &arch.lower);
    let (e1, e2) = est;
    let p = &maps.p;
    let se1 = sym_sqrt(&e1.sigma_e);
    let se2 = sym_sqrt(&e2.sigma_e);
    let trace_s = (&up.c * e1.sigma_e.as_mat() * up.c.transpose()).trace()
        + (&lo.c * e2.sigma_e.as_mat() * lo.c.transpose()).trace();
    AlphaTerms {
        x0: &lo.b * r - p * &up.b,
        noise: [
            p * &e1.l * &up.c * &se1,
            &e2.l * &lo.c * &se2,
            p * &e1.l * sym_sqrt(&up.sigma_v),
            &e2.l * sym_sqrt(&lo.sigma_v),
        ],
        trace_s,
        trace_sv: up.sigma_v.trace() + lo.sigma_v.trace(),
        z0: &lo.mu0 - p * &up.mu0,
    }
}

/// Decision variables of the synthesis SDP.
#[derive(Debug, Clone)]
pub struct SynthSdp {
    pub problem: SdpProblem,
    pub m_tilde: Variable,
    pub k_tilde: Variable,
    pub gamma: Variable,
}

/// The SDP in `M̃ = M^{-1}`, `K̃ = K M̃` for a fixed λ and R, minimizing γ,
/// an upper bound on `max{V(μ0), α/(1-ρ)}` with the spectral norm in α
/// replaced by its Frobenius bound.
pub fn build_sdp(
    arch: &ArchitectureSpec,
    maps: &InterfaceMaps,
    est: (&EstimatorSpec, &EstimatorSpec),
    r: &Mat,
    lambda: f64,
) -> Result<SynthSdp> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invalid(format!("lambda {lambda} outside (0, 1)")));
    }
    let lo = &arch.lower;
    let (n2, m2, p) = (lo.n(), lo.m(), lo.p());
    let terms = alpha_terms(arch, maps, est, r);
    let mut prob = SdpProblem::new();
    let mt = prob.symmetric("M_tilde", n2);
    let kt = prob.matrix("K_tilde", m2, n2);
    let gamma = prob.scalar("gamma");
    let m_e = mt.expr();

    prob.add_lmi("floor", m_e.add_constant(&(-Mat::identity(n2, n2) * arch.synth.strict_eps)))?;

    let cm = m_e.lmul(&lo.c);
    prob.add_lmi(
        "output",
        AffineExpr::block(&[
            vec![AffineExpr::constant(Mat::identity(p, p)), cm.clone()],
            vec![cm.transpose(), m_e.clone()],
        ]),
    )?;

    let akm = m_e.lmul(&lo.a).add(&kt.expr().lmul(&lo.b));
    prob.add_lmi(
        "contraction",
        AffineExpr::block(&[
            vec![m_e.clone(), akm.clone()],
            vec![akm.transpose(), m_e.scale(1.0 - lambda)],
        ]),
    )?;

    let z0 = AffineExpr::constant(Mat::from_column_slice(n2, 1, terms.z0.as_slice()));
    prob.add_lmi(
        "initial",
        AffineExpr::block(&[
            vec![gamma.expr().add_constant(&Mat::from_element(1, 1, -terms.trace_s)), z0.transpose()],
            vec![z0, m_e.clone()],
        ]),
    )?;

    let xs: Vec<&Mat> = std::iter::once(&terms.x0).chain(terms.noise.iter()).collect();
    let mut t_traces = Vec::with_capacity(xs.len());
    for (j, x) in xs.iter().enumerate() {
        let t = prob.symmetric(&format!("T{j}"), x.ncols());
        let xc = AffineExpr::constant((*x).clone());
        prob.add_lmi(
            &format!("T{j}"),
            AffineExpr::block(&[vec![t.expr(), xc.transpose()], vec![xc, m_e.clone()]]),
        )?;
        t_traces.push(t.expr().trace());
    }

    // γ ≥ ((2-λ)/λ) ᾱ with
    // ᾱ = (2 u²/λ) tr T0 + tr T1 + tr T2 + (λ/(2-λ)) tr S + tr T3 + tr T4
    let u2 = arch.u_max * arch.u_max;
    let mut alpha_bar = t_traces[0].scale(2.0 * u2 / lambda);
    for t in &t_traces[1..] {
        alpha_bar = alpha_bar.add(t);
    }
    let alpha_bar = alpha_bar.add_constant(&Mat::from_element(1, 1, lambda / (2.0 - lambda) * terms.trace_s));
    prob.add_nonneg("epigraph", gamma.expr().sub(&alpha_bar.scale((2.0 - lambda) / lambda)))?;
    prob.minimize(gamma.expr())?;
    Ok(SynthSdp { problem: prob, m_tilde: mt, k_tilde: kt, gamma })
}

/// `M = M̃^{-1}` (symmetrized) and `K = K̃ M̃^{-1}`.
pub fn recover_mk(m_tilde: &Mat, k_tilde: &Mat) -> Result<(Mat, Mat)> {
    let chol = symmetrize(m_tilde).cholesky().ok_or(Error::Singular("recovered M_tilde"))?;
    let m = symmetrize(&chol.inverse());
    // K = K̃ M̃^{-1}  <=>  M̃ K^T = K̃^T
    let k = chol.solve(&k_tilde.transpose()).transpose();
    Ok((m, k))
}

/// `(M, K)` from an SDP solution.
pub fn recover_from_solution(sdp: &SynthSdp, sol: &SdpSolution) -> Result<(Mat, Mat)> {
    recover_mk(&sdp.m_tilde.value(&sol.y), &sdp.k_tilde.value(&sol.y))
}

/// Feed-through minimizing `|M^½ (B2 R - P B1)|`: Frobenius in closed form,
/// or the spectral norm through a small SDP when `spectral` is set (kept
/// only if it actually improves on the Frobenius minimizer).
pub fn compute_r(m: &Mat, p: &Mat, b1: &Mat, b2: &Mat, spectral: bool) -> Result<Mat> {
    let mh = psd_sqrt_unchecked(m);
    let a = &mh * b2;
    let target = &mh * p * b1;
    let r_f = minnorm_lstsq(&a, &target)?;
    if !spectral || a.ncols() == 0 || target.ncols() == 0 {
        return Ok(r_f);
    }
    let (n2, m1) = target.shape();
    let mut prob = SdpProblem::new();
    let rv = prob.matrix("R", a.ncols(), m1);
    let t = prob.scalar("t");
    let y = rv.expr().lmul(&a).add_constant(&(-&target));
    let eye = |n: usize| {
        let mut e = AffineExpr::zeros(n, n);
        for i in 0..n {
            let unit = Mat::from_fn(n, 1, |r, _| if r == i { 1.0 } else { 0.0 });
            e = e.add(&t.expr().lmul(&unit).rmul(&unit.transpose()));
        }
        e
    };
    prob.add_lmi("epigraph", AffineExpr::block(&[vec![eye(n2), y.clone()], vec![y.transpose(), eye(m1)]]))?;
    prob.minimize(t.expr())?;
    let sol = solve(&prob, 1e-9)?;
    if sol.status != SdpStatus::Optimal {
        return Ok(r_f);
    }
    let r_s = rv.value(&sol.y);
    if spectral_norm(&(&a * &r_s - &target)) < spectral_norm(&(&a * &r_f - &target)) {
        Ok(r_s)
    } else {
        Ok(r_f)
    }
}

/// Assembles ρ, α, tr S and ε for a given `(M, K, λ, R)`.
pub fn compute_certificate(
    arch: &ArchitectureSpec,
    maps: &InterfaceMaps,
    est: (&EstimatorSpec, &EstimatorSpec),
    m: &Mat,
    k: &Mat,
    lambda: f64,
    r: &Mat,
) -> Result<Certificate> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Invalid(format!("lambda {lambda} outside (0, 1)")));
    }
    let n2 = arch.lower.n();
    if m.shape() != (n2, n2) {
        return Err(dim_err("M", format!("{n2}x{n2}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    let terms = alpha_terms(arch, maps, est, r);
    let mh = psd_sqrt_unchecked(m);
    let rho = rho_of(lambda);
    let input = spectral_norm(&(&mh * &terms.x0));
    let mut alpha = 2.0 / lambda * input * input * arch.u_max * arch.u_max;
    alpha += terms.noise.iter().map(|x| (&mh * x).norm_squared()).sum::<f64>();
    alpha += lambda / (2.0 - lambda) * terms.trace_s;
    let v0 = quad_form(m, &terms.z0) + terms.trace_s;
    let epsilon = (v0.max(alpha / (1.0 - rho)) + terms.trace_sv).sqrt();
    Ok(Certificate { m: m.clone(), k: k.clone(), lambda, rho, alpha, trace_s: terms.trace_s, epsilon })
}

fn quad_form(m: &Mat, z: &Vector) -> f64 {
    (z.transpose() * m * z)[(0, 0)]
}

/// `V = (x̂2 - P x̂1)^T M (x̂2 - P x̂1) + tr S`.
pub fn evaluate_v(cert: &Certificate, maps: &InterfaceMaps, xhat1: &Vector, xhat2: &Vector) -> Result<f64> {
    if xhat1.len() != maps.p.ncols() {
        return Err(dim_err("x̂1", maps.p.ncols(), xhat1.len()));
    }
    if xhat2.len() != maps.p.nrows() {
        return Err(dim_err("x̂2", maps.p.nrows(), xhat2.len()));
    }
    let z = xhat2 - &maps.p * xhat1;
    Ok(quad_form(&cert.m, &z).max(0.0) + cert.trace_s)
}

/// LQR gain `K = -(R + B^T X B)^{-1} B^T X A` for weights `(Q, R)`.
pub fn lqr_gain(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let x = solve_control_dare(a, b, q, r)?;
    let s = symmetrize(&(r + b.transpose() * &x * b));
    let chol = s.cholesky().ok_or(Error::Singular("LQR gain"))?;
    Ok(-chol.solve(&(b.transpose() * &x * a)))
}

/// Lyapunov-based `(M, K, λ)` that needs no SDP: unit-weight LQR gain, the
/// largest grid λ compatible with its spectral radius, and
/// `M = N + C^T C` where `A_{K,λ}^T N A_{K,λ} - N = -Λ` with
/// `Λ = A_{K,λ}^T C^T C A_{K,λ} + I`.
pub fn synthesize_constructive(lower: &LinearSystemSpec, grid: &[f64]) -> Result<(Mat, Mat, f64)> {
    if !check_stabilizable(&lower.a, &lower.b) {
        return Err(Error::NotStabilizable);
    }
    let (n, m) = (lower.n(), lower.m());
    let k = if m == 0 {
        Mat::zeros(0, n)
    } else {
        lqr_gain(&lower.a, &lower.b, &Mat::identity(n, n), &Mat::identity(m, m))?
    };
    let ak = &lower.a + &lower.b * &k;
    let rho_k = spectral_radius(&ak)?;
    let lambda = grid
        .iter()
        .copied()
        .filter(|l| *l > 0.0 && *l < 1.0 && rho_k / (1.0 - l).sqrt() < 1.0 - 1e-6)
        .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.max(l))))
        .ok_or_else(|| {
            Error::SynthesisInfeasible(format!("no grid λ is compatible with the closed-loop spectral radius {rho_k:.6}"))
        })?;
    let akl = &ak / (1.0 - lambda).sqrt();
    let ctc = lower.c.transpose() * &lower.c;
    let cakl = &lower.c * &akl;
    let big_lambda = SymPsd::new(symmetrize(&(cakl.transpose() * &cakl + Mat::identity(n, n))), 1e-9)?;
    let nsol = solve_discrete_lyapunov(&akl, &big_lambda)?;
    let mmat = symmetrize(&(nsol.as_mat() + ctc));
    Ok((mmat, k, lambda))
}

struct Candidate {
    cert: Certificate,
    r: Mat,
}

fn evaluate_lambda(
    arch: &ArchitectureSpec,
    maps: &InterfaceMaps,
    est: (&EstimatorSpec, &EstimatorSpec),
    lambda: f64,
) -> Result<(LambdaStatus, Option<Candidate>)> {
    let (lo, up) = (&arch.lower, &arch.upper);
    let spectral = arch.synth.spectral_r;
    let mut r = compute_r(&Mat::identity(lo.n(), lo.n()), &maps.p, &up.b, &lo.b, spectral)?;
    let mut best: Option<Candidate> = None;
    for _ in 0..MAX_SWEEPS {
        let sdp = build_sdp(arch, maps, est, &r, lambda)?;
        let sol = solve(&sdp.problem, arch.synth.sdp_tol)?;
        if sol.status != SdpStatus::Optimal {
            if best.is_none() {
                return Ok((sol.status.into(), None));
            }
            break;
        }
        let recovered = recover_from_solution(&sdp, &sol)
            .and_then(|(m, k)| lemma_margin(lo, &m, &k, lambda).map(|margin| (m, k, margin)));
        let (m, k) = match recovered {
            Ok((m, k, margin)) if margin >= -LEMMA_MARGIN_TOL => (m, k),
            _ if best.is_none() => return Ok((LambdaStatus::RecoveryFailed, None)),
            _ => break,
        };
        let r_new = compute_r(&m, &maps.p, &up.b, &lo.b, spectral)?;
        let cert = compute_certificate(arch, maps, est, &m, &k, lambda, &r_new)?;
        if best.as_ref().is_some_and(|b| cert.epsilon >= b.cert.epsilon) {
            break;
        }
        best = Some(Candidate { cert, r: r_new.clone() });
        r = r_new;
    }
    Ok((LambdaStatus::Optimal, best))
}

/// Runs the whole synthesis on the default executor.
pub fn design_pipeline(arch: &ArchitectureSpec) -> Result<InterfaceDesign> {
    design_pipeline_with(arch, Exec::Parallel)
}

/// Runs the whole synthesis, evaluating λ grid points with `exec`. The
/// result does not depend on `exec`.
pub fn design_pipeline_with(arch: &ArchitectureSpec, exec: Exec) -> Result<InterfaceDesign> {
    if !check_stabilizable(&arch.lower.a, &arch.lower.b) {
        return Err(Error::NotStabilizable);
    }
    let e1 = build_estimator(&arch.upper)?;
    let e2 = build_estimator(&arch.lower)?;
    let maps = solve_interface_maps(&arch.upper, &arch.lower)?;
    let est = (&e1, &e2);
    let grid = &arch.synth.lambda_grid;
    let outcomes = map_indexed(grid.len(), exec, |i| evaluate_lambda(arch, &maps, est, grid[i]));

    let mut statuses = Vec::with_capacity(grid.len());
    let mut best: Option<Candidate> = None;
    for outcome in outcomes {
        let (status, cand) = outcome?;
        statuses.push(status);
        if let Some(c) = cand {
            let better = match &best {
                None => true,
                Some(b) => {
                    c.cert.epsilon < b.cert.epsilon
                        || (c.cert.epsilon == b.cert.epsilon && c.cert.lambda < b.cert.lambda)
                }
            };
            if better {
                best = Some(c);
            }
        }
    }

    let mut fallback_used = false;
    let chosen = match best {
        Some(c) => c,
        None if arch.synth.use_constructive_fallback => {
            fallback_used = true;
            let (m, k, lambda) = synthesize_constructive(&arch.lower, grid)?;
            let r = compute_r(&m, &maps.p, &arch.upper.b, &arch.lower.b, arch.synth.spectral_r)?;
            let cert = compute_certificate(arch, &maps, est, &m, &k, lambda, &r)?;
            Candidate { cert, r }
        }
        None => {
            return Err(Error::SynthesisInfeasible(format!(
                "the SDP failed at all {} grid values of λ and the constructive fallback is disabled",
                grid.len()
            )))
        }
    };
    let margin = lemma_margin(&arch.lower, &chosen.cert.m, &chosen.cert.k, chosen.cert.lambda)?;
    if margin < -LEMMA_MARGIN_TOL {
        return Err(Error::SynthesisInfeasible(format!("returned design has Lemma margin {margin:.3e}")));
    }
    Ok(InterfaceDesign {
        maps,
        r: chosen.r,
        cert: chosen.cert,
        estimators: (e1, e2),
        meta: DesignMeta { lambda_grid_used: grid.clone(), sdp_status_per_lambda: statuses, fallback_used },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControllerKind, SimCfg, SynthCfg, UpperControllerCfg};

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    fn sys(a: Mat, b: Mat, c: Mat, noise: f64) -> LinearSystemSpec {
        let (n, p) = (a.nrows(), c.nrows());
        LinearSystemSpec {
            a,
            b,
            c,
            sigma_w: SymPsd::new(Mat::identity(n, n) * noise, 1e-12).unwrap(),
            sigma_v: SymPsd::new(Mat::identity(p, p) * noise.max(1e-3), 1e-12).unwrap(),
            mu0: Vector::zeros(n),
        }
    }

    fn arch(upper: LinearSystemSpec, lower: LinearSystemSpec) -> ArchitectureSpec {
        let (n1, m1) = (upper.n(), upper.m());
        ArchitectureSpec {
            upper,
            lower,
            u_max: 1.0,
            upper_controller: UpperControllerCfg {
                kind: ControllerKind::Lqg,
                p_q: SymPsd::identity(n1),
                p_r: SymPsd::identity(m1),
            },
            sim: SimCfg::default(),
            synth: SynthCfg { lambda_grid: vec![0.2, 0.4, 0.6], ..SynthCfg::default() },
        }
    }

    fn scalar(a: f64, b: f64) -> LinearSystemSpec {
        sys(m(1, 1, &[a]), m(1, 1, &[b]), m(1, 1, &[1.0]), 0.01)
    }

    #[test]
    fn identical_systems_admit_exact_maps() {
        let s = sys(
            m(2, 2, &[0.9, 0.1, 0.0, 0.7]),
            m(2, 1, &[0.0, 1.0]),
            m(1, 2, &[1.0, 0.0]),
            0.01,
        );
        let maps = solve_interface_maps(&s, &s).unwrap();
        assert!(maps.residual_cp <= 1e-10 && maps.residual_paq <= 1e-10);
    }

    #[test]
    fn zero_output_map_is_infeasible() {
        let up = sys(Mat::identity(2, 2) * 0.5, m(2, 1, &[1.0, 0.0]), m(1, 2, &[1.0, 0.0]), 0.01);
        let lo = sys(Mat::identity(2, 2) * 0.5, m(2, 1, &[1.0, 0.0]), m(1, 2, &[0.0, 0.0]), 0.01);
        assert!(matches!(solve_interface_maps(&up, &lo), Err(Error::InterfaceInfeasible { .. })));
    }

    #[test]
    fn recover_examples() {
        let (mm, k) = recover_mk(&Mat::identity(2, 2), &Mat::zeros(1, 2)).unwrap();
        assert_eq!(mm, Mat::identity(2, 2));
        assert_eq!(k, Mat::zeros(1, 2));
        let (mm, k) = recover_mk(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), &m(1, 2, &[1.0, 0.0])).unwrap();
        assert!((mm - m(2, 2, &[0.5, 0.0, 0.0, 0.25])).norm() < 1e-15);
        assert!((k - m(1, 2, &[0.5, 0.0])).norm() < 1e-15);
        let (mm, k) = recover_mk(&m(1, 1, &[2.0]), &m(1, 1, &[-1.0])).unwrap();
        assert!((mm[(0, 0)] - 0.5).abs() < 1e-15 && (k[(0, 0)] + 0.5).abs() < 1e-15);
        let lo = scalar(0.5, 1.0);
        let contraction = &lemma_blocks(&lo, &mm, &k, 0.2)[1];
        assert!((contraction[(0, 0)] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn r_examples() {
        let r = compute_r(&Mat::identity(2, 2), &Mat::identity(2, 2), &m(2, 1, &[2.0, 2.0]), &m(2, 1, &[1.0, 0.0]), false)
            .unwrap();
        assert!((r[(0, 0)] - 2.0).abs() < 1e-12);
        let resid = (m(2, 1, &[1.0, 0.0]) * &r - m(2, 1, &[2.0, 2.0])).norm();
        assert!((resid - 2.0).abs() < 1e-12);
        let b2 = m(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let b1 = m(2, 1, &[1.0, 1.0]);
        let r = compute_r(&m(2, 2, &[2.0, 0.3, 0.3, 1.0]), &Mat::identity(2, 2), &b1, &b2, false).unwrap();
        assert!((&b2 * r - &b1).norm() < 1e-12);
        let r = compute_r(&Mat::identity(2, 2), &Mat::zeros(2, 2), &b1, &b2, false).unwrap();
        assert_eq!(r, Mat::zeros(2, 1));
    }

    #[test]
    fn spectral_r_never_worse() {
        let mm = m(3, 3, &[2.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 3.0]);
        let b2 = m(3, 1, &[1.0, 0.5, -0.2]);
        let pb1 = m(3, 2, &[1.0, 0.0, 0.3, 1.0, -1.0, 0.4]);
        let eye = Mat::identity(3, 3);
        let mh = psd_sqrt_unchecked(&mm);
        let rf = compute_r(&mm, &eye, &pb1, &b2, false).unwrap();
        let rs = compute_r(&mm, &eye, &pb1, &b2, true).unwrap();
        let norm = |r: &Mat| spectral_norm(&(&mh * (&b2 * r - &pb1)));
        assert!(norm(&rs) <= norm(&rf) + 1e-9);
    }

    #[test]
    fn rho_examples() {
        assert!((rho_of(0.5) - 2.0 / 3.0).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 1..100 {
            let r = rho_of(k as f64 / 100.0);
            assert!(r > 0.0 && r < 1.0 && r < prev);
            prev = r;
        }
    }

    #[test]
    fn v_examples() {
        let cert = |mm: Mat, trace_s: f64| Certificate {
            m: mm,
            k: Mat::zeros(1, 2),
            lambda: 0.5,
            rho: rho_of(0.5),
            alpha: 1.0,
            trace_s,
            epsilon: 1.0,
        };
        let maps = |p: Mat| InterfaceMaps { p, q: Mat::zeros(1, 2), residual_cp: 0.0, residual_paq: 0.0 };
        let v = |x: &[f64]| Vector::from_column_slice(x);
        let c = cert(Mat::identity(2, 2), 0.0);
        assert_eq!(evaluate_v(&c, &maps(Mat::zeros(2, 2)), &v(&[1.0, 1.0]), &v(&[3.0, 4.0])).unwrap(), 25.0);
        let c = cert(m(2, 2, &[2.0, 0.0, 0.0, 1.0]), 0.7);
        let val = evaluate_v(&c, &maps(Mat::identity(2, 2)), &v(&[1.0, 0.0]), &v(&[2.0, 1.0])).unwrap();
        assert!((val - 3.7).abs() < 1e-15);
        let val = evaluate_v(&c, &maps(Mat::identity(2, 2)), &v(&[1.0, 2.0]), &v(&[1.0, 2.0])).unwrap();
        assert_eq!(val, 0.7);
        assert!(evaluate_v(&c, &maps(Mat::identity(2, 2)), &v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn constructive_examples() {
        let lo = sys(m(1, 1, &[0.0]), m(1, 1, &[0.0]), m(1, 1, &[1.0]), 0.01);
        let (mm, k, lambda) = synthesize_constructive(&lo, &[0.3, 0.9]).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        assert_eq!(lambda, 0.9);
        assert!((mm[(0, 0)] - 2.0).abs() < 1e-12);
        let lo = scalar(0.5, 1.0);
        let (mm, k, lambda) = synthesize_constructive(&lo, &SynthCfg::default_grid()).unwrap();
        assert!(lemma_margin(&lo, &mm, &k, lambda).unwrap() >= -LEMMA_MARGIN_TOL);
        let lo = scalar(2.0, 0.0);
        assert!(matches!(synthesize_constructive(&lo, &[0.5]), Err(Error::NotStabilizable)));
        // a Λ proportional to C^T C alone would not dominate here
        let lo = sys(m(2, 2, &[0.0, 1.0, 0.0, 0.0]), m(2, 1, &[0.0, 0.0]), m(1, 2, &[1.0, 0.0]), 0.01);
        let (mm, k, lambda) = synthesize_constructive(&lo, &[0.5]).unwrap();
        assert!(lemma_margin(&lo, &mm, &k, lambda).unwrap() > 0.0);
    }

    #[test]
    fn scalar_sdp_feasible_and_certified() {
        let a = arch(scalar(0.9, 1.0), scalar(0.5, 1.0));
        let d = design_pipeline(&a).unwrap();
        assert!(!d.meta.fallback_used);
        assert!(lemma_margin(&a.lower, &d.cert.m, d.k(), d.cert.lambda).unwrap() >= -LEMMA_MARGIN_TOL);
        assert!(d.cert.alpha > 0.0 && d.cert.epsilon > 0.0);
    }

    #[test]
    fn slow_uncontrolled_mode_is_infeasible_at_large_lambda() {
        let lo = scalar(0.99, 0.0);
        let a = arch(scalar(0.99, 0.0), lo);
        let maps = solve_interface_maps(&a.upper, &a.lower).unwrap();
        let (e1, e2) = (build_estimator(&a.upper).unwrap(), build_estimator(&a.lower).unwrap());
        let r = Mat::zeros(1, 1);
        let sdp = build_sdp(&a, &maps, (&e1, &e2), &r, 0.5).unwrap();
        let sol = solve(&sdp.problem, 1e-8).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let sdp = build_sdp(&a, &maps, (&e1, &e2), &r, 0.01).unwrap();
        assert_eq!(solve(&sdp.problem, 1e-8).unwrap().status, SdpStatus::Optimal);
    }

    #[test]
    fn fallback_when_grid_is_infeasible() {
        let mut a = arch(scalar(0.99, 0.0), scalar(0.99, 0.0));
        a.synth.lambda_grid = vec![0.5, 0.9];
        assert!(matches!(design_pipeline(&a), Err(Error::SynthesisInfeasible(_))));
        a.synth.lambda_grid = vec![0.01, 0.5];
        a.lower.b = m(1, 1, &[1.0]);
        a.synth.use_constructive_fallback = false;
        assert!(design_pipeline(&a).is_ok());
    }

    #[test]
    fn sequential_and_parallel_designs_match() {
        let a = arch(scalar(0.9, 1.0), scalar(0.7, 0.5));
        let p = design_pipeline_with(&a, Exec::Parallel).unwrap();
        let s = design_pipeline_with(&a, Exec::Sequential).unwrap();
        assert_eq!(p, s);
    }
}
