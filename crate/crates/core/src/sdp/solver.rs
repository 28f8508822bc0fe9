//! Infeasible-start primal-dual interior-point method (HKM direction with
//! Mehrotra predictor-corrector) for problems in LMI form:
//!
//! ```text
//!   minimize    c^T y
//!   subject to  S = F0 + sum_i y_i F_i ⪰ 0        (block diagonal)
//! ```
//!
//! with dual `maximize -<F0, Z>  s.t.  <F_i, Z> = c_i,  Z ⪰ 0`.

use nalgebra::Cholesky;

use super::expr::Triplet;
use super::problem::SdpProblem;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Infeasibility certificate threshold on `|A*(Z)| / -<F0, Z>`.
    pub infeas_tol: f64,
    /// Dual residual and complementarity accepted once progress stalls,
    /// provided the primal point is feasible to `tol`.
    pub reduced_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: 1e-8, max_iters: 120, infeas_tol: 1e-9, reduced_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    /// Scalar assignment; read variables with [`super::Variable::value`].
    pub y: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub status: SdpStatus,
    pub min_block_eigenvalue: f64,
    pub iterations: usize,
}

/// Coefficient of one scalar in one block.
struct Use {
    block: usize,
    trips: Vec<Triplet>,
}

struct Data {
    sizes: Vec<usize>,
    f0: Vec<Mat>,
    /// uses[i] lists the blocks scalar i appears in
    uses: Vec<Vec<Use>>,
    /// per block: (scalar, index into uses[scalar])
    by_block: Vec<Vec<(usize, usize)>>,
    c: Vec<f64>,
}

impl Data {
    fn new(p: &SdpProblem) -> Self {
        let m = p.n_scalars();
        let sizes: Vec<usize> = p.blocks().iter().map(|b| b.expr.shape().0).collect();
        let f0 = p.blocks().iter().map(|b| b.expr.constant_part().clone()).collect();
        let mut uses: Vec<Vec<Use>> = (0..m).map(|_| Vec::new()).collect();
        let mut by_block: Vec<Vec<(usize, usize)>> = vec![Vec::new(); sizes.len()];
        for (k, b) in p.blocks().iter().enumerate() {
            for (&i, trips) in b.expr.terms() {
                by_block[k].push((i, uses[i].len()));
                uses[i].push(Use { block: k, trips: trips.clone() });
            }
        }
        let (c, _) = p.objective_vector();
        Data { sizes, f0, uses, by_block, c }
    }

    /// Smallest eigenvalue over blocks, shifted by the eigensolver's
    /// roundoff so that large but PSD blocks are not rejected.
    fn min_eig(&self, fy: &[Mat]) -> f64 {
        fy.iter()
            .map(|f| min_eigenvalue(f) + 1e3 * f64::EPSILON * f.amax())
            .fold(f64::INFINITY, f64::min)
    }

    fn m(&self) -> usize {
        self.c.len()
    }

    /// `F0 + sum_i y_i F_i` (or just the linear part when `with_const` is false)
    fn apply(&self, y: &[f64], with_const: bool) -> Vec<Mat> {
        let mut out: Vec<Mat> =
            if with_const { self.f0.clone() } else { self.sizes.iter().map(|&s| Mat::zeros(s, s)).collect() };
        for (i, us) in self.uses.iter().enumerate() {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for u in us {
                let blk = &mut out[u.block];
                for &(r, c, v) in &u.trips {
                    blk[(r, c)] += yi * v;
                }
            }
        }
        out
    }

    /// `<F_i, X>` for every scalar i, i.e. `A*(X)`.
    fn adjoint(&self, x: &[Mat]) -> Vec<f64> {
        self.uses
            .iter()
            .map(|us| us.iter().map(|u| inner_trips(&u.trips, &x[u.block])).sum())
            .collect()
    }
}

/// `tr(F X) = sum F[a,b] X[b,a]` with F given by triplets.
fn inner_trips(trips: &[Triplet], x: &Mat) -> f64 {
    trips.iter().map(|&(a, b, v)| v * x[(b, a)]).sum()
}

fn dot(a: &[Mat], b: &[Mat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn frob(a: &[Mat]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest `alpha` with `X + alpha dX ⪰ 0`, given the Cholesky factor of X.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, dx: &Mat) -> f64 {
    let l = chol.l();
    let Some(t) = l.solve_lower_triangular(dx) else { return 0.0 };
    let Some(m) = l.solve_lower_triangular(&t.transpose()) else { return 0.0 };
    let lam = min_eigenvalue(&m);
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn block_step(x: &[Mat], dx: &[Mat]) -> Option<f64> {
    let mut alpha = f64::INFINITY;
    for (xk, dk) in x.iter().zip(dx) {
        let chol = Cholesky::new(xk.clone())?;
        alpha = alpha.min(max_step(&chol, dk));
    }
    Some(alpha)
}

pub fn solve(p: &SdpProblem, tol: f64) -> Result<SdpSolution> {
    solve_with(p, &SdpOptions { tol, ..SdpOptions::default() })
}

pub fn solve_with(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    if p.blocks().is_empty() {
        return Err(Error::MalformedSdp("problem has no constraints".into()));
    }
    let data = Data::new(p);
    let (_, obj_offset) = p.objective_vector();
    let m = data.m();
    let n_total: usize = data.sizes.iter().sum();
    let c_norm = norm2(&data.c);
    let f0_norm = frob(&data.f0);

    // initial point
    let max_fi = data
        .uses
        .iter()
        .map(|us| us.iter().map(|u| u.trips.iter().map(|t| t.2 * t.2).sum::<f64>()).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut y = vec![0.0; m];
    let mut s: Vec<Mat> = data
        .sizes
        .iter()
        .map(|&sz| Mat::identity(sz, sz) * 10f64.max((sz as f64).sqrt()).max(f0_norm).max(max_fi))
        .collect();
    let mut z: Vec<Mat> = data
        .sizes
        .iter()
        .map(|&sz| {
            let scale = data
                .uses
                .iter()
                .zip(&data.c)
                .map(|(us, ci)| {
                    let fi = us.iter().map(|u| u.trips.iter().map(|t| t.2 * t.2).sum::<f64>()).sum::<f64>().sqrt();
                    (1.0 + ci.abs()) / (1.0 + fi)
                })
                .fold(10f64.max((sz as f64).sqrt()), f64::max);
            Mat::identity(sz, sz) * scale
        })
        .collect();

    let mut status = SdpStatus::MaxIters;
    let mut iterations = 0;
    let mut stall = 0;
    // best primal-feasible iterate meeting `reduced_tol`: (score, y, z, iteration)
    let mut best: Option<(f64, Vec<f64>, Vec<Mat>, usize)> = None;

    for it in 0..opts.max_iters {
        iterations = it + 1;
        let fy = data.apply(&y, true);
        // Once y is primal feasible, track S = F(y) exactly instead of
        // accumulating updates, which otherwise drift by rounding.
        if frob(&fy.iter().zip(&s).map(|(f, sk)| f - sk).collect::<Vec<_>>()) <= 1e-6 * (1.0 + f0_norm)
            && fy.iter().all(|f| Cholesky::new(f.clone()).is_some())
        {
            s = fy.clone();
        }
        let rp: Vec<Mat> = fy.iter().zip(&s).map(|(f, sk)| f - sk).collect();
        let atz = data.adjoint(&z);
        let rd: Vec<f64> = data.c.iter().zip(&atz).map(|(c, a)| c - a).collect();
        let pobj: f64 = data.c.iter().zip(&y).map(|(c, v)| c * v).sum();
        let dobj = -dot(&data.f0, &z);
        let mu = dot(&s, &z) / n_total as f64;

        let pinf = frob(&rp) / (1.0 + f0_norm);
        let dinf = norm2(&rd) / (1.0 + c_norm);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let comp = dot(&s, &z) / (1.0 + pobj.abs() + dobj.abs());
        if pinf <= opts.tol && dinf.max(comp) <= opts.reduced_tol && data.min_eig(&fy) >= -opts.tol {
            if dinf.max(comp).max(rel_gap) <= opts.tol {
                status = SdpStatus::Optimal;
                best = None;
                break;
            }
            // With S = F(y) exactly, y is optimal to within <S, Z> for the
            // objective A*(Z) = c - rd, a perturbation of size dinf. This
            // stays meaningful when |y| is large and `rel_gap` is not.
            let score = dinf.max(comp);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, y.clone(), z.clone(), it));
            }
        }
        if let Some(b) = &best {
            if it >= b.3 + 8 || mu <= opts.tol * opts.tol {
                break;
            }
        }

        // infeasibility certificate: Z ⪰ 0, A*(Z) ≈ 0, <F0, Z> < 0
        let f0z = dot(&data.f0, &z);
        if f0z < 0.0 && norm2(&atz) <= opts.infeas_tol * (-f0z) && pinf > opts.tol {
            status = SdpStatus::Infeasible;
            break;
        }

        let s_chol: Vec<Cholesky<f64, nalgebra::Dyn>> = match s.iter().map(|sk| Cholesky::new(sk.clone())).collect() {
            Some(v) => v,
            None => break,
        };
        let s_inv: Vec<Mat> = s_chol.iter().map(|ch| symmetrize(&ch.inverse())).collect();

        // Schur complement H_ij = tr(F_i Z F_j S^{-1})
        let mut g: Vec<Vec<Mat>> = Vec::with_capacity(m);
        for us in &data.uses {
            g.push(
                us.iter()
                    .map(|u| {
                        let k = u.block;
                        let sz = data.sizes[k];
                        if u.trips.len() * 2 < sz {
                            let mut out = Mat::zeros(sz, sz);
                            for &(a, b, v) in &u.trips {
                                let zc = z[k].column(a);
                                let sr = s_inv[k].row(b);
                                out.ger(v, &zc, &sr.transpose(), 1.0);
                            }
                            out
                        } else {
                            let mut f = Mat::zeros(sz, sz);
                            for &(a, b, v) in &u.trips {
                                f[(a, b)] += v;
                            }
                            &z[k] * f * &s_inv[k]
                        }
                    })
                    .collect(),
            );
        }
        let mut h = Mat::zeros(m, m);
        for k in 0..data.sizes.len() {
            let members = &data.by_block[k];
            for &(i, ui) in members {
                let ti = &data.uses[i][ui].trips;
                for &(j, uj) in members {
                    if j < i {
                        continue;
                    }
                    let v = inner_trips(ti, &g[j][uj]);
                    h[(i, j)] += v;
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        // Scalars that appear in no block have an all-zero row in H; they are
        // kept fixed. The rest of H is Jacobi-scaled before factoring.
        let active: Vec<usize> = (0..m).filter(|&i| !data.uses[i].is_empty()).collect();
        let na = active.len();
        let scale: Vec<f64> = active.iter().map(|&i| 1.0 / h[(i, i)].abs().max(1e-300).sqrt()).collect();
        let hs = Mat::from_fn(na, na, |a, b| h[(active[a], active[b])] * scale[a] * scale[b]);
        let mut reg = 0.0;
        let h_chol = loop {
            let mut hr = hs.clone();
            for i in 0..na {
                hr[(i, i)] += reg;
            }
            if let Some(ch) = Cholesky::new(hr) {
                break Some(ch);
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
            if reg > 1e-4 {
                break None;
            }
        };
        let Some(h_chol) = h_chol else { break };
        let solve_h = |rhs: &[f64]| -> Vec<f64> {
            let mut dy = vec![0.0; m];
            if na == 0 {
                return dy;
            }
            let r = nalgebra::DVector::from_iterator(na, active.iter().zip(&scale).map(|(&i, sc)| rhs[i] * sc));
            let mut x = h_chol.solve(&r);
            // one step of iterative refinement against the unregularized matrix
            let resid = &r - &hs * &x;
            x += h_chol.solve(&resid);
            for (a, &i) in active.iter().enumerate() {
                dy[i] = x[a] * scale[a];
            }
            dy
        };

        // direction for a given sigma and optional second-order term
        let direction = |sigma: f64, second: Option<(&[Mat], &[Mat])>| -> (Vec<f64>, Vec<Mat>, Vec<Mat>) {
            // per-block matrices whose adjoint forms the rhs
            let mut w: Vec<Mat> = Vec::with_capacity(s.len());
            for k in 0..s.len() {
                let mut wk = &s_inv[k] * (sigma * mu) - &z[k] * &rp[k] * &s_inv[k];
                if let Some((dza, dsa)) = second {
                    wk -= &dza[k] * &dsa[k] * &s_inv[k];
                }
                w.push(wk);
            }
            let aw = data.adjoint(&w);
            let rhs: Vec<f64> = aw.iter().zip(&data.c).map(|(a, c)| a - c).collect();
            let dy = solve_h(&rhs);
            let ady = data.apply(&dy, false);
            let ds: Vec<Mat> = rp.iter().zip(&ady).map(|(r, a)| r + a).collect();
            let mut dz = Vec::with_capacity(s.len());
            for k in 0..s.len() {
                let mut t = &s_inv[k] * (sigma * mu) - &z[k] - &z[k] * &ds[k] * &s_inv[k];
                if let Some((dza, dsa)) = second {
                    t -= &dza[k] * &dsa[k] * &s_inv[k];
                }
                dz.push(symmetrize(&t));
            }
            (dy, ds, dz)
        };

        let (_, ds_a, dz_a) = direction(0.0, None);
        let ap_a = block_step(&s, &ds_a).unwrap_or(0.0).min(1.0);
        let ad_a = block_step(&z, &dz_a).unwrap_or(0.0).min(1.0);
        let s_a: Vec<Mat> = s.iter().zip(&ds_a).map(|(x, d)| x + d * ap_a).collect();
        let z_a: Vec<Mat> = z.iter().zip(&dz_a).map(|(x, d)| x + d * ad_a).collect();
        let mu_aff = dot(&s_a, &z_a) / n_total as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        let (dy, ds, dz) = direction(sigma, Some((&dz_a, &ds_a)));
        let tau = 0.9 + 0.09 * ap_a.min(ad_a);
        let ap = (tau * block_step(&s, &ds).unwrap_or(0.0)).min(1.0);
        let ad = (tau * block_step(&z, &dz).unwrap_or(0.0)).min(1.0);

        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi += ap * di;
        }
        for k in 0..s.len() {
            s[k] = symmetrize(&(&s[k] + &ds[k] * ap));
            z[k] = symmetrize(&(&z[k] + &dz[k] * ad));
        }
        if ap.max(ad) < 1e-10 {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }

    if let Some((_, by, bz, _)) = best {
        y = by;
        z = bz;
        status = SdpStatus::Optimal;
    }
    let fy = data.apply(&y, true);
    let min_eig = data.min_eig(&fy);
    let pobj: f64 = data.c.iter().zip(&y).map(|(c, v)| c * v).sum();
    let dobj = -dot(&data.f0, &z);
    Ok(SdpSolution {
        y,
        objective: pobj + obj_offset,
        dual_objective: dobj + obj_offset,
        status,
        min_block_eigenvalue: min_eig,
        iterations,
    })
}
