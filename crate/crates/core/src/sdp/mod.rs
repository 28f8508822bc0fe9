//! Small dense semidefinite programs over block LMIs.

mod expr;
mod problem;
mod solver;

pub use expr::AffineExpr;
pub use problem::{LmiBlock, SdpProblem, Variable};
pub use solver::{solve, solve_with, SdpOptions, SdpSolution, SdpStatus};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, min_eigenvalue, Mat};

/// Smallest eigenvalue over a list of symmetric blocks.
pub fn lmi_margin(blocks: &[Mat]) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for b in blocks {
        if !b.is_square() {
            return Err(Error::Invalid(format!("LMI block is {}x{}", b.nrows(), b.ncols())));
        }
        let tol = 1e-9 * (1.0 + b.norm());
        let asym = asymmetry(b);
        if asym > tol {
            return Err(Error::NotSymmetric { asymmetry: asym, tol });
        }
        margin = margin.min(min_eigenvalue(b));
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(rows, cols, v)
    }

    #[test]
    fn margin_examples() {
        assert!((lmi_margin(&[Mat::identity(3, 3)]).unwrap() - 1.0).abs() < 1e-15);
        assert!((lmi_margin(&[m(2, 2, &[2.0, 0.0, 0.0, -0.5])]).unwrap() + 0.5).abs() < 1e-15);
        assert!((lmi_margin(&[m(2, 2, &[2.0, 1.0, 1.0, 2.0])]).unwrap() - 1.0).abs() < 1e-14);
        assert!(lmi_margin(&[m(2, 2, &[1.0, 1.0, 0.0, 1.0])]).is_err());
    }

    #[test]
    fn minimize_scalar_on_psd_cone() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        p.add_lmi("x>=0", x.expr()).unwrap();
        p.minimize(x.expr()).unwrap();
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(x.value(&sol.y)[(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn infeasible_constant_block() {
        let mut p = SdpProblem::new();
        p.add_lmi("neg", AffineExpr::scalar_constant(-1.0)).unwrap();
        p.minimize(AffineExpr::scalar_constant(0.0)).unwrap();
        let sol = solve(&p, 1e-8).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    #[test]
    fn trace_minimization_above_identity() {
        let mut p = SdpProblem::new();
        let x = p.symmetric("X", 2);
        p.add_lmi("X>=I", x.expr().add_constant(&(-Mat::identity(2, 2)))).unwrap();
        p.minimize(x.expr().trace()).unwrap();
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((x.value(&sol.y) - Mat::identity(2, 2)).norm() < 1e-7);
        assert!((sol.objective - 2.0).abs() < 1e-8);
        assert!(sol.objective - sol.dual_objective <= 1e-8 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn spectral_norm_epigraph() {
        // minimize t s.t. [[tI, Y],[Y^T, tI]] ⪰ 0 gives t = |Y|_2
        let ymat = m(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let mut p = SdpProblem::new();
        let t = p.scalar("t");
        let eye2 = AffineExpr::block(&[
            vec![t.expr(), AffineExpr::zeros(1, 1)],
            vec![AffineExpr::zeros(1, 1), t.expr()],
        ]);
        let eye3 = AffineExpr::block(&[
            vec![t.expr(), AffineExpr::zeros(1, 1), AffineExpr::zeros(1, 1)],
            vec![AffineExpr::zeros(1, 1), t.expr(), AffineExpr::zeros(1, 1)],
            vec![AffineExpr::zeros(1, 1), AffineExpr::zeros(1, 1), t.expr()],
        ]);
        let blk = AffineExpr::block(&[
            vec![eye2, AffineExpr::constant(ymat.clone())],
            vec![AffineExpr::constant(ymat.transpose()), eye3],
        ]);
        p.add_lmi("epi", blk).unwrap();
        p.minimize(t.expr()).unwrap();
        let sol = solve(&p, 1e-10).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let sigma = crate::linalg::spectral_norm(&ymat);
        assert!((sol.objective - sigma).abs() < 1e-7 * sigma);
    }

    #[test]
    fn feasibility_survives_block_scaling() {
        let build = |s: f64| {
            let mut p = SdpProblem::new();
            let x = p.symmetric("X", 2);
            let c = m(2, 2, &[1.0, 0.3, 0.3, 2.0]);
            p.add_lmi("lower", x.expr().add_constant(&(-&c)).scale(s)).unwrap();
            p.add_lmi("upper", x.expr().scale(-1.0).add_constant(&(Mat::identity(2, 2) * 5.0)).scale(s)).unwrap();
            p.minimize(AffineExpr::scalar_constant(0.0)).unwrap();
            p
        };
        for s in [1.0, 2.0] {
            let p = build(s);
            let sol = solve(&p, 1e-8).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal);
            let margin = lmi_margin(&p.eval_blocks(&sol.y)).unwrap();
            assert!(margin >= -1e-8);
        }
    }

    #[test]
    fn reassembled_blocks_match_reported_margin() {
        let mut p = SdpProblem::new();
        let x = p.symmetric("X", 3);
        let a = m(3, 3, &[0.9, 0.2, 0.0, 0.0, 0.5, 0.1, 0.1, 0.0, 0.3]);
        let contraction = AffineExpr::block(&[
            vec![x.expr(), x.expr().lmul(&a)],
            vec![x.expr().lmul(&a).transpose(), x.expr()],
        ]);
        p.add_lmi("contraction", contraction).unwrap();
        p.add_lmi("floor", x.expr().add_constant(&(-Mat::identity(3, 3)))).unwrap();
        p.minimize(x.expr().trace()).unwrap();
        let sol = solve(&p, 1e-9).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        let margin = lmi_margin(&p.eval_blocks(&sol.y)).unwrap();
        assert!(margin >= -1e-9);
        assert!((margin - sol.min_block_eigenvalue).abs() < 1e-12);
    }
}
