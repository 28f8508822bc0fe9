//! Design artifact (JSON) and its independent re-verification.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorSpec;
use crate::linalg::{filter_dare_residual, spectral_radius, Mat, SymPsd};
use crate::model::ArchitectureSpec;
use crate::synthesis::{
    compute_certificate, lemma_margin, rho_of, Certificate, DesignMeta, InterfaceDesign, InterfaceMaps, LambdaStatus,
    LEMMA_MARGIN_TOL,
};

type Rows = Vec<Vec<f64>>;

fn rows(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn mat(r: &Rows, field: &str, cols_hint: usize) -> Result<Mat> {
    let c = r.first().map_or(cols_hint, Vec::len);
    if r.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("design {field}: rows have unequal lengths")));
    }
    Ok(Mat::from_fn(r.len(), c, |i, j| r[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetaFile {
    pub lambda_grid_used: Vec<f64>,
    pub sdp_status_per_lambda: Vec<LambdaStatus>,
    pub fallback_used: bool,
}

/// On-disk form of an [`InterfaceDesign`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    #[serde(rename = "P")]
    pub p: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "M")]
    pub m: Rows,
    pub lambda: f64,
    pub rho: f64,
    pub alpha: f64,
    #[serde(rename = "trace_S")]
    pub trace_s: f64,
    pub epsilon: f64,
    #[serde(rename = "L1")]
    pub l1: Rows,
    #[serde(rename = "L2")]
    pub l2: Rows,
    #[serde(rename = "Sigma_e1")]
    pub sigma_e1: Rows,
    #[serde(rename = "Sigma_e2")]
    pub sigma_e2: Rows,
    pub meta: MetaFile,
}

impl From<&InterfaceDesign> for DesignFile {
    fn from(d: &InterfaceDesign) -> Self {
        DesignFile {
            p: rows(&d.maps.p),
            q: rows(&d.maps.q),
            r: rows(&d.r),
            k: rows(&d.cert.k),
            m: rows(&d.cert.m),
            lambda: d.cert.lambda,
            rho: d.cert.rho,
            alpha: d.cert.alpha,
            trace_s: d.cert.trace_s,
            epsilon: d.cert.epsilon,
            l1: rows(&d.estimators.0.l),
            l2: rows(&d.estimators.1.l),
            sigma_e1: rows(d.estimators.0.sigma_e.as_mat()),
            sigma_e2: rows(d.estimators.1.sigma_e.as_mat()),
            meta: MetaFile {
                lambda_grid_used: d.meta.lambda_grid_used.clone(),
                sdp_status_per_lambda: d.meta.sdp_status_per_lambda.clone(),
                fallback_used: d.meta.fallback_used,
            },
        }
    }
}

impl DesignFile {
    /// Rebuilds the design for `arch`, checking every shape against it. The
    /// `(P, Q)` residuals are recomputed from the systems.
    pub fn to_design(&self, arch: &ArchitectureSpec) -> Result<InterfaceDesign> {
        let (up, lo) = (&arch.upper, &arch.lower);
        let want = |field: &str, m: Mat, shape: (usize, usize)| -> Result<Mat> {
            if m.shape() == shape {
                Ok(m)
            } else {
                Err(Error::Dimension {
                    field: format!("design {field}"),
                    expected: format!("{}x{}", shape.0, shape.1),
                    got: format!("{}x{}", m.nrows(), m.ncols()),
                })
            }
        };
        let p = want("P", mat(&self.p, "P", up.n())?, (lo.n(), up.n()))?;
        let q = want("Q", mat(&self.q, "Q", up.n())?, (lo.m(), up.n()))?;
        let r = want("R", mat(&self.r, "R", up.m())?, (lo.m(), up.m()))?;
        let k = want("K", mat(&self.k, "K", lo.n())?, (lo.m(), lo.n()))?;
        let m = want("M", mat(&self.m, "M", lo.n())?, (lo.n(), lo.n()))?;
        let l1 = want("L1", mat(&self.l1, "L1", up.p())?, (up.n(), up.p()))?;
        let l2 = want("L2", mat(&self.l2, "L2", lo.p())?, (lo.n(), lo.p()))?;
        let se1 = want("Sigma_e1", mat(&self.sigma_e1, "Sigma_e1", up.n())?, (up.n(), up.n()))?;
        let se2 = want("Sigma_e2", mat(&self.sigma_e2, "Sigma_e2", lo.n())?, (lo.n(), lo.n()))?;
        let residual_cp = (&lo.c * &p - &up.c).norm();
        let residual_paq = (&p * &up.a - &lo.a * &p - &lo.b * &q).norm();
        let psd = |m: Mat, f: &str| SymPsd::new(m, 1e-8).map_err(|e| Error::Config(format!("design {f}: {e}")));
        Ok(InterfaceDesign {
            maps: InterfaceMaps { p, q, residual_cp, residual_paq },
            r,
            cert: Certificate {
                m,
                k,
                lambda: self.lambda,
                rho: self.rho,
                alpha: self.alpha,
                trace_s: self.trace_s,
                epsilon: self.epsilon,
            },
            estimators: (
                EstimatorSpec { l: l1, sigma_e: psd(se1, "Sigma_e1")? },
                EstimatorSpec { l: l2, sigma_e: psd(se2, "Sigma_e2")? },
            ),
            meta: DesignMeta {
                lambda_grid_used: self.meta.lambda_grid_used.clone(),
                sdp_status_per_lambda: self.meta.sdp_status_per_lambda.clone(),
                fallback_used: self.meta.fallback_used,
            },
        })
    }
}

pub fn design_to_json(d: &InterfaceDesign) -> String {
    serde_json::to_string_pretty(&DesignFile::from(d)).expect("design serialization cannot fail")
}

pub fn parse_design(text: &str) -> Result<DesignFile> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("design file: {e}")))
}

pub fn load_design(path: &Path) -> Result<DesignFile> {
    parse_design(&std::fs::read_to_string(path)?)
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

fn item(name: &'static str, value: f64, limit: f64, pass: bool) -> CheckItem {
    CheckItem { name, value, limit, pass: pass && value.is_finite() }
}

/// Recomputes every contract of a design from scratch: Lemma margins,
/// interface-map residuals, filter Riccati residuals, observer stability and
/// the certificate scalars.
pub fn verify_design(arch: &ArchitectureSpec, file: &DesignFile) -> Result<Vec<CheckItem>> {
    let d = file.to_design(arch)?;
    let (up, lo) = (&arch.upper, &arch.lower);
    let c = &d.cert;
    let mut out = Vec::new();

    let lambda_ok = c.lambda > 0.0 && c.lambda < 1.0;
    out.push(item("lambda in (0,1)", c.lambda, 1.0, lambda_ok));
    let rho_err = (c.rho - rho_of(c.lambda)).abs();
    out.push(item("rho matches lambda", rho_err, 1e-12, lambda_ok && rho_err <= 1e-12 && c.rho > 0.0 && c.rho < 1.0));
    let margin = lemma_margin(lo, &c.m, &c.k, c.lambda).unwrap_or(f64::NEG_INFINITY);
    out.push(item("lemma margin", margin, -LEMMA_MARGIN_TOL, margin >= -LEMMA_MARGIN_TOL));

    let lim_cp = 1e-6 * (1.0 + up.c.norm());
    out.push(item("C2 P = C1 residual", d.maps.residual_cp, lim_cp, d.maps.residual_cp <= lim_cp));
    let lim_paq = 1e-6 * (1.0 + up.a.norm());
    out.push(item("P A1 = A2 P + B2 Q residual", d.maps.residual_paq, lim_paq, d.maps.residual_paq <= lim_paq));

    for (name, stab, sys, est) in
        [("filter DARE residual (upper)", "observer stable (upper)", up, &d.estimators.0), ("filter DARE residual (lower)", "observer stable (lower)", lo, &d.estimators.1)]
    {
        let se = est.sigma_e.as_mat();
        let res = filter_dare_residual(&sys.a, &sys.c, sys.sigma_w.as_mat(), sys.sigma_v.as_mat(), se, &est.l);
        let lim = 1e-8 * (1.0 + se.norm());
        out.push(item(name, res, lim, res <= lim));
        let rho = spectral_radius(&(&sys.a - &est.l * &sys.c)).unwrap_or(f64::INFINITY);
        out.push(item(stab, rho, 1.0, rho < 1.0));
    }

    let recomputed = if lambda_ok {
        compute_certificate(arch, &d.maps, (&d.estimators.0, &d.estimators.1), &c.m, &c.k, c.lambda, &d.r).ok()
    } else {
        None
    };
    let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + b.abs());
    match recomputed {
        Some(fresh) => {
            out.push(item("alpha > 0", c.alpha, 0.0, c.alpha > 0.0));
            let e = rel(c.alpha, fresh.alpha);
            out.push(item("alpha recomputed", e, 1e-9, e <= 1e-9));
            let e = rel(c.trace_s, fresh.trace_s);
            out.push(item("trace_S recomputed", e, 1e-9, e <= 1e-9));
            let e = rel(c.epsilon, fresh.epsilon);
            out.push(item("epsilon recomputed", e, 1e-9, e <= 1e-9));
        }
        None => out.push(item("certificate recomputed", f64::NAN, 0.0, false)),
    }
    Ok(out)
}
