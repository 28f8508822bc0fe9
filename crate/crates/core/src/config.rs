//! JSON configuration files for an [`ArchitectureSpec`].
//!
//! Each system gives either a discrete `A`/`B` pair or a continuous `Ac`/`Bc`
//! pair plus `dt`, discretized by forward Euler on load. Covariances may be
//! full matrices or vectors of diagonal entries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymPsd, Vector, PSD_TOL};
use crate::model::{
    discretize_forward_euler, validate, ArchitectureSpec, ControllerKind, LinearSystemSpec, SimCfg, SynthCfg,
    UpperControllerCfg,
};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatOrDiag {
    Mat(Rows),
    Diag(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Rows>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    b: Option<Rows>,
    #[serde(rename = "Ac", default, skip_serializing_if = "Option::is_none")]
    ac: Option<Rows>,
    #[serde(rename = "Bc", default, skip_serializing_if = "Option::is_none")]
    bc: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "Sigma_w")]
    sigma_w: MatOrDiag,
    #[serde(rename = "Sigma_v")]
    sigma_v: MatOrDiag,
    mu0: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    kind: String,
    #[serde(rename = "P_Q")]
    p_q: MatOrDiag,
    #[serde(rename = "P_R")]
    p_r: MatOrDiag,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    horizon: usize,
    trials: usize,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynth {
    lambda_grid: Vec<f64>,
    sdp_tol: f64,
    strict_eps: f64,
    use_constructive_fallback: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArch {
    upper: RawSystem,
    lower: RawSystem,
    u_max: f64,
    upper_controller: RawController,
    sim: RawSim,
    synth: RawSynth,
}

fn to_mat(rows: &Rows, field: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{field}: rows have unequal lengths")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{field}: non-finite entry")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn from_mat(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn to_sym(v: &MatOrDiag, field: &str) -> Result<SymPsd> {
    let m = match v {
        MatOrDiag::Mat(rows) => to_mat(rows, field)?,
        MatOrDiag::Diag(d) => Mat::from_diagonal(&Vector::from_column_slice(d)),
    };
    if !m.is_square() {
        return Err(Error::Config(format!("{field}: must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    SymPsd::new(m, PSD_TOL).map_err(|e| Error::Config(format!("{field}: {e}")))
}

fn to_system(raw: &RawSystem, name: &str) -> Result<LinearSystemSpec> {
    let (a, b) = match (&raw.a, &raw.b, &raw.ac, &raw.bc, raw.dt) {
        (Some(a), Some(b), None, None, None) => (to_mat(a, &format!("{name}.A"))?, to_mat(b, &format!("{name}.B"))?),
        (None, None, Some(ac), Some(bc), Some(dt)) => {
            let ac = to_mat(ac, &format!("{name}.Ac"))?;
            let bc = to_mat(bc, &format!("{name}.Bc"))?;
            discretize_forward_euler(&ac, &bc, dt)?
        }
        (None, None, Some(_), Some(_), None) => {
            return Err(Error::Config(format!("{name}: continuous-time matrices require dt")))
        }
        _ => {
            return Err(Error::Config(format!(
                "{name}: give either A and B, or Ac, Bc and dt (not a mixture)"
            )))
        }
    };
    Ok(LinearSystemSpec {
        a,
        b,
        c: to_mat(&raw.c, &format!("{name}.C"))?,
        sigma_w: to_sym(&raw.sigma_w, &format!("{name}.Sigma_w"))?,
        sigma_v: to_sym(&raw.sigma_v, &format!("{name}.Sigma_v"))?,
        mu0: Vector::from_vec(raw.mu0.clone()),
    })
}

fn from_system(s: &LinearSystemSpec) -> RawSystem {
    RawSystem {
        a: Some(from_mat(&s.a)),
        b: Some(from_mat(&s.b)),
        ac: None,
        bc: None,
        dt: None,
        c: from_mat(&s.c),
        sigma_w: MatOrDiag::Mat(from_mat(s.sigma_w.as_mat())),
        sigma_v: MatOrDiag::Mat(from_mat(s.sigma_v.as_mat())),
        mu0: s.mu0.iter().copied().collect(),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ArchitectureSpec> {
    let raw: RawArch = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof => Error::Parse { line: e.line(), column: e.column(), msg: e.to_string() },
            _ => Error::Config(e.to_string()),
        }
    })?;
    if raw.upper_controller.kind != "lqg" {
        return Err(Error::Config(format!(
            "upper_controller.kind: unsupported controller '{}' (expected \"lqg\")",
            raw.upper_controller.kind
        )));
    }
    let spec = ArchitectureSpec {
        upper: to_system(&raw.upper, "upper")?,
        lower: to_system(&raw.lower, "lower")?,
        u_max: raw.u_max,
        upper_controller: UpperControllerCfg {
            kind: ControllerKind::Lqg,
            p_q: to_sym(&raw.upper_controller.p_q, "upper_controller.P_Q")?,
            p_r: to_sym(&raw.upper_controller.p_r, "upper_controller.P_R")?,
        },
        sim: SimCfg { horizon: raw.sim.horizon, trials: raw.sim.trials, seed: raw.sim.seed },
        synth: SynthCfg {
            lambda_grid: raw.synth.lambda_grid,
            sdp_tol: raw.synth.sdp_tol,
            strict_eps: raw.synth.strict_eps,
            use_constructive_fallback: raw.synth.use_constructive_fallback,
            spectral_r: false,
        },
    };
    validate(spec)
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Serializes a spec in discrete form. Parsing the result gives back an
/// identical spec.
pub fn serialize_config(spec: &ArchitectureSpec) -> String {
    let raw = RawArch {
        upper: from_system(&spec.upper),
        lower: from_system(&spec.lower),
        u_max: spec.u_max,
        upper_controller: RawController {
            kind: "lqg".into(),
            p_q: MatOrDiag::Mat(from_mat(spec.upper_controller.p_q.as_mat())),
            p_r: MatOrDiag::Mat(from_mat(spec.upper_controller.p_r.as_mat())),
        },
        sim: RawSim { horizon: spec.sim.horizon, trials: spec.sim.trials, seed: spec.sim.seed },
        synth: RawSynth {
            lambda_grid: spec.synth.lambda_grid.clone(),
            sdp_tol: spec.synth.sdp_tol,
            strict_eps: spec.synth.strict_eps,
            use_constructive_fallback: spec.synth.use_constructive_fallback,
        },
    };
    serde_json::to_string_pretty(&raw).expect("config serialization cannot fail")
}
