use std::collections::BTreeMap;

use super::expr::AffineExpr;
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, Mat};

/// Handle to a declared decision variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    offset: usize,
}

impl Variable {
    /// Number of scalar unknowns backing this variable.
    pub fn n_scalars(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Scalar index of entry `(r, c)`.
    fn index(&self, r: usize, c: usize) -> usize {
        if self.symmetric {
            let (i, j) = if r <= c { (r, c) } else { (c, r) };
            // upper triangle, column by column
            self.offset + j * (j + 1) / 2 + i
        } else {
            self.offset + c * self.rows + r
        }
    }

    /// The variable as an affine expression.
    pub fn expr(&self) -> AffineExpr {
        let mut terms: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for c in 0..self.cols {
            for r in 0..self.rows {
                terms.entry(self.index(r, c)).or_default().push((r, c, 1.0));
            }
        }
        AffineExpr::from_terms(self.rows, self.cols, terms)
    }

    /// Reads the variable's value out of a scalar assignment.
    pub fn value(&self, y: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |r, c| y[self.index(r, c)])
    }
}

/// One `expr ⪰ 0` constraint.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub expr: AffineExpr,
}

/// Minimize a linear objective subject to block LMIs.
#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    vars: Vec<Variable>,
    n_scalars: usize,
    objective: Option<AffineExpr>,
    blocks: Vec<LmiBlock>,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    fn declare(&mut self, name: &str, rows: usize, cols: usize, symmetric: bool) -> Variable {
        let v = Variable { name: name.to_string(), rows, cols, symmetric, offset: self.n_scalars };
        self.n_scalars += v.n_scalars();
        self.vars.push(v.clone());
        v
    }

    pub fn scalar(&mut self, name: &str) -> Variable {
        self.declare(name, 1, 1, false)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Variable {
        self.declare(name, n, n, true)
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Variable {
        self.declare(name, rows, cols, false)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.vars.iter().find(|v| v.name == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.n_scalars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn objective(&self) -> Option<&AffineExpr> {
        self.objective.as_ref()
    }

    fn check_bound(&self, e: &AffineExpr, what: &str) -> Result<()> {
        if let Some(i) = e.max_index() {
            if i >= self.n_scalars {
                return Err(Error::MalformedSdp(format!("{what} references unbound scalar {i}")));
            }
        }
        Ok(())
    }

    /// Adds the constraint `expr ⪰ 0`. Every coefficient must be symmetric.
    pub fn add_lmi(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        let (r, c) = expr.shape();
        if r != c {
            return Err(Error::MalformedSdp(format!("block {name} is {r}x{c}, not square")));
        }
        self.check_bound(&expr, name)?;
        let scale = 1.0 + expr.constant_part().norm();
        if asymmetry(expr.constant_part()) > 1e-12 * scale {
            return Err(Error::MalformedSdp(format!("block {name} has an asymmetric constant part")));
        }
        for &i in expr.terms().keys() {
            let coeff = expr.coeff_dense(i);
            if asymmetry(&coeff) > 1e-12 * (1.0 + coeff.norm()) {
                return Err(Error::MalformedSdp(format!("block {name} is asymmetric in scalar {i}")));
            }
        }
        self.blocks.push(LmiBlock { name: name.to_string(), expr });
        Ok(())
    }

    /// Scalar linear inequality `expr >= 0` (a 1x1 block).
    pub fn add_nonneg(&mut self, name: &str, expr: AffineExpr) -> Result<()> {
        self.add_lmi(name, expr)
    }

    /// Sets the (1x1) objective to minimize.
    pub fn minimize(&mut self, expr: AffineExpr) -> Result<()> {
        if expr.shape() != (1, 1) {
            return Err(Error::MalformedSdp("objective must be scalar".into()));
        }
        self.check_bound(&expr, "objective")?;
        self.objective = Some(expr);
        Ok(())
    }

    /// Objective coefficient vector `c` and constant offset.
    pub(crate) fn objective_vector(&self) -> (Vec<f64>, f64) {
        let mut c = vec![0.0; self.n_scalars];
        let mut offset = 0.0;
        if let Some(obj) = &self.objective {
            offset = obj.constant_part()[(0, 0)];
            for (&i, trips) in obj.terms() {
                c[i] = trips.iter().map(|t| t.2).sum();
            }
        }
        (c, offset)
    }

    /// Evaluates every block at `y`.
    pub fn eval_blocks(&self, y: &[f64]) -> Vec<Mat> {
        self.blocks.iter().map(|b| b.expr.eval(y)).collect()
    }
}
