use std::collections::BTreeMap;

use crate::linalg::Mat;

/// Sparse coefficient entry `(row, col, value)`.
pub(crate) type Triplet = (usize, usize, f64);

/// A matrix-valued affine function of the scalar decision vector:
/// `constant + sum_i y_i * coeff_i`, with each `coeff_i` stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: Mat,
    terms: BTreeMap<usize, Vec<Triplet>>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineExpr { rows, cols, constant: Mat::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(m: Mat) -> Self {
        let (rows, cols) = m.shape();
        AffineExpr { rows, cols, constant: m, terms: BTreeMap::new() }
    }

    pub fn scalar_constant(v: f64) -> Self {
        Self::constant(Mat::from_element(1, 1, v))
    }

    pub(crate) fn from_terms(rows: usize, cols: usize, terms: BTreeMap<usize, Vec<Triplet>>) -> Self {
        let mut e = AffineExpr { rows, cols, constant: Mat::zeros(rows, cols), terms };
        e.compress();
        e
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_part(&self) -> &Mat {
        &self.constant
    }

    pub(crate) fn terms(&self) -> &BTreeMap<usize, Vec<Triplet>> {
        &self.terms
    }

    /// Largest scalar index referenced, if any.
    pub(crate) fn max_index(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }

    fn compress(&mut self) {
        for trips in self.terms.values_mut() {
            trips.sort_by_key(|t| (t.0, t.1));
            let mut merged: Vec<Triplet> = Vec::with_capacity(trips.len());
            for &(r, c, v) in trips.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == r && last.1 == c => last.2 += v,
                    _ => merged.push((r, c, v)),
                }
            }
            merged.retain(|t| t.2 != 0.0);
            *trips = merged;
        }
        self.terms.retain(|_, t| !t.is_empty());
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.constant *= s;
        for trips in out.terms.values_mut() {
            for t in trips.iter_mut() {
                t.2 *= s;
            }
        }
        out.compress();
        out
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine add shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&i, trips) in &other.terms {
            out.terms.entry(i).or_default().extend_from_slice(trips);
        }
        out.compress();
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn add_constant(&self, m: &Mat) -> Self {
        assert_eq!(self.shape(), m.shape(), "affine add shape mismatch");
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn transpose(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(&i, trips)| (i, trips.iter().map(|&(r, c, v)| (c, r, v)).collect()))
            .collect();
        let mut out = AffineExpr::from_terms(self.cols, self.rows, terms);
        out.constant = self.constant.transpose();
        out
    }

    /// `left * self`
    pub fn lmul(&self, left: &Mat) -> Self {
        assert_eq!(left.ncols(), self.rows, "affine lmul shape mismatch");
        let terms = self
            .terms
            .iter()
            .map(|(&i, trips)| {
                let mut out = Vec::new();
                for &(r, c, v) in trips {
                    for k in 0..left.nrows() {
                        let l = left[(k, r)];
                        if l != 0.0 {
                            out.push((k, c, l * v));
                        }
                    }
                }
                (i, out)
            })
            .collect();
        let mut out = AffineExpr::from_terms(left.nrows(), self.cols, terms);
        out.constant = left * &self.constant;
        out
    }

    /// `self * right`
    pub fn rmul(&self, right: &Mat) -> Self {
        self.transpose().lmul(&right.transpose()).transpose()
    }

    /// 1x1 expression equal to the trace.
    pub fn trace(&self) -> Self {
        assert_eq!(self.rows, self.cols, "trace of non-square expression");
        let terms = self
            .terms
            .iter()
            .map(|(&i, trips)| (i, trips.iter().filter(|t| t.0 == t.1).map(|&(_, _, v)| (0, 0, v)).collect()))
            .collect();
        let mut out = AffineExpr::from_terms(1, 1, terms);
        out.constant[(0, 0)] = self.constant.trace();
        out
    }

    /// Assembles a block matrix from a grid of expressions.
    pub fn block(grid: &[Vec<AffineExpr>]) -> Self {
        let row_heights: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let col_widths: Vec<usize> = grid[0].iter().map(|e| e.cols).collect();
        let rows: usize = row_heights.iter().sum();
        let cols: usize = col_widths.iter().sum();
        let mut out = AffineExpr::zeros(rows, cols);
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), col_widths.len(), "ragged block grid");
            let mut c0 = 0;
            for (bj, e) in row.iter().enumerate() {
                assert_eq!(e.shape(), (row_heights[bi], col_widths[bj]), "block shape mismatch");
                out.constant.view_mut((r0, c0), e.shape()).copy_from(&e.constant);
                for (&i, trips) in &e.terms {
                    out.terms.entry(i).or_default().extend(trips.iter().map(|&(r, c, v)| (r + r0, c + c0, v)));
                }
                c0 += col_widths[bj];
            }
            r0 += row_heights[bi];
        }
        out.compress();
        out
    }

    /// Evaluates at the scalar assignment `y`.
    pub fn eval(&self, y: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for (&i, trips) in &self.terms {
            let yi = y[i];
            if yi != 0.0 {
                for &(r, c, v) in trips {
                    m[(r, c)] += yi * v;
                }
            }
        }
        m
    }

    /// Dense coefficient matrix of scalar `i` (zero if absent).
    pub(crate) fn coeff_dense(&self, i: usize) -> Mat {
        let mut m = Mat::zeros(self.rows, self.cols);
        if let Some(trips) = self.terms.get(&i) {
            for &(r, c, v) in trips {
                m[(r, c)] += v;
            }
        }
        m
    }
}
