//! Hypothesis matrices for factorial designs: centering matrices, Kronecker
//! products, the Moore–Penrose inverse, and the projection `T = H'(HH')^+ H`.
//!
//! Matrices here are tiny (k is the number of groups), so everything is
//! dense and the pseudoinverse goes through a full SVD.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::survdata::Layout;

/// Tolerance for the contrast property (rows summing to zero).
pub const CONTRAST_TOL: f64 = 1e-12;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        let mut m = Self::zeros(k, k);
        for i in 0..k {
            m.set(i, i, 1.0);
        }
        m
    }

    /// The all-ones matrix J divided by `scale`.
    pub fn ones_scaled(rows: usize, cols: usize, scale: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![1.0 / scale; rows * cols],
        }
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self {
            rows,
            cols,
            data: data.to_vec(),
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("matrix has no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter("ragged matrix rows".into()));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_row_slice(data.len() / cols, cols, &data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for c in 0..other.cols {
                let mut acc = 0.0;
                for j in 0..self.cols {
                    acc += self.get(r, j) * other.get(j, c);
                }
                out.set(r, c, acc);
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch");
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// One CSV line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.get(r, c).to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parse a headerless numeric CSV.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidParameter(format!(
                            "matrix CSV line {}: cannot parse `{tok}`",
                            i + 1
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(rows)
    }

    fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_na(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.set(r, c, m[(r, c)]);
            }
        }
        out
    }
}

/// The centering matrix `P_k = I_k - J_k / k`; requires `k >= 2`.
pub fn centering(k: usize) -> Result<Matrix> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "centering matrix needs k >= 2, got {k}"
        )));
    }
    let mut m = Matrix::zeros(k, k);
    let off = -1.0 / k as f64;
    for r in 0..k {
        for c in 0..k {
            m.set(r, c, if r == c { 1.0 + off } else { off });
        }
    }
    Ok(m)
}

/// Kronecker product `A (x) B`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    for ar in 0..a.rows() {
        for ac in 0..a.cols() {
            let v = a.get(ar, ac);
            for br in 0..b.rows() {
                for bc in 0..b.cols() {
                    out.set(ar * b.rows() + br, ac * b.cols() + bc, v * b.get(br, bc));
                }
            }
        }
    }
    out
}

fn svd_tolerance(rows: usize, cols: usize, sv_max: f64) -> f64 {
    rows.max(cols) as f64 * sv_max * 1e-13
}

/// Moore–Penrose inverse via SVD. Singular values below
/// `max(rows, cols) * sv_max * 1e-13` are treated as zero.
pub fn moore_penrose(m: &Matrix) -> Matrix {
    let na = m.to_na();
    let svd = na.svd(true, true);
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    let sv_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    if sv_max == 0.0 {
        return Matrix::zeros(m.cols(), m.rows());
    }
    let tol = svd_tolerance(m.rows(), m.cols(), sv_max);
    let r = svd.singular_values.len();
    let mut sigma_pinv = DMatrix::<f64>::zeros(v_t.nrows(), u.ncols());
    for i in 0..r {
        let s = svd.singular_values[i];
        if s > tol {
            sigma_pinv[(i, i)] = 1.0 / s;
        }
    }
    Matrix::from_na(&(v_t.transpose() * sigma_pinv * u.transpose()))
}

/// Number of singular values above the pseudoinverse tolerance.
pub fn rank(m: &Matrix) -> usize {
    let svd = m.to_na().svd(false, false);
    let sv_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    if sv_max == 0.0 {
        return 0;
    }
    let tol = svd_tolerance(m.rows(), m.cols(), sv_max);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Projection matrix `T = H'(HH')^+ H`: symmetric, idempotent, same row
/// space (and hence the same null hypothesis) as `H`.
///
/// `T` is the orthogonal projector onto the row space of `H`, so it is
/// assembled from the right singular vectors of `H`; this stays symmetric
/// and idempotent at machine precision even for nearly dependent rows,
/// where forming `(HH')^+` explicitly would lose digits.
pub fn projection(h: &Matrix) -> Matrix {
    let k = h.cols();
    let svd = h.to_na().svd(false, true);
    let v_t = svd.v_t.expect("svd with v_t");
    let sv_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut t = Matrix::zeros(k, k);
    if sv_max == 0.0 {
        return t;
    }
    let tol = svd_tolerance(h.rows(), h.cols(), sv_max);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            for r in 0..k {
                for c in 0..k {
                    t.set(r, c, t.get(r, c) + v_t[(i, r)] * v_t[(i, c)]);
                }
            }
        }
    }
    t
}

/// A named null hypothesis `H m = 0` on the group medians.
#[derive(Debug, Clone)]
pub enum HypothesisSpec {
    /// `m_1 = ... = m_k` via the centering matrix.
    KSampleEquality,
    /// No main effect of the named factor (two-way layouts).
    MainEffect(String),
    /// No interaction effect (two-way layouts).
    Interaction,
    /// Caller-supplied contrast matrix.
    Custom(Matrix),
}

impl HypothesisSpec {
    /// Parse the CLI syntax: `equality`, `main-effect:<factor>`, `interaction`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("equality") {
            return Ok(Self::KSampleEquality);
        }
        if s.eq_ignore_ascii_case("interaction") {
            return Ok(Self::Interaction);
        }
        if let Some(f) = s.strip_prefix("main-effect:") {
            if f.is_empty() {
                return Err(Error::InvalidParameter("main-effect needs a factor name".into()));
            }
            return Ok(Self::MainEffect(f.to_string()));
        }
        Err(Error::InvalidParameter(format!(
            "unknown hypothesis `{s}` (expected equality, interaction or main-effect:<factor>)"
        )))
    }

    pub fn label(&self) -> String {
        match self {
            Self::KSampleEquality => "equality".into(),
            Self::MainEffect(f) => format!("main-effect:{f}"),
            Self::Interaction => "interaction".into(),
            Self::Custom(_) => "custom".into(),
        }
    }
}

fn validate_contrast(h: &Matrix, k: usize) -> Result<()> {
    if h.cols() != k {
        return Err(Error::NotAContrast(format!(
            "matrix has {} columns but the layout has {k} groups",
            h.cols()
        )));
    }
    for r in 0..h.rows() {
        let sum: f64 = (0..h.cols()).map(|c| h.get(r, c)).sum();
        if sum.abs() > CONTRAST_TOL {
            return Err(Error::NotAContrast(format!(
                "row {r} sums to {sum}, not 0"
            )));
        }
    }
    Ok(())
}

/// Build the contrast matrix for a hypothesis in the given layout.
///
/// Two-way main effects use `P_a (x) J_b/b` (first factor) and
/// `J_a/a (x) P_b` (second factor); the interaction uses `P_a (x) P_b`.
/// Higher-way layouts are served by `Custom` matrices built from
/// [`centering`] and [`kronecker`].
pub fn hypothesis_matrix(spec: &HypothesisSpec, layout: &Layout) -> Result<Matrix> {
    let k = layout.k();
    match spec {
        HypothesisSpec::KSampleEquality => centering(k),
        HypothesisSpec::MainEffect(name) => {
            let counts = layout.level_counts();
            if counts.len() != 2 {
                return Err(Error::HypothesisMismatch(format!(
                    "main-effect hypotheses need a two-way layout, this one has {} factor(s)",
                    counts.len()
                )));
            }
            let (a, b) = (counts[0], counts[1]);
            match layout.factor_index(name) {
                Some(0) => Ok(kronecker(&centering(a)?, &Matrix::ones_scaled(b, b, b as f64))),
                Some(1) => Ok(kronecker(&Matrix::ones_scaled(a, a, a as f64), &centering(b)?)),
                _ => Err(Error::HypothesisMismatch(format!(
                    "factor `{name}` is not part of the layout"
                ))),
            }
        }
        HypothesisSpec::Interaction => {
            let counts = layout.level_counts();
            if counts.len() != 2 {
                return Err(Error::HypothesisMismatch(format!(
                    "interaction hypotheses need a two-way layout, this one has {} factor(s)",
                    counts.len()
                )));
            }
            Ok(kronecker(&centering(counts[0])?, &centering(counts[1])?))
        }
        HypothesisSpec::Custom(h) => {
            validate_contrast(h, k)?;
            Ok(h.clone())
        }
    }
}
