//! Dense real matrix algebra: block assembly, symmetric eigendecomposition,
//! SVD rank, linear solves and semidefiniteness tests.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative rank tolerance (against the largest singular value).
pub const RANK_TOL: f64 = 1e-9;

const EIG_EPS: f64 = f64::EPSILON;
const EIG_MAX_ITER: usize = 10_000;

pub fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric matrix. Stored exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "crate::serde_mat::RowMajor",
    into = "crate::serde_mat::RowMajor"
)]
pub struct SymMat(Mat);

impl SymMat {
    /// Accepts `m` if it is symmetric to `1e-12 * (1 + max|m|)` and stores
    /// the exact symmetric part.
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                what: "symmetric matrix columns".into(),
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        ensure_finite(&m, "symmetric matrix")?;
        let asym = max_abs(&(&m - m.transpose()));
        let tol = 1e-12 * (1.0 + max_abs(&m));
        if asym > tol {
            return Err(Error::NotSymmetric {
                asymmetry: asym,
                tolerance: tol,
            });
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetric part `(m + mᵀ)/2` without any tolerance check.
    pub fn symmetrize(m: Mat) -> Self {
        let t = m.transpose();
        SymMat((m + t) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMat(Mat::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMat(&self.0 * s)
    }

    pub fn add(&self, other: &SymMat) -> Self {
        SymMat(&self.0 + &other.0)
    }

    /// `Tᵀ S T`, symmetric by construction.
    pub fn congruence(&self, t: &Mat) -> Self {
        Self::symmetrize(t.transpose() * &self.0 * t)
    }
}

impl std::ops::Index<(usize, usize)> for SymMat {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigen-decomposition of a symmetric matrix with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: Mat,
}

pub fn sym_eig(s: &SymMat) -> Result<SymEig> {
    let n = s.dim();
    if n == 0 {
        return Ok(SymEig {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        });
    }
    ensure_finite(s.as_mat(), "eigen-decomposition input")?;
    let eig = SymmetricEigen::try_new(s.as_mat().clone(), EIG_EPS, EIG_MAX_ITER).ok_or(
        Error::EigenNoConvergence {
            iterations: EIG_MAX_ITER,
        },
    )?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

pub fn lambda_max(s: &SymMat) -> Result<f64> {
    Ok(sym_eig(s)?
        .values
        .last()
        .copied()
        .unwrap_or(f64::NEG_INFINITY))
}

pub fn lambda_min(s: &SymMat) -> Result<f64> {
    Ok(sym_eig(s)?.values.first().copied().unwrap_or(f64::INFINITY))
}

/// Outcome of a semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NsdCheck {
    pub holds: bool,
    pub max_eigenvalue: f64,
}

/// `λ_max(s) <= margin`.
pub fn is_neg_semidef(s: &SymMat, margin: f64) -> Result<NsdCheck> {
    if margin < 0.0 {
        return Err(Error::InvalidOption(format!("negative margin {margin}")));
    }
    let max_eigenvalue = if s.dim() == 0 { 0.0 } else { lambda_max(s)? };
    Ok(NsdCheck {
        holds: max_eigenvalue <= margin,
        max_eigenvalue,
    })
}

pub fn singular_values(a: &Mat) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(vec![]);
    }
    ensure_finite(a, "SVD input")?;
    let svd = SVD::try_new(a.clone(), false, false, EIG_EPS, EIG_MAX_ITER).ok_or(
        Error::EigenNoConvergence {
            iterations: EIG_MAX_ITER,
        },
    )?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Number of singular values above `tol_rel * σ_max`.
pub fn numeric_rank(a: &Mat, tol_rel: f64) -> Result<usize> {
    if tol_rel <= 0.0 {
        return Err(Error::InvalidOption(format!(
            "rank tolerance {tol_rel} must be positive"
        )));
    }
    let sv = singular_values(a)?;
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol_rel * smax).count())
}

/// Orthonormal basis for the column space of `a` (numerical rank at `tol_rel`).
pub fn range_basis(a: &Mat, tol_rel: f64) -> Result<Mat> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Mat::zeros(a.nrows(), 0));
    }
    ensure_finite(a, "range basis input")?;
    let svd = SVD::try_new(a.clone(), true, false, EIG_EPS, EIG_MAX_ITER).ok_or(
        Error::EigenNoConvergence {
            iterations: EIG_MAX_ITER,
        },
    )?;
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, s| m.max(*s));
    let cols: Vec<Vector> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > tol_rel * smax)
        .map(|(i, _)| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        Ok(Mat::zeros(a.nrows(), 0))
    } else {
        Ok(Mat::from_columns(&cols))
    }
}

/// 2-norm condition number estimate `σ_max / σ_min` of a square matrix.
pub fn condition_number(a: &Mat) -> Result<f64> {
    let sv = singular_values(a)?;
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => Ok(hi / lo),
        (Some(_), Some(_)) => Ok(f64::INFINITY),
        _ => Ok(1.0),
    }
}

/// Solves `A X = B`. Fails when `A` is singular to working precision.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::Dimension {
            what: "linear solve: columns of A".into(),
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension {
            what: "linear solve: rows of B".into(),
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    ensure_finite(a, "linear solve: A")?;
    ensure_finite(b, "linear solve: B")?;
    if a.nrows() == 0 {
        return Ok(b.clone());
    }
    let condition = condition_number(a)?;
    if !condition.is_finite() || condition > 1e14 {
        return Err(Error::Singular { condition });
    }
    let lu = a.clone().full_piv_lu();
    let mut x = lu.solve(b).ok_or(Error::Singular { condition })?;
    // One step of iterative refinement.
    let r = b - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x)
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(vec![]);
    }
    ensure_finite(a, "eigenvalue input")?;
    let schur =
        Schur::try_new(a.clone(), EIG_EPS, EIG_MAX_ITER).ok_or(Error::EigenNoConvergence {
            iterations: EIG_MAX_ITER,
        })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Real `2m × 2n` representation `[[Re, −Im], [Im, Re]]` of `re + i·im`.
/// Its rank is twice the complex rank.
pub fn realify(re: &Mat, im: &Mat) -> Mat {
    let (m, n) = re.shape();
    let mut out = Mat::zeros(2 * m, 2 * n);
    out.view_mut((0, 0), (m, n)).copy_from(re);
    out.view_mut((0, n), (m, n)).copy_from(&(-im));
    out.view_mut((m, 0), (m, n)).copy_from(im);
    out.view_mut((m, n), (m, n)).copy_from(re);
    out
}

/// Complex column rank of `re + i·im`.
pub fn complex_rank(re: &Mat, im: &Mat, tol_rel: f64) -> Result<usize> {
    if im.iter().all(|v| *v == 0.0) {
        return numeric_rank(re, tol_rel);
    }
    Ok(numeric_rank(&realify(re, im), tol_rel)? / 2)
}

/// Assembles a block matrix from rows of blocks. Row heights and column
/// widths are taken from the blocks and must agree; `None` is a zero block
/// whose size is inferred from its row and column.
pub fn block(rows: &[Vec<Option<&Mat>>]) -> Result<Mat> {
    let nbr = rows.len();
    let nbc = rows.first().map_or(0, |r| r.len());
    let mut heights = vec![None; nbr];
    let mut widths = vec![None; nbc];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != nbc {
            return Err(Error::Dimension {
                what: format!("block row {i} length"),
                expected: nbc,
                found: row.len(),
            });
        }
        for (j, blk) in row.iter().enumerate() {
            if let Some(b) = blk {
                check_dim(&mut heights[i], b.nrows(), || {
                    format!("height of block row {i}")
                })?;
                check_dim(&mut widths[j], b.ncols(), || {
                    format!("width of block column {j}")
                })?;
            }
        }
    }
    let heights: Vec<usize> = heights.into_iter().map(|h| h.unwrap_or(0)).collect();
    let widths: Vec<usize> = widths.into_iter().map(|w| w.unwrap_or(0)).collect();
    let mut out = Mat::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, blk) in row.iter().enumerate() {
            if let Some(b) = blk {
                out.view_mut((r0, c0), (heights[i], widths[j]))
                    .copy_from(*b);
            }
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    Ok(out)
}

fn check_dim(slot: &mut Option<usize>, found: usize, what: impl Fn() -> String) -> Result<()> {
    match *slot {
        Some(expected) if expected != found => Err(Error::Dimension {
            what: what(),
            expected,
            found,
        }),
        _ => {
            *slot = Some(found);
            Ok(())
        }
    }
}

/// Block-diagonal matrix.
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(r, c);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(*b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn hstack(blocks: &[&Mat]) -> Result<Mat> {
    block(&[blocks.iter().map(|b| Some(*b)).collect()])
}

pub fn vstack(blocks: &[&Mat]) -> Result<Mat> {
    let rows: Vec<Vec<Option<&Mat>>> = blocks.iter().map(|b| vec![Some(*b)]).collect();
    block(&rows)
}

/// Checks that `m` has the given shape.
pub fn expect_shape(m: &Mat, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::Dimension {
            what: format!("{what} rows"),
            expected: rows,
            found: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::Dimension {
            what: format!("{what} columns"),
            expected: cols,
            found: m.ncols(),
        });
    }
    Ok(())
}
