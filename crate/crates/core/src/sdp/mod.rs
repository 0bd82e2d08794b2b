//! Semidefinite feasibility/optimization contract.
//!
//! Problems are stated over a flat vector of scalar decision variables `x`:
//! affine symmetric matrix expressions constrained `G(x) ⪯ −margin·I`,
//! linear equalities, scalar lower bounds and an optional linear objective.
//! Backends implement [`SdpBackend`]; nothing solver-specific leaks out.

mod clarabel;

pub use self::clarabel::ClarabelBackend;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use nalgebra::{DVector, SVD};

use crate::linalg::{max_abs, Mat, SymMat};

/// `constant + Σ x_k · terms[k]` over symmetric matrices of one size.
#[derive(Debug, Clone)]
pub struct AffineSym {
    pub dim: usize,
    pub constant: Mat,
    pub terms: Vec<(usize, Mat)>,
}

impl AffineSym {
    /// Extracts the affine map `f` by evaluating it at the origin and the
    /// unit vectors. `f` must be affine in `x`.
    pub fn from_fn(n_vars: usize, f: impl Fn(&[f64]) -> Mat) -> Self {
        let mut x = vec![0.0; n_vars];
        let constant = f(&x);
        let dim = constant.nrows();
        let mut terms = vec![];
        for k in 0..n_vars {
            x[k] = 1.0;
            let d = f(&x) - &constant;
            x[k] = 0.0;
            if d.iter().any(|v| *v != 0.0) {
                terms.push((k, symmetric_part(d)));
            }
        }
        Self {
            dim,
            constant: symmetric_part(constant),
            terms,
        }
    }

    pub fn eval(&self, x: &[f64]) -> SymMat {
        let mut m = self.constant.clone();
        for (k, t) in &self.terms {
            m += t * x[*k];
        }
        SymMat::symmetrize(m)
    }

    fn scale(&self) -> f64 {
        self.terms
            .iter()
            .map(|(_, t)| max_abs(t))
            .fold(max_abs(&self.constant), f64::max)
    }

    fn entry_is_zero(&self, i: usize, j: usize, tol: f64) -> bool {
        self.constant[(i, j)].abs() <= tol && self.terms.iter().all(|(_, t)| t[(i, j)].abs() <= tol)
    }

    fn restrict(&self, keep: &[usize]) -> Self {
        let sub = |m: &Mat| Mat::from_fn(keep.len(), keep.len(), |r, c| m[(keep[r], keep[c])]);
        Self {
            dim: keep.len(),
            constant: sub(&self.constant),
            terms: self.terms.iter().map(|(k, t)| (*k, sub(t))).collect(),
        }
    }
}

fn symmetric_part(m: Mat) -> Mat {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `expr(x) ⪯ −margin·I`.
#[derive(Debug, Clone)]
pub struct Lmi {
    pub label: String,
    pub expr: AffineSym,
    pub margin: f64,
}

/// `Σ coeffs · x = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEq {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    pub n_vars: usize,
    pub lmis: Vec<Lmi>,
    pub equalities: Vec<LinearEq>,
    pub lower_bounds: Vec<(usize, f64)>,
    /// Minimize `c · x` when present; otherwise a pure feasibility problem.
    pub objective: Option<Vec<f64>>,
}

impl LmiProblem {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            ..Default::default()
        }
    }

    pub fn add_lmi(&mut self, label: &str, expr: AffineSym, margin: f64) {
        self.lmis.push(Lmi {
            label: label.to_string(),
            expr,
            margin,
        });
    }

    /// Adds `expr(x) = 0` entrywise (upper triangle, for symmetric `expr`
    /// pass `symmetric = true`).
    pub fn add_matrix_equality(
        &mut self,
        n_vars: usize,
        f: impl Fn(&[f64]) -> Mat,
        symmetric: bool,
    ) {
        let mut x = vec![0.0; n_vars];
        let constant = f(&x);
        let mut cols = vec![];
        for k in 0..n_vars {
            x[k] = 1.0;
            cols.push(f(&x) - &constant);
            x[k] = 0.0;
        }
        for j in 0..constant.ncols() {
            for i in 0..constant.nrows() {
                if symmetric && i > j {
                    continue;
                }
                let coeffs: Vec<(usize, f64)> = cols
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c[(i, j)] != 0.0)
                    .map(|(k, c)| (k, c[(i, j)]))
                    .collect();
                self.equalities.push(LinearEq {
                    coeffs,
                    rhs: -constant[(i, j)],
                });
            }
        }
    }

    /// Removes rows/columns whose diagonal is identically zero. Any
    /// negative semidefinite matrix with a zero diagonal entry has that whole
    /// row zero, so the remaining entries of such a row become equalities.
    /// The margin then applies to the remaining face.
    pub fn reduce_structural_zeros(&self) -> Result<Self> {
        let mut out = Self {
            n_vars: self.n_vars,
            lmis: vec![],
            equalities: vec![],
            lower_bounds: self.lower_bounds.clone(),
            objective: self.objective.clone(),
        };
        for eq in &self.equalities {
            push_equality(&mut out.equalities, eq.clone())?;
        }
        for lmi in &self.lmis {
            let tol = 1e-14 * lmi.expr.scale().max(f64::MIN_POSITIVE);
            let mut active: Vec<usize> = (0..lmi.expr.dim).collect();
            while let Some(pos) = active
                .iter()
                .position(|&i| lmi.expr.entry_is_zero(i, i, tol))
            {
                let i = active.remove(pos);
                for &j in &active {
                    if lmi.expr.entry_is_zero(i, j, tol) {
                        continue;
                    }
                    let coeffs = lmi
                        .expr
                        .terms
                        .iter()
                        .filter(|(_, t)| t[(i, j)] != 0.0)
                        .map(|(k, t)| (*k, t[(i, j)]))
                        .collect();
                    push_equality(
                        &mut out.equalities,
                        LinearEq {
                            coeffs,
                            rhs: -lmi.expr.constant[(i, j)],
                        },
                    )?;
                }
            }
            if !active.is_empty() {
                out.lmis.push(Lmi {
                    label: lmi.label.clone(),
                    expr: lmi.expr.restrict(&active),
                    margin: lmi.margin,
                });
            }
        }
        Ok(out)
    }
}

fn push_equality(eqs: &mut Vec<LinearEq>, eq: LinearEq) -> Result<()> {
    if eq.coeffs.is_empty() {
        if eq.rhs != 0.0 {
            return Err(Error::Backend(format!(
                "structurally inconsistent equality 0 = {}",
                eq.rhs
            )));
        }
        return Ok(());
    }
    eqs.push(eq);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SdpStatus {
    Solved,
    /// The backend produced a certificate of infeasibility.
    Infeasible,
    /// Neither a solution nor an infeasibility certificate.
    Inconclusive(String),
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
}

/// A semidefinite programming backend. Implementations must not share
/// mutable state between calls.
pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &str;

    fn supports_objective(&self) -> bool {
        true
    }

    fn solve(&self, problem: &LmiProblem) -> Result<SdpSolution>;
}

/// Reduces structural zeros, eliminates equalities exactly through a
/// null-space parametrization, then hands the problem to `backend`.
pub fn solve(backend: &dyn SdpBackend, problem: &LmiProblem) -> Result<SdpSolution> {
    if problem.objective.is_some() && !backend.supports_objective() {
        return Err(Error::Backend(format!(
            "backend `{}` does not support objectives",
            backend.name()
        )));
    }
    let infeasible = || SdpSolution {
        status: SdpStatus::Infeasible,
        x: vec![0.0; problem.n_vars],
        objective: f64::NAN,
        iterations: 0,
    };
    let Ok(reduced) = problem.reduce_structural_zeros() else {
        return Ok(infeasible());
    };
    let Some(param) = Parametrization::new(&reduced)? else {
        return Ok(infeasible());
    };
    let inner = param.substitute(&reduced);
    let sol = if inner.n_vars == 0 {
        fixed_point_check(&inner)?
    } else {
        backend.solve(&inner)?
    };
    let x = param.lift(&sol.x);
    let objective = match &problem.objective {
        Some(c) => c.iter().zip(&x).map(|(a, b)| a * b).sum(),
        None => 0.0,
    };
    Ok(SdpSolution {
        status: sol.status,
        x,
        objective,
        iterations: sol.iterations,
    })
}

/// The equalities pin `x` completely; only the constant matrices remain.
fn fixed_point_check(p: &LmiProblem) -> Result<SdpSolution> {
    let mut ok = true;
    for lmi in &p.lmis {
        let shifted = SymMat::symmetrize(
            &lmi.expr.constant + Mat::identity(lmi.expr.dim, lmi.expr.dim) * lmi.margin,
        );
        let scale = 1.0 + max_abs(&lmi.expr.constant);
        ok &= crate::linalg::lambda_max(&shifted)? <= 1e-12 * scale;
    }
    Ok(SdpSolution {
        status: if ok {
            SdpStatus::Solved
        } else {
            SdpStatus::Infeasible
        },
        x: vec![],
        objective: 0.0,
        iterations: 0,
    })
}

/// `x = x0 + N z` spanning the solution set of the equalities.
struct Parametrization {
    x0: DVector<f64>,
    null: Mat,
}

impl Parametrization {
    /// `None` when the equalities are inconsistent.
    fn new(p: &LmiProblem) -> Result<Option<Self>> {
        let n = p.n_vars;
        if p.equalities.is_empty() {
            return Ok(Some(Self {
                x0: DVector::zeros(n),
                null: Mat::identity(n, n),
            }));
        }
        let m = p.equalities.len();
        let rows = m.max(n);
        let mut e = Mat::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        for (i, eq) in p.equalities.iter().enumerate() {
            for &(k, c) in &eq.coeffs {
                e[(i, k)] += c;
            }
            b[i] = eq.rhs;
        }
        let svd = SVD::try_new(e.clone(), true, true, 1e-15, 10_000)
            .ok_or(Error::EigenNoConvergence { iterations: 10_000 })?;
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let smax = svd.singular_values.max();
        let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
        let mut x0 = DVector::zeros(n);
        let mut null_cols = vec![];
        for (i, &s) in svd.singular_values.iter().enumerate() {
            let v = vt.row(i).transpose();
            if s > tol {
                x0 += v * (u.column(i).dot(&b) / s);
            } else {
                null_cols.push(v);
            }
        }
        let resid = (&e * &x0 - &b).amax();
        if resid > 1e-9 * (1.0 + b.amax()) {
            return Ok(None);
        }
        let null = if null_cols.is_empty() {
            Mat::zeros(n, 0)
        } else {
            Mat::from_columns(&null_cols)
        };
        Ok(Some(Self { x0, null }))
    }

    fn lift(&self, z: &[f64]) -> Vec<f64> {
        let z = DVector::from_column_slice(z);
        (&self.x0 + &self.null * z).iter().copied().collect()
    }

    fn substitute(&self, p: &LmiProblem) -> LmiProblem {
        let nz = self.null.ncols();
        let x0: Vec<f64> = self.x0.iter().copied().collect();
        let mut out = LmiProblem::new(nz);
        for lmi in &p.lmis {
            let constant = lmi.expr.eval(&x0).into_mat();
            let mut terms = vec![];
            for j in 0..nz {
                let mut t = Mat::zeros(lmi.expr.dim, lmi.expr.dim);
                for (k, tk) in &lmi.expr.terms {
                    let c = self.null[(*k, j)];
                    if c != 0.0 {
                        t += tk * c;
                    }
                }
                if t.iter().any(|v| *v != 0.0) {
                    terms.push((j, t));
                }
            }
            out.lmis.push(Lmi {
                label: lmi.label.clone(),
                expr: AffineSym {
                    dim: lmi.expr.dim,
                    constant,
                    terms,
                },
                margin: lmi.margin,
            });
        }
        // x_k ≥ lb  ⇔  lb − x0_k − N_k z ⪯ 0
        for &(k, lb) in &p.lower_bounds {
            let terms = (0..nz)
                .filter(|&j| self.null[(k, j)] != 0.0)
                .map(|j| (j, Mat::from_element(1, 1, -self.null[(k, j)])))
                .collect();
            out.lmis.push(Lmi {
                label: format!("x[{k}] lower bound"),
                expr: AffineSym {
                    dim: 1,
                    constant: Mat::from_element(1, 1, lb - self.x0[k]),
                    terms,
                },
                margin: 0.0,
            });
        }
        out.objective = p.objective.as_ref().map(|c| {
            (self.null.transpose() * DVector::from_column_slice(c))
                .iter()
                .copied()
                .collect()
        });
        out
    }
}

/// Selects a backend by name (`clarabel` is the default).
pub fn backend_by_name(name: Option<&str>) -> Result<Box<dyn SdpBackend>> {
    match name.map(str::trim).filter(|s| !s.is_empty()) {
        None | Some("clarabel") => Ok(Box::new(ClarabelBackend::default())),
        Some(other) => Err(Error::InvalidOption(format!(
            "unknown SDP backend `{other}`; available: clarabel"
        ))),
    }
}

/// Allocates decision variables in a flat vector.
#[derive(Debug, Default, Clone)]
pub struct VarAlloc {
    next: usize,
}

impl VarAlloc {
    pub fn sym(&mut self, n: usize) -> SymVar {
        let v = SymVar {
            offset: self.next,
            n,
        };
        self.next += n * (n + 1) / 2;
        v
    }

    pub fn mat(&mut self, rows: usize, cols: usize) -> MatVar {
        let v = MatVar {
            offset: self.next,
            rows,
            cols,
        };
        self.next += rows * cols;
        v
    }

    pub fn scalar(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    pub fn vector(&mut self, n: usize) -> std::ops::Range<usize> {
        let r = self.next..self.next + n;
        self.next += n;
        r
    }

    pub fn count(&self) -> usize {
        self.next
    }
}

/// Symmetric `n × n` variable stored as its upper triangle.
#[derive(Debug, Clone, Copy)]
pub struct SymVar {
    pub offset: usize,
    pub n: usize,
}

impl SymVar {
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.offset + j * (j + 1) / 2 + i
    }

    pub fn value(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.n, self.n, |i, j| x[self.index(i, j)])
    }

    pub fn set(&self, x: &mut [f64], m: &Mat) {
        for j in 0..self.n {
            for i in 0..=j {
                x[self.index(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MatVar {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MatVar {
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.offset + j * self.rows + i
    }

    pub fn value(&self, x: &[f64]) -> Mat {
        Mat::from_fn(self.rows, self.cols, |i, j| x[self.index(i, j)])
    }

    pub fn set(&self, x: &mut [f64], m: &Mat) {
        for j in 0..self.cols {
            for i in 0..self.rows {
                x[self.index(i, j)] = m[(i, j)];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> ClarabelBackend {
        ClarabelBackend::default()
    }

    #[test]
    fn affine_extraction_is_exact() {
        let mut alloc = VarAlloc::default();
        let p = alloc.sym(2);
        let s = alloc.scalar();
        let n = alloc.count();
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let f = |x: &[f64]| {
            let pm = p.value(x);
            &pm * &a + a.transpose() * &pm + Mat::identity(2, 2) * x[s] + Mat::identity(2, 2)
        };
        let expr = AffineSym::from_fn(n, f);
        let x = [0.3, -1.2, 2.5, 0.7];
        assert!((expr.eval(&x).as_mat() - f(&x)).amax() < 1e-14);
    }

    #[test]
    fn minimizes_over_a_2x2_lmi() {
        // minimize t subject to [[t, 1], [1, t]] ⪰ 0  →  t = 1
        let expr = AffineSym {
            dim: 2,
            constant: Mat::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]),
            terms: vec![(0, -Mat::identity(2, 2))],
        };
        let mut prob = LmiProblem::new(1);
        prob.add_lmi("t", expr, 0.0);
        prob.objective = Some(vec![1.0]);
        let sol = solve(&backend(), &prob).unwrap();
        assert_eq!(sol.status, SdpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn detects_infeasibility() {
        // x ⪯ −1 and x >= 0
        let expr = AffineSym {
            dim: 1,
            constant: Mat::zeros(1, 1),
            terms: vec![(0, Mat::identity(1, 1))],
        };
        let mut prob = LmiProblem::new(1);
        prob.add_lmi("x", expr, 1.0);
        prob.lower_bounds.push((0, 0.0));
        assert_eq!(
            solve(&backend(), &prob).unwrap().status,
            SdpStatus::Infeasible
        );
    }

    #[test]
    fn structural_zero_rows_become_equalities() {
        // [[-1 - x0, x1 - 2], [x1 - 2, 0]] ⪯ 0 forces x1 = 2
        let expr = AffineSym {
            dim: 2,
            constant: Mat::from_row_slice(2, 2, &[-1.0, -2.0, -2.0, 0.0]),
            terms: vec![
                (0, Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0])),
                (1, Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])),
            ],
        };
        let mut prob = LmiProblem::new(2);
        prob.add_lmi("z", expr, 0.1);
        let red = prob.reduce_structural_zeros().unwrap();
        assert_eq!(red.lmis[0].expr.dim, 1);
        assert_eq!(
            red.equalities,
            vec![LinearEq {
                coeffs: vec![(1, 1.0)],
                rhs: 2.0
            }]
        );
        let sol = solve(&backend(), &prob).unwrap();
        assert_eq!(sol.status, SdpStatus::Solved);
        assert!((sol.x[1] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn inconsistent_structural_equality_is_infeasible() {
        let expr = AffineSym {
            dim: 2,
            constant: Mat::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, 0.0]),
            terms: vec![(0, Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]))],
        };
        let mut prob = LmiProblem::new(1);
        prob.add_lmi("z", expr, 0.0);
        assert_eq!(
            solve(&backend(), &prob).unwrap().status,
            SdpStatus::Infeasible
        );
    }

    #[test]
    fn symmetric_variable_layout_roundtrips() {
        let mut alloc = VarAlloc::default();
        let _ = alloc.scalar();
        let p = alloc.sym(3);
        let y = alloc.mat(3, 2);
        let mut x = vec![0.0; alloc.count()];
        let pm = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let ym = Mat::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        p.set(&mut x, &pm);
        y.set(&mut x, &ym);
        assert_eq!(p.value(&x), pm);
        assert_eq!(y.value(&x), ym);
        assert_eq!(alloc.count(), 1 + 6 + 6);
    }

    #[test]
    fn unknown_backend_name() {
        assert!(backend_by_name(Some("mosek")).is_err());
        assert_eq!(backend_by_name(None).unwrap().name(), "clarabel");
    }
}
