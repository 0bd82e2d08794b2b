use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{LmiProblem, SdpBackend, SdpSolution, SdpStatus};
use crate::error::{Error, Result};

/// Interior-point backend on Clarabel's PSD-triangle cone.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub max_iter: u32,
    pub tol: f64,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    fn push(&mut self, coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let row = self.b.len();
        for (k, c) in coeffs {
            if c != 0.0 {
                self.i.push(row);
                self.j.push(k);
                self.v.push(c);
            }
        }
        self.b.push(rhs);
    }
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, p: &LmiProblem) -> Result<SdpSolution> {
        let n = p.n_vars;
        let mut rows = Rows {
            i: vec![],
            j: vec![],
            v: vec![],
            b: vec![],
        };
        let mut cones = vec![];

        // s = b − A x ∈ K
        if !p.equalities.is_empty() {
            for eq in &p.equalities {
                rows.push(eq.coeffs.iter().copied(), eq.rhs);
            }
            cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
        }
        if !p.lower_bounds.is_empty() {
            for &(k, lb) in &p.lower_bounds {
                rows.push([(k, -1.0)], -lb);
            }
            cones.push(SupportedConeT::NonnegativeConeT(p.lower_bounds.len()));
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        for lmi in &p.lmis {
            // −G(x) − margin·I ⪰ 0, vectorized over the upper triangle
            // column by column with off-diagonals scaled by √2.
            let d = lmi.expr.dim;
            for c in 0..d {
                for r in 0..=c {
                    let w = if r == c { 1.0 } else { sqrt2 };
                    let shift = if r == c { lmi.margin } else { 0.0 };
                    let coeffs = lmi.expr.terms.iter().map(|(k, t)| (*k, w * t[(r, c)]));
                    rows.push(coeffs, -w * (lmi.expr.constant[(r, c)] + shift));
                }
            }
            cones.push(if d == 1 {
                SupportedConeT::NonnegativeConeT(1)
            } else {
                SupportedConeT::PSDTriangleConeT(d)
            });
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let q = p.objective.clone().unwrap_or_else(|| vec![0.0; n]);
        if q.len() != n {
            return Err(Error::Dimension {
                what: "objective length".into(),
                expected: n,
                found: q.len(),
            });
        }
        let pm = CscMatrix::zeros((n, n));
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_feas: self.tol,
            tol_gap_abs: self.tol,
            tol_gap_rel: self.tol,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&pm, &q, &a, &rows.b, &cones, settings)
            .map_err(|e| Error::Backend(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SdpStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SdpStatus::Infeasible
            }
            other => SdpStatus::Inconclusive(format!("{other:?}")),
        };
        Ok(SdpSolution {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val,
            iterations: sol.iterations,
        })
    }
}
