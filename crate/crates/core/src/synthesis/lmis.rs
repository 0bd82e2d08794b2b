//! Auxiliary LMIs: detectability, the decay-rate LMI without performance
//! terms, and output-matched Lyapunov certificates.

use serde::{Deserialize, Serialize};

use super::conditions::output_matching_rank_conditions;
use super::{phi_alpha_raw, SynthesisProblem};
use crate::error::{Error, Result};
use crate::linalg::{self, expect_shape, max_abs, Mat, SymMat};
use crate::multipliers::Cone;
use crate::sdp::{self, AffineSym, LmiProblem, SdpBackend, SdpStatus, VarAlloc};

/// Outcome of an auxiliary LMI.
#[derive(Debug, Clone)]
pub enum LmiOutcome<T> {
    Feasible(T),
    Infeasible(String),
    Inconclusive(String),
}

impl<T> LmiOutcome<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LmiOutcome::Feasible(_))
    }

    pub fn feasible(self) -> Option<T> {
        match self {
            LmiOutcome::Feasible(t) => Some(t),
            _ => None,
        }
    }

    fn map_status(status: SdpStatus) -> std::result::Result<(), Self> {
        match status {
            SdpStatus::Solved => Ok(()),
            SdpStatus::Infeasible => Err(LmiOutcome::Infeasible("backend certificate".into())),
            SdpStatus::Inconclusive(s) => Err(LmiOutcome::Inconclusive(s)),
        }
    }
}

/// `P ⪰ I` with `PA + AᵀP + YC + CᵀYᵀ ≺ 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectabilityCertificate {
    pub p: SymMat,
    #[serde(with = "crate::serde_mat")]
    pub y: Mat,
    pub max_eigenvalue: f64,
}

/// Detectability of `(A, C)` through the Lyapunov LMI, audited by eigensolve.
pub fn detectable_by_lmi(
    a: &Mat,
    c: &Mat,
    margin: f64,
    backend: &dyn SdpBackend,
) -> Result<LmiOutcome<DetectabilityCertificate>> {
    let n = a.nrows();
    expect_shape(a, n, n, "A")?;
    expect_shape(c, c.nrows(), n, "C")?;
    let mut alloc = VarAlloc::default();
    let p = alloc.sym(n);
    let y = alloc.mat(n, c.nrows());
    let nv = alloc.count();
    let mut lmi = LmiProblem::new(nv);
    lmi.add_lmi(
        "Lyapunov decrease",
        AffineSym::from_fn(nv, |x| phi_alpha_raw(a, c, &p.value(x), &y.value(x), 0.0)),
        margin,
    );
    lmi.add_lmi(
        "P ⪰ I",
        AffineSym::from_fn(nv, |x| Mat::identity(n, n) - p.value(x)),
        0.0,
    );
    let sol = sdp::solve(backend, &lmi)?;
    if let Err(o) = LmiOutcome::map_status(sol.status) {
        return Ok(o);
    }
    let (pv, yv) = (SymMat::symmetrize(p.value(&sol.x)), y.value(&sol.x));
    let lmax = linalg::lambda_max(&SymMat::symmetrize(phi_alpha_raw(
        a,
        c,
        pv.as_mat(),
        &yv,
        0.0,
    )))?;
    let lmin_p = linalg::lambda_min(&pv)?;
    if lmax < 0.0 && lmin_p > 0.0 {
        Ok(LmiOutcome::Feasible(DetectabilityCertificate {
            p: pv,
            y: yv,
            max_eigenvalue: lmax,
        }))
    } else {
        Ok(LmiOutcome::Inconclusive(format!(
            "audit rejected solver output: λ_max = {lmax:e}, λ_min(P) = {lmin_p:e}"
        )))
    }
}

/// Certificate of the decay-rate LMI at `ᾱ`, optionally with the
/// output-matching equalities used by the arbitrary-accuracy design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayRateSolution {
    pub p: SymMat,
    #[serde(with = "crate::serde_mat")]
    pub y: Mat,
    pub theta: Vec<f64>,
    pub alpha_bar: f64,
    /// `ℱ` with `𝒫ℬ + 𝒴𝒟 = 𝒞ᵀℱᵀ`, when requested.
    #[serde(with = "crate::serde_mat::option")]
    pub f: Option<Mat>,
    pub max_eigenvalue: f64,
}

/// `[Φ_ᾱ, 𝒫ℬ_f + 𝒴𝒟_f; ⋆, 0] + Γ̄ᵀMΓ̄`.
pub fn assemble_decay_rate_block(
    prob: &SynthesisProblem,
    p: &Mat,
    y: &Mat,
    m: &Mat,
    alpha_bar: f64,
) -> Mat {
    let a = &prob.aug;
    let (nxi, nf) = (a.n_xi(), a.n_f());
    let gamma = prob.gamma_matrix();
    let gbar = gamma.columns(0, nxi + nf).into_owned();
    let mut blk = Mat::zeros(nxi + nf, nxi + nf);
    blk.view_mut((0, 0), (nxi, nxi))
        .copy_from(&phi_alpha_raw(&a.a, &a.c, p, y, alpha_bar));
    let b12 = p * &a.b_f + y * &a.d_f;
    blk.view_mut((0, nxi), (nxi, nf)).copy_from(&b12);
    blk.view_mut((nxi, 0), (nf, nxi))
        .copy_from(&b12.transpose());
    blk + gbar.transpose() * m * gbar
}

pub(crate) fn decay_rate_lmi(
    prob: &SynthesisProblem,
    alpha_bar: f64,
    with_matching: bool,
    backend: &dyn SdpBackend,
) -> Result<LmiOutcome<DecayRateSolution>> {
    prob.validate()?;
    let a = &prob.aug;
    let (nxi, ny, nv) = (a.n_xi(), a.n_y(), a.n_v());
    let mut alloc = VarAlloc::default();
    let p = alloc.sym(nxi);
    let y = alloc.mat(nxi, ny);
    let theta = alloc.vector(prob.fam.n_params());
    let f = with_matching.then(|| alloc.mat(nv, ny));
    let n = alloc.count();
    let margin = prob.options.margin;
    let mult = |x: &[f64]| {
        let mut m = Mat::zeros(prob.fam.dim, prob.fam.dim);
        for (b, k) in prob.fam.basis.iter().zip(theta.clone()) {
            m += b.as_mat() * x[k];
        }
        m
    };

    let mut lmi = LmiProblem::new(n);
    lmi.add_lmi(
        "decay rate",
        AffineSym::from_fn(n, |x| {
            assemble_decay_rate_block(prob, &p.value(x), &y.value(x), &mult(x), alpha_bar)
        }),
        margin,
    );
    lmi.add_lmi(
        "P ⪰ I",
        AffineSym::from_fn(n, |x| Mat::identity(nxi, nxi) - p.value(x)),
        0.0,
    );
    for (cone, k) in prob.fam.cones.iter().zip(theta.clone()) {
        if *cone == Cone::Nonneg {
            lmi.lower_bounds.push((k, 0.0));
        }
    }
    if let Some(f) = &f {
        lmi.add_matrix_equality(
            n,
            |x| p.value(x) * &a.b + y.value(x) * &a.d - a.c.transpose() * f.value(x).transpose(),
            false,
        );
        lmi.add_matrix_equality(n, |x| f.value(x) * &a.d, false);
        lmi.add_matrix_equality(n, |x| f.value(x) * &a.d_f, false);
    }

    let sol = sdp::solve(backend, &lmi)?;
    if let Err(o) = LmiOutcome::map_status(sol.status) {
        return Ok(o);
    }
    let x = &sol.x;
    let (pv, yv) = (SymMat::symmetrize(p.value(x)), y.value(x));
    let th: Vec<f64> = theta.clone().map(|k| x[k]).collect();
    let blk = SymMat::symmetrize(assemble_decay_rate_block(
        prob,
        pv.as_mat(),
        &yv,
        &mult(x),
        alpha_bar,
    ));
    let lmax = linalg::lambda_max(&blk)?;
    let lmin_p = linalg::lambda_min(&pv)?;
    if !(lmax <= prob.options.audit_margin && lmin_p >= 1.0 - 1e-6 && prob.fam.in_cone(&th)) {
        return Ok(LmiOutcome::Inconclusive(format!(
            "audit rejected solver output: λ_max = {lmax:e}, λ_min(P) = {lmin_p:e}"
        )));
    }
    Ok(LmiOutcome::Feasible(DecayRateSolution {
        p: pv,
        y: yv,
        theta: th,
        alpha_bar,
        f: f.map(|f| f.value(x)),
        max_eigenvalue: lmax,
    }))
}

/// The decay-rate LMI at `ᾱ` with the normalization `𝒫 ⪰ I`.
pub fn solve_decay_rate_lmi(
    prob: &SynthesisProblem,
    alpha_bar: f64,
    backend: &dyn SdpBackend,
) -> Result<LmiOutcome<DecayRateSolution>> {
    if !(alpha_bar > 0.0 && alpha_bar.is_finite()) {
        return Err(Error::InvalidOption(format!(
            "ᾱ must be positive, got {alpha_bar}"
        )));
    }
    decay_rate_lmi(prob, alpha_bar, false, backend)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputMatchedSolution {
    pub p: SymMat,
    #[serde(with = "crate::serde_mat")]
    pub y: Mat,
    #[serde(with = "crate::serde_mat")]
    pub f: Mat,
    pub max_eigenvalue: f64,
    pub equality_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMatchedOptions {
    pub margin: f64,
    /// Solve the LMI even when the rank conditions fail.
    pub skip_rank_precheck: bool,
}

impl Default for OutputMatchedOptions {
    fn default() -> Self {
        Self {
            margin: 1e-6,
            skip_rank_precheck: false,
        }
    }
}

/// `𝒫 ⪰ I`, `𝒫𝒜 + 𝒜ᵀ𝒫 + 𝒴𝒞 + 𝒞ᵀ𝒴ᵀ ≺ 0` and `ℬᵀ𝒫 = ℱ𝒞`.
pub fn solve_lemma7(
    a: &Mat,
    b: &Mat,
    c: &Mat,
    opts: OutputMatchedOptions,
    backend: &dyn SdpBackend,
) -> Result<LmiOutcome<OutputMatchedSolution>> {
    let report = output_matching_rank_conditions(a, b, c)?;
    if !report.passed && !opts.skip_rank_precheck {
        let failed: Vec<_> = report
            .items
            .iter()
            .filter(|i| !i.passed)
            .map(|i| i.name.clone())
            .collect();
        return Ok(LmiOutcome::Infeasible(format!(
            "rank conditions fail: {}",
            failed.join("; ")
        )));
    }
    let n = a.nrows();
    let mut alloc = VarAlloc::default();
    let p = alloc.sym(n);
    let y = alloc.mat(n, c.nrows());
    let f = alloc.mat(b.ncols(), c.nrows());
    let nv = alloc.count();
    let mut lmi = LmiProblem::new(nv);
    lmi.add_lmi(
        "Lyapunov decrease",
        AffineSym::from_fn(nv, |x| phi_alpha_raw(a, c, &p.value(x), &y.value(x), 0.0)),
        2.0 * opts.margin,
    );
    lmi.add_lmi(
        "P ⪰ I",
        AffineSym::from_fn(nv, |x| Mat::identity(n, n) - p.value(x)),
        0.0,
    );
    lmi.add_matrix_equality(nv, |x| b.transpose() * p.value(x) - f.value(x) * c, false);

    let sol = sdp::solve(backend, &lmi)?;
    let status_ok = LmiOutcome::map_status(sol.status);
    if let Err(o) = status_ok {
        if report.passed {
            let why = match &o {
                LmiOutcome::Infeasible(s) | LmiOutcome::Inconclusive(s) => s.clone(),
                LmiOutcome::Feasible(_) => unreachable!(),
            };
            return Ok(LmiOutcome::Inconclusive(format!(
                "rank conditions hold but the LMI solve failed: {why}"
            )));
        }
        return Ok(o);
    }
    let x = &sol.x;
    let (pv, yv, fv) = (SymMat::symmetrize(p.value(x)), y.value(x), f.value(x));
    let lmax = linalg::lambda_max(&SymMat::symmetrize(phi_alpha_raw(
        a,
        c,
        pv.as_mat(),
        &yv,
        0.0,
    )))?;
    let scale = 1.0 + max_abs(b) * max_abs(pv.as_mat());
    let resid = max_abs(&(b.transpose() * pv.as_mat() - &fv * c)) / scale;
    if lmax < -opts.margin && resid <= 1e-9 && linalg::lambda_min(&pv)? > 0.0 {
        Ok(LmiOutcome::Feasible(OutputMatchedSolution {
            p: pv,
            y: yv,
            f: fv,
            max_eigenvalue: lmax,
            equality_residual: resid,
        }))
    } else {
        Ok(LmiOutcome::Inconclusive(format!(
            "audit rejected solver output: λ_max = {lmax:e}, equality residual = {resid:e}"
        )))
    }
}
