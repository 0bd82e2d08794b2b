use std::ops::Range;

use rayon::prelude::*;

use super::{
    audit_certificate, extract_gains, observer_block_raw, AlphaGrid, AlphaPoint, Certificate,
    Mu1Policy, SynthesisProblem, SynthesisResult,
};
use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};
use crate::multipliers::Cone;
use crate::sdp::{self, AffineSym, LmiProblem, MatVar, SdpBackend, SdpStatus, SymVar, VarAlloc};

/// Outcome of one feasibility or minimization solve.
#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(Box<Certificate>),
    /// The backend certified infeasibility at the requested margins.
    Infeasible {
        reason: String,
    },
    /// No certificate either way, or a claimed solution failed the audit.
    Inconclusive {
        reason: String,
    },
}

impl Feasibility {
    pub fn certificate(&self) -> Option<&Certificate> {
        match self {
            Feasibility::Feasible(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    fn label(&self) -> String {
        match self {
            Feasibility::Feasible(_) => "feasible".into(),
            Feasibility::Infeasible { reason } => format!("infeasible ({reason})"),
            Feasibility::Inconclusive { reason } => format!("inconclusive ({reason})"),
        }
    }
}

struct Layout {
    p: SymVar,
    y: MatVar,
    theta: Range<usize>,
    mu1: Option<usize>,
    mu2: Option<usize>,
    n: usize,
}

enum Mu2 {
    Fixed(f64),
    Free,
    Minimize,
}

fn build(prob: &SynthesisProblem, mu2: &Mu2) -> (LmiProblem, Layout) {
    let a = &prob.aug;
    let opts = &prob.options;
    let mut alloc = VarAlloc::default();
    let layout = {
        let p = alloc.sym(a.n_xi());
        let y = alloc.mat(a.n_xi(), a.n_y());
        let theta = alloc.vector(prob.fam.n_params());
        let mu1 = matches!(opts.mu1, Mu1Policy::Free { .. }).then(|| alloc.scalar());
        let mu2 = (!matches!(mu2, Mu2::Fixed(_))).then(|| alloc.scalar());
        Layout {
            p,
            y,
            theta,
            mu1,
            mu2,
            n: alloc.count(),
        }
    };
    let gamma = prob.gamma_matrix();
    let basis: Vec<&Mat> = prob.fam.basis.iter().map(SymMat::as_mat).collect();
    let mu2_fixed = match mu2 {
        Mu2::Fixed(v) => *v,
        _ => 0.0,
    };
    let mu1_fixed = match opts.mu1 {
        Mu1Policy::Fixed(v) => v,
        Mu1Policy::Free { .. } => 0.0,
    };
    let block = |x: &[f64]| {
        let mut m = Mat::zeros(prob.fam.dim, prob.fam.dim);
        for (b, k) in basis.iter().zip(layout.theta.clone()) {
            m += *b * x[k];
        }
        let mu1 = layout.mu1.map_or(mu1_fixed, |k| x[k]);
        let mu2 = layout.mu2.map_or(mu2_fixed, |k| x[k]);
        observer_block_raw(
            prob,
            &gamma,
            &layout.p.value(x),
            &layout.y.value(x),
            &m,
            mu1,
            mu2,
        )
    };

    let mut lmi = LmiProblem::new(layout.n);
    lmi.add_lmi(
        "performance",
        AffineSym::from_fn(layout.n, block),
        opts.margin,
    );
    lmi.add_lmi(
        "P positive definite",
        AffineSym::from_fn(layout.n, |x| -layout.p.value(x)),
        opts.eps_pd,
    );
    if let Some(r) = opts.decision_radius {
        let n_dec = layout.theta.end;
        lmi.add_lmi(
            "decision radius",
            AffineSym::from_fn(layout.n, |x| {
                let mut m = Mat::identity(n_dec + 1, n_dec + 1) * -r;
                for k in 0..n_dec {
                    m[(k, n_dec)] = -x[k];
                    m[(n_dec, k)] = -x[k];
                }
                m
            }),
            0.0,
        );
    }
    for (cone, k) in prob.fam.cones.iter().zip(layout.theta.clone()) {
        if *cone == Cone::Nonneg {
            lmi.lower_bounds.push((k, 0.0));
        }
    }
    if let (Some(k), Mu1Policy::Free { min }) = (layout.mu1, opts.mu1) {
        lmi.lower_bounds.push((k, min));
    }
    if let Some(k) = layout.mu2 {
        lmi.lower_bounds.push((k, 0.0));
    }
    if let (Mu2::Minimize, Some(k)) = (mu2, layout.mu2) {
        let mut c = vec![0.0; layout.n];
        c[k] = 1.0;
        lmi.objective = Some(c);
    }
    (lmi, layout)
}

fn certificate_from(prob: &SynthesisProblem, layout: &Layout, x: &[f64], mu2: &Mu2) -> Certificate {
    Certificate {
        p: SymMat::symmetrize(layout.p.value(x)),
        y: layout.y.value(x),
        theta: layout.theta.clone().map(|k| x[k]).collect(),
        mu1: match (layout.mu1, prob.options.mu1) {
            (Some(k), _) => x[k],
            (None, Mu1Policy::Fixed(v)) => v,
            (None, Mu1Policy::Free { min }) => min,
        },
        mu2: match (layout.mu2, mu2) {
            (Some(k), _) => x[k].max(0.0),
            (None, Mu2::Fixed(v)) => *v,
            (None, _) => 0.0,
        },
        alpha: prob.alpha,
        margin: f64::NAN,
    }
}

struct Run {
    outcome: Feasibility,
    iterations: u32,
    /// Solver output rejected by the audit.
    rejected: Option<Certificate>,
}

fn run(prob: &SynthesisProblem, backend: &dyn SdpBackend, mu2: Mu2) -> Result<Run> {
    prob.validate()?;
    let (lmi, layout) = build(prob, &mu2);
    let sol = sdp::solve(backend, &lmi)?;
    let mut rejected = None;
    let outcome = match sol.status {
        SdpStatus::Infeasible => Feasibility::Infeasible {
            reason: format!("backend certificate at margin {:e}", prob.options.margin),
        },
        SdpStatus::Inconclusive(s) => Feasibility::Inconclusive { reason: s },
        SdpStatus::Solved => {
            let mut cert = certificate_from(prob, &layout, &sol.x, &mu2);
            let audit = audit_certificate(prob, &cert)?;
            cert.margin = -audit.max_eigenvalue;
            if audit.passed {
                Feasibility::Feasible(Box::new(cert))
            } else {
                rejected = Some(cert);
                Feasibility::Inconclusive {
                    reason: format!(
                        "audit rejected solver output: λ_max = {:e}, λ_min(P) = {:e}",
                        audit.max_eigenvalue, audit.lambda_min_p
                    ),
                }
            }
        }
    };
    Ok(Run {
        outcome,
        iterations: sol.iterations,
        rejected,
    })
}

/// Searches for a certificate at `prob.alpha`, with `μ₂` free or fixed.
pub fn solve_feasibility(
    prob: &SynthesisProblem,
    mu2_fixed: Option<f64>,
    backend: &dyn SdpBackend,
) -> Result<Feasibility> {
    let mu2 = match mu2_fixed {
        Some(v) if v < 0.0 => {
            return Err(Error::InvalidOption(format!("μ2 must be >= 0, got {v}")))
        }
        Some(v) => Mu2::Fixed(v),
        None => Mu2::Free,
    };
    Ok(run(prob, backend, mu2)?.outcome)
}

/// Minimizes `μ₂` at `prob.alpha` by a linear objective. A boundary
/// solution that fails the audit is re-solved as a feasibility problem at a
/// slightly relaxed `μ₂`.
fn minimize_mu2(prob: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<(Feasibility, u32)> {
    let first = run(prob, backend, Mu2::Minimize)?;
    let mut iters = first.iterations;
    let Some(rejected) = first.rejected else {
        return Ok((first.outcome, iters));
    };
    for relax in [1e-4, 1e-3, 1e-2] {
        let target = rejected.mu2 * (1.0 + relax) + relax * 1e-6;
        let r = run(prob, backend, Mu2::Fixed(target))?;
        iters += r.iterations;
        if r.outcome.is_feasible() {
            return Ok((r.outcome, iters));
        }
    }
    Ok((first.outcome, iters))
}

/// Minimal `μ₂` at `prob.alpha` by bisection on fixed-`μ₂` feasibility.
pub fn solve_gevp_bisection(
    prob: &SynthesisProblem,
    backend: &dyn SdpBackend,
) -> Result<Feasibility> {
    Ok(bisect_mu2(prob, backend)?.0)
}

fn bisect_mu2(prob: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<(Feasibility, u32)> {
    let (mut lo, mut hi) = prob.options.mu2_bracket;
    let at_hi = run(prob, backend, Mu2::Fixed(hi))?;
    let mut iters = at_hi.iterations;
    let mut best = match at_hi.outcome {
        Feasibility::Feasible(c) => c,
        other => return Ok((other, iters)),
    };
    let at_lo = run(prob, backend, Mu2::Fixed(lo))?;
    iters += at_lo.iterations;
    if at_lo.outcome.is_feasible() {
        return Ok((at_lo.outcome, iters));
    }
    while hi - lo > prob.options.bisection_rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        let r = run(prob, backend, Mu2::Fixed(mid))?;
        iters += r.iterations;
        match r.outcome {
            Feasibility::Feasible(c) => {
                hi = mid;
                best = c;
            }
            _ => lo = mid,
        }
    }
    Ok((Feasibility::Feasible(best), iters))
}

pub fn alpha_grid_points(grid: &AlphaGrid) -> Result<Vec<f64>> {
    let pts = match grid {
        AlphaGrid::Log { n, alpha_max } => {
            let lo = alpha_max * 1e-3;
            match n {
                0 => vec![],
                1 => vec![*alpha_max],
                _ => (0..*n)
                    .map(|i| lo * (alpha_max / lo).powf(i as f64 / (*n - 1) as f64))
                    .collect(),
            }
        }
        AlphaGrid::Linear { n, alpha_max } => {
            (1..=*n).map(|i| alpha_max * i as f64 / *n as f64).collect()
        }
        AlphaGrid::Explicit(v) => v.clone(),
    };
    if pts.is_empty() {
        return Err(Error::InvalidOption("decay-rate grid is empty".into()));
    }
    if let Some(bad) = pts.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
        return Err(Error::InvalidOption(format!(
            "decay-rate grid point {bad} is not a finite nonnegative number"
        )));
    }
    Ok(pts)
}

/// Sweeps the decay-rate grid, minimizing `μ₂` with `μ₁` fixed at each
/// point, and returns the best audited certificate.
pub fn solve_gevp(prob: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<SynthesisResult> {
    prob.validate()?;
    if let Mu1Policy::Free { .. } = prob.options.mu1 {
        return Err(Error::InvalidOption(
            "μ2 minimization needs a fixed μ1".into(),
        ));
    }
    let alphas = alpha_grid_points(&prob.options.alpha_grid)?;
    let solve_at = |alpha: f64| -> Result<(f64, Feasibility, u32)> {
        let at = prob.clone().with_alpha(alpha);
        let (f, it) = if backend.supports_objective() {
            minimize_mu2(&at, backend)?
        } else {
            bisect_mu2(&at, backend)?
        };
        Ok((alpha, f, it))
    };
    let outcomes: Vec<(f64, Feasibility, u32)> = if prob.options.parallel {
        alphas
            .par_iter()
            .map(|&a| solve_at(a))
            .collect::<Result<_>>()?
    } else {
        alphas.iter().map(|&a| solve_at(a)).collect::<Result<_>>()?
    };

    let sweep: Vec<AlphaPoint> = outcomes
        .iter()
        .map(|(alpha, f, _)| AlphaPoint {
            alpha: *alpha,
            status: f.label(),
            mu2: f.certificate().map(|c| c.mu2),
        })
        .collect();
    let iterations = outcomes.iter().map(|(_, _, it)| *it).sum();
    let best = outcomes
        .iter()
        .filter_map(|(_, f, _)| f.certificate())
        .min_by(|a, b| a.mu2.total_cmp(&b.mu2));
    let Some(best) = best else {
        let detail: Vec<String> = sweep
            .iter()
            .map(|p| format!("α = {:.4}: {}", p.alpha, p.status))
            .collect();
        return Err(Error::Infeasible(format!(
            "no certificate on the decay-rate grid [{}]",
            detail.join(", ")
        )));
    };
    let at = prob.clone().with_alpha(best.alpha);
    let mut result = extract_gains(best, &at)?;
    result.diagnostics.backend = backend.name().into();
    result.diagnostics.iterations = iterations;
    result.diagnostics.audit_max_eigenvalue = -best.margin;
    result.diagnostics.alpha_sweep = sweep;
    Ok(result)
}

/// Runs [`solve_gevp`] for each candidate `L₂` and keeps the smallest `γ`.
pub fn solve_gevp_over_l2(
    prob: &SynthesisProblem,
    candidates: &[Mat],
    backend: &dyn SdpBackend,
) -> Result<SynthesisResult> {
    let mut best: Option<SynthesisResult> = None;
    let mut failures = vec![];
    for (i, l2) in candidates.iter().enumerate() {
        let mut p = prob.clone();
        p.l2 = l2.clone();
        match solve_gevp(&p, backend) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.gamma < b.gamma) {
                    best = Some(r);
                }
            }
            Err(Error::Infeasible(msg)) => failures.push(format!("candidate {i}: {msg}")),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no L2 candidate admits a certificate: {}",
            failures.join("; ")
        ))
    })
}
