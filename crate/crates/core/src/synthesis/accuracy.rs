use serde::{Deserialize, Serialize};

use super::lmis::{decay_rate_lmi, DecayRateSolution, LmiOutcome};
use super::{audit_certificate, extract_gains, Certificate, SynthesisProblem, SynthesisResult};
use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, Mat, SymMat};
use crate::sdp::SdpBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyOptions {
    /// Target performance level `γ`.
    pub gamma: f64,
    /// Fixed `ᾱ`; searched by bisection when absent.
    pub alpha_bar: Option<f64>,
    /// Upper end of the `ᾱ` search.
    pub alpha_bar_max: f64,
    pub bisection_steps: usize,
    /// Tolerance on `‖𝒟_q + L₂𝒟‖_max`.
    pub feedthrough_tol: f64,
}

impl Default for AccuracyOptions {
    fn default() -> Self {
        Self {
            gamma: 1e-2,
            alpha_bar: None,
            alpha_bar_max: 1e3,
            bisection_steps: 30,
            feedthrough_tol: 1e-10,
        }
    }
}

/// Gains reaching a prescribed `γ`, with the intermediate quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyDesign {
    pub result: SynthesisResult,
    pub zeta: f64,
    pub alpha_bar: f64,
    #[serde(with = "crate::serde_mat")]
    pub f: Mat,
}

fn violated(name: &str, detail: String) -> Error {
    Error::ConditionsViolated(vec![format!("{name}: {detail}")])
}

fn solve_at(
    prob: &SynthesisProblem,
    alpha_bar: f64,
    backend: &dyn SdpBackend,
) -> Result<Option<DecayRateSolution>> {
    Ok(decay_rate_lmi(prob, alpha_bar, true, backend)?.feasible())
}

/// Largest `ᾱ` (to bisection accuracy) at which the matched decay-rate
/// LMI is feasible.
fn sup_alpha_bar(
    prob: &SynthesisProblem,
    opts: &AccuracyOptions,
    backend: &dyn SdpBackend,
) -> Result<Option<f64>> {
    let mut lo = 0.0;
    let mut hi = 1e-3;
    while hi <= opts.alpha_bar_max {
        if solve_at(prob, hi, backend)?.is_none() {
            break;
        }
        lo = hi;
        hi *= 4.0;
    }
    if lo == 0.0 {
        return Ok(None);
    }
    if hi > opts.alpha_bar_max {
        return Ok(Some(lo));
    }
    for _ in 0..opts.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if solve_at(prob, mid, backend)?.is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-3 * lo {
            break;
        }
    }
    Ok(Some(lo))
}

/// Observer gains whose error dynamics reach performance level
/// `opts.gamma` from the output-matched decay-rate certificate.
pub fn design_arbitrary_accuracy(
    prob: &SynthesisProblem,
    opts: &AccuracyOptions,
    backend: &dyn SdpBackend,
) -> Result<AccuracyDesign> {
    prob.validate()?;
    let gamma = opts.gamma;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidOption(format!(
            "γ must be positive, got {gamma}"
        )));
    }
    let aug = &prob.aug;

    let feed = &aug.d_q + &prob.l2 * &aug.d;
    let feed_max = max_abs(&feed);
    if feed_max > opts.feedthrough_tol {
        return Err(violated(
            "feedthrough cancellation 𝒟_q + L₂𝒟 = 0",
            format!("max entry {feed_max:e}"),
        ));
    }

    let alpha_bar = match opts.alpha_bar {
        Some(v) if v > 0.0 => v,
        Some(v) => return Err(Error::InvalidOption(format!("ᾱ must be positive, got {v}"))),
        None => {
            let sup = sup_alpha_bar(prob, opts, backend)?.ok_or_else(|| {
                violated(
                    "output-matched decay-rate LMI",
                    "infeasible for every ᾱ in the search range".into(),
                )
            })?;
            0.5 * sup
        }
    };
    let sol = match decay_rate_lmi(prob, alpha_bar, true, backend)? {
        LmiOutcome::Feasible(s) => s,
        LmiOutcome::Infeasible(why) | LmiOutcome::Inconclusive(why) => {
            return Err(violated(
                "output-matched decay-rate LMI",
                format!("at ᾱ = {alpha_bar}: {why}"),
            ))
        }
    };
    let f = sol.f.clone().expect("matching equalities requested");
    let alpha = 0.5 * alpha_bar;

    // Largest μ₁ with μ₁HᵀH ⪯ 2(ᾱ − α)𝒫.
    let pinv_ht = linalg::solve_linear(sol.p.as_mat(), &prob.h.transpose())?;
    let hph = SymMat::symmetrize(&prob.h * pinv_ht);
    let lmax = if hph.dim() == 0 {
        0.0
    } else {
        linalg::lambda_max(&hph)?
    };
    let mu1 = if lmax > 0.0 {
        2.0 * (alpha_bar - alpha) / lmax
    } else {
        1.0
    };
    let mu2 = gamma * gamma * mu1;
    let zeta = 1.0 / (2.0 * mu1 * gamma * gamma);

    let ctf = aug.c.transpose() * f.transpose();
    let ftf_c = &ctf * &f;
    let y_tilde = &sol.y - &ftf_c * zeta;

    // The linear equalities imply the quadratic ones; confirm numerically.
    let scale = 1.0 + max_abs(&ftf_c);
    let quad_d = max_abs(&(&ftf_c * &aug.d)) / scale;
    let quad_df = max_abs(&(&ftf_c * &aug.d_f)) / scale;
    if quad_d > 1e-8 || quad_df > 1e-8 {
        return Err(violated(
            "𝒞ᵀℱᵀℱ𝒟 = 0 and 𝒞ᵀℱᵀℱ𝒟_f = 0",
            format!("relative residuals {quad_d:e}, {quad_df:e}"),
        ));
    }

    let mut at = prob.clone();
    at.alpha = alpha;
    at.options.eps_pd = at.options.eps_pd.min(1.0);
    let mut cert = Certificate {
        p: sol.p.clone(),
        y: y_tilde,
        theta: sol.theta.clone(),
        mu1,
        mu2,
        alpha,
        margin: f64::NAN,
    };
    let audit = audit_certificate(&at, &cert)?;
    cert.margin = -audit.max_eigenvalue;
    if !audit.passed {
        return Err(Error::AuditFailed(format!(
            "performance block at α = {alpha}: λ_max = {:e}, λ_min(P) = {:e}",
            audit.max_eigenvalue, audit.lambda_min_p
        )));
    }
    let mut result = extract_gains(&cert, &at)?;
    result.diagnostics.backend = backend.name().to_string();
    result.diagnostics.audit_max_eigenvalue = audit.max_eigenvalue;
    result
        .diagnostics
        .notes
        .push(format!("ᾱ = {alpha_bar:e}, ζ = {zeta:e}"));
    Ok(AccuracyDesign {
        result,
        zeta,
        alpha_bar,
        f,
    })
}
