//! Observer synthesis: the performance LMI, its μ₂-minimizing sweep over
//! decay rates, the arbitrary-accuracy design and the structural rank tests
//! that predict feasibility.

mod accuracy;
pub mod conditions;
mod gevp;
pub mod lmis;

pub use accuracy::{design_arbitrary_accuracy, AccuracyDesign, AccuracyOptions};

pub use conditions::{
    check_condition1, check_detectability, check_lemma8_conditions,
    output_matching_rank_conditions, pbh_detectable, ConditionItem, ConditionReport, RankWitness,
};
pub use lmis::{
    assemble_decay_rate_block, detectable_by_lmi, solve_decay_rate_lmi, solve_lemma7,
    DecayRateSolution, DetectabilityCertificate, LmiOutcome, OutputMatchedOptions,
    OutputMatchedSolution,
};

pub use gevp::{
    alpha_grid_points, solve_feasibility, solve_gevp, solve_gevp_bisection, solve_gevp_over_l2,
    Feasibility,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, expect_shape, Mat, SymMat};
use crate::model::AugmentedPlant;
use crate::multipliers::MultiplierFamily;
use crate::sdp::{self, SdpBackend};

/// How `μ₁` enters the LMI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mu1Policy {
    Fixed(f64),
    Free { min: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaGrid {
    /// `n` log-spaced points in `[alpha_max·1e-3, alpha_max]`.
    Log {
        n: usize,
        alpha_max: f64,
    },
    /// `n` evenly spaced points in `(0, alpha_max]`.
    Linear {
        n: usize,
        alpha_max: f64,
    },
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// `⪯ 0` is imposed as `⪯ −margin·I`.
    pub margin: f64,
    /// `≻ 0` is imposed as `⪰ eps_pd·I`.
    pub eps_pd: f64,
    /// Largest eigenvalue tolerated by the independent certificate audit.
    pub audit_margin: f64,
    pub mu1: Mu1Policy,
    pub alpha_grid: AlphaGrid,
    pub mu2_bracket: (f64, f64),
    pub bisection_rel_tol: f64,
    /// Optional bound `‖(𝒫, 𝒴, θ)‖₂ <= R` on the decision variables.
    pub decision_radius: Option<f64>,
    pub parallel: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            margin: 1e-7,
            eps_pd: 1e-7,
            audit_margin: 1e-6,
            mu1: Mu1Policy::Fixed(1.0),
            alpha_grid: AlphaGrid::Log {
                n: 20,
                alpha_max: 10.0,
            },
            mu2_bracket: (0.0, 1e6),
            bisection_rel_tol: 1e-3,
            decision_radius: None,
            parallel: true,
        }
    }
}

/// Data for the performance LMI at a fixed `L₂` and decay rate `α`.
#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub aug: AugmentedPlant,
    pub fam: MultiplierFamily,
    pub h: Mat,
    pub l2: Mat,
    pub alpha: f64,
    pub options: SynthesisOptions,
}

impl SynthesisProblem {
    pub fn new(aug: AugmentedPlant, fam: MultiplierFamily, h: Mat, l2: Mat) -> Result<Self> {
        let prob = Self {
            aug,
            fam,
            h,
            l2,
            alpha: 0.0,
            options: SynthesisOptions::default(),
        };
        prob.validate()?;
        Ok(prob)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_options(mut self, options: SynthesisOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.aug;
        expect_shape(&self.h, self.h.nrows(), a.n_xi(), "H")?;
        expect_shape(&self.l2, a.n_q(), a.n_y(), "L2")?;
        if self.fam.dim != a.n_q() + a.n_f() {
            return Err(Error::Dimension {
                what: "multiplier dimension (n_q + n_f)".into(),
                expected: a.n_q() + a.n_f(),
                found: self.fam.dim,
            });
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidOption(format!(
                "decay rate must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        linalg::ensure_finite(&self.h, "H")?;
        linalg::ensure_finite(&self.l2, "L2")?;
        Ok(())
    }

    /// `Γ = [𝒞_q + L₂𝒞, 𝒟_qf, −𝒟_q − L₂𝒟; 0, I, 0]`.
    pub fn gamma_matrix(&self) -> Mat {
        let a = &self.aug;
        let (nxi, nf, nv, nq) = (a.n_xi(), a.n_f(), a.n_v(), a.n_q());
        let mut g = Mat::zeros(nq + nf, nxi + nf + nv);
        g.view_mut((0, 0), (nq, nxi))
            .copy_from(&(&a.c_q + &self.l2 * &a.c));
        g.view_mut((0, nxi), (nq, nf)).copy_from(&a.d_qf);
        g.view_mut((0, nxi + nf), (nq, nv))
            .copy_from(&(-(&a.d_q + &self.l2 * &a.d)));
        g.view_mut((nq, nxi), (nf, nf)).fill_with_identity();
        g
    }
}

/// `Φ_α = 𝒫𝒜 + 𝒜ᵀ𝒫 + 𝒴𝒞 + 𝒞ᵀ𝒴ᵀ + 2α𝒫`.
pub fn assemble_phi_alpha(aug: &AugmentedPlant, p: &Mat, y: &Mat, alpha: f64) -> SymMat {
    SymMat::symmetrize(phi_alpha_raw(&aug.a, &aug.c, p, y, alpha))
}

pub(crate) fn phi_alpha_raw(a: &Mat, c: &Mat, p: &Mat, y: &Mat, alpha: f64) -> Mat {
    let pa = p * a;
    let yc = y * c;
    &pa + pa.transpose() + &yc + yc.transpose() + p * (2.0 * alpha)
}

/// `Ξ + ΓᵀMΓ` at the given candidate.
pub fn assemble_theorem1_block(
    prob: &SynthesisProblem,
    p: &Mat,
    y: &Mat,
    theta: &[f64],
    mu1: f64,
    mu2: f64,
) -> Result<SymMat> {
    let a = &prob.aug;
    expect_shape(p, a.n_xi(), a.n_xi(), "P")?;
    expect_shape(y, a.n_xi(), a.n_y(), "Y")?;
    if theta.len() != prob.fam.n_params() {
        return Err(Error::Dimension {
            what: "multiplier parameters".into(),
            expected: prob.fam.n_params(),
            found: theta.len(),
        });
    }
    let m = prob.fam.eval(theta)?;
    Ok(SymMat::symmetrize(observer_block_raw(
        prob,
        &prob.gamma_matrix(),
        p,
        y,
        m.as_mat(),
        mu1,
        mu2,
    )))
}

pub(crate) fn observer_block_raw(
    prob: &SynthesisProblem,
    gamma: &Mat,
    p: &Mat,
    y: &Mat,
    m: &Mat,
    mu1: f64,
    mu2: f64,
) -> Mat {
    let a = &prob.aug;
    let (nxi, nf, nv) = (a.n_xi(), a.n_f(), a.n_v());
    let mut xi = Mat::zeros(nxi + nf + nv, nxi + nf + nv);
    let b11 = phi_alpha_raw(&a.a, &a.c, p, y, prob.alpha) + prob.h.transpose() * &prob.h * mu1;
    let b12 = p * &a.b_f + y * &a.d_f;
    let b13 = -(p * &a.b + y * &a.d);
    xi.view_mut((0, 0), (nxi, nxi)).copy_from(&b11);
    xi.view_mut((0, nxi), (nxi, nf)).copy_from(&b12);
    xi.view_mut((nxi, 0), (nf, nxi)).copy_from(&b12.transpose());
    xi.view_mut((0, nxi + nf), (nxi, nv)).copy_from(&b13);
    xi.view_mut((nxi + nf, 0), (nv, nxi))
        .copy_from(&b13.transpose());
    xi.view_mut((nxi + nf, nxi + nf), (nv, nv))
        .copy_from(&(Mat::identity(nv, nv) * -mu2));
    xi + gamma.transpose() * m * gamma
}

/// Decision variables of the performance LMI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub p: SymMat,
    #[serde(with = "crate::serde_mat")]
    pub y: Mat,
    pub theta: Vec<f64>,
    pub mu1: f64,
    pub mu2: f64,
    pub alpha: f64,
    /// `−λ_max` of the assembled block at audit time.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub status: String,
    pub mu2: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub backend: String,
    pub iterations: u32,
    pub alpha: f64,
    pub audit_max_eigenvalue: f64,
    pub lambda_min_p: f64,
    pub alpha_sweep: Vec<AlphaPoint>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    #[serde(with = "crate::serde_mat")]
    pub l1: Mat,
    #[serde(with = "crate::serde_mat")]
    pub l2: Mat,
    pub cert: Certificate,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub diagnostics: Diagnostics,
}

/// Outcome of the independent eigenvalue recheck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audit {
    pub max_eigenvalue: f64,
    pub lambda_min_p: f64,
    pub passed: bool,
}

/// Re-assembles the block from the certificate values and checks it by
/// eigensolve, ignoring whatever the backend claimed.
pub fn audit_certificate(prob: &SynthesisProblem, cert: &Certificate) -> Result<Audit> {
    let opts = &prob.options;
    let mut at = prob.clone();
    at.alpha = cert.alpha;
    let block = assemble_theorem1_block(
        &at,
        cert.p.as_mat(),
        &cert.y,
        &cert.theta,
        cert.mu1,
        cert.mu2,
    )?;
    let nsd = linalg::is_neg_semidef(&block, opts.audit_margin)?;
    let lambda_min_p = linalg::lambda_min(&cert.p)?;
    let passed = nsd.holds
        && lambda_min_p >= opts.eps_pd * (1.0 - 1e-6)
        && prob.fam.in_cone(&cert.theta)
        && cert.mu1 > 0.0
        && cert.mu2 >= 0.0;
    Ok(Audit {
        max_eigenvalue: nsd.max_eigenvalue,
        lambda_min_p,
        passed,
    })
}

/// `L₁ = 𝒫⁻¹𝒴`, `γ = √(μ₂/μ₁)`, `β₁ = λ_min(𝒫)`, `β₂ = λ_max(𝒫)`.
pub fn extract_gains(cert: &Certificate, prob: &SynthesisProblem) -> Result<SynthesisResult> {
    let l1 = linalg::solve_linear(cert.p.as_mat(), &cert.y)?;
    let eig = linalg::sym_eig(&cert.p)?;
    let beta1 = eig.values.first().copied().unwrap_or(0.0);
    let beta2 = eig.values.last().copied().unwrap_or(0.0);
    if !(cert.mu1 > 0.0) {
        return Err(Error::InvalidOption(format!(
            "μ1 must be positive, got {}",
            cert.mu1
        )));
    }
    Ok(SynthesisResult {
        l1,
        l2: prob.l2.clone(),
        cert: cert.clone(),
        gamma: (cert.mu2.max(0.0) / cert.mu1).sqrt(),
        beta1,
        beta2,
        diagnostics: Diagnostics {
            alpha: cert.alpha,
            lambda_min_p: beta1,
            ..Default::default()
        },
    })
}

/// Backend named by `UIO_SDP_BACKEND`, defaulting to the built-in one.
pub fn backend_from_env() -> Result<Box<dyn SdpBackend>> {
    let name = std::env::var("UIO_SDP_BACKEND").ok();
    sdp::backend_by_name(name.as_deref())
}
