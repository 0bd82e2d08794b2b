use serde::{Deserialize, Serialize};

use super::SimTrace;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::synthesis::SynthesisResult;

const REL_SLACK: f64 = 1.01;
const ABS_SLACK: f64 = 1e-6;

/// Trapezoidal `(∫‖s‖² dt)^{1/2}` on a uniform grid.
pub fn l2_norm(dt: f64, samples: &[Vector]) -> f64 {
    cumulative_sq(dt, samples)
        .last()
        .copied()
        .unwrap_or(0.0)
        .sqrt()
}

/// Running trapezoidal `∫‖s‖² dt`, starting at 0.
pub fn cumulative_sq(dt: f64, samples: &[Vector]) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    let mut prev: Option<f64> = None;
    for s in samples {
        let cur = s.norm_squared();
        if let Some(p) = prev {
            acc += 0.5 * dt * (p + cur);
        }
        out.push(acc);
        prev = Some(cur);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub passed: bool,
    /// `‖z‖₂` over the horizon and its certified bound.
    pub z_l2: f64,
    pub z_bound: f64,
    /// Largest `lhs / rhs` of the running energy bound.
    pub energy_worst_ratio: f64,
    /// Largest `‖e(t)‖ / bound(t)` and where it occurs.
    pub pointwise_worst_ratio: f64,
    pub pointwise_worst_t: f64,
    pub violations: usize,
    pub notes: Vec<String>,
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Evaluates `‖z‖₂ ≤ √(β₂/μ₁)‖e₀‖ + √(μ₂/μ₁)‖v‖₂` on every prefix of the
/// trace and `‖e(t)‖ ≤ e^{−α(t−t₀)}√(β₂/β₁)‖e₀‖ + √(μ₂/β₁)‖v‖₂` at every
/// sample.
pub fn evaluate_bounds(trace: &SimTrace, result: &SynthesisResult) -> BoundReport {
    let cert = &result.cert;
    let (b1, b2, mu1, mu2, alpha) = (
        result.beta1,
        result.beta2,
        cert.mu1,
        cert.mu2.max(0.0),
        cert.alpha,
    );
    let e0 = trace.e_norm.first().copied().unwrap_or(0.0);
    let t0 = trace.t.first().copied().unwrap_or(0.0);
    let mut rep = BoundReport {
        passed: true,
        z_l2: trace.z_l2(),
        z_bound: (b2 / mu1).sqrt() * e0 + (mu2 / mu1).sqrt() * trace.v_l2(),
        energy_worst_ratio: 0.0,
        pointwise_worst_ratio: 0.0,
        pointwise_worst_t: t0,
        violations: 0,
        notes: vec!["pointwise bound uses the constants √(β₂/β₁) and √(μ₂/β₁)".into()],
    };
    for k in 0..trace.len() {
        let v_l2 = trace.v_norm_sq_cum[k].sqrt();
        let lhs = trace.z_norm_sq_cum[k].sqrt();
        let rhs = (b2 / mu1).sqrt() * e0 + (mu2 / mu1).sqrt() * v_l2;
        rep.energy_worst_ratio = rep.energy_worst_ratio.max(ratio(lhs, rhs));
        let mut bad = lhs > REL_SLACK * rhs + ABS_SLACK;

        let lhs = trace.e_norm[k];
        let rhs =
            (-alpha * (trace.t[k] - t0)).exp() * (b2 / b1).sqrt() * e0 + (mu2 / b1).sqrt() * v_l2;
        let r = ratio(lhs, rhs);
        if r > rep.pointwise_worst_ratio {
            rep.pointwise_worst_ratio = r;
            rep.pointwise_worst_t = trace.t[k];
        }
        bad |= lhs > REL_SLACK * rhs + ABS_SLACK;
        if bad {
            rep.violations += 1;
        }
    }
    rep.passed = rep.violations == 0;
    if trace.v_extends_past_end {
        rep.notes
            .push("v is not supported inside the horizon; ‖v‖₂ is the truncated norm".into());
    }
    rep
}

/// As [`evaluate_bounds`], failing with [`Error::BoundViolation`] when a
/// bound is exceeded beyond 1% relative plus 1e-6 absolute slack.
pub fn verify_bounds(trace: &SimTrace, result: &SynthesisResult) -> Result<BoundReport> {
    let rep = evaluate_bounds(trace, result);
    if rep.passed {
        Ok(rep)
    } else {
        Err(Error::BoundViolation(format!(
            "{} sample(s) exceed the certified bounds; worst energy ratio {:.4}, worst pointwise ratio {:.4} at t = {}",
            rep.violations, rep.energy_worst_ratio, rep.pointwise_worst_ratio, rep.pointwise_worst_t
        )))
    }
}
