//! Named registry of known signals `g(t, y)` and exogenous test inputs `v(t)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

pub const REGISTERED: &[&str] = &[
    "zero",
    "constant",
    "sin",
    "output_linear",
    "inv_sqrt_log",
    "inv_sqrt_log_rate",
    "windowed_sine",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl Default for SignalDescriptor {
    fn default() -> Self {
        Self::zero()
    }
}

impl SignalDescriptor {
    pub fn new(name: &str, params: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            params,
        }
    }

    pub fn zero() -> Self {
        Self::new("zero", vec![])
    }

    pub fn is_zero(&self) -> bool {
        self.name == "zero"
    }

    /// Smoothly windowed sinusoids on `[t_on, t_off]`, one `(amplitude,
    /// frequency, phase)` triple per component, zero elsewhere.
    pub fn windowed_sine(t_on: f64, t_off: f64, components: &[(f64, f64, f64)]) -> Self {
        let mut params = vec![t_on, t_off];
        for &(a, w, p) in components {
            params.extend([a, w, p]);
        }
        Self::new("windowed_sine", params)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Zero,
    Constant(Vector),
    /// `amplitude * sin(freq * t + phase)` in every component.
    Sin {
        amplitude: f64,
        freq: f64,
        phase: f64,
    },
    /// `K y`.
    OutputLinear(Mat),
    /// `[(1+t)^(-1/2), ln(1+t)]`.
    InvSqrtLog,
    /// Time derivative of `InvSqrtLog`.
    InvSqrtLogRate,
    WindowedSine {
        t_on: f64,
        t_off: f64,
        comps: Vec<(f64, f64, f64)>,
    },
}

/// A resolved signal with fixed output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    kind: Kind,
    dim: usize,
    descriptor: SignalDescriptor,
}

impl Signal {
    /// Resolves `d` for an output of dimension `dim`; `n_y` is the measured
    /// output dimension (used by output-dependent entries).
    pub fn resolve(d: &SignalDescriptor, dim: usize, n_y: usize) -> Result<Self> {
        let bad = |reason: String| Error::InvalidParams {
            name: d.name.clone(),
            reason,
        };
        let p = &d.params;
        let kind = match d.name.as_str() {
            "zero" => Kind::Zero,
            "constant" => {
                if p.len() != dim {
                    return Err(bad(format!("expects {dim} values, got {}", p.len())));
                }
                Kind::Constant(Vector::from_column_slice(p))
            }
            "sin" => {
                let get = |i: usize, def: f64| p.get(i).copied().unwrap_or(def);
                if p.len() > 3 {
                    return Err(bad("expects at most [amplitude, frequency, phase]".into()));
                }
                Kind::Sin {
                    amplitude: get(0, 1.0),
                    freq: get(1, 1.0),
                    phase: get(2, 0.0),
                }
            }
            "output_linear" => {
                if p.len() != dim * n_y {
                    return Err(bad(format!(
                        "expects a {dim}x{n_y} row-major gain, got {} values",
                        p.len()
                    )));
                }
                Kind::OutputLinear(Mat::from_row_slice(dim, n_y, p))
            }
            "inv_sqrt_log" | "inv_sqrt_log_rate" => {
                if dim != 2 {
                    return Err(Error::Dimension {
                        what: format!("output of `{}`", d.name),
                        expected: 2,
                        found: dim,
                    });
                }
                if d.name == "inv_sqrt_log" {
                    Kind::InvSqrtLog
                } else {
                    Kind::InvSqrtLogRate
                }
            }
            "windowed_sine" => {
                if p.len() != 2 + 3 * dim {
                    return Err(bad(format!(
                        "expects [t_on, t_off] plus {dim} (amplitude, frequency, phase) triples"
                    )));
                }
                let (t_on, t_off) = (p[0], p[1]);
                if !(t_off > t_on) {
                    return Err(bad("window must satisfy t_off > t_on".into()));
                }
                let comps = p[2..].chunks(3).map(|c| (c[0], c[1], c[2])).collect();
                Kind::WindowedSine { t_on, t_off, comps }
            }
            other => {
                return Err(Error::UnknownSignal {
                    name: other.to_string(),
                    available: REGISTERED.join(", "),
                })
            }
        };
        if d.params.iter().any(|v| !v.is_finite()) {
            return Err(bad("parameters must be finite".into()));
        }
        Ok(Self {
            kind,
            dim,
            descriptor: d.clone(),
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            kind: Kind::Zero,
            dim,
            descriptor: SignalDescriptor::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptor(&self) -> &SignalDescriptor {
        &self.descriptor
    }

    pub fn is_zero(&self) -> bool {
        self.kind == Kind::Zero
    }

    pub fn depends_on_output(&self) -> bool {
        matches!(self.kind, Kind::OutputLinear(_))
    }

    /// End of the support, when the signal vanishes identically afterwards.
    pub fn support_end(&self) -> Option<f64> {
        match self.kind {
            Kind::Zero => Some(f64::NEG_INFINITY),
            Kind::WindowedSine { t_off, .. } => Some(t_off),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64, y: &Vector) -> Vector {
        match &self.kind {
            Kind::Zero => Vector::zeros(self.dim),
            Kind::Constant(c) => c.clone(),
            Kind::Sin {
                amplitude,
                freq,
                phase,
            } => Vector::from_element(self.dim, amplitude * (freq * t + phase).sin()),
            Kind::OutputLinear(k) => k * y,
            Kind::InvSqrtLog => {
                Vector::from_column_slice(&[1.0 / (1.0 + t).sqrt(), (1.0 + t).ln()])
            }
            Kind::InvSqrtLogRate => {
                Vector::from_column_slice(&[-0.5 * (1.0 + t).powf(-1.5), 1.0 / (1.0 + t)])
            }
            Kind::WindowedSine { t_on, t_off, comps } => {
                if t < *t_on || t > *t_off {
                    return Vector::zeros(self.dim);
                }
                let s = t - t_on;
                let window = (PI * s / (t_off - t_on)).sin().powi(2);
                Vector::from_iterator(
                    self.dim,
                    comps
                        .iter()
                        .map(|&(a, w, p)| a * (w * s + p).sin() * window),
                )
            }
        }
    }
}

/// Evaluates a registry hook of dimension `dim` at `(t, y)`.
pub fn eval_known_signal(d: &SignalDescriptor, dim: usize, t: f64, y: &Vector) -> Result<Vector> {
    Ok(Signal::resolve(d, dim, y.len())?.eval(t, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_hook_is_zero() {
        let y = Vector::from_column_slice(&[1.0, 2.0]);
        assert_eq!(
            eval_known_signal(&SignalDescriptor::default(), 3, 4.0, &y).unwrap(),
            Vector::zeros(3)
        );
    }

    #[test]
    fn constant_hook() {
        let d = SignalDescriptor::new("constant", vec![1.5, -2.0]);
        for t in [0.0, 3.0, -7.0] {
            let y = Vector::from_column_slice(&[t]);
            assert_eq!(
                eval_known_signal(&d, 2, t, &y).unwrap().as_slice(),
                &[1.5, -2.0]
            );
        }
        assert!(eval_known_signal(&d, 3, 0.0, &Vector::zeros(0)).is_err());
    }

    #[test]
    fn sine_input_hook() {
        let g = eval_known_signal(
            &SignalDescriptor::new("sin", vec![]),
            1,
            PI / 2.0,
            &Vector::zeros(0),
        )
        .unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn output_linear_reads_measurement() {
        let d = SignalDescriptor::new("output_linear", vec![2.0, 0.0, 0.0, -1.0]);
        let s = Signal::resolve(&d, 2, 2).unwrap();
        assert!(s.depends_on_output());
        let g = s.eval(0.0, &Vector::from_column_slice(&[3.0, 4.0]));
        assert_eq!(g.as_slice(), &[6.0, -4.0]);
    }

    #[test]
    fn rate_is_derivative_of_drift() {
        let w = Signal::resolve(&SignalDescriptor::new("inv_sqrt_log", vec![]), 2, 0).unwrap();
        let v = Signal::resolve(&SignalDescriptor::new("inv_sqrt_log_rate", vec![]), 2, 0).unwrap();
        let y = Vector::zeros(0);
        for t in [0.0, 0.7, 5.0, 29.0] {
            let h = 1e-5;
            let fd = (w.eval(t + h, &y) - w.eval(t - h, &y)) / (2.0 * h);
            assert!((fd - v.eval(t, &y)).norm() < 1e-8);
        }
    }

    #[test]
    fn windowed_sine_is_compactly_supported() {
        let d = SignalDescriptor::windowed_sine(1.0, 3.0, &[(2.0, 5.0, 0.3)]);
        let s = Signal::resolve(&d, 1, 0).unwrap();
        let y = Vector::zeros(0);
        assert_eq!(s.eval(0.5, &y)[0], 0.0);
        assert_eq!(s.eval(3.5, &y)[0], 0.0);
        assert!(s.eval(2.0, &y)[0].abs() > 0.0);
        assert_eq!(s.support_end(), Some(3.0));
    }

    #[test]
    fn unknown_signal() {
        assert!(matches!(
            Signal::resolve(&SignalDescriptor::new("chirp", vec![]), 1, 0),
            Err(Error::UnknownSignal { .. })
        ));
    }
}
