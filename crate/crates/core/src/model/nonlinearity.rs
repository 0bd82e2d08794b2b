//! Named registry of memoryless nonlinearities `f(t, y, q)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const REGISTERED: &[&str] = &["zero", "q_abs_q", "saturation", "sin"];

/// Serializable reference to a registry nonlinearity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityDescriptor {
    pub name: String,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub params: Vec<f64>,
}

impl NonlinearityDescriptor {
    pub fn new(name: &str, input_dim: usize, output_dim: usize, params: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            input_dim,
            output_dim,
            params,
        }
    }

    /// The zero map between empty spaces.
    pub fn none() -> Self {
        Self::new("zero", 0, 0, vec![])
    }

    pub fn q_abs_q(dim: usize) -> Self {
        Self::new("q_abs_q", dim, dim, vec![])
    }

    pub fn saturation(dim: usize, level: f64) -> Self {
        Self::new("saturation", dim, dim, vec![level])
    }

    pub fn sin(dim: usize) -> Self {
        Self::new("sin", dim, dim, vec![])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Zero,
    /// Componentwise `q |q|`.
    QAbsQ,
    /// Componentwise clamp to `[-level, level]`.
    Saturation {
        level: f64,
    },
    /// Componentwise `gain * sin(q)`.
    Sin {
        gain: f64,
    },
}

/// A resolved registry entry with fixed dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Nonlinearity {
    pub kind: Kind,
    pub input_dim: usize,
    pub output_dim: usize,
    descriptor: NonlinearityDescriptor,
}

impl Nonlinearity {
    pub fn resolve(d: &NonlinearityDescriptor) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidParams {
            name: d.name.clone(),
            reason: reason.to_string(),
        };
        let elementwise = || {
            if d.input_dim != d.output_dim {
                Err(Error::Dimension {
                    what: format!("`{}` output dimension (componentwise map)", d.name),
                    expected: d.input_dim,
                    found: d.output_dim,
                })
            } else {
                Ok(())
            }
        };
        let kind = match d.name.as_str() {
            "zero" => Kind::Zero,
            "q_abs_q" => {
                elementwise()?;
                if !d.params.is_empty() {
                    return Err(bad("takes no parameters"));
                }
                Kind::QAbsQ
            }
            "saturation" => {
                elementwise()?;
                let level = match d.params.as_slice() {
                    [] => 1.0,
                    [l] => *l,
                    _ => return Err(bad("expects at most one parameter (level)")),
                };
                if !(level.is_finite() && level > 0.0) {
                    return Err(bad("level must be positive"));
                }
                Kind::Saturation { level }
            }
            "sin" => {
                elementwise()?;
                let gain = match d.params.as_slice() {
                    [] => 1.0,
                    [g] => *g,
                    _ => return Err(bad("expects at most one parameter (gain)")),
                };
                if !gain.is_finite() {
                    return Err(bad("gain must be finite"));
                }
                Kind::Sin { gain }
            }
            other => {
                return Err(Error::UnknownNonlinearity {
                    name: other.to_string(),
                    available: REGISTERED.join(", "),
                })
            }
        };
        Ok(Self {
            kind,
            input_dim: d.input_dim,
            output_dim: d.output_dim,
            descriptor: d.clone(),
        })
    }

    pub fn descriptor(&self) -> &NonlinearityDescriptor {
        &self.descriptor
    }

    pub fn name(&self) -> &str {
        &self.descriptor.name
    }

    /// Global Lipschitz constant in `q`, if the entry has one.
    pub fn lipschitz_constant(&self) -> Option<f64> {
        match self.kind {
            Kind::Zero => Some(0.0),
            Kind::QAbsQ => None,
            Kind::Saturation { .. } => Some(1.0),
            Kind::Sin { gain } => Some(gain.abs()),
        }
    }

    /// Largest componentwise slope `|∂f/∂q|` over the box `|q_i| <= max |q_i|`.
    pub fn local_slope(&self, q: &Vector) -> f64 {
        match self.kind {
            Kind::QAbsQ => 2.0 * q.amax(),
            _ => self.lipschitz_constant().unwrap_or(0.0),
        }
    }

    /// Evaluates `f(t, y, q)`. The registry entries are time and output
    /// invariant, but the signature keeps room for ones that are not.
    pub fn eval(&self, _t: f64, _y: &Vector, q: &Vector) -> Result<Vector> {
        if q.len() != self.input_dim {
            return Err(Error::Dimension {
                what: format!("argument of `{}`", self.name()),
                expected: self.input_dim,
                found: q.len(),
            });
        }
        Ok(match self.kind {
            Kind::Zero => Vector::zeros(self.output_dim),
            Kind::QAbsQ => q.map(|v| v * v.abs()),
            Kind::Saturation { level } => q.map(|v| v.clamp(-level, level)),
            Kind::Sin { gain } => q.map(|v| gain * v.sin()),
        })
    }
}

pub fn eval_nonlinearity(
    d: &NonlinearityDescriptor,
    t: f64,
    y: &Vector,
    q: &Vector,
) -> Result<Vector> {
    Nonlinearity::resolve(d)?.eval(t, y, q)
}

/// `f = [f1(t, y, q1); f2(t, q2)]` over `q = [q1; q2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedNonlinearity {
    pub f1: Nonlinearity,
    pub f2: Nonlinearity,
}

impl StackedNonlinearity {
    pub fn new(f1: Nonlinearity, f2: Nonlinearity) -> Self {
        Self { f1, f2 }
    }

    pub fn n_q1(&self) -> usize {
        self.f1.input_dim
    }
    pub fn n_q2(&self) -> usize {
        self.f2.input_dim
    }
    pub fn n_f1(&self) -> usize {
        self.f1.output_dim
    }
    pub fn n_f2(&self) -> usize {
        self.f2.output_dim
    }
    pub fn n_q(&self) -> usize {
        self.n_q1() + self.n_q2()
    }
    pub fn n_f(&self) -> usize {
        self.n_f1() + self.n_f2()
    }

    pub fn eval(&self, t: f64, y: &Vector, q: &Vector) -> Result<Vector> {
        if q.len() != self.n_q() {
            return Err(Error::Dimension {
                what: "stacked nonlinearity argument".into(),
                expected: self.n_q(),
                found: q.len(),
            });
        }
        let q1 = q.rows(0, self.n_q1()).into_owned();
        let q2 = q.rows(self.n_q1(), self.n_q2()).into_owned();
        let f1 = self.f1.eval(t, y, &q1)?;
        let f2 = self.f2.eval(t, y, &q2)?;
        let mut out = Vector::zeros(self.n_f());
        out.rows_mut(0, f1.len()).copy_from(&f1);
        out.rows_mut(f1.len(), f2.len()).copy_from(&f2);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn q_abs_q_is_signed_square() {
        let f = eval_nonlinearity(
            &NonlinearityDescriptor::q_abs_q(1),
            0.0,
            &v(&[]),
            &v(&[-2.0]),
        )
        .unwrap();
        assert_eq!(f[0], -4.0);
    }

    #[test]
    fn zero_and_sin() {
        let z = eval_nonlinearity(
            &NonlinearityDescriptor::new("zero", 2, 3, vec![]),
            1.0,
            &v(&[5.0]),
            &v(&[1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(z, Vector::zeros(3));
        let s =
            eval_nonlinearity(&NonlinearityDescriptor::sin(1), 0.0, &v(&[]), &v(&[0.0])).unwrap();
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn saturation_clamps() {
        let d = NonlinearityDescriptor::saturation(3, 1.0);
        let f = eval_nonlinearity(&d, 0.0, &v(&[]), &v(&[-3.0, 0.25, 7.0])).unwrap();
        assert_eq!(f, v(&[-1.0, 0.25, 1.0]));
    }

    #[test]
    fn unknown_name_lists_registry() {
        let err =
            Nonlinearity::resolve(&NonlinearityDescriptor::new("tanh", 1, 1, vec![])).unwrap_err();
        match err {
            Error::UnknownNonlinearity { available, .. } => assert!(available.contains("q_abs_q")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn dimension_checks() {
        assert!(
            Nonlinearity::resolve(&NonlinearityDescriptor::new("q_abs_q", 2, 1, vec![])).is_err()
        );
        let f = Nonlinearity::resolve(&NonlinearityDescriptor::q_abs_q(2)).unwrap();
        assert!(f.eval(0.0, &v(&[]), &v(&[1.0])).is_err());
        assert!(Nonlinearity::resolve(&NonlinearityDescriptor::saturation(1, -1.0)).is_err());
    }

    #[test]
    fn stacked_is_concatenation() {
        let f1 = Nonlinearity::resolve(&NonlinearityDescriptor::q_abs_q(1)).unwrap();
        let f2 = Nonlinearity::resolve(&NonlinearityDescriptor::saturation(2, 0.5)).unwrap();
        let st = StackedNonlinearity::new(f1.clone(), f2.clone());
        let y = v(&[0.3]);
        let q = v(&[-1.5, 0.2, 2.0]);
        let f = st.eval(0.0, &y, &q).unwrap();
        let a = f1.eval(0.0, &y, &v(&[-1.5])).unwrap();
        let b = f2.eval(0.0, &y, &v(&[0.2, 2.0])).unwrap();
        assert_eq!(f, v(&[a[0], b[0], b[1]]));
    }
}
