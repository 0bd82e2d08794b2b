//! Linearly parameterized incremental multiplier matrices.
//!
//! A symmetric `M` certifies a nonlinearity `f` when
//! `[Δq; Δf]ᵀ M [Δq; Δf] >= 0` for all argument pairs, with
//! `Δq = q̃ − q` and `Δf = f(t,y,q̃) − f(t,y,q)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat, Vector};
use crate::model::nonlinearity::{Kind, Nonlinearity, StackedNonlinearity};

/// Sign constraint on one family parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cone {
    Free,
    Nonneg,
}

impl Cone {
    pub fn contains(self, v: f64) -> bool {
        match self {
            Cone::Free => true,
            Cone::Nonneg => v >= 0.0,
        }
    }
}

/// `M(θ) = Σ θ_i basis_i` over the ordering `[q; f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierFamily {
    pub dim: usize,
    pub basis: Vec<SymMat>,
    pub cones: Vec<Cone>,
    pub note: String,
}

impl MultiplierFamily {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            basis: vec![],
            cones: vec![],
            note: "no multiplier: M = 0".into(),
        }
    }

    pub fn custom(dim: usize, basis: Vec<SymMat>, cones: Vec<Cone>) -> Result<Self> {
        if basis.len() != cones.len() {
            return Err(Error::Dimension {
                what: "multiplier cone flags".into(),
                expected: basis.len(),
                found: cones.len(),
            });
        }
        if let Some(b) = basis.iter().find(|b| b.dim() != dim) {
            return Err(Error::Dimension {
                what: "multiplier basis element size".into(),
                expected: dim,
                found: b.dim(),
            });
        }
        Ok(Self {
            dim,
            basis,
            cones,
            note: "user-supplied basis".into(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.basis.len()
    }

    pub fn in_cone(&self, theta: &[f64]) -> bool {
        theta.len() == self.cones.len()
            && theta.iter().zip(&self.cones).all(|(v, c)| c.contains(*v))
    }

    pub fn eval(&self, theta: &[f64]) -> Result<SymMat> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension {
                what: "multiplier parameters".into(),
                expected: self.n_params(),
                found: theta.len(),
            });
        }
        let mut m = Mat::zeros(self.dim, self.dim);
        for (t, b) in theta.iter().zip(&self.basis) {
            m += b.as_mat() * *t;
        }
        Ok(SymMat::symmetrize(m))
    }
}

/// Family bound to a registry nonlinearity, over `[q; f]` of that entry.
pub fn family_for(nl: &Nonlinearity) -> Result<MultiplierFamily> {
    let (nq, nf) = (nl.input_dim, nl.output_dim);
    let dim = nq + nf;
    match nl.kind {
        Kind::Zero => Ok(MultiplierFamily::empty(dim)),
        Kind::QAbsQ => {
            // q|q| is monotone: Δq·Δf >= 0 componentwise.
            let mut b = Mat::zeros(dim, dim);
            for i in 0..nq {
                b[(i, nq + i)] = 1.0;
                b[(nq + i, i)] = 1.0;
            }
            Ok(MultiplierFamily {
                dim,
                basis: vec![SymMat::symmetrize(b)],
                cones: vec![Cone::Nonneg],
                note: "monotone: kappa * [[0, I], [I, 0]], kappa >= 0".into(),
            })
        }
        Kind::Saturation { .. } | Kind::Sin { .. } => {
            let kappa = nl
                .lipschitz_constant()
                .expect("registry entry is Lipschitz");
            if kappa == 0.0 {
                return Ok(MultiplierFamily::empty(dim));
            }
            let mut diag = vec![1.0; nq];
            diag.extend(std::iter::repeat_n(-1.0 / (kappa * kappa), nf));
            Ok(MultiplierFamily {
                dim,
                basis: vec![SymMat::from_diagonal(&diag)],
                cones: vec![Cone::Nonneg],
                note: format!("Lipschitz {kappa}: theta * [[I, 0], [0, -I/kappa^2]], theta >= 0"),
            })
        }
    }
}

/// Embeds per-component families into the stacked `[q1; q2; f1; f2]`
/// ordering. Parameters are the concatenation of both families' parameters.
pub fn stacked_family(
    f: &StackedNonlinearity,
    fam1: &MultiplierFamily,
    fam2: &MultiplierFamily,
) -> Result<MultiplierFamily> {
    let (nq1, nq2, nf1, nf2) = (f.n_q1(), f.n_q2(), f.n_f1(), f.n_f2());
    let nq = nq1 + nq2;
    let dim = nq + f.n_f();
    let map1: Vec<usize> = (0..nq1).chain(nq..nq + nf1).collect();
    let map2: Vec<usize> = (nq1..nq).chain(nq + nf1..nq + nf1 + nf2).collect();
    let mut basis = vec![];
    let mut cones = vec![];
    for (fam, map) in [(fam1, &map1), (fam2, &map2)] {
        if fam.dim != map.len() {
            return Err(Error::Dimension {
                what: "component multiplier family size".into(),
                expected: map.len(),
                found: fam.dim,
            });
        }
        for (b, c) in fam.basis.iter().zip(&fam.cones) {
            let mut m = Mat::zeros(dim, dim);
            for (i, &gi) in map.iter().enumerate() {
                for (j, &gj) in map.iter().enumerate() {
                    m[(gi, gj)] = b[(i, j)];
                }
            }
            basis.push(SymMat::symmetrize(m));
            cones.push(*c);
        }
    }
    Ok(MultiplierFamily {
        dim,
        basis,
        cones,
        note: format!("f1: {}; f2: {}", fam1.note, fam2.note),
    })
}

/// Registry families for both components of a stacked nonlinearity.
pub fn family_for_stacked(f: &StackedNonlinearity) -> Result<MultiplierFamily> {
    stacked_family(f, &family_for(&f.f1)?, &family_for(&f.f2)?)
}

/// Result of a sampled incremental-constraint check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqcReport {
    pub passed: bool,
    pub samples: usize,
    pub min_value: f64,
    /// `(Δq, Δf)` at the minimum.
    pub witness: (Vec<f64>, Vec<f64>),
}

pub const DQC_FLOOR: f64 = -1e-12;
pub const DQC_BOX: f64 = 10.0;

/// Samples `(t, y, q, q̃)` uniformly in `[-10, 10]` per coordinate and
/// checks the quadratic form against `-1e-12`.
pub fn verify_dqc(
    fam: &MultiplierFamily,
    theta: &[f64],
    nl: &Nonlinearity,
    n_y: usize,
    samples: usize,
    seed: u64,
) -> Result<DqcReport> {
    let f = |t: f64, y: &Vector, q: &Vector| nl.eval(t, y, q);
    sample_dqc(
        fam,
        theta,
        nl.input_dim,
        nl.output_dim,
        n_y,
        samples,
        seed,
        f,
    )
}

pub fn verify_dqc_stacked(
    fam: &MultiplierFamily,
    theta: &[f64],
    f: &StackedNonlinearity,
    n_y: usize,
    samples: usize,
    seed: u64,
) -> Result<DqcReport> {
    let eval = |t: f64, y: &Vector, q: &Vector| f.eval(t, y, q);
    sample_dqc(fam, theta, f.n_q(), f.n_f(), n_y, samples, seed, eval)
}

#[allow(clippy::too_many_arguments)]
fn sample_dqc(
    fam: &MultiplierFamily,
    theta: &[f64],
    nq: usize,
    nf: usize,
    n_y: usize,
    samples: usize,
    seed: u64,
    f: impl Fn(f64, &Vector, &Vector) -> Result<Vector>,
) -> Result<DqcReport> {
    if samples == 0 {
        return Err(Error::InvalidOption(
            "at least one sample is required".into(),
        ));
    }
    if fam.dim != nq + nf {
        return Err(Error::Dimension {
            what: "multiplier family size".into(),
            expected: nq + nf,
            found: fam.dim,
        });
    }
    let m = fam.eval(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| Vector::from_fn(n, |_, _| rng.gen_range(-DQC_BOX..=DQC_BOX));
    let mut min_value = f64::INFINITY;
    let mut witness = (vec![], vec![]);
    for _ in 0..samples {
        let t = draw(1)[0];
        let y = draw(n_y);
        let q = draw(nq);
        let q_tilde = draw(nq);
        let dq = &q_tilde - &q;
        let df = f(t, &y, &q_tilde)? - f(t, &y, &q)?;
        let mut z = Vector::zeros(nq + nf);
        z.rows_mut(0, nq).copy_from(&dq);
        z.rows_mut(nq, nf).copy_from(&df);
        let value = (z.transpose() * m.as_mat() * &z)[0];
        if value < min_value {
            min_value = value;
            witness = (dq.iter().copied().collect(), df.iter().copied().collect());
        }
    }
    Ok(DqcReport {
        passed: min_value >= DQC_FLOOR,
        samples,
        min_value,
        witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NonlinearityDescriptor;

    fn nl(d: NonlinearityDescriptor) -> Nonlinearity {
        Nonlinearity::resolve(&d).unwrap()
    }

    #[test]
    fn q_abs_q_family_shape() {
        let fam = family_for(&nl(NonlinearityDescriptor::q_abs_q(1))).unwrap();
        assert_eq!(fam.basis.len(), 1);
        assert_eq!(
            fam.basis[0].as_mat(),
            &Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert_eq!(fam.cones, vec![Cone::Nonneg]);
    }

    #[test]
    fn zero_family_is_empty() {
        let fam = family_for(&nl(NonlinearityDescriptor::new("zero", 2, 1, vec![]))).unwrap();
        assert!(fam.basis.is_empty());
        assert_eq!(fam.eval(&[]).unwrap(), SymMat::zeros(3));
    }

    #[test]
    fn saturation_family_is_lipschitz_form() {
        let fam = family_for(&nl(NonlinearityDescriptor::saturation(1, 1.0))).unwrap();
        assert_eq!(
            fam.basis[0].as_mat(),
            &Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])
        );
        assert_eq!(fam.cones, vec![Cone::Nonneg]);
    }

    /// Independent sign analysis: (a|a| − b|b|)(a − b) >= 0 for all a, b.
    #[test]
    fn q_abs_q_passes_sampling() {
        let f = nl(NonlinearityDescriptor::q_abs_q(1));
        let fam = family_for(&f).unwrap();
        let rep = verify_dqc(&fam, &[1.0], &f, 0, 10_000, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.min_value >= -1e-12);
        // the quadratic form is 2κ Δq Δf
        let (dq, df) = (&rep.witness.0, &rep.witness.1);
        assert!((rep.min_value - 2.0 * dq[0] * df[0]).abs() <= 1e-9 * (1.0 + rep.min_value.abs()));
    }

    #[test]
    fn saturation_passes_sampling() {
        let f = nl(NonlinearityDescriptor::saturation(1, 1.0));
        let fam = family_for(&f).unwrap();
        assert!(verify_dqc(&fam, &[1.0], &f, 2, 10_000, 2).unwrap().passed);
    }

    #[test]
    fn negative_parameter_fails_with_witness() {
        let f = nl(NonlinearityDescriptor::q_abs_q(1));
        let fam = family_for(&f).unwrap();
        assert!(!fam.in_cone(&[-1.0]));
        let rep = verify_dqc(&fam, &[-1.0], &f, 0, 1000, 3).unwrap();
        assert!(!rep.passed);
        assert!(rep.min_value < 0.0);
        assert!(rep.witness.0[0] != 0.0);
    }

    #[test]
    fn zero_multiplier_is_trivially_valid() {
        let f = nl(NonlinearityDescriptor::sin(2));
        let fam = family_for(&f).unwrap();
        let rep = verify_dqc(&fam, &[0.0], &f, 1, 500, 4).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.min_value, 0.0);
    }

    #[test]
    fn cone_sums_stay_valid() {
        let f = nl(NonlinearityDescriptor::sin(1));
        let fam = family_for(&f).unwrap();
        for (a, b) in [(0.3, 2.0), (1.0, 1.0), (5.0, 0.0)] {
            assert!(verify_dqc(&fam, &[a], &f, 0, 2000, 9).unwrap().passed);
            assert!(verify_dqc(&fam, &[b], &f, 0, 2000, 9).unwrap().passed);
            assert!(verify_dqc(&fam, &[a + b], &f, 0, 2000, 9).unwrap().passed);
        }
    }

    #[test]
    fn stacked_embedding_places_blocks() {
        let f1 = nl(NonlinearityDescriptor::q_abs_q(1));
        let f2 = nl(NonlinearityDescriptor::saturation(1, 2.0));
        let st = StackedNonlinearity::new(f1, f2);
        let fam = family_for_stacked(&st).unwrap();
        assert_eq!(fam.dim, 4);
        assert_eq!(fam.n_params(), 2);
        // ordering [q1, q2, f1, f2]
        assert_eq!(fam.basis[0][(0, 2)], 1.0);
        assert_eq!(fam.basis[1][(1, 1)], 1.0);
        assert_eq!(fam.basis[1][(3, 3)], -1.0);
        let rep = verify_dqc_stacked(&fam, &[2.0, 0.5], &st, 1, 5000, 5).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn custom_family_validates_sizes() {
        assert!(MultiplierFamily::custom(2, vec![SymMat::identity(3)], vec![Cone::Free]).is_err());
        assert!(MultiplierFamily::custom(2, vec![SymMat::identity(2)], vec![]).is_err());
        assert!(MultiplierFamily::custom(2, vec![SymMat::identity(2)], vec![Cone::Free]).is_ok());
    }
}
