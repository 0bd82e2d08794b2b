//! Plant, exogenous-input model and the augmented plant built from them.
//!
//! Plant:
//! ```text
//! ẋ  = A x + B_f f1(t,y,q1) + g_x(t,y) + B w
//! q1 = C_q1 x + D_q1f f1 + g_q1(t,y) + D_q1 w
//! y  = C x + D_f f1 + g_y(t,y) + D w
//! ```
//! Exogenous model:
//! ```text
//! ẋm = A_m xm + B_mf f2(t,q2) + B_m v
//! q2 = C_q2 xm + D_q2f f2 + D_q2 v
//! w  = C_m xm + D_wf f2 + D_m v
//! ```

pub mod nonlinearity;
pub mod signal;

pub use nonlinearity::{
    eval_nonlinearity, Nonlinearity, NonlinearityDescriptor, StackedNonlinearity,
};
pub use signal::{eval_known_signal, Signal, SignalDescriptor};

use crate::error::{Error, Result};
use crate::linalg::{block, expect_shape, Mat, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: Mat,
    pub b_f: Mat,
    pub b: Mat,
    pub c_q1: Mat,
    pub d_q1f: Mat,
    pub d_q1: Mat,
    pub c: Mat,
    pub d_f: Mat,
    pub d: Mat,
    pub f1: NonlinearityDescriptor,
    pub g_x: SignalDescriptor,
    pub g_q1: SignalDescriptor,
    pub g_y: SignalDescriptor,
}

impl Plant {
    /// Linear plant `ẋ = A x + B w`, `y = C x + D w` without nonlinearity.
    pub fn linear(a: Mat, b: Mat, c: Mat, d: Mat) -> Self {
        let (n_x, n_w, n_y) = (a.nrows(), b.ncols(), c.nrows());
        Self {
            a,
            b_f: Mat::zeros(n_x, 0),
            b,
            c_q1: Mat::zeros(0, n_x),
            d_q1f: Mat::zeros(0, 0),
            d_q1: Mat::zeros(0, n_w),
            c,
            d_f: Mat::zeros(n_y, 0),
            d,
            f1: NonlinearityDescriptor::none(),
            g_x: SignalDescriptor::zero(),
            g_q1: SignalDescriptor::zero(),
            g_y: SignalDescriptor::zero(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_w(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    pub fn n_q1(&self) -> usize {
        self.f1.input_dim
    }
    pub fn n_f1(&self) -> usize {
        self.f1.output_dim
    }

    pub fn validate(&self) -> Result<()> {
        let (n_x, n_w, n_y, n_q, n_f) =
            (self.n_x(), self.n_w(), self.n_y(), self.n_q1(), self.n_f1());
        expect_shape(&self.a, n_x, n_x, "plant A")?;
        expect_shape(&self.b_f, n_x, n_f, "plant B_f")?;
        expect_shape(&self.b, n_x, n_w, "plant B")?;
        expect_shape(&self.c_q1, n_q, n_x, "plant C_q1")?;
        expect_shape(&self.d_q1f, n_q, n_f, "plant D_q1f")?;
        expect_shape(&self.d_q1, n_q, n_w, "plant D_q1")?;
        expect_shape(&self.c, n_y, n_x, "plant C")?;
        expect_shape(&self.d_f, n_y, n_f, "plant D_f")?;
        expect_shape(&self.d, n_y, n_w, "plant D")?;
        Nonlinearity::resolve(&self.f1)?;
        Signal::resolve(&self.g_x, n_x, n_y)?;
        Signal::resolve(&self.g_q1, n_q, n_y)?;
        Signal::resolve(&self.g_y, n_y, n_y)?;
        for (m, name) in [
            (&self.a, "A"),
            (&self.b_f, "B_f"),
            (&self.b, "B"),
            (&self.c, "C"),
            (&self.d, "D"),
        ] {
            crate::linalg::ensure_finite(m, &format!("plant {name}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExoModel {
    pub a_m: Mat,
    pub b_mf: Mat,
    pub b_m: Mat,
    pub c_q2: Mat,
    pub d_q2f: Mat,
    pub d_q2: Mat,
    pub c_m: Mat,
    pub d_wf: Mat,
    pub d_m: Mat,
    pub f2: NonlinearityDescriptor,
}

impl ExoModel {
    /// Linear model `ẋm = A_m xm + B_m v`, `w = C_m xm + D_m v`.
    pub fn linear(a_m: Mat, b_m: Mat, c_m: Mat, d_m: Mat) -> Self {
        let (n_m, n_v, n_w) = (a_m.nrows(), b_m.ncols(), c_m.nrows());
        Self {
            a_m,
            b_mf: Mat::zeros(n_m, 0),
            b_m,
            c_q2: Mat::zeros(0, n_m),
            d_q2f: Mat::zeros(0, 0),
            d_q2: Mat::zeros(0, n_v),
            c_m,
            d_wf: Mat::zeros(n_w, 0),
            d_m,
            f2: NonlinearityDescriptor::none(),
        }
    }

    /// `ẋm = v`, `w = xm`: inputs with square-integrable derivative.
    pub fn integrator(n_w: usize) -> Self {
        Self::linear(
            Mat::zeros(n_w, n_w),
            Mat::identity(n_w, n_w),
            Mat::identity(n_w, n_w),
            Mat::zeros(n_w, n_w),
        )
    }

    /// Stateless `w = v`.
    pub fn passthrough(n_w: usize) -> Self {
        Self::linear(
            Mat::zeros(0, 0),
            Mat::zeros(0, n_w),
            Mat::zeros(n_w, 0),
            Mat::identity(n_w, n_w),
        )
    }

    pub fn n_m(&self) -> usize {
        self.a_m.nrows()
    }
    pub fn n_v(&self) -> usize {
        self.b_m.ncols()
    }
    pub fn n_w(&self) -> usize {
        self.c_m.nrows()
    }
    pub fn n_q2(&self) -> usize {
        self.f2.input_dim
    }
    pub fn n_f2(&self) -> usize {
        self.f2.output_dim
    }

    /// Whether `w` is a static function of the model state alone, so that
    /// `ŵ = C_m x̂m` is a meaningful estimate.
    pub fn w_observable_from_state(&self) -> bool {
        self.d_wf.iter().all(|v| *v == 0.0) && self.d_m.iter().all(|v| *v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let (n_m, n_v, n_w, n_q, n_f) =
            (self.n_m(), self.n_v(), self.n_w(), self.n_q2(), self.n_f2());
        expect_shape(&self.a_m, n_m, n_m, "model A_m")?;
        expect_shape(&self.b_mf, n_m, n_f, "model B_mf")?;
        expect_shape(&self.b_m, n_m, n_v, "model B_m")?;
        expect_shape(&self.c_q2, n_q, n_m, "model C_q2")?;
        expect_shape(&self.d_q2f, n_q, n_f, "model D_q2f")?;
        expect_shape(&self.d_q2, n_q, n_v, "model D_q2")?;
        expect_shape(&self.c_m, n_w, n_m, "model C_m")?;
        expect_shape(&self.d_wf, n_w, n_f, "model D_wf")?;
        expect_shape(&self.d_m, n_w, n_v, "model D_m")?;
        Nonlinearity::resolve(&self.f2)?;
        Ok(())
    }
}

/// Known-signal hooks lifted to the augmented state (zero-padded).
#[derive(Debug, Clone, PartialEq)]
pub struct KnownSignals {
    pub g_x: Signal,
    pub g_q1: Signal,
    pub g_y: Signal,
    pub n_m: usize,
    pub n_q2: usize,
}

impl KnownSignals {
    pub fn g_xi(&self, t: f64, y: &Vector) -> Vector {
        pad(self.g_x.eval(t, y), self.n_m)
    }
    pub fn g_q(&self, t: f64, y: &Vector) -> Vector {
        pad(self.g_q1.eval(t, y), self.n_q2)
    }
    pub fn g_y(&self, t: f64, y: &Vector) -> Vector {
        self.g_y.eval(t, y)
    }
    pub fn depend_on_output(&self) -> bool {
        self.g_x.depends_on_output()
            || self.g_q1.depends_on_output()
            || self.g_y.depends_on_output()
    }
}

fn pad(v: Vector, extra: usize) -> Vector {
    let n = v.len();
    let mut out = Vector::zeros(n + extra);
    out.rows_mut(0, n).copy_from(&v);
    out
}

/// Plant and exogenous model stacked on `ξ = [x; xm]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPlant {
    pub a: Mat,
    pub b_f: Mat,
    pub b: Mat,
    pub c_q: Mat,
    pub d_qf: Mat,
    pub d_q: Mat,
    pub c: Mat,
    pub d: Mat,
    pub d_f: Mat,
    pub f: StackedNonlinearity,
    pub signals: KnownSignals,
    pub n_x: usize,
    pub n_m: usize,
}

impl AugmentedPlant {
    pub fn n_xi(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_f(&self) -> usize {
        self.b_f.ncols()
    }
    pub fn n_v(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_q(&self) -> usize {
        self.c_q.nrows()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }
    /// Whether the observer output equation has no feedthrough from `f`.
    pub fn is_linear(&self) -> bool {
        self.n_f() == 0
            || (self.b_f.iter().all(|v| *v == 0.0)
                && self.d_f.iter().all(|v| *v == 0.0)
                && self.d_qf.iter().all(|v| *v == 0.0))
    }
}

pub fn build_augmented_plant(p: &Plant, m: &ExoModel) -> Result<AugmentedPlant> {
    p.validate()?;
    m.validate()?;
    if m.n_w() != p.n_w() {
        return Err(Error::Dimension {
            what: "exogenous model output rows (C_m) against plant input columns (B)".into(),
            expected: p.n_w(),
            found: m.n_w(),
        });
    }
    let (n_x, n_m) = (p.n_x(), m.n_m());
    let (n_q1, n_q2, n_f1, n_f2) = (p.n_q1(), m.n_q2(), p.n_f1(), m.n_f2());
    let (n_v, n_y) = (m.n_v(), p.n_y());

    let z = |r: usize, c: usize| Mat::zeros(r, c);
    let bc_m = &p.b * &m.c_m;
    let bd_wf = &p.b * &m.d_wf;
    let dq1c_m = &p.d_q1 * &m.c_m;
    let dq1d_wf = &p.d_q1 * &m.d_wf;

    let a = block(&[
        vec![Some(&p.a), Some(&bc_m)],
        vec![Some(&z(n_m, n_x)), Some(&m.a_m)],
    ])?;
    let b_f = block(&[
        vec![Some(&p.b_f), Some(&bd_wf)],
        vec![Some(&z(n_m, n_f1)), Some(&m.b_mf)],
    ])?;
    let b = block(&[vec![Some(&(&p.b * &m.d_m))], vec![Some(&m.b_m)]])?;
    let c_q = block(&[
        vec![Some(&p.c_q1), Some(&dq1c_m)],
        vec![Some(&z(n_q2, n_x)), Some(&m.c_q2)],
    ])?;
    let d_qf = block(&[
        vec![Some(&p.d_q1f), Some(&dq1d_wf)],
        vec![Some(&z(n_q2, n_f1)), Some(&m.d_q2f)],
    ])?;
    let d_q = block(&[vec![Some(&(&p.d_q1 * &m.d_m))], vec![Some(&m.d_q2)]])?;
    let c = block(&[vec![Some(&p.c), Some(&(&p.d * &m.c_m))]])?;
    let d = &p.d * &m.d_m;
    let d_f = block(&[vec![Some(&p.d_f), Some(&(&p.d * &m.d_wf))]])?;

    // Zero-size blocks lose their extents in `block`; pin the shapes.
    let n_xi = n_x + n_m;
    let (n_q, n_f) = (n_q1 + n_q2, n_f1 + n_f2);
    let fix = |mm: Mat, r: usize, c: usize| if mm.shape() == (r, c) { mm } else { z(r, c) };
    let a = fix(a, n_xi, n_xi);
    let b_f = fix(b_f, n_xi, n_f);
    let b = fix(b, n_xi, n_v);
    let c_q = fix(c_q, n_q, n_xi);
    let d_qf = fix(d_qf, n_q, n_f);
    let d_q = fix(d_q, n_q, n_v);
    let c = fix(c, n_y, n_xi);
    let d_f = fix(d_f, n_y, n_f);

    let f = StackedNonlinearity::new(Nonlinearity::resolve(&p.f1)?, Nonlinearity::resolve(&m.f2)?);
    let signals = KnownSignals {
        g_x: Signal::resolve(&p.g_x, n_x, n_y)?,
        g_q1: Signal::resolve(&p.g_q1, n_q1, n_y)?,
        g_y: Signal::resolve(&p.g_y, n_y, n_y)?,
        n_m,
        n_q2,
    };
    Ok(AugmentedPlant {
        a,
        b_f,
        b,
        c_q,
        d_qf,
        d_q,
        c,
        d,
        d_f,
        f,
        signals,
        n_x,
        n_m,
    })
}
