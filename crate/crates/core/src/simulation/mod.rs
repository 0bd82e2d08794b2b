//! Joint integration of plant, exogenous model and observer, with the
//! certified error bounds checked on the resulting trace.

mod bounds;
mod export;

pub use bounds::{cumulative_sq, evaluate_bounds, l2_norm, verify_bounds, BoundReport};
pub use export::{csv_header, write_csv};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, Mat, Vector};
use crate::model::{
    build_augmented_plant, AugmentedPlant, ExoModel, Nonlinearity, Plant, Signal, SignalDescriptor,
};
use crate::synthesis::SynthesisResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
    pub xm0: Vec<f64>,
    /// Observer initial state; zero when empty.
    #[serde(default)]
    pub xi_hat0: Vec<f64>,
    pub v_signal: SignalDescriptor,
    #[serde(default = "default_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_max_iter")]
    pub fixed_point_max_iter: usize,
    /// Bound on `h·ρ` for the internal RK4 step `h`, where `ρ` is the
    /// largest linear mode magnitude. `None` integrates at `dt`.
    #[serde(default = "default_stiffness")]
    pub stiffness_limit: Option<f64>,
}

fn default_tol() -> f64 {
    1e-12
}
fn default_max_iter() -> usize {
    100
}
fn default_stiffness() -> Option<f64> {
    Some(0.5)
}

impl SimConfig {
    pub fn new(
        t_end: f64,
        dt: f64,
        x0: Vec<f64>,
        xm0: Vec<f64>,
        v_signal: SignalDescriptor,
    ) -> Self {
        Self {
            t0: 0.0,
            t_end,
            dt,
            x0,
            xm0,
            xi_hat0: vec![],
            v_signal,
            fixed_point_tol: default_tol(),
            fixed_point_max_iter: default_max_iter(),
            stiffness_limit: default_stiffness(),
        }
    }

    pub fn validate(&self, n_x: usize, n_m: usize) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidOption(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end > self.t0) || !self.t0.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidOption(format!(
                "need finite t_end > t0, got [{}, {}]",
                self.t0, self.t_end
            )));
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::InvalidOption(
                "fixed-point tolerance must be positive".into(),
            ));
        }
        if let Some(s) = self.stiffness_limit {
            if !(s > 0.0) {
                return Err(Error::InvalidOption(format!(
                    "stiffness limit must be positive, got {s}"
                )));
            }
        }
        let check = |v: &[f64], n: usize, what: &str| {
            if v.len() != n {
                Err(Error::Dimension {
                    what: what.into(),
                    expected: n,
                    found: v.len(),
                })
            } else if v.iter().any(|x| !x.is_finite()) {
                Err(Error::NonFinite { what: what.into() })
            } else {
                Ok(())
            }
        };
        check(&self.x0, n_x, "x0")?;
        check(&self.xm0, n_m, "xm0")?;
        if !self.xi_hat0.is_empty() {
            check(&self.xi_hat0, n_x + n_m, "xi_hat0")?;
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        ((self.t_end - self.t0) / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub t: Vec<f64>,
    pub x: Vec<Vector>,
    pub xm: Vec<Vector>,
    pub xi_hat: Vec<Vector>,
    /// `ξ̂ − [x; x_m]`.
    pub e: Vec<Vector>,
    pub z: Vec<Vector>,
    pub w: Vec<Vector>,
    /// `C_m x̂_m`, present when `D_wf = 0` and `D_m = 0`.
    pub w_hat: Option<Vec<Vector>>,
    pub v: Vec<Vector>,
    pub e_norm: Vec<f64>,
    /// Running `∫‖z‖²`, integrated alongside the state by the same RK4
    /// substeps so that transients faster than `dt` are resolved.
    pub z_norm_sq_cum: Vec<f64>,
    pub v_norm_sq_cum: Vec<f64>,
    /// Largest number of RK4 substeps taken within one recorded step.
    pub max_substeps: usize,
    /// Whether `v` may be nonzero after `t_end`.
    pub v_extends_past_end: bool,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn z_l2(&self) -> f64 {
        self.z_norm_sq_cum.last().copied().unwrap_or(0.0).sqrt()
    }

    pub fn v_l2(&self) -> f64 {
        self.v_norm_sq_cum.last().copied().unwrap_or(0.0).sqrt()
    }
}

const MAX_SUBSTEPS: f64 = 1e5;
const MAX_TOTAL_SUBSTEPS: f64 = 5e7;

fn is_zero(m: &Mat) -> bool {
    m.iter().all(|v| *v == 0.0)
}

fn fixed_point(
    what: &str,
    init: Vector,
    tol: f64,
    max_iter: usize,
    mut step: impl FnMut(&Vector) -> Result<Vector>,
) -> Result<Vector> {
    let mut cur = init;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let next = step(&cur)?;
        residual = (&next - &cur).norm();
        let done = residual <= tol * (1.0 + next.norm());
        cur = next;
        if done {
            return Ok(cur);
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::FixedPoint {
        what: what.into(),
        iterations: max_iter,
        residual,
    })
}

/// Solves `q̂ = 𝒞_qξ̂ + 𝒟_qf f(t, y, q̂) + g̃_q + L₂(ŷ − y)` with
/// `ŷ = 𝒞ξ̂ + 𝒟_f f(t, y, q̂) + g̃_y`.
pub fn solve_q_hat(
    aug: &AugmentedPlant,
    l2: &Mat,
    xi_hat: &Vector,
    t: f64,
    y: &Vector,
    tol: f64,
    max_iter: usize,
) -> Result<Vector> {
    if !(tol > 0.0) {
        return Err(Error::InvalidOption(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let g = &aug.signals;
    let base = &aug.c_q * xi_hat + g.g_q(t, y) + l2 * (&aug.c * xi_hat + g.g_y(t, y) - y);
    let k = &aug.d_qf + l2 * &aug.d_f;
    if aug.n_f() == 0 || is_zero(&k) {
        return Ok(base);
    }
    fixed_point("observer argument q̂", base.clone(), tol, max_iter, |q| {
        Ok(&base + &k * aug.f.eval(t, y, q)?)
    })
}

/// Plant, model and observer prepared for integration.
pub struct Simulator {
    plant: Plant,
    exo: ExoModel,
    aug: AugmentedPlant,
    f1: Nonlinearity,
    f2: Nonlinearity,
    v: Signal,
    l1: Mat,
    l2: Mat,
    h: Mat,
    tol: f64,
    max_iter: usize,
}

/// Signals evaluated at one stage.
#[derive(Clone)]
struct Stage {
    dx: Vector,
    dxm: Vector,
    dxi: Vector,
    w: Vector,
    v: Vector,
    q1: Vector,
    q2: Vector,
    q_hat: Vector,
    z_sq: f64,
    v_sq: f64,
}

impl Simulator {
    pub fn new(
        p: &Plant,
        m: &ExoModel,
        result: &SynthesisResult,
        h: &Mat,
        cfg: &SimConfig,
    ) -> Result<Self> {
        let aug = build_augmented_plant(p, m)?;
        let (nxi, ny, nq) = (aug.n_xi(), aug.n_y(), aug.n_q());
        linalg::expect_shape(&result.l1, nxi, ny, "L1")?;
        linalg::expect_shape(&result.l2, nq, ny, "L2")?;
        linalg::expect_shape(h, h.nrows(), nxi, "H")?;
        cfg.validate(p.n_x(), m.n_m())?;
        Ok(Self {
            f1: Nonlinearity::resolve(&p.f1)?,
            f2: Nonlinearity::resolve(&m.f2)?,
            v: Signal::resolve(&cfg.v_signal, m.n_v(), ny)?,
            plant: p.clone(),
            exo: m.clone(),
            aug,
            l1: result.l1.clone(),
            l2: result.l2.clone(),
            h: h.clone(),
            tol: cfg.fixed_point_tol,
            max_iter: cfg.fixed_point_max_iter,
        })
    }

    pub fn augmented(&self) -> &AugmentedPlant {
        &self.aug
    }

    /// Largest eigenvalue magnitude among `A`, `A_m` and `𝒜 + L₁𝒞`.
    pub fn linear_scale(&self) -> Result<f64> {
        let acl = &self.aug.a + &self.l1 * &self.aug.c;
        let mut rho: f64 = 0.0;
        for m in [&self.plant.a, &self.exo.a_m, &acl] {
            if m.nrows() > 0 {
                rho = linalg::eigenvalues(m)?
                    .iter()
                    .fold(rho, |r, z| r.max(z.norm()));
            }
        }
        Ok(rho)
    }

    /// Bound on the slope the nonlinear terms add to the right-hand side
    /// around the arguments of `s`.
    fn nonlinear_scale(&self, s: &Stage) -> f64 {
        let (p, m, a) = (&self.plant, &self.exo, &self.aug);
        let n1 = self.f1.input_dim;
        let q_hat1 = s.q_hat.rows(0, n1).into_owned();
        let q_hat2 = s.q_hat.rows(n1, s.q_hat.len() - n1).into_owned();
        let slope1 = self.f1.local_slope(&s.q1).max(self.f1.local_slope(&q_hat1));
        let slope2 = self.f2.local_slope(&s.q2).max(self.f2.local_slope(&q_hat2));
        let k = &a.c_q + &self.l2 * &a.c;
        p.b_f.norm() * slope1 * p.c_q1.norm()
            + m.b_mf.norm() * slope2 * m.c_q2.norm()
            + a.b_f.norm() * slope1.max(slope2) * k.norm()
    }

    /// `(w, ẋ_m, q₂)` from the model at `(t, x_m)`.
    fn model(&self, t: f64, xm: &Vector, v: &Vector) -> Result<(Vector, Vector, Vector)> {
        let m = &self.exo;
        let empty = Vector::zeros(0);
        let base = &m.c_q2 * xm + &m.d_q2 * v;
        let q2 = if m.n_f2() == 0 || is_zero(&m.d_q2f) {
            base
        } else {
            let b = base.clone();
            fixed_point("model argument q₂", base, self.tol, self.max_iter, |q| {
                Ok(&b + &m.d_q2f * self.f2.eval(t, &empty, q)?)
            })?
        };
        let f2 = self.f2.eval(t, &empty, &q2)?;
        let w = &m.c_m * xm + &m.d_wf * &f2 + &m.d_m * v;
        let dxm = &m.a_m * xm + &m.b_mf * &f2 + &m.b_m * v;
        Ok((w, dxm, q2))
    }

    /// `(y, ẋ, q₁)` from the plant at `(t, x)` given `w`.
    fn plant_eval(&self, t: f64, x: &Vector, w: &Vector) -> Result<(Vector, Vector, Vector)> {
        let p = &self.plant;
        let g = &self.aug.signals;
        let y_lin = &p.c * x + &p.d * w;
        let q_lin = &p.c_q1 * x + &p.d_q1 * w;
        let y_implicit = (p.n_f1() > 0 && !is_zero(&p.d_f)) || g.g_y.depends_on_output();
        let q_implicit = p.n_f1() > 0 && !is_zero(&p.d_q1f);
        let (ny, nq) = (p.n_y(), p.n_q1());
        let (y, q1) = if !y_implicit {
            let y = &y_lin + g.g_y.eval(t, &y_lin);
            let q0 = &q_lin + g.g_q1.eval(t, &y);
            let q1 = if q_implicit {
                fixed_point(
                    "plant argument q₁",
                    q0.clone(),
                    self.tol,
                    self.max_iter,
                    |q| Ok(&q0 + &p.d_q1f * self.f1.eval(t, &y, q)?),
                )?
            } else {
                q0
            };
            (y, q1)
        } else {
            // Joint iteration on [y; q₁].
            let mut init = Vector::zeros(ny + nq);
            init.rows_mut(0, ny).copy_from(&y_lin);
            init.rows_mut(ny, nq)
                .copy_from(&(&q_lin + g.g_q1.eval(t, &y_lin)));
            let joint = fixed_point("plant output y", init, self.tol, self.max_iter, |s| {
                let y = s.rows(0, ny).into_owned();
                let q = s.rows(ny, nq).into_owned();
                let f = self.f1.eval(t, &y, &q)?;
                let y_new = &y_lin + &p.d_f * &f + g.g_y.eval(t, &y);
                let q_new = &q_lin + &p.d_q1f * &f + g.g_q1.eval(t, &y_new);
                let mut out = Vector::zeros(ny + nq);
                out.rows_mut(0, ny).copy_from(&y_new);
                out.rows_mut(ny, nq).copy_from(&q_new);
                Ok(out)
            })?;
            (
                joint.rows(0, ny).into_owned(),
                joint.rows(ny, nq).into_owned(),
            )
        };
        let f1 = self.f1.eval(t, &y, &q1)?;
        let dx = &p.a * x + &p.b_f * f1 + g.g_x.eval(t, &y) + &p.b * w;
        Ok((y, dx, q1))
    }

    fn observer(&self, t: f64, xi_hat: &Vector, y: &Vector) -> Result<(Vector, Vector)> {
        let a = &self.aug;
        let g = &a.signals;
        let q_hat = solve_q_hat(a, &self.l2, xi_hat, t, y, self.tol, self.max_iter)?;
        let f = a.f.eval(t, y, &q_hat)?;
        let y_hat = &a.c * xi_hat + &a.d_f * &f + g.g_y(t, y);
        let dxi = &a.a * xi_hat + &a.b_f * &f + g.g_xi(t, y) + &self.l1 * (y_hat - y);
        Ok((dxi, q_hat))
    }

    fn stage(&self, t: f64, x: &Vector, xm: &Vector, xi: &Vector) -> Result<Stage> {
        let v = self.v.eval(t, &Vector::zeros(0));
        let (w, dxm, q2) = self.model(t, xm, &v)?;
        let (y, dx, q1) = self.plant_eval(t, x, &w)?;
        let (dxi, q_hat) = self.observer(t, xi, &y)?;
        let nx = x.len();
        let e_x = xi.rows(0, nx) - x;
        let e_m = xi.rows(nx, xm.len()) - xm;
        let z = self.h.columns(0, nx) * e_x + self.h.columns(nx, xm.len()) * e_m;
        Ok(Stage {
            z_sq: z.norm_squared(),
            v_sq: v.norm_squared(),
            dx,
            dxm,
            dxi,
            w,
            v,
            q1,
            q2,
            q_hat,
        })
    }

    /// Fixed-step RK4 over `cfg`'s horizon. Each recorded step is split
    /// into equal substeps so that `h·ρ` stays within the stiffness limit,
    /// with `ρ` from the linear modes plus the local slope of `f`.
    pub fn run(&self, cfg: &SimConfig) -> Result<SimTrace> {
        let (nx, nm) = (self.plant.n_x(), self.exo.n_m());
        cfg.validate(nx, nm)?;
        let rho_lin = self.linear_scale()?;
        let n = cfg.steps();
        if let Some(lim) = cfg.stiffness_limit {
            let total = (cfg.t_end - cfg.t0) * rho_lin / lim;
            if total > MAX_TOTAL_SUBSTEPS {
                return Err(Error::InvalidOption(format!(
                    "linear modes up to {rho_lin:e} need about {total:e} RK4 substeps over the horizon; \
                     shorten it or bound the gains"
                )));
            }
        }
        let mut x = Vector::from_column_slice(&cfg.x0);
        let mut xm = Vector::from_column_slice(&cfg.xm0);
        let mut xi = if cfg.xi_hat0.is_empty() {
            Vector::zeros(nx + nm)
        } else {
            Vector::from_column_slice(&cfg.xi_hat0)
        };
        let emit_w_hat = is_zero(&self.exo.d_wf) && is_zero(&self.exo.d_m);
        let mut tr = SimTrace {
            t: Vec::with_capacity(n + 1),
            x: vec![],
            xm: vec![],
            xi_hat: vec![],
            e: vec![],
            z: vec![],
            w: vec![],
            w_hat: emit_w_hat.then(Vec::new),
            v: vec![],
            e_norm: vec![],
            z_norm_sq_cum: vec![],
            v_norm_sq_cum: vec![],
            max_substeps: 1,
            v_extends_past_end: self.v.support_end().is_none_or(|end| end > cfg.t_end),
        };
        let mut t = cfg.t0;
        let (mut z_cum, mut v_cum) = (0.0, 0.0);
        for k in 0..=n {
            let s = self.stage(t, &x, &xm, &xi)?;
            self.record(&mut tr, t, &x, &xm, &xi, s.w.clone(), s.v.clone());
            tr.z_norm_sq_cum.push(z_cum);
            tr.v_norm_sq_cum.push(v_cum);
            if k == n {
                break;
            }
            let t_next = (cfg.t0 + (k + 1) as f64 * cfg.dt).min(cfg.t_end);
            let substeps = match cfg.stiffness_limit {
                Some(lim) => {
                    let n = ((t_next - t) * (rho_lin + self.nonlinear_scale(&s)) / lim).ceil();
                    if !(n <= MAX_SUBSTEPS) {
                        return Err(Error::InvalidOption(format!(
                            "step at t = {t} needs {n:e} substeps; reduce dt or bound the gains"
                        )));
                    }
                    (n as usize).max(1)
                }
                None => 1,
            };
            tr.max_substeps = tr.max_substeps.max(substeps);
            let h = (t_next - t) / substeps as f64;
            for j in 0..substeps {
                let ts = t + j as f64 * h;
                let k1 = if j == 0 {
                    s.clone()
                } else {
                    self.stage(ts, &x, &xm, &xi)?
                };
                let k2 = self.stage(
                    ts + 0.5 * h,
                    &(&x + &k1.dx * (0.5 * h)),
                    &(&xm + &k1.dxm * (0.5 * h)),
                    &(&xi + &k1.dxi * (0.5 * h)),
                )?;
                let k3 = self.stage(
                    ts + 0.5 * h,
                    &(&x + &k2.dx * (0.5 * h)),
                    &(&xm + &k2.dxm * (0.5 * h)),
                    &(&xi + &k2.dxi * (0.5 * h)),
                )?;
                let k4 = self.stage(
                    ts + h,
                    &(&x + &k3.dx * h),
                    &(&xm + &k3.dxm * h),
                    &(&xi + &k3.dxi * h),
                )?;
                let c = h / 6.0;
                x += (&k1.dx + &k2.dx * 2.0 + &k3.dx * 2.0 + &k4.dx) * c;
                xm += (&k1.dxm + &k2.dxm * 2.0 + &k3.dxm * 2.0 + &k4.dxm) * c;
                xi += (&k1.dxi + &k2.dxi * 2.0 + &k3.dxi * 2.0 + &k4.dxi) * c;
                z_cum += (k1.z_sq + 2.0 * k2.z_sq + 2.0 * k3.z_sq + k4.z_sq) * c;
                v_cum += (k1.v_sq + 2.0 * k2.v_sq + 2.0 * k3.v_sq + k4.v_sq) * c;
            }
            t = t_next;
            if x.iter()
                .chain(xm.iter())
                .chain(xi.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFiniteState { t });
            }
        }
        Ok(tr)
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        tr: &mut SimTrace,
        t: f64,
        x: &Vector,
        xm: &Vector,
        xi: &Vector,
        w: Vector,
        v: Vector,
    ) {
        let nx = x.len();
        let mut xi_true = Vector::zeros(xi.len());
        xi_true.rows_mut(0, nx).copy_from(x);
        xi_true.rows_mut(nx, xm.len()).copy_from(xm);
        let e = xi - xi_true;
        let z = &self.h * &e;
        if let Some(wh) = tr.w_hat.as_mut() {
            wh.push(&self.exo.c_m * xi.rows(nx, xm.len()));
        }
        tr.t.push(t);
        tr.x.push(x.clone());
        tr.xm.push(xm.clone());
        tr.xi_hat.push(xi.clone());
        tr.e_norm.push(e.norm());
        tr.e.push(e);
        tr.z.push(z);
        tr.w.push(w);
        tr.v.push(v);
    }
}

/// Simulates plant, model and observer with gains from `result` and
/// performance output `H`.
pub fn simulate(
    p: &Plant,
    m: &ExoModel,
    result: &SynthesisResult,
    h: &Mat,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    Simulator::new(p, m, result, h, cfg)?.run(cfg)
}

/// Independent simulations evaluated concurrently, in input order.
pub fn simulate_batch(
    p: &Plant,
    m: &ExoModel,
    result: &SynthesisResult,
    h: &Mat,
    cfgs: &[SimConfig],
) -> Vec<Result<SimTrace>> {
    cfgs.par_iter()
        .map(|c| simulate(p, m, result, h, c))
        .collect()
}

/// `max |ŵ − w − C_m(x̂_m − x_m)|` over the trace, or `None` when `ŵ` is
/// not emitted.
pub fn w_hat_consistency(trace: &SimTrace, c_m: &Mat, n_x: usize) -> Option<f64> {
    let wh = trace.w_hat.as_ref()?;
    let mut worst: f64 = 0.0;
    for ((wh, w), e) in wh.iter().zip(&trace.w).zip(&trace.e) {
        let em = e.rows(n_x, e.len() - n_x).into_owned();
        let d = wh - w - c_m * em;
        worst = worst.max(max_abs(&Mat::from_column_slice(d.len(), 1, d.as_slice())));
    }
    Some(worst)
}
