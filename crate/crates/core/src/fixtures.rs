//! Reference systems used by tests, the CLI and the acceptance suite.

use crate::linalg::Mat;
use crate::model::{ExoModel, NonlinearityDescriptor, Plant, SignalDescriptor};

/// Active magnetic bearing with disturbance and measurement noise:
///
/// ```text
/// ẋ = [x2 + w1; x3 + x3|x3|; w2],   y = [x1 + 0.1 w1; x2]
/// ```
///
/// with `w` modelled as an integrator driven by `v = ẇ`.
pub fn magnetic_bearing() -> (Plant, ExoModel) {
    let m = Mat::from_row_slice;
    let plant = Plant {
        a: m(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        b_f: m(3, 1, &[0.0, 1.0, 0.0]),
        b: m(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        c_q1: m(1, 3, &[0.0, 0.0, 1.0]),
        d_q1f: Mat::zeros(1, 1),
        d_q1: Mat::zeros(1, 2),
        c: m(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        d_f: Mat::zeros(2, 1),
        d: m(2, 2, &[0.1, 0.0, 0.0, 0.0]),
        f1: NonlinearityDescriptor::q_abs_q(1),
        g_x: SignalDescriptor::zero(),
        g_q1: SignalDescriptor::zero(),
        g_y: SignalDescriptor::zero(),
    };
    (plant, ExoModel::integrator(2))
}

/// Performance output selecting the disturbance estimate error `ŵ − w`.
pub fn magnetic_bearing_h() -> Mat {
    Mat::from_row_slice(2, 5, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
}

pub fn magnetic_bearing_l2() -> Mat {
    Mat::from_row_slice(1, 2, &[0.0, -110.0])
}

pub const MAGNETIC_BEARING_X0: [f64; 3] = [-2.7247, 10.9842, -2.7787];

/// Model state reproducing `w = [(1+t)^(-1/2), ln(1+t)]` at `t = 0`.
pub const MAGNETIC_BEARING_XM0: [f64; 2] = [1.0, 0.0];

/// Reported optimum: decay rate and squared gain at `μ1 = 1`.
pub const REPORTED_ALPHA: f64 = 0.710;
pub const REPORTED_MU2: f64 = 0.08;

/// Two-state linear plant with `CB = 1` and its only invariant zero at
/// `λ = −1`, driven directly by an unknown square-integrable input.
pub fn minimum_phase_pair() -> (Plant, ExoModel) {
    let m = Mat::from_row_slice;
    let plant = Plant::linear(
        m(2, 2, &[0.0, 1.0, -2.0, -3.0]),
        m(2, 1, &[0.0, 1.0]),
        m(1, 2, &[1.0, 1.0]),
        Mat::zeros(1, 1),
    );
    (plant, ExoModel::passthrough(1))
}
