use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uio_core::fixtures;
use uio_core::linalg::{Mat, SymMat, Vector};
use uio_core::model::{
    build_augmented_plant, ExoModel, NonlinearityDescriptor, Plant, SignalDescriptor,
};
use uio_core::multipliers::family_for_stacked;
use uio_core::sdp::backend_by_name;
use uio_core::simulation::{
    l2_norm, simulate, simulate_batch, verify_bounds, w_hat_consistency, write_csv, SimConfig,
};
use uio_core::synthesis::{
    extract_gains, solve_feasibility, solve_gevp, AlphaGrid, Certificate, SynthesisOptions,
    SynthesisProblem, SynthesisResult,
};

fn problem(plant: &Plant, exo: &ExoModel, h: Mat, l2: Mat) -> SynthesisProblem {
    let aug = build_augmented_plant(plant, exo).unwrap();
    let fam = family_for_stacked(&aug.f).unwrap();
    SynthesisProblem::new(aug, fam, h, l2).unwrap()
}

/// Gains `L₁ = y` for a scalar plant, through a hand-built certificate.
fn scalar_gain(prob: &SynthesisProblem, y: f64) -> SynthesisResult {
    let cert = Certificate {
        p: SymMat::identity(1),
        y: Mat::from_element(1, 1, y),
        theta: vec![0.0; prob.fam.n_params()],
        mu1: 1.0,
        mu2: 1.0,
        alpha: 0.0,
        margin: f64::NAN,
    };
    extract_gains(&cert, prob).unwrap()
}

fn scalar_plant(a: f64) -> (Plant, ExoModel) {
    let m = |v: f64| Mat::from_element(1, 1, v);
    (
        Plant::linear(m(a), m(1.0), m(1.0), m(0.0)),
        ExoModel::passthrough(1),
    )
}

#[test]
fn zero_system_gives_zero_trace() {
    let (plant, exo) = scalar_plant(0.0);
    let prob = problem(&plant, &exo, Mat::identity(1, 1), Mat::zeros(0, 1));
    let r = scalar_gain(&prob, 0.0);
    let cfg = SimConfig::new(1.0, 0.1, vec![0.0], vec![], SignalDescriptor::zero());
    let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
    assert_eq!(tr.len(), 11);
    assert!(tr.e_norm.iter().all(|v| *v == 0.0));
    assert!(tr.x.iter().all(|v| v[0] == 0.0));
    assert_eq!(tr.z_l2(), 0.0);
}

#[test]
fn rk4_error_matches_fourth_order_against_closed_form() {
    let (plant, exo) = scalar_plant(-1.0);
    let prob = problem(&plant, &exo, Mat::identity(1, 1), Mat::zeros(0, 1));
    let r = scalar_gain(&prob, -2.0);
    let run = |dt: f64| {
        let mut cfg = SimConfig::new(2.0, dt, vec![1.0], vec![], SignalDescriptor::zero());
        cfg.stiffness_limit = None;
        cfg.xi_hat0 = vec![0.0];
        let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
        // e(t) = e₀·exp((𝒜 + L₁𝒞)t) with e₀ = −1.
        let exact = -(-3.0f64 * 2.0).exp();
        (tr.e.last().unwrap()[0] - exact).abs()
    };
    let ratio = run(0.1) / run(0.05);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn error_energy_resolves_transients_faster_than_the_grid() {
    let (plant, exo) = scalar_plant(-1.0);
    let prob = problem(&plant, &exo, Mat::identity(1, 1), Mat::zeros(0, 1));
    let gain = -1e4;
    let r = scalar_gain(&prob, gain);
    let mut cfg = SimConfig::new(1.0, 1e-2, vec![0.5], vec![], SignalDescriptor::zero());
    cfg.xi_hat0 = vec![0.0];
    let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
    // ∫ (0.5 e^{−kt})² dt with k = 1 − gain, essentially over [0, ∞).
    let exact = (0.25 / (2.0 * (1.0 - gain))).sqrt();
    assert!(
        (tr.z_l2() - exact).abs() <= 1e-3 * exact,
        "{} vs {exact}",
        tr.z_l2()
    );
    assert!(tr.max_substeps > 100);
}

#[test]
fn intractably_stiff_gains_are_refused_up_front() {
    let (plant, exo) = scalar_plant(-1.0);
    let prob = problem(&plant, &exo, Mat::identity(1, 1), Mat::zeros(0, 1));
    let r = scalar_gain(&prob, -1e9);
    let cfg = SimConfig::new(1.0, 1e-2, vec![0.5], vec![], SignalDescriptor::zero());
    let err = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap_err();
    assert!(err.to_string().contains("substeps"), "{err}");

    let mut short = cfg.clone();
    short.t_end = 1e-5;
    short.dt = 1e-5;
    assert!(simulate(&plant, &exo, &r, &prob.h, &short).is_ok());
}

#[test]
fn rk4_order_on_nonlinear_instance() {
    let m = Mat::from_row_slice;
    let mut plant = Plant::linear(
        m(2, 2, &[0.0, 1.0, -1.0, -0.2]),
        m(2, 1, &[0.0, 1.0]),
        m(1, 2, &[1.0, 0.0]),
        m(1, 1, &[0.0]),
    );
    plant.b_f = m(2, 1, &[0.0, 1.0]);
    plant.c_q1 = m(1, 2, &[1.0, 0.0]);
    plant.d_q1f = m(1, 1, &[0.0]);
    plant.d_q1 = m(1, 1, &[0.0]);
    plant.d_f = m(1, 1, &[0.0]);
    plant.f1 = NonlinearityDescriptor::sin(1);
    let exo = ExoModel::passthrough(1);
    let prob = problem(&plant, &exo, Mat::identity(2, 2), Mat::zeros(1, 1));
    let cert = Certificate {
        p: SymMat::identity(2),
        y: m(2, 1, &[-2.0, -1.0]),
        theta: vec![0.0; prob.fam.n_params()],
        mu1: 1.0,
        mu2: 1.0,
        alpha: 0.0,
        margin: f64::NAN,
    };
    let r = extract_gains(&cert, &prob).unwrap();
    let run = |dt: f64| {
        let mut cfg = SimConfig::new(
            4.0,
            dt,
            vec![1.0, 0.0],
            vec![],
            SignalDescriptor::new("sin", vec![1.0, 2.0]),
        );
        cfg.stiffness_limit = None;
        let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
        let mut s = tr.x.last().unwrap().clone();
        s.extend(tr.xi_hat.last().unwrap().iter().copied());
        s
    };
    let reference = run(0.1 / 8.0);
    let ratio = (run(0.1) - &reference).norm() / (run(0.05) - &reference).norm();
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

fn bearing_design() -> (Plant, ExoModel, SynthesisProblem, SynthesisResult) {
    let (plant, exo) = fixtures::magnetic_bearing();
    let prob = problem(
        &plant,
        &exo,
        fixtures::magnetic_bearing_h(),
        fixtures::magnetic_bearing_l2(),
    )
    .with_alpha(fixtures::REPORTED_ALPHA);
    let be = backend_by_name(None).unwrap();
    let cert = solve_feasibility(&prob, Some(fixtures::REPORTED_MU2), be.as_ref())
        .unwrap()
        .certificate()
        .cloned()
        .unwrap();
    let r = extract_gains(&cert, &prob).unwrap();
    (plant, exo, prob, r)
}

#[test]
fn bearing_estimates_unbounded_inputs() {
    let (plant, exo, prob, r) = bearing_design();
    let cfg = SimConfig::new(
        30.0,
        1e-3,
        fixtures::MAGNETIC_BEARING_X0.to_vec(),
        fixtures::MAGNETIC_BEARING_XM0.to_vec(),
        SignalDescriptor::new("inv_sqrt_log_rate", vec![]),
    );
    let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
    // Model output reproduces w = [(1+t)^(-1/2), ln(1+t)].
    let (t_end, w_end) = (*tr.t.last().unwrap(), tr.w.last().unwrap());
    assert!((w_end[0] - 1.0 / (1.0 + t_end).sqrt()).abs() < 1e-9);
    assert!((w_end[1] - (1.0 + t_end).ln()).abs() < 1e-9);
    let wh = tr.w_hat.as_ref().unwrap();
    let n = tr.len();
    let tail_err = (n - 5000..n)
        .map(|k| (&wh[k] - &tr.w[k]).norm())
        .fold(0.0, f64::max);
    let head_err = (&wh[0] - &tr.w[0]).norm();
    assert!(
        tail_err < 0.05 * head_err && tail_err < 0.05,
        "tail {tail_err}, head {head_err}"
    );
    assert!(w_hat_consistency(&tr, &exo.c_m, plant.n_x()).unwrap() < 1e-12);
    let rep = verify_bounds(&tr, &r).unwrap();
    assert!(rep.z_l2 < rep.z_bound);

    let mut buf = vec![];
    write_csv(&tr, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,x1,x2,x3,xm1,xm2,xihat1,xihat2,xihat3,xihat4,xihat5,e_norm,z_norm_sq_cum,w1,w2,what1,what2"
    );
    assert_eq!(text.lines().count(), n + 1);
}

/// `ẋ = −x + w₁`, `y = x + w₂`, `z = e`, certified at `α = 0.5`.
fn scalar_noisy_design() -> (Plant, ExoModel, SynthesisProblem, SynthesisResult) {
    let m = Mat::from_row_slice;
    let plant = Plant::linear(
        m(1, 1, &[-1.0]),
        m(1, 2, &[1.0, 0.0]),
        m(1, 1, &[1.0]),
        m(1, 2, &[0.0, 1.0]),
    );
    let exo = ExoModel::passthrough(2);
    let opts = SynthesisOptions {
        alpha_grid: AlphaGrid::Explicit(vec![0.5]),
        ..Default::default()
    };
    let prob = problem(&plant, &exo, m(1, 1, &[1.0]), Mat::zeros(0, 1)).with_options(opts);
    let r = solve_gevp(&prob, backend_by_name(None).unwrap().as_ref()).unwrap();
    (plant, exo, prob, r)
}

fn random_config(rng: &mut ChaCha8Rng, zero_e0: bool) -> SimConfig {
    let comps: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.2..5.0),
                rng.gen_range(0.0..6.0),
            )
        })
        .collect();
    let x0 = rng.gen_range(-3.0..3.0);
    let mut cfg = SimConfig::new(
        12.0,
        1e-2,
        vec![x0],
        vec![],
        SignalDescriptor::windowed_sine(0.0, 8.0, &comps),
    );
    if zero_e0 {
        cfg.xi_hat0 = vec![x0];
    } else {
        cfg.xi_hat0 = vec![rng.gen_range(-3.0..3.0)];
    }
    cfg
}

#[test]
fn certified_bounds_hold_over_random_runs() {
    let (plant, exo, prob, r) = scalar_noisy_design();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfgs: Vec<SimConfig> = (0..100).map(|_| random_config(&mut rng, false)).collect();
    for tr in simulate_batch(&plant, &exo, &r, &prob.h, &cfgs) {
        verify_bounds(&tr.unwrap(), &r).unwrap();
    }
}

#[test]
fn empirical_gain_from_rest_is_within_gamma() {
    let (plant, exo, prob, r) = scalar_noisy_design();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let cfg = random_config(&mut rng, true);
        let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
        assert!(
            tr.z_l2() <= r.gamma * tr.v_l2(),
            "{} > {}",
            tr.z_l2(),
            r.gamma * tr.v_l2()
        );
        assert!(!tr.v_extends_past_end);
        assert!((l2_norm(cfg.dt, &tr.z) - tr.z_l2()).abs() <= 1e-3 * (1.0 + tr.z_l2()));
    }
}

#[test]
fn free_response_decays_at_certified_rate() {
    let (plant, exo, prob, r) = scalar_noisy_design();
    let mut cfg = SimConfig::new(10.0, 1e-2, vec![2.0], vec![], SignalDescriptor::zero());
    cfg.xi_hat0 = vec![-1.0];
    let tr = simulate(&plant, &exo, &r, &prob.h, &cfg).unwrap();
    let k = (r.beta2 / r.beta1).sqrt() * 3.0;
    for (t, e) in tr.t.iter().zip(&tr.e_norm) {
        assert!(*e <= (-r.cert.alpha * t).exp() * k * 1.01 + 1e-9);
    }
    let _ = Vector::zeros(0);
}
