use std::fmt::Write as _;
use std::io::{BufWriter, Write as _};
use std::path::Path;
use std::time::Instant;

use serde_json::json;
use uio_core::fixtures;
use uio_core::linalg::Mat;
use uio_core::model::Nonlinearity;
use uio_core::multipliers::{family_for, family_for_stacked, verify_dqc};
use uio_core::serde_mat::conform_empty;
use uio_core::simulation::{
    self as sim, evaluate_bounds, write_csv, BoundReport, SimConfig, SimTrace,
};
use uio_core::synthesis::{
    audit_certificate, backend_from_env, check_condition1, check_detectability,
    check_lemma8_conditions, design_arbitrary_accuracy, extract_gains, solve_feasibility,
    solve_gevp, AccuracyOptions, AlphaGrid, ConditionItem, Feasibility, Mu1Policy,
    SynthesisProblem, SynthesisResult,
};

use crate::config::{parse_config, parse_system, LoadedSystem, MAGNETIC_BEARING_JSON};
use crate::{CliError, Overrides, Report, EXIT_BOUND, EXIT_INFEASIBLE, EXIT_OK};

const DQC_SAMPLES: usize = 10_000;

fn load(opts: &Overrides) -> Result<LoadedSystem, CliError> {
    let path = opts
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    parse_config(path)
}

/// Synthesis problem at the configured `L₂`, with command-line overrides
/// taking precedence over the config file.
fn problem(
    sys: &LoadedSystem,
    opts: &Overrides,
    default_grid: usize,
    default_alpha_max: f64,
) -> Result<SynthesisProblem, CliError> {
    let fam = family_for_stacked(&sys.aug.f)?;
    let mut prob = SynthesisProblem::new(sys.aug.clone(), fam, sys.h.clone(), sys.l2.clone())?;
    let spec = &sys.synthesis;
    let n = opts.alpha_grid.or(spec.alpha_grid).unwrap_or(default_grid);
    let alpha_max = opts
        .alpha_max
        .or(spec.alpha_max)
        .unwrap_or(default_alpha_max);
    if n == 0 || !alpha_max.is_finite() || alpha_max <= 0.0 {
        return Err(CliError::Config(format!(
            "decay-rate grid needs points > 0 and alpha_max > 0, got {n} and {alpha_max}"
        )));
    }
    prob.options.alpha_grid = AlphaGrid::Linear { n, alpha_max };
    if let Some(m) = opts.margin.or(spec.margin) {
        if !m.is_finite() || m <= 0.0 {
            return Err(CliError::Config(format!(
                "margin must be positive, got {m}"
            )));
        }
        prob.options.margin = m;
    }
    if let Some(e) = opts.eps_pd.or(spec.eps_pd) {
        if !e.is_finite() || e <= 0.0 {
            return Err(CliError::Config(format!(
                "eps_pd must be positive, got {e}"
            )));
        }
        prob.options.eps_pd = e;
    }
    if let Some(r) = opts.radius.or(spec.decision_radius) {
        if !r.is_finite() || r <= 0.0 {
            return Err(CliError::Config(format!(
                "decision_radius must be positive, got {r}"
            )));
        }
        prob.options.decision_radius = Some(r);
    }
    prob.options.mu1 = Mu1Policy::Fixed(spec.mu1.unwrap_or(1.0));
    prob.validate()?;
    Ok(prob)
}

fn sim_config(sys: &LoadedSystem, opts: &Overrides) -> Result<SimConfig, CliError> {
    let mut cfg = sys
        .sim
        .clone()
        .ok_or_else(|| CliError::Config("config has no `simulation` section".into()))?;
    if let Some(dt) = opts.dt {
        cfg.dt = dt;
    }
    if let Some(t) = opts.t_end {
        cfg.t_end = t;
    }
    cfg.validate(sys.plant.n_x(), sys.exo.n_m())?;
    Ok(cfg)
}

fn fmt_mat(m: &Mat) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| {
            r.iter()
                .map(|v| format!("{v:.6e}"))
                .collect::<Vec<_>>()
                .join(", ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

fn certificate_text(r: &SynthesisResult) -> String {
    let c = &r.cert;
    let d = &r.diagnostics;
    let mut s = String::new();
    // A single feasibility solve does not report its iteration count.
    if d.iterations > 0 {
        let _ = writeln!(
            s,
            "certificate (backend {}, {} solver iterations)",
            d.backend, d.iterations
        );
    } else {
        let _ = writeln!(s, "certificate (backend {})", d.backend);
    }
    let _ = writeln!(s, "  gamma            {:.6e}", r.gamma);
    let _ = writeln!(s, "  alpha            {:.6e}", c.alpha);
    let _ = writeln!(s, "  mu1              {:.6e}", c.mu1);
    let _ = writeln!(s, "  mu2              {:.6e}", c.mu2);
    let _ = writeln!(s, "  beta1, beta2     {:.6e}, {:.6e}", r.beta1, r.beta2);
    let _ = writeln!(s, "  audit lambda_max {:.6e}", d.audit_max_eigenvalue);
    let _ = writeln!(s, "  lambda_min(P)    {:.6e}", d.lambda_min_p);
    let _ = writeln!(s, "  L1 = {}", fmt_mat(&r.l1));
    let _ = writeln!(s, "  L2 = {}", fmt_mat(&r.l2));
    for n in &d.notes {
        let _ = writeln!(s, "  note: {n}");
    }
    s
}

fn write_json(
    dir: Option<&Path>,
    name: &str,
    value: &impl serde::Serialize,
) -> Result<(), CliError> {
    if let Some(dir) = dir {
        std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    }
    Ok(())
}

fn write_trace(dir: &Path, trace: &SimTrace) -> Result<(), CliError> {
    let mut w = BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?);
    write_csv(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn synthesize(opts: &Overrides) -> Result<Report, CliError> {
    let sys = load(opts)?;
    let prob = problem(&sys, opts, 40, 2.0)?;
    let backend = backend_from_env()?;
    let result = solve_gevp(&prob, backend.as_ref())?;
    write_json(opts.out.as_deref(), "result.json", &result)?;
    let feasible = result
        .diagnostics
        .alpha_sweep
        .iter()
        .filter(|p| p.mu2.is_some())
        .count();
    let mut text = certificate_text(&result);
    let _ = writeln!(
        text,
        "decay-rate grid: {feasible} of {} points feasible",
        result.diagnostics.alpha_sweep.len()
    );
    Ok(Report {
        text,
        json: serde_json::to_value(&result)?,
        status: EXIT_OK,
    })
}

fn dqc_item(
    nl: &Nonlinearity,
    label: &str,
    n_y: usize,
    seed: u64,
) -> Result<Option<ConditionItem>, CliError> {
    if nl.name() == "zero" {
        return Ok(None);
    }
    let fam = family_for(nl)?;
    let theta = vec![1.0; fam.n_params()];
    let rep = verify_dqc(&fam, &theta, nl, n_y, DQC_SAMPLES, seed)?;
    Ok(Some(ConditionItem {
        name: format!("incremental constraint {label} ({})", nl.name()),
        passed: rep.passed,
        detail: format!("min value {:e} over {} samples", rep.min_value, rep.samples),
        witnesses: vec![],
    }))
}

pub fn check(opts: &Overrides) -> Result<Report, CliError> {
    let sys = load(opts)?;
    let mut items = check_detectability(&sys.aug.a, &sys.aug.c)?.items;
    items.extend(check_condition1(&sys.plant, &sys.exo)?.items);
    let mut notes = vec![];
    if sys.plant.f1.name == "zero" && sys.exo.f2.name == "zero" {
        items.extend(check_lemma8_conditions(&sys.plant, &sys.exo)?.items);
    } else {
        notes.push(
            "arbitrary-accuracy conditions skipped: they apply to linear plants and models only"
                .to_string(),
        );
    }
    let n_y = sys.aug.n_y();
    for (nl, label) in [(&sys.aug.f.f1, "f1"), (&sys.aug.f.f2, "f2")] {
        items.extend(dqc_item(nl, label, n_y, opts.seed)?);
    }

    let passed = items.iter().all(|i| i.passed);
    let mut text = String::new();
    for i in &items {
        let verdict = if i.passed { "pass" } else { "fail" };
        let _ = writeln!(text, "{}: {verdict} ({})", i.name, i.detail);
        for w in &i.witnesses {
            let _ = writeln!(
                text,
                "    at lambda = {:.6e} {:+.6e}i: rank {} < {}",
                w.re, w.im, w.rank, w.required
            );
        }
    }
    for n in &notes {
        let _ = writeln!(text, "note: {n}");
    }
    let json = json!({ "passed": passed, "items": items, "notes": notes });
    write_json(opts.out.as_deref(), "check.json", &json)?;
    Ok(Report {
        text,
        json,
        status: if passed { EXIT_OK } else { EXIT_INFEASIBLE },
    })
}

/// Reads a stored result, restoring empty-matrix shapes lost in the
/// row-array form.
pub fn load_result(sys: &LoadedSystem, path: &Path) -> Result<SynthesisResult, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut r: SynthesisResult = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    r.l2 = conform_empty(r.l2, sys.aug.n_q(), sys.aug.n_y());
    r.l1 = conform_empty(r.l1, sys.aug.n_xi(), sys.aug.n_y());
    r.cert.y = conform_empty(r.cert.y, sys.aug.n_xi(), sys.aug.n_y());
    Ok(r)
}

/// Re-audits a stored result against the problem it claims to solve.
pub fn reaudit(sys: &LoadedSystem, result: &SynthesisResult) -> Result<(), CliError> {
    let fam = family_for_stacked(&sys.aug.f)?;
    if result.l2.shape() != (sys.aug.n_q(), sys.aug.n_y()) {
        return Err(CliError::Config(format!(
            "stored L2 is {}x{}, the system needs {}x{}",
            result.l2.nrows(),
            result.l2.ncols(),
            sys.aug.n_q(),
            sys.aug.n_y()
        )));
    }
    let prob = SynthesisProblem::new(sys.aug.clone(), fam, sys.h.clone(), result.l2.clone())?
        .with_alpha(result.cert.alpha);
    let audit = audit_certificate(&prob, &result.cert)?;
    if !audit.passed {
        return Err(uio_core::Error::AuditFailed(format!(
            "stored certificate: lambda_max = {:e}, lambda_min(P) = {:e}",
            audit.max_eigenvalue, audit.lambda_min_p
        ))
        .into());
    }
    Ok(())
}

fn bound_text(rep: &BoundReport) -> String {
    let mut s = String::new();
    let verdict = if rep.passed { "pass" } else { "fail" };
    let _ = writeln!(
        s,
        "certified bounds: {verdict} ({} violations)",
        rep.violations
    );
    let _ = writeln!(
        s,
        "  ||z||_2 = {:.6e}, certified bound {:.6e}",
        rep.z_l2, rep.z_bound
    );
    let _ = writeln!(
        s,
        "  worst energy-bound ratio    {:.6e}",
        rep.energy_worst_ratio
    );
    let _ = writeln!(
        s,
        "  worst pointwise-bound ratio {:.6e} at t = {:.6e}",
        rep.pointwise_worst_ratio, rep.pointwise_worst_t
    );
    for n in &rep.notes {
        let _ = writeln!(s, "  note: {n}");
    }
    s
}

/// `‖ŵ − w‖` and `‖w‖` at the last sample, and `sup ‖w‖` over the run.
fn estimation_error(trace: &SimTrace) -> Option<(f64, f64, f64)> {
    let wh = trace.w_hat.as_ref()?;
    let last = trace.len().checked_sub(1)?;
    let err = (&wh[last] - &trace.w[last]).norm();
    let sup = trace.w.iter().map(|w| w.norm()).fold(0.0, f64::max);
    Some((err, trace.w[last].norm(), sup))
}

pub fn simulate(opts: &Overrides) -> Result<Report, CliError> {
    let out = opts
        .out
        .as_deref()
        .ok_or_else(|| CliError::Config("--out DIR is required for the trace".into()))?;
    let sys = load(opts)?;
    let cfg = sim_config(&sys, opts)?;
    let result: SynthesisResult = match &opts.result {
        Some(p) => {
            let r = load_result(&sys, p)?;
            reaudit(&sys, &r)?;
            r
        }
        None => {
            let prob = problem(&sys, opts, 40, 2.0)?;
            solve_gevp(&prob, backend_from_env()?.as_ref())?
        }
    };
    let trace = sim::simulate(&sys.plant, &sys.exo, &result, &sys.h, &cfg)?;
    write_trace(out, &trace)?;
    let rep = evaluate_bounds(&trace, &result);
    write_json(Some(out), "bounds.json", &rep)?;

    let mut text = format!(
        "trace: {} rows written to {}\n",
        trace.len(),
        out.join("trace.csv").display()
    );
    if let Some((err, w_end, _)) = estimation_error(&trace) {
        let _ = writeln!(
            text,
            "final input-estimate error {err:.6e} (|w| = {w_end:.6e})"
        );
    }
    text.push_str(&bound_text(&rep));
    Ok(Report {
        text,
        json: json!({ "rows": trace.len(), "max_substeps": trace.max_substeps, "bounds": rep }),
        status: if rep.passed { EXIT_OK } else { EXIT_BOUND },
    })
}

pub fn arbitrary_accuracy(opts: &Overrides) -> Result<Report, CliError> {
    let sys = load(opts)?;
    let prob = problem(&sys, opts, 40, 2.0)?;
    let gamma = opts.gamma.or(sys.synthesis.gamma).unwrap_or(1e-2);
    let aopts = AccuracyOptions {
        gamma,
        ..Default::default()
    };
    let design = design_arbitrary_accuracy(&prob, &aopts, backend_from_env()?.as_ref())?;
    write_json(opts.out.as_deref(), "result.json", &design.result)?;
    let mut text = format!("target gamma {gamma:.6e}\n");
    let _ = writeln!(
        text,
        "  alpha_bar {:.6e}, zeta {:.6e}",
        design.alpha_bar, design.zeta
    );
    text.push_str(&certificate_text(&design.result));
    Ok(Report {
        text,
        json: serde_json::to_value(&design)?,
        status: EXIT_OK,
    })
}

fn band_row(
    s: &mut String,
    name: &str,
    computed: Option<f64>,
    reference: f64,
    band: (f64, f64),
) -> bool {
    let within = computed.is_some_and(|v| v >= band.0 && v <= band.1);
    let shown = computed.map_or("n/a".to_string(), |v| format!("{v:.4e}"));
    let _ = writeln!(
        s,
        "{name:<10}{shown:>14}{reference:>12.4}   [{:.3}, {:.3}]   {}",
        band.0,
        band.1,
        if within { "yes" } else { "no" }
    );
    within
}

pub fn reproduce_example(opts: &Overrides) -> Result<Report, CliError> {
    let text_in = match &opts.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => MAGNETIC_BEARING_JSON.to_string(),
    };
    let sys = parse_system(&text_in)?.load()?;
    let prob = problem(&sys, opts, 40, 2.0)?;
    let backend = backend_from_env()?;
    let mut text = String::new();
    let mut status = EXIT_OK;

    let start = Instant::now();
    let optimum = match solve_gevp(&prob, backend.as_ref()) {
        Ok(r) => Some(r),
        Err(uio_core::Error::Infeasible(why)) => {
            let _ = writeln!(text, "decay-rate sweep found no certificate: {why}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let sweep_secs = start.elapsed().as_secs_f64();
    let (ref_alpha, ref_mu2) = (fixtures::REPORTED_ALPHA, fixtures::REPORTED_MU2);
    let _ = writeln!(text, "decay-rate sweep ({:.1} s)", sweep_secs);
    let _ = writeln!(
        text,
        "{:<10}{:>14}{:>12}   {:<16} within",
        "quantity", "computed", "reference", "band"
    );
    let alpha_ok = band_row(
        &mut text,
        "alpha*",
        optimum.as_ref().map(|r| r.cert.alpha),
        ref_alpha,
        (ref_alpha - 0.15, ref_alpha + 0.15),
    );
    let mu2_ok = band_row(
        &mut text,
        "mu2*",
        optimum.as_ref().map(|r| r.cert.mu2),
        ref_mu2,
        (0.5 * ref_mu2, 2.0 * ref_mu2),
    );
    if let Some(r) = &optimum {
        text.push_str(&certificate_text(r));
    }

    // Reference design point, certified independently of the sweep.
    let at = prob.clone().with_alpha(ref_alpha);
    let design = match solve_feasibility(&at, Some(ref_mu2), backend.as_ref())? {
        Feasibility::Feasible(cert) => {
            let mut r = extract_gains(&cert, &at)?;
            r.diagnostics.backend = backend.name().to_string();
            r.diagnostics.audit_max_eigenvalue = -cert.margin;
            Some(r)
        }
        other => {
            let _ = writeln!(text, "reference design point not certified: {other:?}");
            status = EXIT_INFEASIBLE;
            None
        }
    };

    let mut sim_json = serde_json::Value::Null;
    if let Some(r) = &design {
        let _ = writeln!(
            text,
            "reference design point (alpha = {ref_alpha}, mu2 = {ref_mu2})"
        );
        text.push_str(&certificate_text(r));
        write_json(opts.out.as_deref(), "result.json", r)?;
        let cfg = sim_config(&sys, opts)?;
        let start = Instant::now();
        let trace = sim::simulate(&sys.plant, &sys.exo, r, &sys.h, &cfg)?;
        let sim_secs = start.elapsed().as_secs_f64();
        if let Some(dir) = opts.out.as_deref() {
            write_trace(dir, &trace)?;
        }
        let rep = evaluate_bounds(&trace, r);
        let t_end = trace.t.last().copied().unwrap_or(cfg.t_end);
        let _ = writeln!(
            text,
            "simulation over [{}, {t_end}] at dt = {} ({sim_secs:.1} s)",
            cfg.t0, cfg.dt
        );
        let est = estimation_error(&trace);
        if let Some((err, w_end, sup)) = est {
            let _ = writeln!(
                text,
                "  input-estimate error at t = {t_end}: {err:.6e} ({:.3}% of |w|, sup |w| = {sup:.4e})",
                100.0 * err / w_end
            );
        }
        text.push_str(&bound_text(&rep));
        if !rep.passed {
            status = EXIT_BOUND;
        }
        sim_json = json!({
            "t_end": t_end,
            "seconds": sim_secs,
            "e_w_final": est.map(|e| e.0),
            "w_final_norm": est.map(|e| e.1),
            "w_sup": est.map(|e| e.2),
            "bounds": rep,
        });
    }

    let json = json!({
        "feasible": optimum.is_some(),
        "sweep_seconds": sweep_secs,
        "alpha_star": optimum.as_ref().map(|r| r.cert.alpha),
        "mu2_star": optimum.as_ref().map(|r| r.cert.mu2),
        "reference": { "alpha": ref_alpha, "mu2": ref_mu2 },
        "alpha_within_band": alpha_ok,
        "mu2_within_band": mu2_ok,
        "optimum": optimum,
        "design_point": design,
        "simulation": sim_json,
    });
    Ok(Report { text, json, status })
}
