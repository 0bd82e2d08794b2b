//! JSON system description.
//!
//! Matrices are arrays of row arrays. Nonlinearities and signals are
//! `{"name": ..., "params": [...]}` objects naming registry entries. Units
//! are whatever the user's model uses; nothing here assumes SI.

use std::path::Path;

use serde::Deserialize;
use uio_core::linalg::Mat;
use uio_core::model::{
    build_augmented_plant, AugmentedPlant, ExoModel, NonlinearityDescriptor, Plant,
    SignalDescriptor,
};
use uio_core::serde_mat::RowMajor;
use uio_core::simulation::SimConfig;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub plant: PlantSpec,
    #[serde(default)]
    pub exo_model: ExoSpec,
    #[serde(rename = "H")]
    pub h: Option<RowMajor>,
    #[serde(rename = "L2")]
    pub l2: Option<RowMajor>,
    #[serde(default)]
    pub synthesis: SynthesisSpec,
    pub simulation: Option<SimulationSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct PlantSpec {
    pub A: RowMajor,
    pub B: RowMajor,
    pub C: RowMajor,
    pub D: Option<RowMajor>,
    pub B_f: Option<RowMajor>,
    pub C_q1: Option<RowMajor>,
    pub D_q1f: Option<RowMajor>,
    pub D_q1: Option<RowMajor>,
    pub D_f: Option<RowMajor>,
    pub f1: Option<NonlinearitySpec>,
    pub g_x: Option<SignalDescriptor>,
    pub g_q1: Option<SignalDescriptor>,
    pub g_y: Option<SignalDescriptor>,
}

/// Registry nonlinearity. `dim` fixes the componentwise size; otherwise it
/// is read off `B_f` (or `C_q1`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySpec {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(non_snake_case, clippy::large_enum_variant)]
pub enum ExoSpec {
    /// `ẋm = v`, `w = xm`.
    #[default]
    Integrator,
    /// `w = v`.
    Passthrough,
    Linear {
        A_m: RowMajor,
        B_m: RowMajor,
        C_m: RowMajor,
        D_m: Option<RowMajor>,
        B_mf: Option<RowMajor>,
        C_q2: Option<RowMajor>,
        D_q2f: Option<RowMajor>,
        D_q2: Option<RowMajor>,
        D_wf: Option<RowMajor>,
        f2: Option<NonlinearitySpec>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub alpha_max: Option<f64>,
    pub alpha_grid: Option<usize>,
    pub margin: Option<f64>,
    pub mu1: Option<f64>,
    pub gamma: Option<f64>,
    /// Floor on `λ_min(𝒫)`; raising it keeps the gains moderate.
    pub eps_pd: Option<f64>,
    /// Bound on the norm of the decision variables, and so on the gains.
    pub decision_radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
    pub xm0: Option<Vec<f64>>,
    pub xi_hat0: Option<Vec<f64>>,
    #[serde(default)]
    pub v: SignalDescriptor,
}

/// A fully validated system.
#[derive(Debug, Clone)]
pub struct LoadedSystem {
    pub plant: Plant,
    pub exo: ExoModel,
    pub aug: AugmentedPlant,
    pub h: Mat,
    pub l2: Mat,
    pub synthesis: SynthesisSpec,
    pub sim: Option<SimConfig>,
}

fn matrix(field: &str, m: RowMajor) -> Result<Mat, CliError> {
    Mat::try_from(m).map_err(|e| CliError::Config(format!("{field}: {e}")))
}

/// Optional matrix, zero-filled to `rows x cols` when absent.
fn matrix_or_zero(
    field: &str,
    m: Option<RowMajor>,
    rows: usize,
    cols: usize,
) -> Result<Mat, CliError> {
    match m {
        None => Ok(Mat::zeros(rows, cols)),
        Some(m) => Ok(uio_core::serde_mat::conform_empty(
            matrix(field, m)?,
            rows,
            cols,
        )),
    }
}

fn nonlinearity(
    spec: Option<NonlinearitySpec>,
    b_f: Option<&RowMajor>,
    c_q: Option<&RowMajor>,
) -> Result<NonlinearityDescriptor, CliError> {
    let cols = |m: Option<&RowMajor>| m.and_then(|m| m.0.first().map(|r| r.len()));
    let rows = |m: Option<&RowMajor>| m.map(|m| m.0.len());
    let Some(spec) = spec else {
        let (n_q, n_f) = (rows(c_q).unwrap_or(0), cols(b_f).unwrap_or(0));
        return Ok(NonlinearityDescriptor::new("zero", n_q, n_f, vec![]));
    };
    let n_f = spec.dim.or(cols(b_f)).or(rows(c_q)).ok_or_else(|| {
        CliError::Config(format!(
            "nonlinearity `{}`: size unknown; give `dim` or the input matrix",
            spec.name
        ))
    })?;
    let n_q = if spec.name == "zero" {
        rows(c_q).unwrap_or(n_f)
    } else {
        spec.dim.or(rows(c_q)).unwrap_or(n_f)
    };
    Ok(NonlinearityDescriptor::new(
        &spec.name,
        n_q,
        n_f,
        spec.params,
    ))
}

impl PlantSpec {
    fn build(self) -> Result<Plant, CliError> {
        let f1 = nonlinearity(self.f1, self.B_f.as_ref(), self.C_q1.as_ref())?;
        let a = matrix("plant.A", self.A)?;
        let c = matrix("plant.C", self.C)?;
        let n_x = a.nrows();
        let b = uio_core::serde_mat::conform_empty(matrix("plant.B", self.B)?, n_x, 0);
        let (n_w, n_y, n_q, n_f) = (b.ncols(), c.nrows(), f1.input_dim, f1.output_dim);
        Ok(Plant {
            b_f: matrix_or_zero("plant.B_f", self.B_f, n_x, n_f)?,
            c_q1: matrix_or_zero("plant.C_q1", self.C_q1, n_q, n_x)?,
            d_q1f: matrix_or_zero("plant.D_q1f", self.D_q1f, n_q, n_f)?,
            d_q1: matrix_or_zero("plant.D_q1", self.D_q1, n_q, n_w)?,
            d_f: matrix_or_zero("plant.D_f", self.D_f, n_y, n_f)?,
            d: matrix_or_zero("plant.D", self.D, n_y, n_w)?,
            a,
            b,
            c,
            f1,
            g_x: self.g_x.unwrap_or_default(),
            g_q1: self.g_q1.unwrap_or_default(),
            g_y: self.g_y.unwrap_or_default(),
        })
    }
}

impl ExoSpec {
    fn build(self, n_w: usize) -> Result<ExoModel, CliError> {
        match self {
            ExoSpec::Integrator => Ok(ExoModel::integrator(n_w)),
            ExoSpec::Passthrough => Ok(ExoModel::passthrough(n_w)),
            ExoSpec::Linear {
                A_m,
                B_m,
                C_m,
                D_m,
                B_mf,
                C_q2,
                D_q2f,
                D_q2,
                D_wf,
                f2,
            } => {
                let f2 = nonlinearity(f2, B_mf.as_ref(), C_q2.as_ref())?;
                let a_m = matrix("exo_model.A_m", A_m)?;
                let n_m = a_m.nrows();
                let b_m = matrix("exo_model.B_m", B_m)?;
                let c_m =
                    uio_core::serde_mat::conform_empty(matrix("exo_model.C_m", C_m)?, n_w, n_m);
                let n_v = b_m.ncols();
                let (n_q, n_f) = (f2.input_dim, f2.output_dim);
                Ok(ExoModel {
                    b_mf: matrix_or_zero("exo_model.B_mf", B_mf, n_m, n_f)?,
                    c_q2: matrix_or_zero("exo_model.C_q2", C_q2, n_q, n_m)?,
                    d_q2f: matrix_or_zero("exo_model.D_q2f", D_q2f, n_q, n_f)?,
                    d_q2: matrix_or_zero("exo_model.D_q2", D_q2, n_q, n_v)?,
                    d_wf: matrix_or_zero("exo_model.D_wf", D_wf, c_m.nrows(), n_f)?,
                    d_m: matrix_or_zero("exo_model.D_m", D_m, c_m.nrows(), n_v)?,
                    a_m,
                    b_m,
                    c_m,
                    f2,
                })
            }
        }
    }
}

/// Parses JSON text, reporting schema violations at their JSON path.
pub fn parse_system(text: &str) -> Result<SystemFile, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at `{path}`: {}", e.into_inner()))
    })
}

impl SystemFile {
    /// Builds and validates every component, filling defaults: zero hooks,
    /// `H` selecting the plant states, `L₂ = 0`.
    pub fn load(self) -> Result<LoadedSystem, CliError> {
        let plant = self.plant.build()?;
        let exo = self.exo_model.build(plant.n_w())?;
        let aug = build_augmented_plant(&plant, &exo)?;
        let (n_x, n_m) = (plant.n_x(), exo.n_m());
        let h = match self.h {
            Some(h) => matrix("H", h)?,
            None => Mat::identity(n_x, n_x + n_m),
        };
        if h.ncols() != n_x + n_m {
            return Err(CliError::Config(format!(
                "H: expected {} columns (plant plus model states), found {}",
                n_x + n_m,
                h.ncols()
            )));
        }
        let l2 = matrix_or_zero("L2", self.l2, aug.n_q(), aug.n_y())?;
        if l2.shape() != (aug.n_q(), aug.n_y()) {
            return Err(CliError::Config(format!(
                "L2: expected {}x{}, found {}x{}",
                aug.n_q(),
                aug.n_y(),
                l2.nrows(),
                l2.ncols()
            )));
        }
        let sim = self
            .simulation
            .map(|s| {
                let mut cfg = SimConfig::new(
                    s.t_end,
                    s.dt,
                    s.x0,
                    s.xm0.unwrap_or_else(|| vec![0.0; n_m]),
                    s.v,
                );
                cfg.t0 = s.t0;
                cfg.xi_hat0 = s.xi_hat0.unwrap_or_default();
                cfg.validate(n_x, n_m).map(|_| cfg)
            })
            .transpose()?;
        Ok(LoadedSystem {
            plant,
            exo,
            aug,
            h,
            l2,
            synthesis: self.synthesis,
            sim,
        })
    }
}

pub fn parse_config(path: &Path) -> Result<LoadedSystem, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_system(&text)?.load()
}

/// The magnetic-bearing system shipped with the crate.
pub const MAGNETIC_BEARING_JSON: &str = include_str!("../fixtures/magnetic_bearing.json");
