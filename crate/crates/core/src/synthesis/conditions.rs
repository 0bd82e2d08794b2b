//! Rank tests on matrix pencils: detectability, the exogenous-model
//! compatibility condition and the arbitrary-accuracy conditions.

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, complex_rank, eigenvalues, max_abs, numeric_rank, Mat, RANK_TOL};
use crate::model::{ExoModel, Plant};

/// A point `λ` at which a pencil loses rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankWitness {
    pub re: f64,
    pub im: f64,
    pub rank: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub witnesses: Vec<RankWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub passed: bool,
    pub items: Vec<ConditionItem>,
}

impl ConditionReport {
    fn from_items(items: Vec<ConditionItem>) -> Self {
        Self {
            passed: items.iter().all(|i| i.passed),
            items,
        }
    }

    pub fn witnesses(&self) -> impl Iterator<Item = &RankWitness> {
        self.items.iter().flat_map(|i| i.witnesses.iter())
    }
}

/// Real-part threshold separating the closed right half-plane.
fn re_tol(a: &Mat) -> f64 {
    1e-9 * (1.0 + max_abs(a))
}

/// `[m − λ n]` evaluated at a complex point, as (real, imaginary) parts.
fn pencil_at(m: &Mat, n: &Mat, lambda: Complex<f64>) -> (Mat, Mat) {
    (m - n * lambda.re, n * -lambda.im)
}

fn rank_at(m: &Mat, n: &Mat, lambda: Complex<f64>) -> Result<usize> {
    let (re, im) = pencil_at(m, n, lambda);
    complex_rank(&re, &im, RANK_TOL)
}

/// `[A − λI; C]` has full column rank at every eigenvalue of `A` in the
/// closed right half-plane. Returns the failing eigenvalues.
pub fn pbh_detectable(a: &Mat, c: &Mat) -> Result<Vec<RankWitness>> {
    let n = a.nrows();
    linalg::expect_shape(a, n, n, "A")?;
    linalg::expect_shape(c, c.nrows(), n, "C")?;
    let m = linalg::vstack(&[a, c])?;
    let mut e = Mat::zeros(n + c.nrows(), n);
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    let tol = re_tol(a);
    let mut out = vec![];
    for lambda in eigenvalues(a)? {
        if lambda.re < -tol || lambda.im < 0.0 {
            continue;
        }
        let rank = rank_at(&m, &e, lambda)?;
        if rank < n {
            out.push(RankWitness {
                re: lambda.re,
                im: lambda.im,
                rank,
                required: n,
            });
        }
    }
    Ok(out)
}

/// Detectability of `(A, C)` by the rank test.
pub fn check_detectability(a: &Mat, c: &Mat) -> Result<ConditionReport> {
    let witnesses = pbh_detectable(a, c)?;
    Ok(ConditionReport::from_items(vec![ConditionItem {
        name: "detectability".into(),
        passed: witnesses.is_empty(),
        detail: if witnesses.is_empty() {
            "every unstable mode is observable".into()
        } else {
            format!(
                "{} unobservable mode(s) with nonnegative real part",
                witnesses.len()
            )
        },
        witnesses,
    }]))
}

/// `[A − λI, B; C, D]` has full column rank at every eigenvalue `λ` of
/// `A_m` with nonnegative real part.
pub fn check_condition1(p: &Plant, m: &ExoModel) -> Result<ConditionReport> {
    let (nx, nw) = (p.n_x(), p.n_w());
    let (big, e) = system_pencil(&p.a, &p.b, &p.c, &p.d)?;
    let tol = re_tol(&m.a_m);
    let mut witnesses = vec![];
    for lambda in eigenvalues(&m.a_m)? {
        if lambda.re < -tol || lambda.im < 0.0 {
            continue;
        }
        let rank = rank_at(&big, &e, lambda)?;
        if rank < nx + nw {
            witnesses.push(RankWitness {
                re: lambda.re,
                im: lambda.im,
                rank,
                required: nx + nw,
            });
        }
    }
    Ok(ConditionReport::from_items(vec![ConditionItem {
        name: "plant pencil at unstable model modes".into(),
        passed: witnesses.is_empty(),
        detail: format!("[A − λI, B; C, D] needs column rank {}", nx + nw),
        witnesses,
    }]))
}

/// `(M, E)` with `M − λE = [A − λI, B; C, D]`.
fn system_pencil(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<(Mat, Mat)> {
    let n = a.nrows();
    let m = linalg::block(&[vec![Some(a), Some(b)], vec![Some(c), Some(d)]])?;
    let mut e = Mat::zeros(m.nrows(), m.ncols());
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    Ok((m, e))
}

/// Points of the closed right half-plane where the tall pencil `M − λE`
/// drops below full column rank. Returns `Err`-free `None` when the pencil
/// is column-rank deficient for every `λ`.
pub fn pencil_rhp_rank_drops(m: &Mat, e: &Mat) -> Result<Option<Vec<RankWitness>>> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(Some(vec![]));
    }
    if rows < cols {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    // Normal rank is attained at generic points.
    let generic = Complex::new(rng.gen_range(0.3..1.3), rng.gen_range(0.3..1.3));
    if rank_at(m, e, generic)? < cols {
        return Ok(None);
    }
    // Every rank drop of the tall pencil is a root of det(R(M − λE)).
    let r = Mat::from_fn(cols, rows, |_, _| rng.gen_range(-1.0..1.0));
    let (rm, re) = (&r * m, &r * e);
    let mut candidates = None;
    for _ in 0..8 {
        let sigma: f64 = rng.gen_range(-2.0..2.0);
        let shifted = &rm - &re * sigma;
        if linalg::condition_number(&shifted)? > 1e12 {
            continue;
        }
        let k = linalg::solve_linear(&shifted, &re)?;
        let scale = max_abs(&k).max(f64::MIN_POSITIVE);
        candidates = Some(
            eigenvalues(&k)?
                .into_iter()
                .filter(|mu| mu.norm() > 1e-7 * scale)
                .map(|mu| Complex::new(sigma, 0.0) + mu.inv())
                .collect::<Vec<_>>(),
        );
        break;
    }
    let candidates = candidates.ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    let tol = re_tol(m);
    let mut out: Vec<RankWitness> = vec![];
    for lambda in candidates {
        if lambda.re < -tol || lambda.im < -tol {
            continue;
        }
        let lambda = Complex::new(lambda.re, lambda.im.max(0.0));
        let rank = rank_at(m, e, lambda)?;
        let dup = out.iter().any(|w| {
            (w.re - lambda.re).abs() + (w.im - lambda.im).abs() < 1e-8 * (1.0 + lambda.norm())
        });
        if rank < cols && !dup {
            out.push(RankWitness {
                re: lambda.re,
                im: lambda.im,
                rank,
                required: cols,
            });
        }
    }
    Ok(Some(out))
}

fn pencil_item(name: &str, a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Result<ConditionItem> {
    let (m, e) = system_pencil(a, b, c, d)?;
    let cols = m.ncols();
    Ok(match pencil_rhp_rank_drops(&m, &e)? {
        None => ConditionItem {
            name: name.into(),
            passed: false,
            detail: format!("column rank below {cols} for every λ"),
            witnesses: vec![],
        },
        Some(w) => ConditionItem {
            name: name.into(),
            passed: w.is_empty(),
            detail: if w.is_empty() {
                format!("column rank {cols} on the closed right half-plane")
            } else {
                format!("{} rank drop(s) with nonnegative real part", w.len())
            },
            witnesses: w,
        },
    })
}

/// Conditions under which a linear plant and model admit observers of any
/// prescribed accuracy.
pub fn check_lemma8_conditions(p: &Plant, m: &ExoModel) -> Result<ConditionReport> {
    p.validate()?;
    m.validate()?;
    if p.f1.name != "zero" || m.f2.name != "zero" {
        return Err(Error::InvalidOption(
            "arbitrary-accuracy rank conditions apply to linear plants and models only".into(),
        ));
    }
    let mut items = vec![];

    let ddm = &p.d * &m.d_m;
    let resid = max_abs(&ddm);
    items.push(ConditionItem {
        name: "D D_m = 0".into(),
        passed: resid <= 1e-12,
        detail: format!("max |D D_m| = {resid:e}"),
        witnesses: vec![],
    });

    let cb = &p.c * &p.b * &m.d_m + &p.d * &m.c_m * &m.b_m;
    let rank = numeric_rank(&cb, RANK_TOL)?;
    let nv = m.n_v();
    items.push(ConditionItem {
        name: "C B D_m + D C_m B_m full column rank".into(),
        passed: rank == nv,
        detail: format!("rank {rank} of {nv}"),
        witnesses: vec![],
    });

    items.push(pencil_item(
        "plant pencil [A − λI, B; C, D]",
        &p.a,
        &p.b,
        &p.c,
        &p.d,
    )?);
    items.push(pencil_item(
        "model pencil [A_m − λI, B_m; C_m, D_m]",
        &m.a_m,
        &m.b_m,
        &m.c_m,
        &m.d_m,
    )?);
    Ok(ConditionReport::from_items(items))
}

/// The two rank conditions characterizing output-matched Lyapunov
/// certificates: `rank 𝒞ℬ = rank ℬ`, and
/// `rank [𝒜 − λI, ℬ; 𝒞, 0] = n + rank ℬ` on the closed right half-plane.
pub fn output_matching_rank_conditions(a: &Mat, b: &Mat, c: &Mat) -> Result<ConditionReport> {
    let n = a.nrows();
    linalg::expect_shape(a, n, n, "𝒜")?;
    linalg::expect_shape(b, n, b.ncols(), "ℬ")?;
    linalg::expect_shape(c, c.nrows(), n, "𝒞")?;
    let basis = linalg::range_basis(b, RANK_TOL)?;
    let r = basis.ncols();
    // E is orthonormal, so ‖𝒞‖ sets the scale for 𝒞E.
    let c_norm = linalg::singular_values(c)?.first().copied().unwrap_or(0.0);
    let rank_cb = linalg::singular_values(&(c * &basis))?
        .into_iter()
        .filter(|&s| s > RANK_TOL * c_norm)
        .count();
    let mut items = vec![ConditionItem {
        name: "rank 𝒞ℬ = rank ℬ".into(),
        passed: rank_cb == r,
        detail: format!("rank 𝒞ℬ = {rank_cb}, rank ℬ = {r}"),
        witnesses: vec![],
    }];
    if rank_cb < r {
        items.push(ConditionItem {
            name: "pencil [𝒜 − λI, ℬ; 𝒞, 0]".into(),
            passed: false,
            detail: "not evaluated: 𝒞ℬ loses rank".into(),
            witnesses: vec![],
        });
        return Ok(ConditionReport::from_items(items));
    }
    // With 𝒞E of full column rank the pencil drops rank exactly where
    // [Π𝒜 − λI; 𝒞] does, Π = I − E(𝒞E)⁺𝒞.
    let pi = if r == 0 {
        Mat::identity(n, n)
    } else {
        let ce = c * &basis;
        let pinv = ce
            .clone()
            .pseudo_inverse(1e-14)
            .map_err(|e| Error::Backend(e.to_string()))?;
        Mat::identity(n, n) - &basis * pinv * c
    };
    let witnesses = pbh_detectable(&(&pi * a), c)?;
    // Cross-check each witness against the original pencil.
    let big = linalg::block(&[
        vec![Some(a), Some(&basis)],
        vec![Some(c), Some(&Mat::zeros(c.nrows(), r))],
    ])?;
    let mut e = Mat::zeros(big.nrows(), big.ncols());
    e.view_mut((0, 0), (n, n)).fill_with_identity();
    let mut confirmed = vec![];
    for w in witnesses {
        let rank = rank_at(&big, &e, Complex::new(w.re, w.im))?;
        confirmed.push(RankWitness {
            rank,
            required: n + r,
            ..w
        });
    }
    items.push(ConditionItem {
        name: "pencil [𝒜 − λI, ℬ; 𝒞, 0]".into(),
        passed: confirmed.is_empty(),
        detail: format!("needs rank {} on the closed right half-plane", n + r),
        witnesses: confirmed,
    });
    Ok(ConditionReport::from_items(items))
}
