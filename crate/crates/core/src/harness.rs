//! Experiment drivers: Carleman check, unique-continuation decay, Riemann–Lebesgue decay and
//! DN-noise stability sweeps, plus CSV output.

use crate::boundary::{BoundaryField, PatchSquare};
use crate::cgo::Variant;
use crate::dnmap::DnContext;
use crate::error::{Error, Result};
use crate::fields::{fourier_transform, GridField, Potential, ZERO};
use crate::forward::{BoundaryMode, HelmholtzOperator};
use crate::geometry::{on_plate_of_omega, omega_weights, BoundaryPatch, Plate, SlabGeometry};
use crate::linalg::{linear_fit, CMat};
use crate::par::{map_indexed, Execution};
use crate::recovery::{assemble_bounds, choose_parameters, RecoveryResult, Schedule};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

pub const SCHEMA_LINE: &str = "# schema-version: 1";

/// Write serde rows as CSV preceded by the schema line.
pub fn write_csv<W: Write, T: Serialize>(mut out: W, rows: &[T]) -> Result<()> {
    writeln!(out, "{SCHEMA_LINE}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// RNG for record `index` of a run keyed by `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// ---------------------------------------------------------------------------------------
// Carleman check

/// Smooth test function `χ(x') Σ c_{abc} X_a(x₁) X_b(x₂) sin(cπx₃/L)` vanishing on ∂Ω.
///
/// On a periodic-lateral grid `χ ≡ 1` and `X_a = cos(2πa(x − x₀)/P)`, `a ≥ 0`. On the
/// truncated cylinder `χ = 1 − |x'|²/R²` (clamped at zero) and `X_a = sin((a+1)π(x + R)/2R)`.
#[derive(Clone, Debug)]
pub struct SineSeries {
    pub lateral: usize,
    pub vertical: usize,
    /// index `a + lateral·(b + lateral·(c−1))`
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
struct SeriesFrame {
    periodic: bool,
    r_lat: f64,
    x0: f64,
    period: f64,
    l: f64,
}

impl SeriesFrame {
    fn new(op: &HelmholtzOperator) -> Self {
        let g = &op.grid;
        SeriesFrame {
            periodic: op.mode == BoundaryMode::PeriodicLateral,
            r_lat: op.geom.r_lat,
            x0: g.origin[0],
            period: g.nx as f64 * g.h,
            l: op.geom.l,
        }
    }

    fn lat(&self, a: usize, x: f64) -> f64 {
        if self.periodic {
            (2.0 * PI * a as f64 * (x - self.x0) / self.period).cos()
        } else {
            ((a + 1) as f64 * PI * (x + self.r_lat) / (2.0 * self.r_lat)).sin()
        }
    }

    fn chi(&self, x1: f64, x2: f64) -> f64 {
        if self.periodic {
            1.0
        } else {
            (1.0 - (x1 * x1 + x2 * x2) / (self.r_lat * self.r_lat)).max(0.0)
        }
    }

    fn vert(&self, c: usize, z: f64) -> f64 {
        (c as f64 * PI * z / self.l).sin()
    }

    fn vert_dz(&self, c: usize, z: f64) -> f64 {
        let w = c as f64 * PI / self.l;
        w * (w * z).cos()
    }
}

impl SineSeries {
    pub fn modes(lateral: usize, vertical: usize) -> usize {
        lateral * lateral * vertical
    }

    fn mode_index(&self, m: usize) -> (usize, usize, usize) {
        let a = m % self.lateral;
        let b = (m / self.lateral) % self.lateral;
        (a, b, m / (self.lateral * self.lateral) + 1)
    }

    /// Random coefficients `N(0,1) / (1 + a² + b² + c²)^{3/4}`.
    pub fn random(lateral: usize, vertical: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut s = SineSeries { lateral, vertical, coeffs: vec![0.0; Self::modes(lateral, vertical)] };
        for m in 0..s.coeffs.len() {
            let (a, b, c) = s.mode_index(m);
            let decay = (1.0 + (a * a + b * b + c * c) as f64).powf(-0.75);
            s.coeffs[m] = normal.sample(rng) * decay;
        }
        s
    }

    /// A single mode with unit coefficient.
    pub fn single(lateral: usize, vertical: usize, a: usize, b: usize, c: usize) -> Self {
        let mut s = SineSeries { lateral, vertical, coeffs: vec![0.0; Self::modes(lateral, vertical)] };
        s.coeffs[a + lateral * (b + lateral * (c - 1))] = 1.0;
        s
    }
}

/// Values of each mode at every grid node (zero outside Ω̄).
fn mode_fields(op: &HelmholtzOperator, lateral: usize, vertical: usize) -> Vec<Vec<f64>> {
    let f = SeriesFrame::new(op);
    let g = &op.grid;
    let proto = SineSeries { lateral, vertical, coeffs: Vec::new() };
    map_indexed(op.exec, SineSeries::modes(lateral, vertical), |m| {
        let (a, b, c) = proto.mode_index(m);
        (0..g.len())
            .map(|n| {
                let (i, j, k) = g.ijk(n);
                let x = g.coord(i, j, k);
                f.chi(x[0], x[1]) * f.lat(a, x[0]) * f.lat(b, x[1]) * f.vert(c, x[2])
            })
            .collect()
    })
}

/// Boundary samples `(weight·(ζ·η)·e^{−2τx·ζ}, ∂_η φ_m)` collected over both plates and,
/// for the truncated cylinder, the lateral wall.
struct BoundaryQuad {
    points: Vec<([f64; 3], f64)>,
    dnormal: Vec<Vec<f64>>,
}

fn boundary_quadrature(op: &HelmholtzOperator, zeta: [f64; 3], lateral: usize, vertical: usize) -> BoundaryQuad {
    let f = SeriesFrame::new(op);
    let g = &op.grid;
    let d = g.dims();
    let proto = SineSeries { lateral, vertical, coeffs: Vec::new() };
    let nmodes = SineSeries::modes(lateral, vertical);
    // (point, weight·(ζ·η), which: 0 top, 1 bottom, 2 wall)
    let mut pts: Vec<([f64; 3], f64, u8)> = Vec::new();
    for j in 0..d[1] {
        for i in 0..d[0] {
            let x = g.coord(i, j, 0);
            if !on_plate_of_omega(g, &op.geom, x[0], x[1]) {
                continue;
            }
            let w = g.h * g.h;
            pts.push(([x[0], x[1], f.l], w * zeta[2], 0));
            pts.push(([x[0], x[1], 0.0], -w * zeta[2], 1));
        }
    }
    if !f.periodic && (zeta[0] != 0.0 || zeta[1] != 0.0) {
        let nt = ((2.0 * PI * f.r_lat / g.h).ceil() as usize * 2).max(64);
        let dt = 2.0 * PI / nt as f64;
        for t in 0..nt {
            let th = t as f64 * dt;
            let (c, s) = (th.cos(), th.sin());
            for k in 0..d[2] {
                let wz = if k == 0 || k == d[2] - 1 { 0.5 * g.h } else { g.h };
                let z = k as f64 * g.h;
                pts.push(([f.r_lat * c, f.r_lat * s, z], wz * f.r_lat * dt * (zeta[0] * c + zeta[1] * s), 2));
            }
        }
    }
    let dnormal = (0..nmodes)
        .map(|m| {
            let (a, b, c) = proto.mode_index(m);
            pts.iter()
                .map(|(x, _, which)| match which {
                    0 => f.chi(x[0], x[1]) * f.lat(a, x[0]) * f.lat(b, x[1]) * f.vert_dz(c, x[2]),
                    1 => -f.chi(x[0], x[1]) * f.lat(a, x[0]) * f.lat(b, x[1]) * f.vert_dz(c, x[2]),
                    _ => -2.0 / f.r_lat * f.lat(a, x[0]) * f.lat(b, x[1]) * f.vert(c, x[2]),
                })
                .collect()
        })
        .collect();
    BoundaryQuad { points: pts.into_iter().map(|(x, w, _)| (x, w)).collect(), dnormal }
}

/// Quadratic forms of the three Carleman terms on the mode basis at one τ.
struct CarlemanForms {
    interior: DMatrix<f64>,
    boundary: DMatrix<f64>,
    rhs: DMatrix<f64>,
}

fn gram_weighted(vecs: &[Vec<f64>], w: &[f64]) -> DMatrix<f64> {
    let n = vecs.len();
    let mut m = DMatrix::zeros(n, n);
    for a in 0..n {
        let wa: Vec<f64> = vecs[a].iter().zip(w).map(|(x, y)| x * y).collect();
        for b in a..n {
            let v: f64 = wa.iter().zip(&vecs[b]).map(|(x, y)| x * y).sum();
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

fn weight_exp(x: [f64; 3], zeta: [f64; 3], tau: f64) -> f64 {
    (-2.0 * tau * (x[0] * zeta[0] + x[1] * zeta[1] + x[2] * zeta[2])).exp()
}

fn carleman_forms(
    op: &HelmholtzOperator,
    zeta: [f64; 3],
    tau: f64,
    modes: &[Vec<f64>],
    residuals: &[Vec<f64>],
    bq: &BoundaryQuad,
) -> CarlemanForms {
    let g = &op.grid;
    let ow = omega_weights(g, &op.geom);
    let w: Vec<f64> = (0..g.len())
        .map(|n| {
            let (i, j, k) = g.ijk(n);
            ow[n] * weight_exp(g.coord(i, j, k), zeta, tau)
        })
        .collect();
    let bw: Vec<f64> = bq.points.iter().map(|(x, wt)| wt * weight_exp(*x, zeta, tau)).collect();
    CarlemanForms {
        interior: gram_weighted(modes, &w),
        boundary: gram_weighted(&bq.dnormal, &bw),
        rhs: gram_weighted(residuals, &w),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub zeta: [f64; 3],
    pub tau_list: Vec<f64>,
    /// `τ² ∫ |e^{−τx·ζ}u|²` summed over the samples
    pub lhs_interior: Vec<f64>,
    /// `τ ∫ (ζ·η) |e^{−τx·ζ}∂_η u|²` summed over the samples
    pub lhs_boundary: Vec<f64>,
    pub rhs: Vec<f64>,
    /// largest single-sample ratio per τ
    pub sample_max: Vec<f64>,
    /// smallest constant valid on the span of the samples, per τ
    pub fitted_c: Vec<f64>,
    pub trials: usize,
    pub span_rank: usize,
    /// `(max − min) / min` of `fitted_c` over the upper half of the sweep
    pub variation: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct CarlemanConfig {
    pub lateral: usize,
    pub vertical: usize,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        CarlemanConfig { lateral: 2, vertical: 25 }
    }
}

/// Quadrature values `(interior, boundary, rhs)` of the three Carleman terms for one test
/// function; the τ² and τ factors are included.
pub fn carleman_terms(op: &HelmholtzOperator, zeta: [f64; 3], tau: f64, u: &SineSeries) -> (f64, f64, f64) {
    let modes = mode_fields(op, u.lateral, u.vertical);
    let res = mode_residuals(op, &modes);
    let bq = boundary_quadrature(op, zeta, u.lateral, u.vertical);
    let forms = carleman_forms(op, zeta, tau, &modes, &res, &bq);
    let c = DVector::from_column_slice(&u.coeffs);
    let q = |m: &DMatrix<f64>| c.dot(&(m * &c));
    (tau * tau * q(&forms.interior), tau * q(&forms.boundary), q(&forms.rhs))
}

fn mode_residuals(op: &HelmholtzOperator, modes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    map_indexed(op.exec, modes.len(), |m| {
        let u = GridField { grid: op.grid, values: modes[m].iter().map(|&v| C64::new(v, 0.0)).collect() };
        op.apply_full(&u).values.iter().map(|v| v.re).collect()
    })
}

/// Largest `λ` with `N v = λ D v` on the column span of `basis`. Directions where `D` is
/// numerically null (relative eigenvalue below 1e-12) are dropped.
fn restricted_max_eig(n: &DMatrix<f64>, d: &DMatrix<f64>, basis: &DMatrix<f64>) -> Option<f64> {
    let nr = basis.transpose() * n * basis;
    let dr = basis.transpose() * d * basis;
    let eig = nalgebra::SymmetricEigen::new((&dr + dr.transpose()) * 0.5);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 1e-12 * top).collect();
    if keep.is_empty() {
        return None;
    }
    let w = DMatrix::from_fn(dr.nrows(), keep.len(), |r, c| {
        eig.eigenvectors[(r, keep[c])] / eig.eigenvalues[keep[c]].sqrt()
    });
    let y = w.transpose() * nr * &w;
    nalgebra::SymmetricEigen::new((&y + y.transpose()) * 0.5).eigenvalues.iter().cloned().reduce(f64::max)
}

/// `(max − min) / min` over the upper half of a sequence; infinite if any entry is not
/// positive and finite.
pub fn upper_half_variation(v: &[f64]) -> f64 {
    let top = &v[v.len() / 2..];
    if top.is_empty() || top.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return f64::INFINITY;
    }
    let lo = top.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = top.iter().cloned().fold(0.0, f64::max);
    (hi - lo) / lo
}

pub fn carleman_check(
    op: &HelmholtzOperator,
    zeta: [f64; 3],
    tau_list: &[f64],
    trials: usize,
    seed: u64,
    cfg: CarlemanConfig,
) -> Result<CarlemanReport> {
    if zeta[2] < 1.0 {
        return Err(Error::Invalid(format!("ζ·e₃ = {} must be at least 1", zeta[2])));
    }
    if tau_list.is_empty() || tau_list[0] < 1.0 || tau_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Invalid("τ list must be increasing and start at 1 or above".into()));
    }
    let samples: Vec<SineSeries> =
        (0..trials).map(|t| SineSeries::random(cfg.lateral, cfg.vertical, &mut record_rng(seed, t as u64))).collect();
    let nm = SineSeries::modes(cfg.lateral, cfg.vertical);
    let coeffs = DMatrix::from_fn(nm, trials, |m, t| samples[t].coeffs[m]);
    // orthonormal basis of the sample span in coefficient space
    let basis = if trials == 0 {
        DMatrix::zeros(nm, 0)
    } else {
        let svd = coeffs.clone().svd(true, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let u = svd.u.expect("left singular vectors");
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax).collect();
        DMatrix::from_fn(nm, keep.len(), |r, c| u[(r, keep[c])])
    };

    let modes = mode_fields(op, cfg.lateral, cfg.vertical);
    let res = mode_residuals(op, &modes);
    let bq = boundary_quadrature(op, zeta, cfg.lateral, cfg.vertical);
    let mut rep = CarlemanReport {
        zeta,
        tau_list: tau_list.to_vec(),
        lhs_interior: Vec::new(),
        lhs_boundary: Vec::new(),
        rhs: Vec::new(),
        sample_max: Vec::new(),
        fitted_c: Vec::new(),
        trials,
        span_rank: basis.ncols(),
        variation: f64::INFINITY,
        pass: false,
    };
    for &tau in tau_list {
        let f = carleman_forms(op, zeta, tau, &modes, &res, &bq);
        let lhs = &f.interior * (tau * tau) + &f.boundary * tau;
        let (mut si, mut sb, mut sr, mut best) = (0.0, 0.0, 0.0, f64::NEG_INFINITY);
        for t in 0..trials {
            let c = coeffs.column(t);
            let (i, b, r) = (c.dot(&(&f.interior * c)), c.dot(&(&f.boundary * c)), c.dot(&(&f.rhs * c)));
            si += tau * tau * i;
            sb += tau * b;
            sr += r;
            if r > 0.0 {
                best = best.max((tau * tau * i + tau * b) / r);
            }
        }
        rep.lhs_interior.push(si);
        rep.lhs_boundary.push(sb);
        rep.rhs.push(sr);
        rep.sample_max.push(if best.is_finite() { best } else { f64::NAN });
        let fitted = if basis.ncols() == 0 { f64::NAN } else { restricted_max_eig(&lhs, &f.rhs, &basis).unwrap_or(f64::NAN) };
        rep.fitted_c.push(fitted);
    }
    rep.variation = upper_half_variation(&rep.fitted_c);
    rep.pass = rep.variation < 0.5;
    Ok(rep)
}

// ---------------------------------------------------------------------------------------
// Unique-continuation decay

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UcpRow {
    pub index: usize,
    pub flux_norm: f64,
    pub h1_norm: f64,
    pub h2_norm: f64,
    /// `1/√log(e·d‖w‖_{H²}/‖∂_ν w‖)`, absent when `w` vanishes
    pub log_model: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct UcpTable {
    pub rows: Vec<UcpRow>,
    pub skipped: Vec<(usize, String)>,
    /// R² of `‖w‖_{H¹}` against the log model
    pub r2: Option<f64>,
}

/// Nodes of the annulus region `{R+ε−h < |x'| < R'−ε+h}` strictly between the plates.
pub fn ucp_region(op: &HelmholtzOperator) -> Vec<usize> {
    let g = &op.grid;
    let geom = &op.geom;
    let (lo, hi) = (geom.r + geom.eps_cutoff - g.h, geom.r_prime - geom.eps_cutoff + g.h);
    let d = g.dims();
    (0..g.len())
        .filter(|&n| {
            let (i, j, k) = g.ijk(n);
            let x = g.coord(i, j, k);
            let rho = x[0].hypot(x[1]);
            k > 0 && k + 1 < d[2] && rho > lo && rho < hi && i > 0 && j > 0 && i + 1 < d[0] && j + 1 < d[1]
        })
        .collect()
}

/// Discrete `(‖w‖_{H¹(U)}, ‖w‖_{H²(U)})` by central differences.
pub fn sobolev_norms(w: &GridField, region: &[usize]) -> (f64, f64) {
    let g = &w.grid;
    let h = g.h;
    let (mut l2, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &n in region {
        let (i, j, k) = g.ijk(n);
        let at = |di: isize, dj: isize, dk: isize| {
            w.at((i as isize + di) as usize, (j as isize + dj) as usize, (k as isize + dk) as usize)
        };
        let c = at(0, 0, 0);
        l2 += c.norm_sqr();
        let e = [(1, 0, 0), (0, 1, 0), (0, 0, 1)];
        for (a, &(ai, aj, ak)) in e.iter().enumerate() {
            d1 += ((at(ai, aj, ak) - at(-ai, -aj, -ak)) / (2.0 * h)).norm_sqr();
            d2 += ((at(ai, aj, ak) - c * 2.0 + at(-ai, -aj, -ak)) / (h * h)).norm_sqr();
            for &(bi, bj, bk) in &e[a + 1..] {
                let m = (at(ai + bi, aj + bj, ak + bk) - at(ai - bi, aj - bj, ak - bk) - at(bi - ai, bj - aj, bk - ak)
                    + at(-ai - bi, -aj - bj, -ak - bk))
                    / (4.0 * h * h);
                d2 += 2.0 * m.norm_sqr();
            }
        }
    }
    let h3 = h.powi(3);
    (((l2 + d1) * h3).sqrt(), ((l2 + d1 + d2) * h3).sqrt())
}

/// Measure `w = v₂ − v₁` for every Dirichlet datum; `noise` perturbs the measured flux by a
/// relative random amount.
pub fn ucp_decay_measure(
    op1: &HelmholtzOperator,
    op2: &HelmholtzOperator,
    family: &[BoundaryField],
    plate: Plate,
    noise: f64,
    d: f64,
    seed: u64,
) -> Result<UcpTable> {
    if !op1.grid.same_nodes(&op2.grid) {
        return Err(Error::Grid("the two operators live on different grids".into()));
    }
    let region = ucp_region(op1);
    let patch = BoundaryPatch::annulus(&op1.geom, plate);
    let square = PatchSquare::for_radius(patch.outer, op1.grid.h);
    let out = map_indexed(op1.exec, family.len(), |n| -> Result<UcpRow> {
        let f = &family[n];
        let w = op2.solve_dirichlet(f)?.sub(&op1.solve_dirichlet(f)?)?;
        let flux = op1.neumann_trace(&w, &patch, square)?;
        let mut fl = flux.norm_l2();
        if noise > 0.0 && fl > 0.0 {
            let mut rng = record_rng(seed, n as u64);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let eta: Vec<C64> = flux.values.iter().map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect();
            let en = (eta.iter().map(|v| v.norm_sqr()).sum::<f64>() * square.h * square.h).sqrt();
            let noisy = BoundaryField {
                values: flux.values.iter().zip(&eta).map(|(a, b)| a + b * (noise * fl / en)).collect(),
                ..flux.clone()
            };
            fl = noisy.norm_l2();
        }
        let (h1, h2) = sobolev_norms(&w, &region);
        let log_model = if fl > 0.0 && h2 > 0.0 {
            let arg = (std::f64::consts::E * d * h2 / fl).ln();
            (arg > 0.0).then(|| 1.0 / arg.sqrt())
        } else {
            None
        };
        Ok(UcpRow { index: n, flux_norm: fl, h1_norm: h1, h2_norm: h2, log_model })
    });
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (n, r) in out.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => skipped.push((n, e.to_string())),
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| r.log_model.map(|m| (m, r.h1_norm))).unzip();
    let r2 = (x.len() >= 3).then(|| linear_fit(&x, &y).2);
    Ok(UcpTable { rows, skipped, r2 })
}

// ---------------------------------------------------------------------------------------
// Riemann–Lebesgue decay

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RlSample {
    pub ray: usize,
    pub radius: f64,
    pub abs_ft: f64,
}

#[derive(Clone, Debug)]
pub struct RlRay {
    pub direction: [f64; 3],
    /// fitted `p` in `|FT| ≈ C |ξ|^{−p}`; absent when every sample vanishes
    pub p: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RlTable {
    pub samples: Vec<RlSample>,
    pub rays: Vec<RlRay>,
}

/// Sample `|FT(q)|` along each ray at `count` geometric radii in `[r_min, r_max]`. Each
/// sample is the maximum over a sub-grid of its geometric bin, so oscillating transforms
/// are fitted by their envelope.
pub fn rl_decay_measure(q: &Potential, directions: &[[f64; 3]], r_min: f64, r_max: f64, count: usize) -> Result<RlTable> {
    if !(r_min > 0.0 && r_max > r_min) || count < 2 {
        return Err(Error::Invalid("need 0 < r_min < r_max and at least two radii".into()));
    }
    let ft = fourier_transform(&q.field);
    let ratio = (r_max / r_min).powf(1.0 / (count - 1) as f64);
    const SUB: usize = 16;
    let mut samples = Vec::new();
    let mut rays = Vec::new();
    for (ri, dir) in directions.iter().enumerate() {
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let e = [dir[0] / n, dir[1] / n, dir[2] / n];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in 0..count {
            let r0 = r_min * ratio.powi(s as i32);
            let v = (0..SUB)
                .map(|t| {
                    let r = r0 * ratio.powf(t as f64 / SUB as f64 - 0.5);
                    ft.eval([r * e[0], r * e[1], r * e[2]]).norm()
                })
                .fold(0.0, f64::max);
            samples.push(RlSample { ray: ri, radius: r0, abs_ft: v });
            if v > 0.0 {
                xs.push(r0.ln());
                ys.push(v.ln());
            }
        }
        let p = (xs.len() >= 2).then(|| -linear_fit(&xs, &ys).0);
        rays.push(RlRay { direction: e, p });
    }
    Ok(RlTable { samples, rays })
}

// ---------------------------------------------------------------------------------------
// Stability sweep

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub index: usize,
    pub trial: usize,
    pub noise_level: f64,
    pub star_norm: f64,
    pub linf_err: f64,
    pub linf_bound: f64,
    pub hm1_bound: f64,
    pub sup_bound: f64,
    pub r: f64,
    pub tau: f64,
    pub delta: f64,
    pub theta_fit: f64,
    pub hypothesis_violated: bool,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub variant: Variant,
    pub noise_levels: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub basis_n: usize,
    pub test_n: usize,
    pub lambda: f64,
    pub c: f64,
    pub s: f64,
    pub bound_m: f64,
    pub sobolev_constant: f64,
    /// `δ = d⁻⁴`; `None` calibrates it to half the inverse of the largest star norm
    pub delta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub slope: Option<f64>,
    pub theta_fit: Option<f64>,
    pub monotone: bool,
    pub base_star: f64,
}

/// Certified frequency sup from the stability chain at one schedule.
pub fn certified_sup(sch: &Schedule, ln_delta_star: f64, variant: Variant) -> f64 {
    let head = (sch.c * sch.tau * sch.r).exp() / (1.0 + ln_delta_star.abs()).powf(sch.lambda / 2.0);
    let tail = match variant {
        Variant::Theorem2 => sch.tau.powf(-sch.lambda / 2.0),
        Variant::Theorem3 => sch.tau.powf(-sch.lambda),
    };
    head + tail
}

/// Bound chain for one star-norm value.
pub fn bound_from_star(star: f64, delta: f64, cfg: &SweepConfig) -> Result<(Schedule, RecoveryResult)> {
    let star = star.max(f64::MIN_POSITIVE);
    let sch = choose_parameters(delta, star, cfg.lambda, cfg.c, cfg.variant)?;
    let sup = certified_sup(&sch, delta.ln() + star.ln(), cfg.variant);
    Ok((sch, assemble_bounds(sup, sch.r, cfg.s, cfg.bound_m, cfg.sobolev_constant)))
}

/// Measurement plate: Γ₂ᴺ for the opposite-side theorem, Γ₁ᴺ for the same-side one.
pub fn measurement_patch(geom: &SlabGeometry, variant: Variant) -> BoundaryPatch {
    match variant {
        Variant::Theorem2 => BoundaryPatch::neumann(geom, Plate::Bottom),
        Variant::Theorem3 => BoundaryPatch::neumann(geom, Plate::Top),
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

pub fn stability_sweep(ctx: &DnContext, q1: &Potential, q2: &Potential, cfg: &SweepConfig) -> Result<SweepOutput> {
    let target = measurement_patch(&ctx.geom, cfg.variant);
    let op1 = HelmholtzOperator::new(&ctx.geom, &ctx.grid, ctx.k, Some(q1), ctx.mode)?.with_exec(ctx.free.exec);
    let op2 = HelmholtzOperator::new(&ctx.geom, &ctx.grid, ctx.k, Some(q2), ctx.mode)?.with_exec(ctx.free.exec);
    op1.require_admissible()?;
    op2.require_admissible()?;
    ctx.free.require_admissible()?;
    let dn1 = ctx.assemble(q1, target)?;
    let dn2 = ctx.assemble(q2, target)?;
    let diff = dn2.difference(&dn1)?;
    let star = ctx.star(target, cfg.test_n)?;
    let base_star = star.op_norm(&diff)?;
    let linf_err = q1.field.sub(&q2.field)?.max_abs();

    let mut levels = cfg.noise_levels.clone();
    levels.sort_by(|a, b| b.total_cmp(a));
    let jobs: Vec<(usize, f64)> = levels.iter().flat_map(|&s| (0..cfg.trials.max(1)).map(move |t| (t, s))).collect();
    let stars = map_indexed(Execution::Sequential, jobs.len(), |n| -> Result<f64> {
        let (_, sigma) = jobs[n];
        if sigma == 0.0 {
            return star.op_norm(&diff);
        }
        let mut rng = record_rng(cfg.seed, n as u64);
        let e = random_matrix(diff.nrows(), diff.ncols(), &mut rng);
        let en = star.op_norm(&e)?;
        let d = &diff + e * C64::new(sigma / en, 0.0);
        star.op_norm(&d)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let star_max = stars.iter().cloned().fold(0.0, f64::max);
    let delta = cfg.delta.unwrap_or(if star_max > 0.0 { (0.5 / star_max).min(1.0) } else { 1.0 });

    let mut records = Vec::with_capacity(jobs.len());
    for (n, (&(trial, sigma), &st)) in jobs.iter().zip(&stars).enumerate() {
        let violated = delta * st >= 1.0;
        let (r, tau, lb, hb, sb) = if violated {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let (sch, res) = bound_from_star(st, delta, cfg)?;
            (sch.r, sch.tau, res.linf_bound, res.hm1_bound, res.sup_bound)
        };
        records.push(SweepRecord {
            index: n,
            trial,
            noise_level: sigma,
            star_norm: st,
            linf_err,
            linf_bound: lb,
            hm1_bound: hb,
            sup_bound: sb,
            r,
            tau,
            delta,
            theta_fit: f64::NAN,
            hypothesis_violated: violated,
            seed: cfg.seed,
        });
    }
    records.sort_by(|a, b| a.noise_level.total_cmp(&b.noise_level).then(a.trial.cmp(&b.trial)));

    let usable: Vec<&SweepRecord> = records.iter().filter(|r| !r.hypothesis_violated).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = usable
        .iter()
        .map(|r| ((1.0 + (r.delta * r.star_norm.max(f64::MIN_POSITIVE)).ln().abs()).ln().ln(), r.linf_bound.ln()))
        .unzip();
    let slope = (x.len() >= 2 && x.iter().any(|v| (v - x[0]).abs() > 1e-12)).then(|| linear_fit(&x, &y).0);
    // linf ∝ (log log)^{−θ(s−3/2)/(s+1)}
    let theta_fit = slope.map(|p| -p * (cfg.s + 1.0) / (cfg.s - 1.5));
    let mut by_star = usable;
    by_star.sort_by(|a, b| a.star_norm.total_cmp(&b.star_norm));
    let monotone = by_star.windows(2).all(|w| w[0].linf_bound <= w[1].linf_bound * (1.0 + 1e-12));
    if let Some(t) = theta_fit {
        records.iter_mut().for_each(|r| r.theta_fit = t);
    }
    Ok(SweepOutput { records, slope, theta_fit, monotone, base_star })
}

/// Mean-zero plane-wave Dirichlet data on Γ₁ᴰ used as the UCP family.
pub fn dirichlet_family(op: &HelmholtzOperator, count: usize) -> Vec<BoundaryField> {
    let patch = BoundaryPatch::dirichlet(&op.geom);
    let square = PatchSquare::for_radius(op.geom.r_prime, op.grid.h);
    let a = square.half_width();
    (0..count)
        .map(|n| {
            let (p, q) = (n % 3 + 1, n / 3 + 1);
            BoundaryField::from_fn(patch, square, |x, y| {
                if x.hypot(y) >= op.geom.r_prime {
                    return ZERO;
                }
                C64::new(
                    (p as f64 * PI * (x + a) / (2.0 * a)).sin() * (q as f64 * PI * (y + a) / (2.0 * a)).sin(),
                    0.0,
                )
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::bump_potential;
    use crate::geometry::{build_domain, build_periodic_domain};

    fn geom() -> SlabGeometry {
        SlabGeometry::reference()
    }

    #[test]
    fn single_mode_matches_closed_form() {
        let g = geom();
        let mut errs = Vec::new();
        for h in [1.0 / 12.0, 1.0 / 24.0] {
            let grid = build_periodic_domain(&g, h).unwrap();
            let op = HelmholtzOperator::new(&g, &grid, 0.0, None, BoundaryMode::PeriodicLateral).unwrap();
            let p = grid.nx as f64 * grid.h;
            let tau = 2.0;
            let u = SineSeries::single(2, 1, 1, 0, 1);
            let (i, b, r) = carleman_terms(&op, [0.0, 0.0, 1.0], tau, &u);
            let om = 2.0 * PI / g.l;
            let iz = 0.5 * (1.0 - (-2.0 * tau * g.l).exp()) * (1.0 / (2.0 * tau) - 2.0 * tau / (4.0 * tau * tau + om * om));
            let area = p * p / 2.0;
            let k2 = (PI / g.l).powi(2) + (2.0 * PI / p).powi(2);
            let want_i = tau * tau * iz * area;
            let want_b = tau * (PI / g.l).powi(2) * area * ((-2.0 * tau * g.l).exp() - 1.0);
            let want_r = k2 * k2 * iz * area;
            assert!((b - want_b).abs() < 1e-12 * want_b.abs(), "boundary {b} vs {want_b}");
            errs.push(((i - want_i) / want_i).abs().max(((r - want_r) / want_r).abs()));
        }
        assert!(errs[0] < 0.05, "{errs:?}");
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "convergence ratio {ratio}");
    }

    #[test]
    fn zero_trials_are_skipped() {
        let g = geom();
        let grid = build_periodic_domain(&g, 1.0 / 8.0).unwrap();
        let op = HelmholtzOperator::new(&g, &grid, 0.0, None, BoundaryMode::PeriodicLateral).unwrap();
        let rep = carleman_check(&op, [0.0, 0.0, 1.0], &[1.0, 2.0], 0, 1, CarlemanConfig::default()).unwrap();
        assert!(rep.fitted_c.iter().all(|c| c.is_nan()));
        assert!(!rep.pass);
        assert!(carleman_check(&op, [0.0, 0.0, 0.5], &[1.0], 3, 1, CarlemanConfig::default()).is_err());
    }

    #[test]
    fn rl_bump_decays_fast_and_zero_is_skipped() {
        let g = geom();
        // the bump's transform decays like exp(−c√|ξ|), so the local power passes 4 near |ξ| ≈ 30
        let grid = build_domain(&g, 1.0 / 64.0).unwrap();
        let q = bump_potential(&grid, &g, 1.0).unwrap();
        let t = rl_decay_measure(&q, &[[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]], 30.0, 120.0, 8).unwrap();
        for r in &t.rays {
            assert!(r.p.unwrap() >= 4.0, "{:?}", r);
        }
        let z = Potential::zero(grid);
        let t = rl_decay_measure(&z, &[[0.0, 0.0, 1.0]], 1.0, 10.0, 4).unwrap();
        assert!(t.rays[0].p.is_none());
        assert!(t.samples.iter().all(|s| s.abs_ft == 0.0));
    }

    #[test]
    fn ucp_identical_potentials_and_linearity() {
        let g = geom();
        let grid = build_domain(&g, 1.0 / 10.0).unwrap();
        let q = bump_potential(&grid, &g, 5.0).unwrap();
        let op0 = HelmholtzOperator::new(&g, &grid, 0.0, None, BoundaryMode::Truncated).unwrap();
        let op1 = HelmholtzOperator::new(&g, &grid, 0.0, Some(&q), BoundaryMode::Truncated).unwrap();
        let fam = dirichlet_family(&op0, 2);
        let t = ucp_decay_measure(&op0, &op0, &fam, Plate::Bottom, 0.0, 1.0, 3).unwrap();
        assert!(t.rows.iter().all(|r| r.flux_norm == 0.0 && r.h1_norm == 0.0));
        let a = ucp_decay_measure(&op0, &op1, &fam, Plate::Bottom, 0.0, 1.0, 3).unwrap();
        let fam2: Vec<BoundaryField> = fam.iter().map(|f| f.scale(C64::new(2.0, 0.0))).collect();
        let b = ucp_decay_measure(&op0, &op1, &fam2, Plate::Bottom, 0.0, 1.0, 3).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!(x.flux_norm > 0.0 && x.log_model.is_some());
            for (p, q) in [(x.flux_norm, y.flux_norm), (x.h1_norm, y.h1_norm), (x.h2_norm, y.h2_norm)] {
                assert!((q - 2.0 * p).abs() < 1e-6 * q, "{p} {q}");
            }
        }
    }

    #[test]
    fn certified_sup_decreases_with_star() {
        let cfg = SweepConfig {
            variant: Variant::Theorem2,
            noise_levels: vec![],
            trials: 1,
            seed: 0,
            basis_n: 4,
            test_n: 4,
            lambda: 0.5,
            c: 10.0,
            s: 2.0,
            bound_m: 1.0,
            sobolev_constant: 1.0,
            delta: None,
        };
        for variant in [Variant::Theorem2, Variant::Theorem3] {
            let cfg = SweepConfig { variant, ..cfg.clone() };
            let mut last = f64::INFINITY;
            for e in 1..30 {
                let (_, res) = bound_from_star(10f64.powi(-e), 1.0, &cfg).unwrap();
                assert!(res.linf_bound <= last, "{variant:?} at 1e-{e}");
                last = res.linf_bound;
            }
        }
    }
}
