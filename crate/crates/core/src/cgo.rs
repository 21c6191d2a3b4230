//! Complex geometrical optics probes: frames, phase vectors, Faddeev-type remainders on a
//! periodic box and the reflected probe fields.

use crate::error::{Error, Result};
use crate::fft::{angular_freqs, Fft3};
use crate::fields::{extend_even, extend_trivial, GridField, Potential, ZERO};
use crate::geometry::{Grid3, SlabGeometry};
use crate::par::{map_indexed, Execution};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

pub type CVec3 = [C64; 3];

#[inline]
pub fn cdot(a: &CVec3, b: &CVec3) -> C64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cnorm(a: &CVec3) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `x · ρ` for a real point and complex vector.
#[inline]
pub fn xdot(x: [f64; 3], r: &CVec3) -> C64 {
    r[0] * x[0] + r[1] * x[1] + r[2] * x[2]
}

#[inline]
pub fn reflect_point(x: [f64; 3]) -> [f64; 3] {
    [x[0], x[1], -x[2]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub xi: [f64; 3],
    pub xi_1e: f64,
    pub e1: [f64; 3],
    pub e2: [f64; 3],
    pub e3: [f64; 3],
}

pub fn make_frame(xi: [f64; 3]) -> Result<Frame> {
    let xi_1e = xi[0].hypot(xi[1]);
    if !(xi_1e > 0.0) || !xi.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid(format!("frame undefined for ξ = {xi:?}: horizontal part vanishes")));
    }
    let e1 = [xi[0] / xi_1e, xi[1] / xi_1e, 0.0];
    let e3 = [0.0, 0.0, 1.0];
    let e2 = [-e1[1], e1[0], 0.0];
    Ok(Frame { xi, xi_1e, e1, e2, e3 })
}

impl Frame {
    /// Ambient coordinates of `(a, b, c)_e = a e1 + b e2 + c e3`.
    pub fn ambient(&self, v: CVec3) -> CVec3 {
        let mut out = [ZERO; 3];
        for (c, e) in v.iter().zip([self.e1, self.e2, self.e3]) {
            for a in 0..3 {
                out[a] += c * e[a];
            }
        }
        out
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `ξ^⊥ = (−ξ₃, 0, ξ_{1e})_e`.
    pub fn xi_perp(&self) -> [f64; 3] {
        let x3 = self.xi[2];
        [0, 1, 2].map(|a| -x3 * self.e1[a] + self.xi_1e * self.e3[a])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// τ-family with a single reflected probe.
    Theorem2,
    /// α-family with both probes reflected.
    Theorem3,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thm2" | "theorem2" => Ok(Variant::Theorem2),
            "thm3" | "theorem3" => Ok(Variant::Theorem3),
            _ => Err(Error::Parse(format!("unknown variant {s:?} (thm2 or thm3)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePair {
    pub variant: Variant,
    pub param: f64,
    pub frame: Frame,
    pub rho1: CVec3,
    pub rho2: CVec3,
}

pub fn make_phase_pair(frame: &Frame, variant: Variant, param: f64) -> Result<PhasePair> {
    if !(param >= 1.0) || !param.is_finite() {
        return Err(Error::Invalid(format!("phase parameter {param} must be at least 1")));
    }
    let i = C64::new(0.0, 1.0);
    let xn = frame.xi_norm();
    let (x1e, x3) = (frame.xi_1e, frame.xi[2]);
    let (rho1, rho2) = match variant {
        Variant::Theorem2 => {
            let s = xn * (param * param - 0.25).sqrt();
            let perp = frame.xi_perp();
            let r1 = [0, 1, 2].map(|a| C64::new(param * perp[a], 0.0) + i * (0.5 * frame.xi[a] + s * frame.e2[a]));
            let r2 = [0, 1, 2].map(|a| C64::new(-param * perp[a], 0.0) + i * (0.5 * frame.xi[a] - s * frame.e2[a]));
            (r1, r2)
        }
        Variant::Theorem3 => {
            let a = param;
            let b = (a * a + 0.25).sqrt() * xn;
            let r1 = [i * (x1e / 2.0 - a * x3), C64::new(-b, 0.0), i * (x3 / 2.0 + a * x1e)];
            let r2 = [i * (x1e / 2.0 + a * x3), C64::new(b, 0.0), i * (x3 / 2.0 - a * x1e)];
            (frame.ambient(r1), frame.ambient(r2))
        }
    };
    Ok(PhasePair { variant, param, frame: *frame, rho1, rho2 })
}

impl PhasePair {
    /// Relative isotropy residuals `|ρ_m·ρ_m| / |ρ_m|²`.
    pub fn isotropy_residual(&self) -> f64 {
        [self.rho1, self.rho2].iter().map(|r| cdot(r, r).norm() / cnorm(r).powi(2)).fold(0.0, f64::max)
    }

    /// `|ρ_m|` predicted by the closed-form identity of the variant.
    pub fn expected_norm(&self) -> f64 {
        let xn = self.frame.xi_norm();
        match self.variant {
            Variant::Theorem2 => 2f64.sqrt() * self.param * xn,
            Variant::Theorem3 => 2f64.sqrt() * xn * (self.param * self.param + 0.25).sqrt(),
        }
    }

    pub fn norm_residual(&self) -> f64 {
        let e = self.expected_norm();
        [self.rho1, self.rho2].iter().map(|r| (cnorm(r) - e).abs() / e).fold(0.0, f64::max)
    }

    /// The large parameter `|ρ|` against which remainders decay.
    pub fn scale(&self) -> f64 {
        self.expected_norm()
    }
}

/// Per-axis smooth cutoff on a centred box: 1 on `|x₁|,|x₂| <= a_lat`, `|x₃| <= a_z`,
/// 0 within two cells of the box faces.
pub fn box_cutoff(box_grid: &Grid3, a_lat: f64, a_z: f64) -> Vec<f64> {
    let half = box_grid.nx as f64 * box_grid.h / 2.0;
    let edge = half - 2.0 * box_grid.h;
    let step = |x: f64, a: f64| {
        let t = ((edge - x.abs()) / (edge - a).max(box_grid.h)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    (0..box_grid.len())
        .map(|n| {
            let (i, j, k) = box_grid.ijk(n);
            let x = box_grid.coord(i, j, k);
            step(x[0], a_lat) * step(x[1], a_lat) * step(x[2], a_z)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub l2: f64,
    pub h1: f64,
    pub iterations: usize,
    pub projected_modes: usize,
    pub residual: f64,
    pub bloch_shift: [f64; 3],
    pub min_symbol: f64,
}

/// Remainder `ψ` on the box together with its diagnostics.
#[derive(Clone, Debug)]
pub struct Remainder {
    pub psi: GridField,
    pub report: DecayReport,
}

impl Remainder {
    /// `ψ(x)`, by node lookup when `x` is a box node and trilinear interpolation otherwise.
    pub fn at(&self, x: [f64; 3]) -> C64 {
        box_value(&self.psi, x)
    }
}

pub fn box_value(f: &GridField, x: [f64; 3]) -> C64 {
    let g = &f.grid;
    match (g.node_at(0, x[0]), g.node_at(1, x[1]), g.node_at(2, x[2])) {
        (Some(a), Some(b), Some(c)) => f.at(a, b, c),
        _ => f.interpolate(x),
    }
}

const NEAR_SINGULAR: f64 = 1e-8;
const MAX_PROJECTED_FRACTION: f64 = 1e-3;
const FIXED_POINT_TOL: f64 = 1e-12;
const MAX_FIXED_POINT: usize = 500;

struct Symbol {
    theta: [f64; 3],
    inv: Vec<C64>,
    sigma: Vec<C64>,
    projected: usize,
    min_abs: f64,
}

fn symbol(box_grid: &Grid3, rho: &CVec3) -> Symbol {
    let d = box_grid.dims();
    let f: Vec<Vec<f64>> = (0..3).map(|a| angular_freqs(d[a], box_grid.h)).collect();
    let side = d[0] as f64 * box_grid.h;
    let i = C64::new(0.0, 1.0);
    let eval = |theta: [f64; 3]| -> (Vec<C64>, f64) {
        let mut sig = Vec::with_capacity(box_grid.len());
        let mut mn = f64::INFINITY;
        for k in 0..d[2] {
            for j in 0..d[1] {
                for ii in 0..d[0] {
                    let z = [f[0][ii] + theta[0], f[1][j] + theta[1], f[2][k] + theta[2]];
                    let z2 = z[0] * z[0] + z[1] * z[1] + z[2] * z[2];
                    let s = C64::new(z2, 0.0) - i * 2.0 * (rho[0] * z[0] + rho[1] * z[1] + rho[2] * z[2]);
                    mn = mn.min(s.norm());
                    sig.push(s);
                }
            }
        }
        (sig, mn)
    };
    // half-period Bloch shifts keep the symbol away from its zero set
    let mut best: Option<([f64; 3], Vec<C64>, f64)> = None;
    for c in 0..8 {
        let theta = [0, 1, 2].map(|a| if (c >> a) & 1 == 1 { std::f64::consts::PI / side } else { 0.0 });
        let (sig, mn) = eval(theta);
        if best.as_ref().is_none_or(|b| mn > b.2) {
            best = Some((theta, sig, mn));
        }
    }
    let (theta, sigma, min_abs) = best.unwrap();
    let thresh = NEAR_SINGULAR * cnorm(rho).powi(2);
    let mut projected = 0;
    let inv = sigma
        .iter()
        .map(|s| {
            if s.norm() < thresh {
                projected += 1;
                ZERO
            } else {
                1.0 / s
            }
        })
        .collect();
    Symbol { theta, inv, sigma, projected, min_abs }
}

/// Solve `(−Δ − 2ρ·∇)ψ = −W(1+ψ)`, `W = χ(Q − k²)`, by fixed-point iteration with the
/// Fourier multiplier `1/(|ζ|² − 2iρ·ζ)`.
pub fn solve_remainder(rho: &CVec3, w: &[f64], box_grid: &Grid3) -> Result<Remainder> {
    let n = box_grid.len();
    if w.len() != n || !box_grid.periodic.iter().all(|p| *p) {
        return Err(Error::Grid("remainder solve needs a periodic box and a full-length potential".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        let report = DecayReport {
            l2: 0.0,
            h1: 0.0,
            iterations: 0,
            projected_modes: 0,
            residual: 0.0,
            bloch_shift: [0.0; 3],
            min_symbol: f64::NAN,
        };
        return Ok(Remainder { psi: GridField::zeros(*box_grid), report });
    }
    let sym = symbol(box_grid, rho);
    if sym.projected as f64 > MAX_PROJECTED_FRACTION * n as f64 {
        return Err(Error::SymbolProjection { projected: sym.projected, total: n });
    }
    let fft = Fft3::new(box_grid.dims());
    let phase: Vec<C64> = (0..n)
        .map(|m| {
            let (i, j, k) = box_grid.ijk(m);
            let x = box_grid.coord(i, j, k);
            let t = sym.theta[0] * x[0] + sym.theta[1] * x[1] + sym.theta[2] * x[2];
            C64::new(t.cos(), t.sin())
        })
        .collect();
    let mut psi = vec![ZERO; n];
    let mut report = DecayReport {
        l2: 0.0,
        h1: 0.0,
        iterations: 0,
        projected_modes: sym.projected,
        residual: 0.0,
        bloch_shift: sym.theta,
        min_symbol: sym.min_abs,
    };
    let apply_g = |rhs: &[C64]| -> Vec<C64> {
        let mut buf: Vec<C64> = rhs.iter().zip(&phase).map(|(r, p)| r * p.conj()).collect();
        fft.forward(&mut buf);
        buf.iter_mut().zip(&sym.inv).for_each(|(b, s)| *b *= s);
        fft.inverse(&mut buf);
        buf.iter_mut().zip(&phase).for_each(|(b, p)| *b *= p);
        buf
    };
    let mut last_diff = f64::INFINITY;
    let mut growth = 0;
    let mut converged = false;
    for it in 1..=MAX_FIXED_POINT {
        let rhs: Vec<C64> = w.iter().zip(&psi).map(|(w, p)| -(C64::new(1.0, 0.0) + p) * *w).collect();
        let new = apply_g(&rhs);
        let diff = new.iter().zip(&psi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let nrm = new.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        psi = new;
        report.iterations = it;
        if !nrm.is_finite() {
            return Err(Error::NoContraction { steps: growth });
        }
        if diff <= FIXED_POINT_TOL * nrm {
            converged = true;
            break;
        }
        if diff > last_diff {
            growth += 1;
            if growth >= 5 {
                return Err(Error::NoContraction { steps: growth });
            }
        } else {
            growth = 0;
        }
        last_diff = diff;
    }
    if !converged {
        return Err(Error::NonConvergence { iterations: MAX_FIXED_POINT, last: last_diff });
    }
    // residual of the conjugated equation on the retained modes
    let rhs: Vec<C64> = w.iter().zip(&psi).map(|(w, p)| -(C64::new(1.0, 0.0) + p) * *w).collect();
    let mut rb: Vec<C64> = rhs.iter().zip(&phase).map(|(r, p)| r * p.conj()).collect();
    let mut pb: Vec<C64> = psi.iter().zip(&phase).map(|(r, p)| r * p.conj()).collect();
    fft.forward(&mut rb);
    fft.forward(&mut pb);
    let (mut num, mut den) = (0.0, 0.0);
    for m in 0..n {
        if sym.inv[m] == ZERO {
            continue;
        }
        num += (sym.sigma[m] * pb[m] - rb[m]).norm_sqr();
        den += rb[m].norm_sqr();
    }
    report.residual = if den > 0.0 { (num / den).sqrt() } else { 0.0 };
    let h3 = box_grid.h.powi(3);
    let d = box_grid.dims();
    let f: Vec<Vec<f64>> = (0..3).map(|a| angular_freqs(d[a], box_grid.h)).collect();
    let mut h1 = 0.0;
    for m in 0..n {
        let (i, j, k) = box_grid.ijk(m);
        let z = [f[0][i] + sym.theta[0], f[1][j] + sym.theta[1], f[2][k] + sym.theta[2]];
        h1 += (1.0 + z[0] * z[0] + z[1] * z[1] + z[2] * z[2]) * pb[m].norm_sqr();
    }
    report.h1 = (h1 * h3 / n as f64).sqrt();
    report.l2 = (psi.iter().map(|p| p.norm_sqr()).sum::<f64>() * h3).sqrt();
    Ok(Remainder { psi: GridField { grid: *box_grid, values: psi }, report })
}

/// `W = χ (Q − k²)` with the cutoff equal to 1 on `Ω ∪ Ω*`.
pub fn remainder_potential(q_box: &GridField, k: f64, geom: &SlabGeometry) -> Vec<f64> {
    let chi = box_cutoff(&q_box.grid, geom.r_lat, geom.l);
    q_box.values.iter().zip(&chi).map(|(q, c)| c * (q.re - k * k)).collect()
}

/// Complex field stored as `e^{log_scale} · field`.
#[derive(Clone, Debug)]
pub struct ScaledField {
    pub log_scale: f64,
    pub field: GridField,
}

/// Box potentials for the two probes: even extensions, or even/trivial for the τ-family.
pub fn probe_potentials(variant: Variant, q1: &Potential, q2: &Potential, box_grid: &Grid3, geom: &SlabGeometry) -> Result<(GridField, GridField)> {
    let a = extend_even(q1, box_grid, geom)?;
    let b = match variant {
        Variant::Theorem2 => extend_trivial(q2, box_grid, geom)?,
        Variant::Theorem3 => extend_even(q2, box_grid, geom)?,
    };
    Ok((a, b))
}

#[derive(Clone, Debug)]
pub struct CgoProbe {
    pub phase: PhasePair,
    pub box_grid: Grid3,
    pub psi1: Remainder,
    pub psi2: Remainder,
    pub u1: ScaledField,
    pub u2: ScaledField,
}

/// `e^{x·ρ − s}(1 + ψ(x))`.
#[inline]
fn branch(x: [f64; 3], rho: &CVec3, s: f64, psi: &Remainder) -> C64 {
    (xdot(x, rho) - s).exp() * (C64::new(1.0, 0.0) + psi.at(x))
}

/// Largest `x·Re ρ` over the Ω grid and its mirror image.
fn log_offset(omega: &Grid3, rho: &CVec3) -> f64 {
    let re = [rho[0].re, rho[1].re, rho[2].re];
    let mut s = f64::NEG_INFINITY;
    for n in 0..omega.len() {
        let (i, j, k) = omega.ijk(n);
        let x = omega.coord(i, j, k);
        let a = x[0] * re[0] + x[1] * re[1];
        s = s.max(a + x[2] * re[2]).max(a - x[2] * re[2]);
    }
    s
}

fn assemble(omega: &Grid3, rho: &CVec3, psi: &Remainder, reflected: bool, mask: Option<&[bool]>, exec: Execution) -> ScaledField {
    let s = log_offset(omega, rho);
    let values = map_indexed(exec, omega.len(), |n| {
        if mask.is_some_and(|m| !m[n]) {
            return ZERO;
        }
        let (i, j, k) = omega.ijk(n);
        let x = omega.coord(i, j, k);
        let v = branch(x, rho, s, psi);
        if reflected {
            v - branch(reflect_point(x), rho, s, psi)
        } else {
            v
        }
    });
    ScaledField { log_scale: s, field: GridField { grid: *omega, values } }
}

/// Remainders on the box and probe fields on the Ω grid.
pub fn build_probe(
    geom: &SlabGeometry,
    omega: &Grid3,
    phase: &PhasePair,
    q1_box: &GridField,
    q2_box: &GridField,
    k: f64,
    exec: Execution,
) -> Result<CgoProbe> {
    build_probe_masked(geom, omega, phase, q1_box, q2_box, k, None, exec)
}

/// [`build_probe`] evaluating the probe fields only where `mask` is set (zero elsewhere).
#[allow(clippy::too_many_arguments)]
pub fn build_probe_masked(
    geom: &SlabGeometry,
    omega: &Grid3,
    phase: &PhasePair,
    q1_box: &GridField,
    q2_box: &GridField,
    k: f64,
    mask: Option<&[bool]>,
    exec: Execution,
) -> Result<CgoProbe> {
    let box_grid = q1_box.grid;
    if !box_grid.same_nodes(&q2_box.grid) {
        return Err(Error::Grid("probe potentials live on different boxes".into()));
    }
    let half = box_grid.nx as f64 * box_grid.h / 2.0;
    if half <= geom.r_lat.max(geom.l) {
        return Err(Error::Grid("box does not contain Ω ∪ Ω*".into()));
    }
    let w1 = remainder_potential(q1_box, k, geom);
    let w2 = remainder_potential(q2_box, k, geom);
    let psi1 = solve_remainder(&phase.rho1, &w1, &box_grid)?;
    let psi2 = solve_remainder(&phase.rho2, &w2, &box_grid)?;
    let u1 = assemble(omega, &phase.rho1, &psi1, true, mask, exec);
    let u2 = assemble(omega, &phase.rho2, &psi2, phase.variant == Variant::Theorem3, mask, exec);
    Ok(CgoProbe { phase: *phase, box_grid, psi1, psi2, u1, u2 })
}

impl CgoProbe {
    /// Largest `|u_m|` (unscaled field) over the Ω nodes on Γ₂.
    pub fn gamma2_max(&self, m: usize) -> f64 {
        let u = if m == 1 { &self.u1 } else { &self.u2 };
        let g = &u.field.grid;
        let d = g.dims();
        let mut mx: f64 = 0.0;
        for j in 0..d[1] {
            for i in 0..d[0] {
                mx = mx.max(u.field.at(i, j, 0).norm());
            }
        }
        mx
    }
}

/// Probes for several frequencies, returned in lexicographic order of ξ.
#[allow(clippy::too_many_arguments)]
pub fn build_probes(
    geom: &SlabGeometry,
    omega: &Grid3,
    xis: &[[f64; 3]],
    variant: Variant,
    param: f64,
    q1_box: &GridField,
    q2_box: &GridField,
    k: f64,
    exec: Execution,
) -> Result<Vec<CgoProbe>> {
    let mut xs = xis.to_vec();
    xs.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    map_indexed(exec, xs.len(), |n| {
        let frame = make_frame(xs[n])?;
        let pair = make_phase_pair(&frame, variant, param)?;
        build_probe(geom, omega, &pair, q1_box, q2_box, k, Execution::Sequential)
    })
    .into_iter()
    .collect()
}

/// Smallest power of two, at least `max(M + k², 1)` scaled, for which the remainder
/// iteration contracts on every potential of the family.
pub fn tau1_surrogate(
    xi: [f64; 3],
    variant: Variant,
    family: &[GridField],
    k: f64,
    bound_m: f64,
    geom: &SlabGeometry,
) -> Result<f64> {
    let frame = make_frame(xi)?;
    let base = (bound_m + k * k).max(1.0);
    let mut c0 = 1.0 / 64.0;
    for _ in 0..24 {
        let tau = (c0 * base).max(1.0);
        let pair = make_phase_pair(&frame, variant, tau)?;
        let ok = family.iter().all(|q| {
            let w = remainder_potential(q, k, geom);
            solve_remainder(&pair.rho1, &w, &q.grid).is_ok() && solve_remainder(&pair.rho2, &w, &q.grid).is_ok()
        });
        if ok {
            return Ok(tau);
        }
        c0 *= 2.0;
    }
    Err(Error::NoContraction { steps: 24 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_box;
    use approx::assert_abs_diff_eq;

    #[test]
    fn frame_examples() {
        let f = make_frame([3.0, 4.0, 2.0]).unwrap();
        assert_eq!(f.xi_1e, 5.0);
        assert_abs_diff_eq!(f.e1[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(f.e2[0], -0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(f.e2[1], 0.6, epsilon = 1e-15);
        assert!(make_frame([0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn theorem2_hand_example() {
        let f = make_frame([1.0, 0.0, 0.0]).unwrap();
        let p = make_phase_pair(&f, Variant::Theorem2, 1.0).unwrap();
        let want = [C64::new(0.0, 0.5), C64::new(0.0, 3f64.sqrt() / 2.0), C64::new(1.0, 0.0)];
        for a in 0..3 {
            assert!((p.rho1[a] - want[a]).norm() < 1e-15);
            assert!((p.rho1[a] + p.rho2[a] - C64::new(0.0, f.xi[a])).norm() < 1e-15);
        }
        assert!(p.isotropy_residual() < 1e-15);
        assert!(make_phase_pair(&f, Variant::Theorem2, 0.9).is_err());
        let p3 = make_phase_pair(&f, Variant::Theorem3, 1.0).unwrap();
        assert!((cnorm(&p3.rho1) - 2f64.sqrt() * 5f64.sqrt() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn zero_potential_gives_zero_remainder() {
        let g = build_box(3.0, 8).unwrap();
        let f = make_frame([1.0, 1.0, 0.5]).unwrap();
        let p = make_phase_pair(&f, Variant::Theorem2, 2.0).unwrap();
        let r = solve_remainder(&p.rho1, &vec![0.0; g.len()], &g).unwrap();
        assert!(r.psi.is_zero());
    }

    #[test]
    fn fixed_point_matches_dense_solve() {
        let g = build_box(3.0, 8).unwrap();
        let n = g.len();
        let f = make_frame([1.0, 0.5, 0.5]).unwrap();
        let p = make_phase_pair(&f, Variant::Theorem2, 4.0).unwrap();
        let w: Vec<f64> = (0..n)
            .map(|m| {
                let (i, j, k) = g.ijk(m);
                let x = g.coord(i, j, k);
                let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                if r2 < 1.0 { 0.8 * (1.0 - r2) } else { 0.0 }
            })
            .collect();
        let r = solve_remainder(&p.rho1, &w, &g).unwrap();
        // dense oracle: (I + G W) ψ = −G w with G applied column by column
        let sym = symbol(&g, &p.rho1);
        let fft = Fft3::new(g.dims());
        let phase: Vec<C64> = (0..n)
            .map(|m| {
                let (i, j, k) = g.ijk(m);
                let x = g.coord(i, j, k);
                let t = sym.theta[0] * x[0] + sym.theta[1] * x[1] + sym.theta[2] * x[2];
                C64::new(t.cos(), t.sin())
            })
            .collect();
        let apply_g = |v: &[C64]| {
            let mut b: Vec<C64> = v.iter().zip(&phase).map(|(a, p)| a * p.conj()).collect();
            fft.forward(&mut b);
            b.iter_mut().zip(&sym.inv).for_each(|(x, s)| *x *= s);
            fft.inverse(&mut b);
            b.iter_mut().zip(&phase).for_each(|(x, p)| *x *= p);
            b
        };
        let mut a = nalgebra::DMatrix::<C64>::identity(n, n);
        for c in 0..n {
            if w[c] == 0.0 {
                continue;
            }
            let mut e = vec![ZERO; n];
            e[c] = C64::new(w[c], 0.0);
            let col = apply_g(&e);
            for rr in 0..n {
                a[(rr, c)] += col[rr];
            }
        }
        let rhs = apply_g(&w.iter().map(|v| C64::new(-v, 0.0)).collect::<Vec<_>>());
        let x = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        let err = x.iter().zip(&r.psi.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-8 * r.psi.max_abs().max(1e-300), "{err}");
        assert!(r.report.residual < 1e-8);
    }
}
