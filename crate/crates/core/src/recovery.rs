//! Fourier-coefficient estimates of the potential difference from CGO pairings, low-frequency
//! continuation, the H⁻¹ to L∞ bound chain and the parameter schedules.

use crate::cgo::{build_probe_masked, make_frame, make_phase_pair, probe_potentials, reflect_point, xdot, CgoProbe, Variant};
use crate::error::{Error, Result};
use crate::fields::{even_transform, fourier_transform, hs_norm, FourierTransform, GridField, Potential, ZERO};
use crate::geometry::{omega_weights, Grid3, SlabGeometry};
use crate::par::{map_indexed, Execution};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest exponent accepted when recombining log-offsets.
const MAX_LOG: f64 = 700.0;

/// Grid frequencies split by horizontal magnitude.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencySet {
    pub r: f64,
    pub spacing: f64,
    /// `1 <= ξ_{1e} < r`, `|ξ₃| < r`
    pub annulus: Vec<[f64; 3]>,
    /// `0 < ξ_{1e} < 1`, `|ξ₃| < r`
    pub low: Vec<[f64; 3]>,
    /// `ξ_{1e} = 0`, `|ξ₃| < r`
    pub axis: Vec<[f64; 3]>,
}

impl FrequencySet {
    pub fn new(r: f64, spacing: f64) -> Result<Self> {
        if !(r > 2.0) || !(spacing > 0.0) {
            return Err(Error::Invalid(format!("frequency radius {r} must exceed 2 and spacing {spacing} be positive")));
        }
        let m = (r / spacing).ceil() as i64;
        let mut set = FrequencySet { r, spacing, annulus: Vec::new(), low: Vec::new(), axis: Vec::new() };
        for a in -m..=m {
            for b in -m..=m {
                for c in -m..=m {
                    let xi = [a as f64 * spacing, b as f64 * spacing, c as f64 * spacing];
                    let x1e = xi[0].hypot(xi[1]);
                    if xi[2].abs() >= r || x1e >= r {
                        continue;
                    }
                    if x1e >= 1.0 {
                        set.annulus.push(xi);
                    } else if x1e > 0.0 {
                        set.low.push(xi);
                    } else {
                        set.axis.push(xi);
                    }
                }
            }
        }
        Ok(set)
    }
}

/// Per-frequency estimate and the measured correction sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FhatEstimate {
    pub xi: [f64; 3],
    pub est: C64,
    pub pairing: C64,
    /// subtracted remainder cross terms
    pub remainder_term: C64,
    /// uncorrected reflected-phase term (τ-family) or remainder part of the shifted terms (α-family)
    pub residual_term: C64,
    pub psi_l2: [f64; 2],
}

/// `∫_Ω (q₁ − q₂) u₁ u₂` by trapezoidal quadrature with the log-offsets recombined.
pub fn integral_pairing(qdiff: &GridField, probe: &CgoProbe, geom: &SlabGeometry) -> Result<C64> {
    let g = &qdiff.grid;
    if !g.same_nodes(&probe.u1.field.grid) {
        return Err(Error::Grid("potential difference and probe live on different grids".into()));
    }
    let s = probe.u1.log_scale + probe.u2.log_scale;
    if s > MAX_LOG {
        return Err(Error::Overflow(s));
    }
    let w = omega_weights(g, geom);
    let sum: C64 = (0..g.len())
        .filter(|&n| qdiff.values[n] != ZERO && w[n] > 0.0)
        .map(|n| qdiff.values[n] * probe.u1.field.values[n] * probe.u2.field.values[n] * w[n])
        .sum();
    Ok(sum * s.exp())
}

/// Shared data of an annulus estimation run.
pub struct RecoveryContext {
    pub geom: SlabGeometry,
    pub omega: Grid3,
    pub k: f64,
    pub variant: Variant,
    pub param: f64,
    pub exec: Execution,
    q1_box: GridField,
    q2_box: GridField,
    qdiff: GridField,
    support: Vec<bool>,
    weights: Vec<f64>,
    pub ft: FourierTransform,
}

impl RecoveryContext {
    /// `box_grid` must contain `Ω ∪ Ω*`; it is ideally commensurate with the Ω grid.
    pub fn new(
        geom: &SlabGeometry,
        q1: &Potential,
        q2: &Potential,
        box_grid: &Grid3,
        k: f64,
        variant: Variant,
        param: f64,
    ) -> Result<Self> {
        let omega = *q1.grid();
        if !omega.same_nodes(q2.grid()) {
            return Err(Error::Grid("potentials live on different grids".into()));
        }
        let (q1_box, q2_box) = probe_potentials(variant, q1, q2, box_grid, geom)?;
        let qdiff = q1.field.sub(&q2.field)?;
        let support = qdiff.values.iter().map(|v| *v != ZERO).collect();
        let weights = omega_weights(&omega, geom);
        let ft = fourier_transform(&qdiff);
        Ok(RecoveryContext {
            geom: *geom,
            omega,
            k,
            variant,
            param,
            exec: Execution::default(),
            q1_box,
            q2_box,
            qdiff,
            support,
            weights,
            ft,
        })
    }

    /// Direct transform the estimate targets: `FT(q₁−q₂)` or its even extension.
    pub fn truth(&self, xi: [f64; 3]) -> C64 {
        match self.variant {
            Variant::Theorem2 => self.ft.eval(xi),
            Variant::Theorem3 => even_transform(&self.ft, xi),
        }
    }

    pub fn probe(&self, xi: [f64; 3]) -> Result<CgoProbe> {
        let frame = make_frame(xi)?;
        let pair = make_phase_pair(&frame, self.variant, self.param)?;
        build_probe_masked(&self.geom, &self.omega, &pair, &self.q1_box, &self.q2_box, self.k, Some(&self.support), Execution::Sequential)
    }

    /// Pairing minus the computable correction terms.
    pub fn estimate(&self, xi: [f64; 3]) -> Result<FhatEstimate> {
        let probe = self.probe(xi)?;
        let pairing = integral_pairing(&self.qdiff, &probe, &self.geom)?;
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let (p1, p2) = (&probe.psi1, &probe.psi2);
        let (rho1, rho2) = (probe.phase.rho1, probe.phase.rho2);
        let mut rem = ZERO;
        let mut residual = ZERO;
        let g = &self.omega;
        for n in (0..g.len()).filter(|&n| self.support[n]) {
            let (a, b, c) = g.ijk(n);
            let x = g.coord(a, b, c);
            let xs = reflect_point(x);
            let wq = self.qdiff.values[n] * self.weights[n];
            let a1 = one + p1.at(x);
            let a2 = one + p2.at(x);
            let e = (i * (x[0] * xi[0] + x[1] * xi[1] + x[2] * xi[2])).exp();
            match self.variant {
                Variant::Theorem2 => {
                    rem += wq * e * (a1 * a2 - one);
                    let a1s = one + p1.at(xs);
                    residual -= wq * (xdot(xs, &rho1) + xdot(x, &rho2)).exp() * a1s * a2;
                }
                Variant::Theorem3 => {
                    let a1s = one + p1.at(xs);
                    let a2s = one + p2.at(xs);
                    let es = (i * (x[0] * xi[0] + x[1] * xi[1] - x[2] * xi[2])).exp();
                    rem += wq * (e * (a1 * a2 - one) + es * (a1s * a2s - one));
                    let ep = (xdot(x, &rho1) + xdot(xs, &rho2)).exp();
                    let em = (xdot(xs, &rho1) + xdot(x, &rho2)).exp();
                    residual -= wq * (ep * (a1 * a2s - one) + em * (a1s * a2 - one));
                }
            }
        }
        let est = match self.variant {
            Variant::Theorem2 => pairing - rem,
            Variant::Theorem3 => {
                let f = make_frame(xi)?;
                let sh = 2.0 * self.param * f.xi_1e;
                let xp = [f.xi_1e * f.e1[0], f.xi_1e * f.e1[1], sh];
                let xm = [f.xi_1e * f.e1[0], f.xi_1e * f.e1[1], -sh];
                pairing - rem + self.ft.eval(xp) + self.ft.eval(xm)
            }
        };
        Ok(FhatEstimate {
            xi,
            est,
            pairing,
            remainder_term: rem,
            residual_term: residual,
            psi_l2: [p1.report.l2, p2.report.l2],
        })
    }

    /// Estimates for many frequencies; failures are collected rather than aborting the run.
    pub fn estimate_many(&self, xis: &[[f64; 3]]) -> (Vec<FhatEstimate>, Vec<([f64; 3], String)>) {
        let res = map_indexed(self.exec, xis.len(), |n| self.estimate(xis[n]));
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (xi, r) in xis.iter().zip(res) {
            match r {
                Ok(e) => ok.push(e),
                Err(e) => failed.push((*xi, e.to_string())),
            }
        }
        (ok, failed)
    }
}

/// Estimate on the annulus of a frequency set.
pub fn estimate_fhat_annulus(ctx: &RecoveryContext, freqs: &FrequencySet) -> (Vec<FhatEstimate>, Vec<([f64; 3], String)>) {
    ctx.estimate_many(&freqs.annulus)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContinuationConfig {
    pub lambda: f64,
    /// exponential type `A` of the model
    pub model_halfwidth: f64,
    pub tikhonov: f64,
    /// quadrature nodes on `[−A, A]`
    pub nodes: usize,
    pub c0: f64,
}

impl ContinuationConfig {
    pub fn new(geom: &SlabGeometry, two: &TwoConstants) -> Result<Self> {
        if !(two.lambda > 0.0 && two.lambda < 1.0) {
            return Err(Error::Invalid(format!("λ = {} must lie in (0, 1)", two.lambda)));
        }
        Ok(ContinuationConfig { lambda: two.lambda, model_halfwidth: 2.0 * geom.r, tikhonov: 1e-8, nodes: 41, c0: two.c0 })
    }
}

/// Entire function `f(z) = Σ w_m F_m e^{i z t_m}` of exponential type at most `A`.
#[derive(Clone, Debug)]
pub struct ExpTypeFunction {
    pub t: Vec<f64>,
    /// quadrature-weighted amplitudes `w_m F_m`
    pub amp: Vec<C64>,
}

fn model_nodes(a: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * a / (n - 1) as f64;
    let t = (0..n).map(|m| -a + m as f64 * h).collect();
    let w = (0..n).map(|m| if m == 0 || m == n - 1 { h / 2.0 } else { h }).collect();
    (t, w)
}

impl ExpTypeFunction {
    pub fn from_density(a: f64, n: usize, density: impl Fn(f64) -> C64) -> Self {
        let (t, w) = model_nodes(a, n);
        let amp = t.iter().zip(&w).map(|(t, w)| density(*t) * *w).collect();
        ExpTypeFunction { t, amp }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let i = C64::new(0.0, 1.0);
        self.t.iter().zip(&self.amp).map(|(t, a)| a * (i * z * *t).exp()).sum()
    }

    /// Suprema over γ = (0,1), Γ₀ = (1,2) and the boundary of G = {|s|<2, |t|<2}.
    pub fn suprema(&self, samples: usize) -> [f64; 3] {
        let n = samples.max(4);
        let line = |lo: f64, hi: f64| -> f64 {
            (1..n).map(|j| self.eval(C64::new(lo + (hi - lo) * j as f64 / n as f64, 0.0)).norm()).fold(0.0, f64::max)
        };
        let mut g: f64 = 0.0;
        for j in 0..=4 * n {
            let u = -2.0 + 4.0 * j as f64 / (4 * n) as f64;
            for z in [C64::new(u, 2.0), C64::new(u, -2.0), C64::new(2.0, u), C64::new(-2.0, u)] {
                g = g.max(self.eval(z).norm());
            }
        }
        [line(0.0, 1.0), line(1.0, 2.0), g]
    }
}

/// Calibrated two-constants certificate `sup_γ ≤ C₀ (sup_G)^{1−λ} (sup_Γ₀)^λ`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TwoConstants {
    pub lambda: f64,
    pub c0: f64,
}

/// Random densities on `[−A, A]` giving entire functions of type at most `A`.
pub fn synthetic_family(a: f64, count: usize, seed: u64) -> Vec<ExpTypeFunction> {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..count)
        .map(|_| {
            let modes = 6;
            let c: Vec<(C64, f64)> = (0..modes)
                .map(|_| (C64::new(normal.sample(&mut rng), normal.sample(&mut rng)), rng.random_range(0.0..PI)))
                .collect();
            ExpTypeFunction::from_density(a, 81, |t| {
                let u = t / a;
                let env = (1.0 - u * u).max(0.0).powi(2);
                let s: C64 = c.iter().enumerate().map(|(m, (cm, ph))| cm * ((m as f64 + 1.0) * PI * u + ph).cos()).sum();
                s * env
            })
        })
        .collect()
}

/// Largest λ on a grid in (0,1) whose fitted `C₀(λ) = margin · max_f ratio` stays below `cap`.
pub fn fit_two_constants(family: &[ExpTypeFunction], cap: f64, margin: f64, samples: usize) -> Result<TwoConstants> {
    let sups: Vec<[f64; 3]> = family.iter().map(|f| f.suprema(samples)).collect();
    let ratio = |lam: f64| -> f64 {
        sups.iter()
            .filter(|s| s[2] > 0.0)
            .map(|s| s[0] / (s[2].powf(1.0 - lam) * s[1].powf(lam)))
            .fold(0.0, f64::max)
    };
    let mut best: Option<TwoConstants> = None;
    for j in 1..100 {
        let lam = j as f64 / 100.0;
        let c0 = margin * ratio(lam).max(1e-300);
        if c0 <= cap {
            best = Some(TwoConstants { lambda: lam, c0 });
        }
    }
    best.ok_or_else(|| Error::Invalid(format!("no λ in (0,1) keeps C₀ below {cap}")))
}

/// Whether every function satisfies the certificate with suprema taken on `samples` points.
pub fn certificate_holds(cert: &TwoConstants, family: &[ExpTypeFunction], samples: usize) -> Vec<bool> {
    family
        .iter()
        .map(|f| {
            let s = f.suprema(samples);
            s[0] <= cert.c0 * s[2].powf(1.0 - cert.lambda) * s[1].powf(cert.lambda) * (1.0 + 1e-12)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub values: Vec<C64>,
    pub sup_gamma0: f64,
    pub sup_g_bound: f64,
    pub certified_bound: f64,
    pub condition: f64,
}

/// Tikhonov fit of the exponential-type model on Γ₀ samples, evaluated at `eval_s`.
pub fn low_freq_extend(
    s_samples: &[f64],
    values: &[C64],
    eval_s: &[f64],
    cfg: &ContinuationConfig,
    l1_norm: f64,
) -> Result<ContinuationResult> {
    if s_samples.len() != values.len() || s_samples.is_empty() {
        return Err(Error::Invalid("one value per sample point is required".into()));
    }
    let sup_g = l1_norm * (2.0 * cfg.model_halfwidth).exp();
    let sup0 = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if sup0 == 0.0 {
        return Ok(ContinuationResult {
            values: vec![ZERO; eval_s.len()],
            sup_gamma0: 0.0,
            sup_g_bound: sup_g,
            certified_bound: 0.0,
            condition: 1.0,
        });
    }
    let (t, w) = model_nodes(cfg.model_halfwidth, cfg.nodes);
    let i = C64::new(0.0, 1.0);
    let a = DMatrix::from_fn(s_samples.len(), t.len(), |j, m| (i * s_samples[j] * t[m]).exp() * w[m]);
    let ata = a.adjoint() * &a;
    let scale = ata.diagonal().iter().map(|v| v.re).fold(0.0, f64::max);
    let reg = ata + DMatrix::<C64>::identity(t.len(), t.len()) * C64::new(cfg.tikhonov * scale, 0.0);
    let cond = crate::linalg::condition_hermitian(&reg);
    if !(cond <= 1e12) {
        return Err(Error::IllConditioned { cond });
    }
    let rhs = a.adjoint() * DVector::from_column_slice(values);
    let f = reg
        .cholesky()
        .ok_or_else(|| Error::IllConditioned { cond })?
        .solve(&rhs);
    let out = eval_s
        .iter()
        .map(|s| (0..t.len()).map(|m| f[m] * w[m] * (i * *s * t[m]).exp()).sum())
        .collect();
    let certified = cfg.c0 * sup_g.powf(1.0 - cfg.lambda) * sup0.powf(cfg.lambda);
    Ok(ContinuationResult { values: out, sup_gamma0: sup0, sup_g_bound: sup_g, certified_bound: certified, condition: cond })
}

/// Bound chain from a frequency-domain sup to an L∞ bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryResult {
    pub sup_bound: f64,
    pub hm1_bound: f64,
    pub linf_bound: f64,
    pub plancherel: f64,
    pub sobolev_constant: f64,
    pub r: f64,
    pub s: f64,
}

/// `C_P` in `‖q‖²_{H⁻¹} ≤ C_P (r³ sup² + r⁻²)`: ball volume over `(2π)³` for the low part
/// and `(2M)²` for the tail.
pub fn plancherel_constant(bound_m: f64) -> f64 {
    ((4.0 * PI / 3.0) / (2.0 * PI).powi(3)).max((2.0 * bound_m).powi(2))
}

/// `‖q‖_∞ ≤ C_S ‖q‖_{H⁻¹}^{ε/(s+1)}`, `ε = (s − 3/2)/2`.
pub fn linf_exponent(s: f64) -> f64 {
    let eps = (s - 1.5) / 2.0;
    eps / (s + 1.0)
}

pub fn assemble_bounds(sup: f64, r: f64, s: f64, bound_m: f64, sobolev_constant: f64) -> RecoveryResult {
    let cp = plancherel_constant(bound_m);
    let hm1 = (cp * (r.powi(3) * sup * sup + r.powi(-2))).sqrt();
    RecoveryResult {
        sup_bound: sup,
        hm1_bound: hm1,
        linf_bound: sobolev_constant * hm1.powf(linf_exponent(s)),
        plancherel: cp,
        sobolev_constant,
        r,
        s,
    }
}

/// Smallest `C_S` covering every difference in a potential family.
pub fn fit_sobolev_constant(family: &[Potential], s: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for (a, qa) in family.iter().enumerate() {
        for qb in &family[a + 1..] {
            let d = qa.field.sub(&qb.field)?;
            let hm1 = hs_norm(&d, -1.0);
            if hm1 > 0.0 {
                c = c.max(d.max_abs() / hm1.powf(linf_exponent(s)));
            }
        }
    }
    Ok(c.max(1.0))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub r: f64,
    /// τ for the τ-family, α for the α-family
    pub param: f64,
    pub tau: f64,
    pub theta: f64,
    pub lambda: f64,
    pub c: f64,
    /// `r < 2`: outside the frequency-set precondition
    pub small_r: bool,
}

/// Default `c = 4(2R + L) + 2`.
pub fn default_c(geom: &SlabGeometry) -> f64 {
    4.0 * (2.0 * geom.r + geom.l) + 2.0
}

/// Parameter schedule from `ln(δ ‖Λ₁ − Λ₂‖_∗)`, which must be negative.
pub fn choose_parameters_ln(ln_delta_star: f64, lambda: f64, c: f64, variant: Variant) -> Result<Schedule> {
    if !(ln_delta_star < 0.0) {
        return Err(Error::Hypothesis(ln_delta_star.exp()));
    }
    if !(lambda > 0.0 && lambda < 1.0) || !(c > 0.0) {
        return Err(Error::Invalid(format!("λ = {lambda} must lie in (0,1) and c = {c} be positive")));
    }
    let rhs = lambda / (4.0 * c) * (1.0 + ln_delta_star.abs()).ln();
    let (r, tau, theta) = match variant {
        Variant::Theorem2 => {
            let r = rhs.powf(lambda / (lambda + 5.0));
            (r, r.powf(5.0 / lambda), lambda / (2.0 * (lambda + 5.0)))
        }
        Variant::Theorem3 => {
            let r = rhs.powf(2.0 * lambda / (2.0 * lambda + 5.0));
            (r, r.powf(5.0 / (2.0 * lambda)), lambda / (2.0 * lambda + 5.0))
        }
    };
    let param = match variant {
        Variant::Theorem2 => tau,
        Variant::Theorem3 => (tau * tau - 0.25).max(0.0).sqrt(),
    };
    Ok(Schedule { r, param, tau, theta, lambda, c, small_r: r < 2.0 })
}

pub fn choose_parameters(delta: f64, star_norm: f64, lambda: f64, c: f64, variant: Variant) -> Result<Schedule> {
    if !(delta > 0.0) || !(star_norm > 0.0) {
        return Err(Error::Invalid("δ and the star norm must be positive".into()));
    }
    if delta * star_norm >= 1.0 {
        return Err(Error::Hypothesis(delta * star_norm));
    }
    choose_parameters_ln(delta.ln() + star_norm.ln(), lambda, c, variant)
}

/// Residual of the defining equation `r^{p} = c⁻¹ ln{[1 + |ln(δ‖·‖_∗)|]^{λ/4}}`.
pub fn schedule_residual(sch: &Schedule, ln_delta_star: f64, variant: Variant) -> f64 {
    let rhs = sch.lambda / (4.0 * sch.c) * (1.0 + ln_delta_star.abs()).ln();
    let p = match variant {
        Variant::Theorem2 => (sch.lambda + 5.0) / sch.lambda,
        Variant::Theorem3 => (2.0 * sch.lambda + 5.0) / (2.0 * sch.lambda),
    };
    (sch.r.powf(p) - rhs).abs() / rhs
}

/// Full map on the frequency set: annulus estimates, continued low frequencies and the
/// averaged axis points.
#[derive(Clone, Debug)]
pub struct FullEstimate {
    pub rows: Vec<([f64; 3], C64, C64)>,
    pub failed: Vec<([f64; 3], String)>,
    pub certified_low: f64,
    pub flagged_axis: Vec<[f64; 3]>,
}

pub fn estimate_full(ctx: &RecoveryContext, freqs: &FrequencySet, cfg: &ContinuationConfig) -> Result<FullEstimate> {
    let (ann, mut failed) = estimate_fhat_annulus(ctx, freqs);
    let mut rows: Vec<([f64; 3], C64, C64)> = ann.iter().map(|e| (e.xi, e.est, ctx.truth(e.xi))).collect();
    let l1: f64 = ctx.qdiff.values.iter().zip(&ctx.weights).map(|(v, w)| v.norm() * w).sum();
    // group low frequencies by (direction, ξ₃)
    let mut lines: Vec<([f64; 2], f64, Vec<[f64; 3]>)> = Vec::new();
    for xi in &freqs.low {
        let x1e = xi[0].hypot(xi[1]);
        let dir = [xi[0] / x1e, xi[1] / x1e];
        match lines.iter_mut().find(|l| (l.0[0] - dir[0]).abs() < 1e-12 && (l.0[1] - dir[1]).abs() < 1e-12 && l.1 == xi[2]) {
            Some(l) => l.2.push(*xi),
            None => lines.push((dir, xi[2], vec![*xi])),
        }
    }
    let n_s = ((1.0 / freqs.spacing).round() as usize).max(2);
    let s_samples: Vec<f64> = (0..=n_s).map(|j| 1.0 + j as f64 / n_s as f64).collect();
    let mut certified: f64 = 0.0;
    for (dir, x3, pts) in &lines {
        let line_xis: Vec<[f64; 3]> = s_samples.iter().map(|s| [s * dir[0], s * dir[1], *x3]).collect();
        let (est, f) = ctx.estimate_many(&line_xis);
        if !f.is_empty() {
            failed.extend(f);
            continue;
        }
        let vals: Vec<C64> = est.iter().map(|e| e.est).collect();
        let eval_s: Vec<f64> = pts.iter().map(|p| p[0].hypot(p[1])).collect();
        let cont = low_freq_extend(&s_samples, &vals, &eval_s, cfg, l1)?;
        certified = certified.max(cont.certified_bound);
        for (p, v) in pts.iter().zip(cont.values) {
            rows.push((*p, v, ctx.truth(*p)));
        }
    }
    // axis points: average of the four lateral neighbours already recovered
    let h = freqs.spacing;
    let mut flagged = Vec::new();
    for xi in &freqs.axis {
        let nb = [[h, 0.0], [-h, 0.0], [0.0, h], [0.0, -h]];
        let vals: Vec<C64> = nb
            .iter()
            .filter_map(|d| {
                rows.iter()
                    .find(|r| (r.0[0] - d[0]).abs() < 1e-12 && (r.0[1] - d[1]).abs() < 1e-12 && r.0[2] == xi[2])
                    .map(|r| r.1)
            })
            .collect();
        if !vals.is_empty() {
            let avg = vals.iter().sum::<C64>() / vals.len() as f64;
            rows.push((*xi, avg, ctx.truth(*xi)));
            flagged.push(*xi);
        }
    }
    Ok(FullEstimate { rows, failed, certified_low: certified, flagged_axis: flagged })
}

/// `max |est − true| / max |true|` over the rows.
pub fn sup_relative_error(rows: &[([f64; 3], C64, C64)]) -> f64 {
    let err = rows.iter().map(|r| (r.1 - r.2).norm()).fold(0.0, f64::max);
    let scale = rows.iter().map(|r| r.2.norm()).fold(0.0, f64::max);
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn frequency_set_regions() {
        let f = FrequencySet::new(3.0, 0.5).unwrap();
        assert!(f.annulus.iter().all(|x| {
            let e = x[0].hypot(x[1]);
            (1.0..3.0).contains(&e) && x[2].abs() < 3.0
        }));
        assert!(f.low.iter().all(|x| x[0].hypot(x[1]) < 1.0));
        assert!(FrequencySet::new(2.0, 0.5).is_err());
    }

    #[test]
    fn zero_fhat_bounds() {
        let b = assemble_bounds(0.0, 4.0, 2.0, 1.0, 1.0);
        assert_relative_eq!(b.hm1_bound, b.plancherel.sqrt() / 4.0, max_relative = 1e-14);
        let b2 = assemble_bounds(0.0, 8.0, 2.0, 1.0, 1.0);
        assert_relative_eq!(b2.hm1_bound, b.hm1_bound / 2.0, max_relative = 1e-14);
        assert_relative_eq!(linf_exponent(2.0), 1.0 / 12.0, max_relative = 1e-14);
    }

    #[test]
    fn schedule_round_trip() {
        let ln = -(40f64.exp());
        for v in [Variant::Theorem2, Variant::Theorem3] {
            let s = choose_parameters_ln(ln, 0.5, 10.0, v).unwrap();
            assert!(schedule_residual(&s, ln, v) < 1e-12);
            assert!(s.small_r);
        }
        assert_relative_eq!(choose_parameters_ln(ln, 0.5, 10.0, Variant::Theorem2).unwrap().theta, 1.0 / 22.0);
        assert_relative_eq!(choose_parameters_ln(ln, 0.5, 10.0, Variant::Theorem3).unwrap().theta, 1.0 / 12.0);
        assert!(choose_parameters(1.0, 1.0, 0.5, 10.0, Variant::Theorem2).is_err());
    }

    #[test]
    fn continuation_of_zero_and_synthetic() {
        let cfg = ContinuationConfig { lambda: 0.5, model_halfwidth: 1.0, tikhonov: 1e-10, nodes: 41, c0: 1.0 };
        let s: Vec<f64> = (0..=8).map(|j| 1.0 + j as f64 / 8.0).collect();
        let z = low_freq_extend(&s, &vec![ZERO; s.len()], &[0.5], &cfg, 1.0).unwrap();
        assert_eq!(z.values[0], ZERO);
        assert_eq!(z.certified_bound, 0.0);
        let f = ExpTypeFunction::from_density(1.0, 41, |t| C64::new((1.0 - t * t).powi(2), 0.0));
        let vals: Vec<C64> = s.iter().map(|s| f.eval(C64::new(*s, 0.0))).collect();
        let eval: Vec<f64> = vec![0.25, 0.5, 0.75];
        let out = low_freq_extend(&s, &vals, &eval, &cfg, 2.0).unwrap();
        for (e, v) in eval.iter().zip(&out.values) {
            let want = f.eval(C64::new(*e, 0.0));
            assert!((v - want).norm() < 0.05 * want.norm(), "{e}: {v} vs {want}");
        }
    }
}
