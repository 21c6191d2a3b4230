//! Finite-difference solver for `(−Δ − k² + q) u = w` on the truncated slab,
//! admissibility checks and the Runge-type least-squares approximation.

pub mod krylov;
mod mg;

use crate::boundary::{BoundaryField, PatchSquare};
use crate::error::{Error, Result};
use crate::fields::{GridField, Potential, ZERO};
use crate::geometry::{interior_mask, neighbours, omega_weights, on_plate_of_omega, BoundaryPatch, Grid3, Plate, SlabGeometry};
use crate::par::{map_indexed, Execution};
pub use krylov::{KrylovMethod, KrylovOutcome};
use mg::{Multigrid, Stencil};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Homogeneous Dirichlet data on the staircase cylinder `|x'| = R_lat`.
    Truncated,
    /// Periodic in x₁ and x₂ with period `2 m h`.
    PeriodicLateral,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub k: f64,
    pub min_singular: f64,
    pub admissible: bool,
    pub threshold: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub field: GridField,
    pub method: KrylovMethod,
    pub iterations: usize,
    pub history: Vec<f64>,
}

pub struct HelmholtzOperator {
    pub grid: Grid3,
    pub geom: SlabGeometry,
    pub k: f64,
    pub mode: BoundaryMode,
    pub exec: Execution,
    pub tol: f64,
    pub max_iter: usize,
    q: Vec<f64>,
    a: Stencil,
    precond: OnceLock<Multigrid>,
    admissibility: OnceLock<AdmissibilityReport>,
}

impl std::fmt::Debug for HelmholtzOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzOperator")
            .field("grid", &self.grid)
            .field("k", &self.k)
            .field("mode", &self.mode)
            .field("unknowns", &self.a.len())
            .finish()
    }
}

impl HelmholtzOperator {
    pub fn new(geom: &SlabGeometry, grid: &Grid3, k: f64, q: Option<&Potential>, mode: BoundaryMode) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::Invalid(format!("frequency k = {k} must be finite and non-negative")));
        }
        let want = match mode {
            BoundaryMode::Truncated => [false, false, false],
            BoundaryMode::PeriodicLateral => [true, true, false],
        };
        if grid.periodic != want {
            return Err(Error::Grid(format!("grid periodicity {:?} does not match mode {:?}", grid.periodic, mode)));
        }
        let qv = match q {
            None => vec![0.0; grid.len()],
            Some(p) => sample_potential(p, grid)?,
        };
        let mask = interior_mask(grid, geom);
        let shift: Vec<f64> = qv.iter().map(|v| v - k * k).collect();
        let a = Stencil::new(grid.dims(), mode == BoundaryMode::PeriodicLateral, grid.h, &mask, &shift);
        Ok(HelmholtzOperator {
            grid: *grid,
            geom: *geom,
            k,
            mode,
            exec: Execution::default(),
            tol: 1e-10,
            max_iter: 2000,
            q: qv,
            a,
            precond: OnceLock::new(),
            admissibility: OnceLock::new(),
        })
    }

    /// Same grid and frequency with the zero potential.
    pub fn free(&self) -> Result<Self> {
        let mut op = HelmholtzOperator::new(&self.geom, &self.grid, self.k, None, self.mode)?;
        op.exec = self.exec;
        Ok(op)
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn unknowns(&self) -> usize {
        self.a.len()
    }

    pub fn q_values(&self) -> &[f64] {
        &self.q
    }

    /// Interior residual `(−Δ_h − k² + q) u` of a full-grid field; zero off the unknowns.
    pub fn apply_full(&self, u: &GridField) -> GridField {
        let g = &self.grid;
        let ih2 = 1.0 / (g.h * g.h);
        let mut out = GridField::zeros(*g);
        for (t, &n) in self.a.nodes.iter().enumerate() {
            let n = n as usize;
            let (i, j, k) = g.ijk(n);
            let s: C64 = neighbours(g, i, j, k).map(|m| u.values[m]).sum();
            out.values[n] = u.values[n] * (6.0 * ih2 + self.a.shift[t]) - s * ih2;
        }
        out
    }

    fn preconditioner(&self) -> &Multigrid {
        self.precond.get_or_init(|| {
            let mask = interior_mask(&self.grid, &self.geom);
            let c: Vec<f64> = self.q.iter().map(|v| (v - self.k * self.k).max(0.0)).collect();
            Multigrid::new(self.grid.dims(), self.mode == BoundaryMode::PeriodicLateral, self.grid.h, &mask, &c)
        })
    }

    /// Krylov solve on the unknowns; CG first, MINRES once CG meets negative curvature.
    fn raw_solve(&self, b: &[C64], tol: f64) -> KrylovOutcome {
        let mgp = self.preconditioner();
        let apply = |u: &[C64], out: &mut [C64]| self.a.apply(u, out, self.exec);
        let pre = |r: &[C64]| mgp.vcycle(r);
        match krylov::pcg(&apply, &pre, b, tol, self.max_iter) {
            Ok(out) => out,
            Err(krylov::CgFailure::Indefinite(mut history)) => {
                let mut out = krylov::minres(&apply, &pre, b, tol, self.max_iter);
                history.append(&mut out.history);
                out.history = history;
                out
            }
        }
    }

    fn checked_solve(&self, b: &[C64]) -> Result<KrylovOutcome> {
        let out = self.raw_solve(b, self.tol);
        if !out.converged {
            return Err(Error::Solver {
                reason: format!("{:?} stagnated after {} iterations", out.method, out.iterations),
                last: out.history.last().copied().unwrap_or(f64::NAN),
                history: out.history,
            });
        }
        Ok(out)
    }

    /// General solve: `source` on the unknowns and `boundary` values on every other node.
    pub fn solve_with(&self, source: &[C64], boundary: &[C64]) -> Result<SolveReport> {
        self.require_admissible()?;
        self.solve_unchecked(source, boundary)
    }

    fn solve_unchecked(&self, source: &[C64], boundary: &[C64]) -> Result<SolveReport> {
        let g = &self.grid;
        if source.len() != g.len() || boundary.len() != g.len() {
            return Err(Error::Grid("source/boundary arrays must cover every node".into()));
        }
        let ih2 = 1.0 / (g.h * g.h);
        let b: Vec<C64> = self
            .a
            .nodes
            .iter()
            .map(|&n| {
                let n = n as usize;
                let (i, j, k) = g.ijk(n);
                let lift: C64 = neighbours(g, i, j, k)
                    .filter(|&m| self.a.index_of[m] == mg::NONE)
                    .map(|m| boundary[m])
                    .sum();
                source[n] + lift * ih2
            })
            .collect();
        let out = self.checked_solve(&b)?;
        let mut values = boundary.to_vec();
        for (t, &n) in self.a.nodes.iter().enumerate() {
            values[n as usize] = out.x[t];
        }
        Ok(SolveReport {
            field: GridField { grid: *g, values },
            method: out.method,
            iterations: out.iterations,
            history: out.history,
        })
    }

    /// Dirichlet data on the top plate given as a plate array, zero on Γ₂ and the lateral wall.
    pub fn solve_dirichlet_plate(&self, top: &[C64]) -> Result<GridField> {
        let g = &self.grid;
        let d = g.dims();
        if top.len() != d[0] * d[1] {
            return Err(Error::Grid("plate array has the wrong size".into()));
        }
        let mut boundary = vec![ZERO; g.len()];
        for j in 0..d[1] {
            for i in 0..d[0] {
                let v = top[i + d[0] * j];
                if v == ZERO {
                    continue;
                }
                let x = g.coord(i, j, d[2] - 1);
                if !on_plate_of_omega(g, &self.geom, x[0], x[1]) {
                    return Err(Error::Support(format!("Dirichlet value at ({}, {}) outside Γ₁ᴰ", x[0], x[1])));
                }
                boundary[g.idx(i, j, d[2] - 1)] = v;
            }
        }
        Ok(self.solve_with(&vec![ZERO; g.len()], &boundary)?.field)
    }

    pub fn solve_dirichlet(&self, f: &BoundaryField) -> Result<GridField> {
        if f.patch.plate != Plate::Top {
            return Err(Error::Support("Dirichlet data must live on Γ₁".into()));
        }
        self.solve_dirichlet_plate(&f.to_plate(&self.grid)?)
    }

    /// Independent Dirichlet solves, run through the configured execution mode.
    pub fn solve_dirichlet_many(&self, fs: &[BoundaryField]) -> Result<Vec<GridField>> {
        self.require_admissible()?;
        self.preconditioner();
        map_indexed(self.exec, fs.len(), |n| {
            self.solve_dirichlet(&fs[n]).map_err(|e| Error::Column { column: n, source: Box::new(e) })
        })
        .into_iter()
        .collect()
    }

    /// Homogeneous-boundary solve; also returns `C = ‖v‖ / ‖w‖` in the Ω L² norm.
    pub fn solve_source(&self, w: &GridField) -> Result<(GridField, f64)> {
        if !w.grid.same_nodes(&self.grid) {
            return Err(Error::Grid("source lives on a different grid".into()));
        }
        let v = self.solve_with(&w.values, &vec![ZERO; self.grid.len()])?.field;
        let wn = self.omega_norm(w);
        let c = if wn > 0.0 { self.omega_norm(&v) / wn } else { 0.0 };
        Ok((v, c))
    }

    pub fn omega_weights(&self) -> Vec<f64> {
        omega_weights(&self.grid, &self.geom)
    }

    /// `∫_Ω conj(u) v` by the trapezoidal rule.
    pub fn omega_inner(&self, u: &GridField, v: &GridField) -> C64 {
        omega_weights(&self.grid, &self.geom)
            .iter()
            .zip(u.values.iter().zip(&v.values))
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, (a, b))| a.conj() * b * *w)
            .sum()
    }

    pub fn omega_norm(&self, u: &GridField) -> f64 {
        self.omega_inner(u, u).re.max(0.0).sqrt()
    }

    fn start_vector(&self, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<C64> = (0..self.a.len()).map(|_| C64::new(rng.random::<f64>() - 0.5, 0.0)).collect();
        let n = krylov::norm(&v);
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    /// Smallest eigenvalue of the (positive definite) discrete operator by inverse iteration.
    pub fn smallest_eigenvalue(&self, rel_tol: f64, max_iter: usize) -> Result<f64> {
        let mut v = self.start_vector(0x5eed);
        let mut av = vec![ZERO; v.len()];
        let mut last = f64::NAN;
        for it in 1..=max_iter {
            let x = self.raw_solve(&v, 1e-13).x;
            let n = krylov::norm(&x);
            v = x.iter().map(|c| c / n).collect();
            self.a.apply(&v, &mut av, self.exec);
            let lam = krylov::dot(&v, &av).re;
            if (lam - last).abs() <= rel_tol * lam.abs() {
                return Ok(lam);
            }
            last = lam;
            if it == max_iter {
                break;
            }
        }
        Err(Error::NonConvergence { iterations: max_iter, last })
    }

    /// Smallest singular value by inverse iteration, compared against `threshold`.
    pub fn check_admissible(&self, threshold: f64) -> Result<AdmissibilityReport> {
        let max_iter = 200;
        let mut v = self.start_vector(0xad31);
        let mut av = vec![ZERO; v.len()];
        let mut last = f64::NAN;
        for it in 1..=max_iter {
            let x = self.raw_solve(&v, 1e-12).x;
            let n = krylov::norm(&x);
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::NonConvergence { iterations: it, last });
            }
            v = x.iter().map(|c| c / n).collect();
            self.a.apply(&v, &mut av, self.exec);
            let sigma = krylov::norm(&av);
            if (sigma - last).abs() <= 1e-4 * sigma || sigma <= 1e-3 * threshold {
                return Ok(AdmissibilityReport {
                    k: self.k,
                    min_singular: sigma,
                    admissible: sigma > threshold,
                    threshold,
                    iterations: it,
                });
            }
            last = sigma;
        }
        Err(Error::NonConvergence { iterations: max_iter, last })
    }

    /// `1e-6` times the smallest eigenvalue of the discrete Laplacian on the same grid.
    pub fn default_threshold(&self) -> Result<f64> {
        Ok(1e-6 * laplacian_min_eig(&self.geom, &self.grid, self.mode)?)
    }

    /// Admissibility at the default threshold, computed once per operator.
    pub fn admissibility(&self) -> Result<&AdmissibilityReport> {
        if let Some(r) = self.admissibility.get() {
            return Ok(r);
        }
        let r = self.check_admissible(self.default_threshold()?)?;
        Ok(self.admissibility.get_or_init(|| r))
    }

    pub fn require_admissible(&self) -> Result<()> {
        let r = self.admissibility()?;
        if r.admissible {
            Ok(())
        } else {
            Err(Error::Inadmissible { k: r.k, min_singular: r.min_singular, threshold: r.threshold })
        }
    }

    /// Outward normal derivative on a whole plate by the 3-point one-sided stencil; zero off Ω.
    pub fn plate_trace(&self, u: &GridField, plate: Plate) -> Vec<C64> {
        plate_trace(&self.grid, &self.geom, u, plate)
    }

    pub fn neumann_trace(&self, u: &GridField, patch: &BoundaryPatch, square: PatchSquare) -> Result<BoundaryField> {
        let t = self.plate_trace(u, patch.plate);
        BoundaryField::from_plate(&t, &self.grid, *patch, square)
    }
}

pub fn plate_trace(g: &Grid3, geom: &SlabGeometry, u: &GridField, plate: Plate) -> Vec<C64> {
    let d = g.dims();
    let n = d[2] - 1;
    let mut out = vec![ZERO; d[0] * d[1]];
    for j in 0..d[1] {
        for i in 0..d[0] {
            let x = g.coord(i, j, 0);
            if !on_plate_of_omega(g, geom, x[0], x[1]) {
                continue;
            }
            let v = |k: usize| u.values[g.idx(i, j, k)];
            out[i + d[0] * j] = match plate {
                Plate::Top => (v(n) * 3.0 - v(n - 1) * 4.0 + v(n - 2)) / (2.0 * g.h),
                Plate::Bottom => (v(0) * 3.0 - v(1) * 4.0 + v(2)) / (2.0 * g.h),
            };
        }
    }
    out
}

fn sample_potential(p: &Potential, grid: &Grid3) -> Result<Vec<f64>> {
    let pg = p.grid();
    let mut out = vec![0.0; grid.len()];
    for n in 0..grid.len() {
        let (i, j, k) = grid.ijk(n);
        let x = grid.coord(i, j, k);
        if let (Some(a), Some(b), Some(c)) = (pg.node_at(0, x[0]), pg.node_at(1, x[1]), pg.node_at(2, x[2])) {
            out[n] = p.field.at(a, b, c).re;
        }
    }
    let total: f64 = p.field.values.iter().map(|v| v.re.abs()).sum();
    let seen: f64 = out.iter().map(|v| v.abs()).sum();
    if (total - seen).abs() > 1e-12 * total.max(1.0) && grid.periodic == pg.periodic {
        return Err(Error::Grid("potential grid does not match the operator grid".into()));
    }
    if seen == 0.0 && total > 0.0 {
        return Err(Error::Grid("potential grid does not match the operator grid".into()));
    }
    Ok(out)
}

fn lap_cache() -> &'static Mutex<HashMap<String, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Smallest eigenvalue of the discrete Dirichlet Laplacian (q = 0, k = 0), cached per grid.
pub fn laplacian_min_eig(geom: &SlabGeometry, grid: &Grid3, mode: BoundaryMode) -> Result<f64> {
    let key = format!("{grid:?}{geom:?}{mode:?}");
    if let Some(v) = lap_cache().lock().unwrap().get(&key) {
        return Ok(*v);
    }
    let op = HelmholtzOperator::new(geom, grid, 0.0, None, mode)?;
    let lam = op.smallest_eigenvalue(1e-12, 500)?;
    lap_cache().lock().unwrap().insert(key, lam);
    Ok(lam)
}

/// Result of the regularized least-squares Runge approximation.
#[derive(Clone, Debug)]
pub struct RungeResult {
    pub coeffs: Vec<C64>,
    pub f: BoundaryField,
    pub residual: f64,
}

/// Minimize `‖S f − u‖²_{L²(Ω)} + reg ‖f‖²_{H^{3/2}}` over the span of a sine basis,
/// given the precomputed Dirichlet solutions `solutions[i] = S(basis[i])`.
pub fn runge_from_columns(
    op: &HelmholtzOperator,
    u_target: &GridField,
    basis: &crate::dnmap::BoundaryBasis,
    solutions: &[GridField],
    reg: f64,
) -> Result<RungeResult> {
    let n = basis.len();
    if solutions.len() != n {
        return Err(Error::Invalid("one solution per basis element is required".into()));
    }
    let w = op.omega_weights();
    let inner = |a: &GridField, b: &GridField| -> C64 {
        w.iter().zip(a.values.iter().zip(&b.values)).map(|(w, (x, y))| x.conj() * y * *w).sum()
    };
    let mut m = nalgebra::DMatrix::<C64>::zeros(n, n);
    let mut rhs = nalgebra::DVector::<C64>::zeros(n);
    for i in 0..n {
        for j in i..n {
            let v = inner(&solutions[i], &solutions[j]);
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
        rhs[i] = inner(&solutions[i], u_target);
    }
    m += &basis.gram_h32 * C64::new(reg, 0.0);
    let c = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::SingularGram("Runge normal equations are not positive definite".into()))?
        .solve(&rhs);
    let coeffs: Vec<C64> = c.iter().cloned().collect();
    let mut approx = GridField::zeros(op.grid);
    for (ci, s) in coeffs.iter().zip(solutions) {
        approx.values.iter_mut().zip(&s.values).for_each(|(a, b)| *a += ci * b);
    }
    let residual = op.omega_norm(&approx.sub(u_target)?);
    Ok(RungeResult { f: basis.combine(&coeffs), coeffs, residual })
}

/// Runge approximation with the Dirichlet solutions computed here.
pub fn runge_approximate(
    u_target: &GridField,
    op: &HelmholtzOperator,
    basis: &crate::dnmap::BoundaryBasis,
    reg: f64,
) -> Result<RungeResult> {
    let sols = op.solve_dirichlet_many(&basis.functions)?;
    runge_from_columns(op, u_target, basis, &sols, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, build_periodic_domain};

    fn small() -> (SlabGeometry, Grid3) {
        let geom = SlabGeometry::reference();
        let g = build_domain(&geom, 1.0 / 8.0).unwrap();
        (geom, g)
    }

    #[test]
    fn zero_data_gives_zero() {
        let (geom, g) = small();
        let op = HelmholtzOperator::new(&geom, &g, 1.0, None, BoundaryMode::Truncated).unwrap();
        let u = op.solve_dirichlet_plate(&vec![ZERO; g.dims()[0] * g.dims()[1]]).unwrap();
        assert!(u.is_zero());
    }

    #[test]
    fn residual_meets_tolerance() {
        let (geom, g) = small();
        let op = HelmholtzOperator::new(&geom, &g, 0.5, None, BoundaryMode::Truncated).unwrap();
        let d = g.dims();
        let top: Vec<C64> = (0..d[0] * d[1])
            .map(|n| {
                let x = g.coord(n % d[0], n / d[0], g.nz);
                if x[0].hypot(x[1]) < geom.r_lat { C64::new((1.0 - x[0].hypot(x[1])).powi(2), 0.3 * x[1]) } else { ZERO }
            })
            .collect();
        let u = op.solve_dirichlet_plate(&top).unwrap();
        let r = op.apply_full(&u);
        let rn = krylov::norm(&r.values);
        let scale = krylov::norm(&top) / (g.h * g.h);
        assert!(rn <= 1e-9 * scale, "{rn} vs {scale}");
        for j in 0..d[1] {
            for i in 0..d[0] {
                assert_eq!(u.at(i, j, 0), ZERO);
            }
        }
    }

    #[test]
    fn linear_field_trace() {
        let (geom, g) = small();
        let u = GridField::from_real_fn(g, |x| x[2]);
        let top = plate_trace(&g, &geom, &u, Plate::Top);
        let bot = plate_trace(&g, &geom, &u, Plate::Bottom);
        let c = g.idx(g.nx / 2, g.ny / 2, 0) % (g.dims()[0] * g.dims()[1]);
        assert!((top[c].re - 1.0).abs() < 1e-12);
        assert!((bot[c].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_mode_requires_periodic_grid() {
        let (geom, g) = small();
        assert!(HelmholtzOperator::new(&geom, &g, 0.0, None, BoundaryMode::PeriodicLateral).is_err());
        let pg = build_periodic_domain(&geom, 0.125).unwrap();
        assert!(HelmholtzOperator::new(&geom, &pg, 0.0, None, BoundaryMode::PeriodicLateral).is_ok());
    }

    #[test]
    fn first_eigenvalue_is_inadmissible() {
        let (geom, g) = small();
        let lam = laplacian_min_eig(&geom, &g, BoundaryMode::Truncated).unwrap();
        let op = HelmholtzOperator::new(&geom, &g, lam.sqrt(), None, BoundaryMode::Truncated).unwrap();
        let rep = op.admissibility().unwrap();
        assert!(!rep.admissible, "{rep:?}");
        let d = g.dims();
        assert!(matches!(op.solve_dirichlet_plate(&vec![ZERO; d[0] * d[1]]), Err(Error::Inadmissible { .. })));
        let op0 = HelmholtzOperator::new(&geom, &g, 0.0, None, BoundaryMode::Truncated).unwrap();
        let rep0 = op0.admissibility().unwrap();
        assert!(rep0.admissible);
        assert!((rep0.min_singular - lam).abs() <= 2e-3 * lam);
    }

    #[test]
    fn indefinite_operator_uses_minres() {
        let (geom, g) = small();
        let lam = laplacian_min_eig(&geom, &g, BoundaryMode::Truncated).unwrap();
        let op = HelmholtzOperator::new(&geom, &g, (1.3 * lam).sqrt(), None, BoundaryMode::Truncated).unwrap();
        let d = g.dims();
        let top: Vec<C64> = (0..d[0] * d[1])
            .map(|n| {
                let x = g.coord(n % d[0], n / d[0], g.nz);
                if x[0].hypot(x[1]) < 0.6 { C64::new(1.0, 0.0) } else { ZERO }
            })
            .collect();
        let u = op.solve_dirichlet_plate(&top).unwrap();
        let r = op.apply_full(&u);
        assert!(krylov::norm(&r.values) <= 1e-8 * krylov::norm(&top) / (g.h * g.h));
    }
}
