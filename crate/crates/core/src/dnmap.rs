//! Partial DN maps as matrices over a sine basis, the boundary Sobolev norms and the
//! star operator norm.

use crate::boundary::{BoundaryField, PatchSquare};
use crate::error::{Error, Result};
use crate::fields::{GridField, Potential, ZERO};
use crate::forward::{BoundaryMode, HelmholtzOperator};
use crate::geometry::{BoundaryPatch, Grid3, Plate, SlabGeometry};
use crate::linalg::{cholesky_lower, condition_hermitian, pencil_max_eig, CMat, CVec};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Orthonormal 1D sine vectors `s_p(i) = sqrt(2/N) sin(p π i / N)`, `p, i = 1..N-1`.
fn sine_table(intervals: usize) -> Vec<Vec<f64>> {
    let n = intervals as f64;
    (1..intervals)
        .map(|p| (1..intervals).map(|i| (2.0 / n).sqrt() * (p as f64 * PI * i as f64 / n).sin()).collect())
        .collect()
}

/// Full discrete sine transform of a square field, normalized so that
/// `Σ |ĝ|² = h² Σ |g|²`. Entry `[(p-1) + (N-1)(q-1)]`.
pub fn sine_coefficients(values: &[C64], square: &PatchSquare) -> Vec<C64> {
    let nn = square.intervals();
    let side = square.side();
    let s = sine_table(nn);
    let m = nn - 1;
    // transform along x, then y
    let mut tmp = vec![ZERO; m * side];
    for j in 0..side {
        for p in 0..m {
            tmp[p + m * j] = (1..nn).map(|i| values[i + side * j] * s[p][i - 1]).sum();
        }
    }
    let mut out = vec![ZERO; m * m];
    for q in 0..m {
        for p in 0..m {
            out[p + m * q] = (1..nn).map(|j| tmp[p + m * j] * s[q][j - 1]).sum::<C64>() * square.h;
        }
    }
    out
}

/// `(1 + |κ|²)^{3/2}` weights matching [`sine_coefficients`].
pub fn h32_weights(square: &PatchSquare) -> Vec<f64> {
    let m = square.intervals() - 1;
    let a = square.half_width();
    let mut w = vec![0.0; m * m];
    for q in 1..=m {
        for p in 1..=m {
            let k2 = (p as f64 * PI / (2.0 * a)).powi(2) + (q as f64 * PI / (2.0 * a)).powi(2);
            w[(p - 1) + m * (q - 1)] = (1.0 + k2).powf(1.5);
        }
    }
    w
}

/// Discrete `H^{3/2}` norm over the bounding-square sine spectrum.
pub fn norm_h32(g: &BoundaryField) -> f64 {
    let c = sine_coefficients(&g.values, &g.square);
    h32_weights(&g.square).iter().zip(&c).map(|(w, c)| w * c.norm_sqr()).sum::<f64>().sqrt()
}

/// Sine modes `e_pq`, `1 <= p, q <= n`, on a patch square, masked to the patch.
#[derive(Clone, Debug)]
pub struct BoundaryBasis {
    pub patch: BoundaryPatch,
    pub square: PatchSquare,
    pub n: usize,
    pub modes: Vec<(usize, usize)>,
    pub functions: Vec<BoundaryField>,
    pub gram_h32: CMat,
    pub gram_h32_cond: f64,
}

impl BoundaryBasis {
    pub fn new(patch: BoundaryPatch, square: PatchSquare, n: usize) -> Result<Self> {
        if n == 0 || n >= square.intervals() {
            return Err(Error::Invalid(format!("basis size {n} must lie in 1..{}", square.intervals())));
        }
        let a = square.half_width();
        let nn = square.intervals() as f64;
        let modes: Vec<(usize, usize)> = (1..=n).flat_map(|q| (1..=n).map(move |p| (p, q))).collect();
        let functions: Vec<BoundaryField> = modes
            .iter()
            .map(|&(p, q)| {
                BoundaryField::from_fn(patch, square, |x, y| {
                    let i = ((x + a) / square.h).round();
                    let j = ((y + a) / square.h).round();
                    C64::new((p as f64 * PI * i / nn).sin() * (q as f64 * PI * j / nn).sin() / a, 0.0)
                })
            })
            .collect();
        let w = h32_weights(&square);
        let coeffs: Vec<Vec<C64>> = functions.iter().map(|f| sine_coefficients(&f.values, &square)).collect();
        let nb = functions.len();
        let mut gram = CMat::zeros(nb, nb);
        for i in 0..nb {
            for j in i..nb {
                let v: C64 = coeffs[i].iter().zip(&coeffs[j]).zip(&w).map(|((a, b), w)| a.conj() * b * *w).sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v.conj();
            }
        }
        let cond = condition_hermitian(&gram);
        if !cond.is_finite() {
            return Err(Error::SingularGram("H^{3/2} Gram of the boundary basis".into()));
        }
        Ok(BoundaryBasis { patch, square, n, modes, functions, gram_h32: gram, gram_h32_cond: cond })
    }

    /// Default source basis: modes on the grid-aligned square around the disc of radius R'.
    pub fn source(geom: &SlabGeometry, grid: &Grid3, n: usize) -> Result<Self> {
        BoundaryBasis::new(BoundaryPatch::dirichlet(geom), PatchSquare::for_radius(geom.r_prime, grid.h), n)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Continuous wave vector of mode `i`.
    pub fn kappa(&self, i: usize) -> (f64, f64) {
        let a = self.square.half_width();
        let (p, q) = self.modes[i];
        (p as f64 * PI / (2.0 * a), q as f64 * PI / (2.0 * a))
    }

    pub fn combine(&self, coeffs: &[C64]) -> BoundaryField {
        let mut values = vec![ZERO; self.square.len()];
        for (c, f) in coeffs.iter().zip(&self.functions) {
            values.iter_mut().zip(&f.values).for_each(|(v, b)| *v += c * b);
        }
        BoundaryField { patch: self.patch, square: self.square, values }
    }

    /// `‖Σ c_i f_i‖²_{H^{3/2}}` through the Gram matrix.
    pub fn h32_quadratic(&self, coeffs: &[C64]) -> f64 {
        let c = CVec::from_column_slice(coeffs);
        c.dotc(&(&self.gram_h32 * &c)).re
    }
}

/// Dual `H^{-3/2}` norm on a target patch, tested against the sine modes of its square.
#[derive(Clone, Debug)]
pub struct DualNorm {
    pub test: BoundaryBasis,
    /// square indices of the patch nodes, the row space of DN matrices
    pub nodes: Vec<usize>,
    /// `P[i, r] = h² b_i(node_r)`
    pairing: CMat,
    chol: CMat,
}

impl DualNorm {
    pub fn new(patch: BoundaryPatch, h: f64, n: usize) -> Result<Self> {
        DualNorm::on_square(patch, PatchSquare::for_radius(patch.outer, h), n)
    }

    pub fn on_square(patch: BoundaryPatch, square: PatchSquare, n: usize) -> Result<Self> {
        let h = square.h;
        let test = BoundaryBasis::new(patch, square, n.min(square.intervals() - 1))?;
        let nodes = patch_nodes(&patch, &square);
        let h2 = h * h;
        let pairing = CMat::from_fn(test.len(), nodes.len(), |i, r| test.functions[i].values[nodes[r]] * h2);
        let chol = cholesky_lower(&test.gram_h32, "H^{3/2} Gram of the test basis")?;
        Ok(DualNorm { test, nodes, pairing, chol })
    }

    pub fn square(&self) -> PatchSquare {
        self.test.square
    }

    fn coefficients(&self, r: &[C64]) -> CVec {
        &self.pairing * CVec::from_column_slice(r)
    }

    /// Norm of a vector of samples on the patch nodes.
    pub fn norm_samples(&self, r: &[C64]) -> f64 {
        let p = self.coefficients(r);
        let y = self.chol.solve_lower_triangular(&p).expect("Cholesky factor is invertible");
        y.norm()
    }

    pub fn norm(&self, r: &BoundaryField) -> Result<f64> {
        if r.square != self.test.square {
            return Err(Error::Grid("field square differs from the dual-norm square".into()));
        }
        Ok(self.norm_samples(&self.nodes.iter().map(|&n| r.values[n]).collect::<Vec<_>>()))
    }

    /// Test coefficients of the maximizer `g* ∝ G⁻¹ conj(p)`.
    pub fn maximizer(&self, r: &[C64]) -> Vec<C64> {
        let p = self.coefficients(r).map(|c| c.conj());
        let y = self.chol.solve_lower_triangular(&p).unwrap();
        let c = self.chol.adjoint().solve_upper_triangular(&y).unwrap();
        c.iter().cloned().collect()
    }

    /// `|⟨r, g⟩| / ‖g‖_{H^{3/2}}` for `g = Σ c_i b_i`.
    pub fn ratio(&self, r: &[C64], c: &[C64]) -> f64 {
        let p = self.coefficients(r);
        let num: C64 = p.iter().zip(c).map(|(a, b)| a * b).sum();
        num.norm() / self.test.h32_quadratic(c).sqrt()
    }

    /// `Pᴴ G⁻¹ P`, the Hermitian form of the squared dual norm on the samples.
    pub fn form(&self) -> CMat {
        let y = self.chol.solve_lower_triangular(&self.pairing).unwrap();
        y.adjoint() * y
    }
}

/// `H^{-3/2}` norm with the default test-basis size.
pub fn norm_hm32(r: &BoundaryField) -> Result<f64> {
    DualNorm::new(r.patch, r.square.h, 15)?.norm(r)
}

pub fn patch_nodes(patch: &BoundaryPatch, square: &PatchSquare) -> Vec<usize> {
    let s = square.side();
    (0..square.len())
        .filter(|&n| {
            let (x, y) = square.coord(n % s, n / s);
            patch.contains(x, y)
        })
        .collect()
}

/// Matrix of a partial DN map: basis coefficients on Γ₁ᴰ to Neumann samples on the target patch.
#[derive(Clone, Debug)]
pub struct DnOperator {
    pub matrix: CMat,
    pub k: f64,
    pub target: BoundaryPatch,
    pub target_square: PatchSquare,
    pub target_nodes: Vec<usize>,
    pub basis_n: usize,
}

impl DnOperator {
    pub fn difference(&self, other: &DnOperator) -> Result<CMat> {
        if self.matrix.shape() != other.matrix.shape() || self.target != other.target {
            return Err(Error::Grid("DN operators have different shapes or targets".into()));
        }
        Ok(&self.matrix - &other.matrix)
    }

    /// Neumann samples of column `j` as a boundary field on the target square.
    pub fn column_field(&self, j: usize) -> BoundaryField {
        let mut values = vec![ZERO; self.target_square.len()];
        for (r, &n) in self.target_nodes.iter().enumerate() {
            values[n] = self.matrix[(r, j)];
        }
        BoundaryField { patch: self.target, square: self.target_square, values }
    }
}

fn dn_from_solutions(
    op: &HelmholtzOperator,
    basis: &BoundaryBasis,
    solutions: &[GridField],
    target: BoundaryPatch,
) -> Result<DnOperator> {
    let square = PatchSquare::for_radius(target.outer, op.grid.h);
    let nodes = patch_nodes(&target, &square);
    let mut matrix = CMat::zeros(nodes.len(), solutions.len());
    for (j, u) in solutions.iter().enumerate() {
        let t = op.neumann_trace(u, &target, square).map_err(|e| Error::Column { column: j, source: Box::new(e) })?;
        for (r, &n) in nodes.iter().enumerate() {
            matrix[(r, j)] = t.values[n];
        }
    }
    Ok(DnOperator { matrix, k: op.k, target, target_square: square, target_nodes: nodes, basis_n: basis.n })
}

/// One Dirichlet solve per basis column, traced onto the target patch.
pub fn assemble_dn(op: &HelmholtzOperator, basis: &BoundaryBasis, target: BoundaryPatch) -> Result<DnOperator> {
    Ok(assemble_dn_targets(op, basis, &[target])?.remove(0))
}

/// Like [`assemble_dn`] for several targets sharing the same solves.
pub fn assemble_dn_targets(op: &HelmholtzOperator, basis: &BoundaryBasis, targets: &[BoundaryPatch]) -> Result<Vec<DnOperator>> {
    if basis.patch.plate != Plate::Top {
        return Err(Error::Support("source basis must live on Γ₁".into()));
    }
    let sols = op.solve_dirichlet_many(&basis.functions)?;
    targets.iter().map(|t| dn_from_solutions(op, basis, &sols, *t)).collect()
}

/// `⦀f⦀`: L²(Ω) norm of the free solution with Dirichlet data `f`.
pub fn triple_norm(f: &BoundaryField, free: &HelmholtzOperator) -> Result<f64> {
    if f.is_zero() {
        free.admissibility()?;
        return Ok(0.0);
    }
    Ok(free.omega_norm(&free.solve_dirichlet(f)?))
}

/// Free solutions and the ⦀·⦀ Gram matrix of a basis at one frequency; shared across potentials.
pub struct TripleGram {
    pub k: f64,
    pub solutions: Vec<GridField>,
    pub gram: CMat,
    pub cond: f64,
}

impl TripleGram {
    pub fn new(free: &HelmholtzOperator, basis: &BoundaryBasis) -> Result<Self> {
        if free.q_values().iter().any(|v| *v != 0.0) {
            return Err(Error::Invalid("the triple norm uses the free operator".into()));
        }
        let solutions = free.solve_dirichlet_many(&basis.functions)?;
        let w = free.omega_weights();
        let nb = solutions.len();
        let mut gram = CMat::zeros(nb, nb);
        for i in 0..nb {
            for j in i..nb {
                let v: C64 = w
                    .iter()
                    .zip(solutions[i].values.iter().zip(&solutions[j].values))
                    .map(|(w, (a, b))| a.conj() * b * *w)
                    .sum();
                gram[(i, j)] = v;
                gram[(j, i)] = v.conj();
            }
        }
        let cond = condition_hermitian(&gram);
        cholesky_lower(&gram, "triple-norm Gram")?;
        Ok(TripleGram { k: free.k, solutions, gram, cond })
    }
}

/// Everything needed to evaluate `‖·‖_∗` for DN differences at one frequency and target.
pub struct StarNorm {
    pub gram_triple: CMat,
    pub dual: DualNorm,
    form: CMat,
}

/// Power-iteration cap for the star norm.
pub const STAR_MAX_ITER: usize = 500;

impl StarNorm {
    pub fn new(gram_triple: CMat, dual: DualNorm) -> Result<Self> {
        cholesky_lower(&gram_triple, "triple-norm Gram")?;
        let form = dual.form();
        Ok(StarNorm { gram_triple, dual, form })
    }

    pub fn for_target(triple: &TripleGram, target: BoundaryPatch, h: f64, test_n: usize) -> Result<Self> {
        StarNorm::new(triple.gram.clone(), DualNorm::new(target, h, test_n)?)
    }

    /// Largest generalized singular value of `d` from (span, ⦀·⦀) to `H^{-3/2}`.
    pub fn op_norm(&self, d: &CMat) -> Result<f64> {
        if d.nrows() != self.dual.nodes.len() || d.ncols() != self.gram_triple.nrows() {
            return Err(Error::Grid(format!(
                "matrix is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                self.dual.nodes.len(),
                self.gram_triple.nrows()
            )));
        }
        let a = d.adjoint() * &self.form * d;
        let e = pencil_max_eig(&a, &self.gram_triple, 0x57a2, STAR_MAX_ITER)?;
        Ok(e.value.max(0.0).sqrt())
    }

    /// `norm_Hm32(D c) / ⦀c⦀` for one coefficient vector.
    pub fn ratio(&self, d: &CMat, c: &[C64]) -> f64 {
        let cv = CVec::from_column_slice(c);
        let r = d * &cv;
        let num = self.dual.norm_samples(r.as_slice());
        num / cv.dotc(&(&self.gram_triple * &cv)).re.sqrt()
    }
}

/// Caches the free solves for one geometry, grid, basis and frequency.
pub struct DnContext {
    pub geom: SlabGeometry,
    pub grid: Grid3,
    pub k: f64,
    pub mode: BoundaryMode,
    pub basis: BoundaryBasis,
    pub free: HelmholtzOperator,
    triple: OnceLock<TripleGram>,
}

impl DnContext {
    pub fn new(geom: &SlabGeometry, grid: &Grid3, k: f64, basis_n: usize, mode: BoundaryMode) -> Result<Self> {
        let free = HelmholtzOperator::new(geom, grid, k, None, mode)?;
        let basis = BoundaryBasis::source(geom, grid, basis_n)?;
        Ok(DnContext { geom: *geom, grid: *grid, k, mode, basis, free, triple: OnceLock::new() })
    }

    pub fn triple(&self) -> Result<&TripleGram> {
        if let Some(t) = self.triple.get() {
            return Ok(t);
        }
        let t = TripleGram::new(&self.free, &self.basis)?;
        Ok(self.triple.get_or_init(|| t))
    }

    pub fn star(&self, target: BoundaryPatch, test_n: usize) -> Result<StarNorm> {
        StarNorm::for_target(self.triple()?, target, self.grid.h, test_n)
    }

    /// DN matrix for `q`; the zero potential reuses the cached free solves.
    pub fn assemble(&self, q: &Potential, target: BoundaryPatch) -> Result<DnOperator> {
        if q.field.is_zero() {
            return dn_from_solutions(&self.free, &self.basis, &self.triple()?.solutions, target);
        }
        let op = HelmholtzOperator::new(&self.geom, &self.grid, self.k, Some(q), self.mode)?.with_exec(self.free.exec);
        assemble_dn(&op, &self.basis, target)
    }
}

/// Lateral Fourier mode `e^{2πi(a x₁ + b x₂)/P}` of a periodic slab grid, on the plate.
pub fn periodic_mode(grid: &Grid3, a: i64, b: i64) -> Vec<C64> {
    let d = grid.dims();
    let period = grid.nx as f64 * grid.h;
    (0..d[0] * d[1])
        .map(|n| {
            let x = grid.coord(n % d[0], n / d[0], 0);
            let ph = 2.0 * PI * (a as f64 * x[0] + b as f64 * x[1]) / period;
            C64::new(ph.cos(), ph.sin())
        })
        .collect()
}

/// First `count` lateral wave numbers ordered by `|κ|`, then lexicographically.
pub fn periodic_modes(count: usize) -> Vec<(i64, i64)> {
    let r = (count as f64).sqrt().ceil() as i64 + 2;
    let mut v: Vec<(i64, i64)> = (-r..=r).flat_map(|a| (-r..=r).map(move |b| (a, b))).collect();
    v.sort_by_key(|&(a, b)| (a * a + b * b, a, b));
    v.truncate(count);
    v
}

/// DN matrices of the periodic slab in the plate-exponential basis, top and bottom traces.
pub fn periodic_dn_fourier(op: &HelmholtzOperator, modes: &[(i64, i64)]) -> Result<(CMat, CMat)> {
    if op.mode != BoundaryMode::PeriodicLateral {
        return Err(Error::Invalid("periodic DN oracle needs the periodic lateral mode".into()));
    }
    let g = &op.grid;
    let plates: Vec<Vec<C64>> = modes.iter().map(|&(a, b)| periodic_mode(g, a, b)).collect();
    let cols = crate::par::map_indexed(op.exec, modes.len(), |j| op.solve_dirichlet_plate(&plates[j]));
    let npl = (g.nx * g.ny) as f64;
    let mut top = CMat::zeros(modes.len(), modes.len());
    let mut bot = CMat::zeros(modes.len(), modes.len());
    for (j, u) in cols.into_iter().enumerate() {
        let u = u.map_err(|e| Error::Column { column: j, source: Box::new(e) })?;
        let tt = op.plate_trace(&u, Plate::Top);
        let tb = op.plate_trace(&u, Plate::Bottom);
        for (i, e) in plates.iter().enumerate() {
            top[(i, j)] = e.iter().zip(&tt).map(|(e, t)| e.conj() * t).sum::<C64>() / npl;
            bot[(i, j)] = e.iter().zip(&tb).map(|(e, t)| e.conj() * t).sum::<C64>() / npl;
        }
    }
    Ok((top, bot))
}

/// `μ coth(μL)` and `−μ / sinh(μL)` with `μ = sqrt(|κ|² − k²)` (analytic continuation below k).
pub fn slab_dn_symbol(kappa: f64, k: f64, l: f64) -> (C64, C64) {
    let mu = C64::new(kappa * kappa - k * k, 0.0).sqrt();
    if mu.norm() < 1e-14 {
        return (C64::new(1.0 / l, 0.0), C64::new(-1.0 / l, 0.0));
    }
    let ml = mu * l;
    (mu * ml.cosh() / ml.sinh(), -mu / ml.sinh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, PatchKind};
    use approx::assert_relative_eq;

    fn big_patch() -> BoundaryPatch {
        BoundaryPatch { plate: Plate::Top, kind: PatchKind::Neumann, inner: 0.0, outer: 10.0 }
    }

    #[test]
    fn single_mode_norms() {
        let sq = PatchSquare { m: 6, h: 0.1 };
        let basis = BoundaryBasis::new(big_patch(), sq, 5).unwrap();
        let i = 7;
        let (kx, ky) = basis.kappa(i);
        let w = 1.0 + kx * kx + ky * ky;
        let f = &basis.functions[i];
        assert_relative_eq!(f.norm_l2(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(norm_h32(f), w.powf(0.75), max_relative = 1e-12);
        let dual = DualNorm::on_square(big_patch(), sq, 11).unwrap();
        assert_eq!(dual.square(), sq);
        assert_relative_eq!(dual.norm(f).unwrap(), w.powf(-0.75), max_relative = 1e-10);
        assert_eq!(norm_h32(&BoundaryField::zeros(big_patch(), sq)), 0.0);
    }

    #[test]
    fn gram_consistency() {
        let geom = SlabGeometry::reference();
        let sq = PatchSquare::for_radius(geom.r_prime, 1.0 / 16.0);
        let basis = BoundaryBasis::new(BoundaryPatch::neumann(&geom, Plate::Top), sq, 8).unwrap();
        let c: Vec<C64> = (0..basis.len()).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64).cos() * 0.2)).collect();
        let g = basis.combine(&c);
        let direct = norm_h32(&g).powi(2);
        assert_relative_eq!(direct, basis.h32_quadratic(&c), max_relative = 1e-10);
    }

    #[test]
    fn periodic_symbol_matches_small_grid() {
        let geom = SlabGeometry::new(1.0, 0.5, 0.65, 1.0, 0.05).unwrap();
        let g = crate::geometry::build_periodic_domain(&geom, 1.0 / 16.0).unwrap();
        let op = HelmholtzOperator::new(&geom, &g, 0.0, None, BoundaryMode::PeriodicLateral).unwrap();
        let modes = periodic_modes(3);
        let (top, bot) = periodic_dn_fourier(&op, &modes).unwrap();
        let period = g.nx as f64 * g.h;
        for (i, &(a, b)) in modes.iter().enumerate() {
            let kap = 2.0 * PI * ((a * a + b * b) as f64).sqrt() / period;
            let (et, eb) = slab_dn_symbol(kap, 0.0, 1.0);
            assert!((top[(i, i)] - et).norm() / et.norm() < 4.0 * g.h * g.h);
            assert!((bot[(i, i)] - eb).norm() / eb.norm() < 4.0 * g.h * g.h);
        }
    }

    #[test]
    fn star_norm_zero_and_scaling() {
        let geom = SlabGeometry::reference();
        let g = build_domain(&geom, 1.0 / 8.0).unwrap();
        let ctx = DnContext::new(&geom, &g, 1.0, 3, BoundaryMode::Truncated).unwrap();
        let star = ctx.star(BoundaryPatch::neumann(&geom, Plate::Top), 4).unwrap();
        let rows = star.dual.nodes.len();
        let d = CMat::from_fn(rows, 9, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, (i % 3) as f64));
        assert_eq!(star.op_norm(&CMat::zeros(rows, 9)).unwrap(), 0.0);
        let s = star.op_norm(&d).unwrap();
        assert_relative_eq!(star.op_norm(&(&d * C64::new(0.0, -3.0))).unwrap(), 3.0 * s, max_relative = 1e-10);
    }
}
