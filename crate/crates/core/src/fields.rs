//! Grid-sampled fields, potentials, reflection and extension operators, Fourier transforms.

use crate::error::{Error, Result};
use crate::fft::{angular_freqs, Fft3};
use crate::geometry::{Grid3, SlabGeometry};
use crate::par::{map_indexed, Execution};
use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: Grid3,
    pub values: Vec<C64>,
}

impl GridField {
    pub fn zeros(grid: Grid3) -> Self {
        GridField { values: vec![ZERO; grid.len()], grid }
    }

    pub fn from_values(grid: Grid3, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Grid(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Invalid("non-finite field value".into()));
        }
        Ok(GridField { grid, values })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> C64) -> Self {
        let values = (0..grid.len())
            .map(|n| {
                let (i, j, k) = grid.ijk(n);
                f(grid.coord(i, j, k))
            })
            .collect();
        GridField { grid, values }
    }

    pub fn from_real_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> C64 {
        self.values[self.grid.idx(i, j, k)]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == ZERO)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Trapezoidal L² norm over the grid.
    pub fn norm_l2(&self) -> f64 {
        let mut s = 0.0;
        for (n, v) in self.values.iter().enumerate() {
            let (i, j, k) = self.grid.ijk(n);
            s += self.grid.trapezoid_weight(i, j, k) * v.norm_sqr();
        }
        s.sqrt()
    }

    pub fn scale(&self, a: C64) -> GridField {
        GridField { grid: self.grid, values: self.values.iter().map(|v| v * a).collect() }
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        if !self.grid.same_nodes(&other.grid) {
            return Err(Error::Grid("adding fields on different grids".into()));
        }
        Ok(GridField { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Trilinear interpolation at `x`; periodic axes wrap, closed axes clamp to zero outside.
    pub fn interpolate(&self, x: [f64; 3]) -> C64 {
        let g = &self.grid;
        let d = g.dims();
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (x[a] - g.origin[a]) / g.h;
            let f = t.floor();
            base[a] = f as i64;
            frac[a] = t - f;
            if frac[a] < 1e-12 {
                frac[a] = 0.0;
            } else if frac[a] > 1.0 - 1e-12 {
                frac[a] = 0.0;
                base[a] += 1;
            }
        }
        let mut acc = ZERO;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut p = [0usize; 3];
            let mut ok = true;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                let wa = if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                if wa == 0.0 {
                    ok = false;
                    break;
                }
                w *= wa;
                let mut ia = base[a] + bit as i64;
                let n = d[a] as i64;
                if g.periodic[a] {
                    ia = ia.rem_euclid(n);
                } else if ia < 0 || ia >= n {
                    ok = false;
                    break;
                }
                p[a] = ia as usize;
            }
            if ok {
                acc += self.values[g.idx(p[0], p[1], p[2])] * w;
            }
        }
        acc
    }
}

/// Real potential stored on the slab grid, supported in `{|x'| <= R}`.
#[derive(Clone, Debug)]
pub struct Potential {
    pub field: GridField,
    pub support_check: bool,
    pub sobolev_s: f64,
    pub bound_m: f64,
}

impl Potential {
    /// Validate support, realness and the a-priori bound (5% slack) and wrap the field.
    pub fn new(field: GridField, geom: &SlabGeometry, sobolev_s: f64, bound_m: f64) -> Result<Self> {
        if !(sobolev_s > 1.5) {
            return Err(Error::Invalid(format!("smoothness index s = {sobolev_s} must exceed 3/2")));
        }
        check_support(&field, geom)?;
        let norm = hs_norm(&field, sobolev_s);
        if norm > 1.05 * bound_m {
            return Err(Error::PriorBound { norm, bound: bound_m });
        }
        Ok(Potential { field, support_check: true, sobolev_s, bound_m })
    }

    /// Wrap a field after the support check only, with the bound set to its own H^s norm.
    pub fn with_measured_bound(field: GridField, geom: &SlabGeometry, sobolev_s: f64) -> Result<Self> {
        check_support(&field, geom)?;
        let m = hs_norm(&field, sobolev_s);
        Potential::new(field, geom, sobolev_s, m)
    }

    pub fn zero(grid: Grid3) -> Self {
        Potential { field: GridField::zeros(grid), support_check: true, sobolev_s: 2.0, bound_m: 0.0 }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.field.grid
    }

    /// Real node values.
    pub fn real_values(&self) -> Vec<f64> {
        self.field.values.iter().map(|v| v.re).collect()
    }

    pub fn linf(&self) -> f64 {
        self.field.max_abs()
    }
}

fn check_support(field: &GridField, geom: &SlabGeometry) -> Result<()> {
    let g = &field.grid;
    for (n, v) in field.values.iter().enumerate() {
        if v.im != 0.0 {
            return Err(Error::Support("potential must be real-valued".into()));
        }
        if v.re == 0.0 {
            continue;
        }
        let (i, j, k) = g.ijk(n);
        let x = g.coord(i, j, k);
        if x[0].hypot(x[1]) > geom.r || x[2] < -1e-12 || x[2] > geom.l + 1e-12 {
            return Err(Error::Support(format!("nonzero value at {x:?} outside Q")));
        }
    }
    Ok(())
}

/// Discrete H^s norm via a ×2 zero-padded FFT with weight `(1+|ζ|²)^{s/2}`.
pub fn hs_norm(field: &GridField, s: f64) -> f64 {
    let g = &field.grid;
    let d = g.dims();
    let p = [2 * d[0], 2 * d[1], 2 * d[2]];
    let mut buf = vec![ZERO; p[0] * p[1] * p[2]];
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                buf[i + p[0] * (j + p[1] * k)] = field.at(i, j, k);
            }
        }
    }
    Fft3::new(p).forward(&mut buf);
    let f: Vec<Vec<f64>> = (0..3).map(|a| angular_freqs(p[a], g.h)).collect();
    let h3 = g.h.powi(3);
    let vol = (p[0] * p[1] * p[2]) as f64 * h3;
    let mut acc = 0.0;
    for k in 0..p[2] {
        for j in 0..p[1] {
            for i in 0..p[0] {
                let z2 = f[0][i].powi(2) + f[1][j].powi(2) + f[2][k].powi(2);
                let v = buf[i + p[0] * (j + p[1] * k)] * h3;
                acc += (1.0 + z2).powf(s) * v.norm_sqr();
            }
        }
    }
    (acc / vol).sqrt()
}

/// `x ↦ x*`: reflect a field on a grid symmetric in x₃.
pub fn reflect(field: &GridField) -> Result<GridField> {
    let g = &field.grid;
    let map = reflection_map(g)?;
    let d = g.dims();
    let mut out = GridField::zeros(*g);
    for k in 0..d[2] {
        let kr = map[k];
        for j in 0..d[1] {
            for i in 0..d[0] {
                out.values[g.idx(i, j, k)] = field.values[g.idx(i, j, kr)];
            }
        }
    }
    Ok(out)
}

/// Index map `k ↦ k*` along x₃, or an error if the grid is not symmetric.
pub fn reflection_map(g: &Grid3) -> Result<Vec<usize>> {
    let n = g.nz;
    let centred = (g.origin[2] + n as f64 * g.h / 2.0).abs() <= 1e-9 * g.h;
    if !centred {
        return Err(Error::NotSymmetric { axis: 'z' });
    }
    Ok(if g.periodic[2] {
        (0..n).map(|k| (n - k) % n).collect()
    } else {
        (0..=n).map(|k| n - k).collect()
    })
}

fn sample_on_box(q: &Potential, box_grid: &Grid3, geom: &SlabGeometry) -> Result<GridField> {
    check_support(&q.field, geom)?;
    let sg = q.grid();
    let sd = sg.dims();
    let mut out = GridField::zeros(*box_grid);
    for n in 0..box_grid.len() {
        let (i, j, k) = box_grid.ijk(n);
        let x = box_grid.coord(i, j, k);
        if !(x[2] > 1e-12 && x[2] < geom.l - 1e-12) || x[0].hypot(x[1]) > geom.r + sg.h {
            continue;
        }
        let v = match (sg.node_at(0, x[0]), sg.node_at(1, x[1]), sg.node_at(2, x[2])) {
            (Some(a), Some(b), Some(c)) if a < sd[0] && b < sd[1] && c < sd[2] => q.field.at(a, b, c),
            _ => q.field.interpolate(x),
        };
        out.values[n] = C64::new(v.re, 0.0);
    }
    Ok(out)
}

/// `Q(x) = q(x) χ_Σ(x)` sampled on a symmetric box grid.
pub fn extend_trivial(q: &Potential, box_grid: &Grid3, geom: &SlabGeometry) -> Result<GridField> {
    reflection_map(box_grid)?;
    sample_on_box(q, box_grid, geom)
}

/// `Qᵉᵛᵉⁿ(x) = q(x) + q(x*)` on a symmetric box grid.
pub fn extend_even(q: &Potential, box_grid: &Grid3, geom: &SlabGeometry) -> Result<GridField> {
    let t = extend_trivial(q, box_grid, geom)?;
    let r = reflect(&t)?;
    t.add(&r)
}

/// Trapezoidal Fourier transform `ξ ↦ Σ w f(x) e^{i x·ξ}` evaluated separably.
#[derive(Clone, Debug)]
pub struct FourierTransform {
    lo: [usize; 3],
    hi: [usize; 3],
    grid: Grid3,
    /// weighted values on the support bounding box, x-fastest
    vals: Vec<C64>,
}

pub fn fourier_transform(field: &GridField) -> FourierTransform {
    let g = field.grid;
    let d = g.dims();
    let mut lo = d;
    let mut hi = [0usize; 3];
    let mut any = false;
    for (n, v) in field.values.iter().enumerate() {
        if *v != ZERO {
            any = true;
            let (i, j, k) = g.ijk(n);
            for (a, ix) in [i, j, k].into_iter().enumerate() {
                lo[a] = lo[a].min(ix);
                hi[a] = hi[a].max(ix + 1);
            }
        }
    }
    if !any {
        return FourierTransform { lo: [0; 3], hi: [0; 3], grid: g, vals: Vec::new() };
    }
    let mut vals = Vec::with_capacity((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]));
    for k in lo[2]..hi[2] {
        for j in lo[1]..hi[1] {
            for i in lo[0]..hi[0] {
                vals.push(field.at(i, j, k) * g.trapezoid_weight(i, j, k));
            }
        }
    }
    FourierTransform { lo, hi, grid: g, vals }
}

impl FourierTransform {
    pub fn eval(&self, xi: [f64; 3]) -> C64 {
        if self.vals.is_empty() {
            return ZERO;
        }
        let phases: Vec<Vec<C64>> = (0..3)
            .map(|a| {
                (self.lo[a]..self.hi[a])
                    .map(|i| C64::from_polar(1.0, (self.grid.origin[a] + i as f64 * self.grid.h) * xi[a]))
                    .collect()
            })
            .collect();
        let (nx, ny) = (self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]);
        let mut total = ZERO;
        for (kk, pz) in phases[2].iter().enumerate() {
            let mut plane = ZERO;
            for (jj, py) in phases[1].iter().enumerate() {
                let row = &self.vals[nx * (jj + ny * kk)..nx * (jj + ny * kk) + nx];
                let s: C64 = row.iter().zip(&phases[0]).map(|(v, p)| v * p).sum();
                plane += s * py;
            }
            total += plane * pz;
        }
        total
    }

    pub fn eval_many(&self, xis: &[[f64; 3]], exec: Execution) -> Vec<C64> {
        map_indexed(exec, xis.len(), |n| self.eval(xis[n]))
    }
}

/// Transform of the even extension of a slab field: `F(ξ) + F(ξ₁, ξ₂, −ξ₃)`.
pub fn even_transform(ft: &FourierTransform, xi: [f64; 3]) -> C64 {
    ft.eval(xi) + ft.eval([xi[0], xi[1], -xi[2]])
}

/// Smooth compactly supported bump `amp · exp(1 − 1/(1 − d²))` with `d = |x − c| / radius`.
pub fn bump(x: [f64; 3], centre: [f64; 3], radius: f64, amp: f64) -> f64 {
    let d2 = ((x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2) + (x[2] - centre[2]).powi(2)) / radius.powi(2);
    if d2 >= 1.0 {
        0.0
    } else {
        amp * (1.0 - 1.0 / (1.0 - d2)).exp()
    }
}

/// The smooth test potential used across the suite: a bump centred in Q.
pub fn bump_potential(grid: &Grid3, geom: &SlabGeometry, amp: f64) -> Result<Potential> {
    let rad = (0.9 * geom.r).min(0.45 * geom.l);
    let c = [0.0, 0.0, geom.l / 2.0];
    let f = GridField::from_real_fn(*grid, |x| bump(x, c, rad, amp));
    Potential::with_measured_bound(f, geom, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_box, build_domain};

    fn sym_box() -> Grid3 {
        build_box(3.0, 12).unwrap()
    }

    #[test]
    fn reflect_odd_and_even() {
        let g = sym_box();
        let f = GridField::from_real_fn(g, |x| x[2]);
        let r = reflect(&f).unwrap();
        let d = g.dims();
        for k in 1..d[2] {
            let x = g.coord(0, 0, k);
            assert!((r.at(0, 0, k).re + x[2]).abs() < 1e-14);
        }
        let f = GridField::from_real_fn(g, |x| x[0]);
        assert_eq!(reflect(&f).unwrap(), f);
    }

    #[test]
    fn reflect_requires_symmetry() {
        let geom = SlabGeometry::reference();
        let g = build_domain(&geom, 0.25).unwrap();
        assert!(matches!(reflect(&GridField::zeros(g)), Err(Error::NotSymmetric { axis: 'z' })));
    }

    #[test]
    fn even_extension_of_linear() {
        let geom = SlabGeometry::reference();
        let sg = build_domain(&geom, 0.125).unwrap();
        let q = GridField::from_real_fn(sg, |x| if x[0].hypot(x[1]) <= geom.r { x[2] } else { 0.0 });
        let q = Potential { field: q, support_check: true, sobolev_s: 2.0, bound_m: 1.0 };
        let b = build_box(3.0, 24).unwrap();
        let e = extend_even(&q, &b, &geom).unwrap();
        for n in 0..b.len() {
            let (i, j, k) = b.ijk(n);
            let x = b.coord(i, j, k);
            let inside = x[0].hypot(x[1]) <= geom.r && x[2].abs() > 1e-12 && x[2].abs() < geom.l - 1e-12;
            let want = if inside { x[2].abs() } else { 0.0 };
            assert!((e.values[n].re - want).abs() < 1e-14, "{x:?}");
        }
    }

    #[test]
    fn box_indicator_transform() {
        let g = build_domain(&SlabGeometry::reference(), 0.125).unwrap();
        let (a, b) = ([3usize, 4, 2], [9usize, 7, 6]);
        let f = GridField::from_fn(g, |_| ZERO);
        let mut f = f;
        for k in a[2]..=b[2] {
            for j in a[1]..=b[1] {
                for i in a[0]..=b[0] {
                    let n = g.idx(i, j, k);
                    f.values[n] = C64::new(1.0, 0.0);
                }
            }
        }
        let ft = fourier_transform(&f);
        let xi = [1.3, -0.7, 2.9];
        let mut want = C64::new(g.h.powi(3), 0.0);
        for ax in 0..3 {
            let x0 = g.origin[ax] + a[ax] as f64 * g.h;
            let n = (b[ax] - a[ax] + 1) as f64;
            let z = C64::from_polar(1.0, g.h * xi[ax]);
            want *= C64::from_polar(1.0, x0 * xi[ax]) * (C64::new(1.0, 0.0) - z.powf(n)) / (C64::new(1.0, 0.0) - z);
        }
        let got = ft.eval(xi);
        assert!((got - want).norm() <= 1e-10 * want.norm());
    }

    #[test]
    fn hs_norm_s0_is_l2() {
        let g = build_box(2.0, 8).unwrap();
        let f = GridField::from_real_fn(g, |x| (x[0] * 1.7).sin() + x[1] * x[2]);
        let l2 = (f.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * g.h.powi(3)).sqrt();
        assert!((hs_norm(&f, 0.0) - l2).abs() < 1e-12 * l2);
        assert!(hs_norm(&f, 2.0) > l2);
    }
}
