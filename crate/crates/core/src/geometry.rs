//! Slab geometry, named boundary patches and uniform grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

const NODE_LIMIT: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabGeometry {
    pub l: f64,
    pub r: f64,
    pub r_prime: f64,
    pub r_lat: f64,
    pub eps_cutoff: f64,
}

impl SlabGeometry {
    pub fn new(l: f64, r: f64, r_prime: f64, r_lat: f64, eps_cutoff: f64) -> Result<Self> {
        let g = SlabGeometry { l, r, r_prime, r_lat, eps_cutoff };
        g.validate()?;
        Ok(g)
    }

    /// Geometry used by most tests: unit slab, potentials in |x'| < 1/2.
    pub fn reference() -> Self {
        SlabGeometry { l: 1.0, r: 0.5, r_prime: 0.65, r_lat: 1.0, eps_cutoff: 0.05 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.l, self.r, self.r_prime, self.r_lat, self.eps_cutoff];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite parameter".into()));
        }
        if self.l <= 0.0 {
            return Err(Error::Geometry(format!("L = {} must be positive", self.l)));
        }
        if !(0.0 < self.r && self.r < self.r_prime && self.r_prime < self.r_lat && self.r_lat <= 2.0 * self.r) {
            return Err(Error::Geometry(format!(
                "need 0 < R < R' < R_lat <= 2R, got R={}, R'={}, R_lat={}",
                self.r, self.r_prime, self.r_lat
            )));
        }
        if !(self.eps_cutoff > 0.0 && self.r + self.eps_cutoff < self.r_prime - self.eps_cutoff) {
            return Err(Error::Geometry(format!(
                "eps_cutoff = {} must satisfy 0 < eps and R + eps < R' - eps",
                self.eps_cutoff
            )));
        }
        Ok(())
    }
}

/// Geometry plus the requested mesh size, as read from a config file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryConfig {
    pub geom: SlabGeometry,
    pub target_h: f64,
}

impl GeometryConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vals: BTreeMap<&str, f64> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if !["L", "R", "R_prime", "R_lat", "eps_cutoff", "target_h"].contains(&key) {
                return Err(Error::Parse(format!("line {}: unknown key '{}'", lineno + 1, key)));
            }
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {}", lineno + 1, e)))?;
            vals.insert(key, v);
        }
        let get = |k: &str| vals.get(k).copied().ok_or_else(|| Error::Parse(format!("missing key '{k}'")));
        let geom = SlabGeometry::new(get("L")?, get("R")?, get("R_prime")?, get("R_lat")?, get("eps_cutoff")?)?;
        Ok(GeometryConfig { geom, target_h: get("target_h")? })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plate {
    /// Γ₁ at x₃ = L.
    Top,
    /// Γ₂ at x₃ = 0.
    Bottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatchKind {
    Dirichlet,
    Neumann,
    Annulus,
}

/// An open disc or annulus `inner < |x'| < outer` on one plate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPatch {
    pub plate: Plate,
    pub kind: PatchKind,
    pub inner: f64,
    pub outer: f64,
}

impl BoundaryPatch {
    pub fn dirichlet(geom: &SlabGeometry) -> Self {
        BoundaryPatch { plate: Plate::Top, kind: PatchKind::Dirichlet, inner: 0.0, outer: geom.r_lat }
    }

    pub fn neumann(geom: &SlabGeometry, plate: Plate) -> Self {
        BoundaryPatch { plate, kind: PatchKind::Neumann, inner: 0.0, outer: geom.r_prime }
    }

    pub fn annulus(geom: &SlabGeometry, plate: Plate) -> Self {
        BoundaryPatch {
            plate,
            kind: PatchKind::Annulus,
            inner: geom.r + geom.eps_cutoff,
            outer: geom.r_prime - geom.eps_cutoff,
        }
    }

    /// Membership by lateral radius; radii exactly on an edge belong to the outer region.
    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        let rho = x1.hypot(x2);
        let inside_inner = match self.kind {
            PatchKind::Annulus => rho > self.inner,
            _ => rho >= self.inner,
        };
        inside_inner && rho < self.outer
    }
}

/// Uniform grid. A periodic axis with `n` cells has `n` nodes, a closed one `n + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub origin: [f64; 3],
    pub periodic: [bool; 3],
}

impl Grid3 {
    pub fn cells(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn dims(&self) -> [usize; 3] {
        let c = self.cells();
        [0, 1, 2].map(|a| if self.periodic[a] { c[a] } else { c[a] + 1 })
    }

    pub fn len(&self) -> usize {
        let d = self.dims();
        d[0] * d[1] * d[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        let d = self.dims();
        i + d[0] * (j + d[1] * k)
    }

    #[inline]
    pub fn ijk(&self, n: usize) -> (usize, usize, usize) {
        let d = self.dims();
        (n % d[0], (n / d[0]) % d[1], n / (d[0] * d[1]))
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.h,
            self.origin[1] + j as f64 * self.h,
            self.origin[2] + k as f64 * self.h,
        ]
    }

    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.dims()[axis]).map(|i| self.origin[axis] + i as f64 * self.h).collect()
    }

    /// Node index along `axis` holding coordinate `x`, if one exists to within `1e-9 h`.
    pub fn node_at(&self, axis: usize, x: f64) -> Option<usize> {
        let t = (x - self.origin[axis]) / self.h;
        let r = t.round();
        if (t - r).abs() > 1e-9 {
            return None;
        }
        let n = self.dims()[axis] as i64;
        let mut i = r as i64;
        if self.periodic[axis] {
            i = i.rem_euclid(n);
        }
        (0..n).contains(&i).then_some(i as usize)
    }

    /// Quadrature weight of a node: `h³` with a factor 1/2 per closed-axis end.
    pub fn trapezoid_weight(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dims();
        let mut w = self.h.powi(3);
        for (a, &ix) in [i, j, k].iter().enumerate() {
            if !self.periodic[a] && (ix == 0 || ix == d[a] - 1) {
                w *= 0.5;
            }
        }
        w
    }

    pub fn same_nodes(&self, other: &Grid3) -> bool {
        self.cells() == other.cells()
            && self.periodic == other.periodic
            && (self.h - other.h).abs() <= 1e-12 * self.h
            && (0..3).all(|a| (self.origin[a] - other.origin[a]).abs() <= 1e-12 * self.h.max(1.0))
    }
}

fn guard(nodes: u64) -> Result<()> {
    if nodes > NODE_LIMIT {
        Err(Error::ResourceGuard { nodes, limit: NODE_LIMIT })
    } else {
        Ok(())
    }
}

fn slab_counts(geom: &SlabGeometry, target_h: f64) -> Result<(usize, f64, usize)> {
    if !(target_h > 0.0) || !target_h.is_finite() {
        return Err(Error::Invalid(format!("target_h = {target_h} must be positive")));
    }
    let nzf = (geom.l / target_h - 1e-9).ceil().max(2.0);
    let h_est = geom.l / nzf;
    let mf = (geom.r_lat / h_est - 1e-9).ceil();
    let nodes = (2.0 * mf + 1.0).powi(2) * (nzf + 1.0);
    if nodes > NODE_LIMIT as f64 {
        return Err(Error::ResourceGuard { nodes: nodes.min(u64::MAX as f64) as u64, limit: NODE_LIMIT });
    }
    let nz = nzf as usize;
    let h = geom.l / nz as f64;
    Ok((nz, h, mf as usize))
}

/// Grid over the truncated slab `{|x'| <= R_lat} x [0, L]`, with `nz h = L`.
pub fn build_domain(geom: &SlabGeometry, target_h: f64) -> Result<Grid3> {
    geom.validate()?;
    let (nz, h, m) = slab_counts(geom, target_h)?;
    let g = Grid3 {
        nx: 2 * m,
        ny: 2 * m,
        nz,
        h,
        origin: [-(m as f64) * h, -(m as f64) * h, 0.0],
        periodic: [false, false, false],
    };
    guard(g.len() as u64)?;
    Ok(g)
}

/// Slab grid with lateral period `2 m h >= 2 R_lat`, used by the periodic oracle mode.
pub fn build_periodic_domain(geom: &SlabGeometry, target_h: f64) -> Result<Grid3> {
    let mut g = build_domain(geom, target_h)?;
    g.periodic = [true, true, false];
    Ok(g)
}

/// Periodic cube of `n` cells per axis centred at the origin, so that `B* = B`.
pub fn build_box(side: f64, n: usize) -> Result<Grid3> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::Invalid(format!("box cell count {n} must be even and positive")));
    }
    guard((n as u64).pow(3))?;
    let h = side / n as f64;
    Ok(Grid3 { nx: n, ny: n, nz: n, h, origin: [-side / 2.0; 3], periodic: [true; 3] })
}

/// Box of side at least `2 max(R_lat, L)(1 + padding)` whose spacing is `omega.h / refine`,
/// so every node of `omega` is also a box node.
pub fn commensurate_box(geom: &SlabGeometry, omega: &Grid3, padding: f64, refine: usize) -> Result<Grid3> {
    let side = 2.0 * geom.r_lat.max(geom.l) * (1.0 + padding);
    let hb = omega.h / refine.max(1) as f64;
    // lateral origin of omega is -m h and z origin 0: both are multiples of h, so an even
    // number of box cells centred at 0 keeps the node sets aligned.
    let mut n = (side / hb - 1e-9).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    build_box(n as f64 * hb, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryLabel {
    /// Γ₁ᴰ ∖ Γ₁ᴺ
    DirichletOnly,
    /// Γ₁ᴺ
    Gamma1N,
    /// Γ₂ᴺ
    Gamma2N,
    /// Γ₂ ∖ Γ₂ᴺ
    Gamma2Rest,
    Lateral,
}

/// Interior nodes of Ω: strictly between the plates and strictly inside the truncation radius.
pub fn interior_mask(grid: &Grid3, geom: &SlabGeometry) -> Vec<bool> {
    let lateral_periodic = grid.periodic[0] && grid.periodic[1];
    let d = grid.dims();
    let mut mask = vec![false; grid.len()];
    for k in 1..d[2].saturating_sub(1) {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let x = grid.coord(i, j, k);
                if lateral_periodic || x[0].hypot(x[1]) < geom.r_lat {
                    mask[grid.idx(i, j, k)] = true;
                }
            }
        }
    }
    mask
}

/// Whether a plate node at lateral position `x'` belongs to the closure of Ω.
pub fn on_plate_of_omega(grid: &Grid3, geom: &SlabGeometry, x1: f64, x2: f64) -> bool {
    (grid.periodic[0] && grid.periodic[1]) || x1.hypot(x2) < geom.r_lat
}

/// Trapezoidal weights of the closed region Ω̄ (interior plus plate nodes inside the
/// truncation radius); zero for nodes outside.
pub fn omega_weights(grid: &Grid3, geom: &SlabGeometry) -> Vec<f64> {
    let d = grid.dims();
    let h3 = grid.h.powi(3);
    let mut w = vec![0.0; grid.len()];
    for k in 0..d[2] {
        let wz = if k == 0 || k == d[2] - 1 { 0.5 } else { 1.0 };
        for j in 0..d[1] {
            for i in 0..d[0] {
                let x = grid.coord(i, j, k);
                if on_plate_of_omega(grid, geom, x[0], x[1]) {
                    w[grid.idx(i, j, k)] = h3 * wz;
                }
            }
        }
    }
    w
}

pub fn classify_boundary(grid: &Grid3, geom: &SlabGeometry) -> BTreeMap<usize, BoundaryLabel> {
    let mask = interior_mask(grid, geom);
    let d = grid.dims();
    let top = d[2] - 1;
    let mut out = BTreeMap::new();
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let n = grid.idx(i, j, k);
                if mask[n] {
                    continue;
                }
                let x = grid.coord(i, j, k);
                let rho = x[0].hypot(x[1]);
                if (k == 0 || k == top) && on_plate_of_omega(grid, geom, x[0], x[1]) {
                    let label = match (k == top, rho < geom.r_prime) {
                        (true, true) => BoundaryLabel::Gamma1N,
                        (true, false) => BoundaryLabel::DirichletOnly,
                        (false, true) => BoundaryLabel::Gamma2N,
                        (false, false) => BoundaryLabel::Gamma2Rest,
                    };
                    out.insert(n, label);
                } else if k > 0 && k < top && neighbours(grid, i, j, k).any(|m| mask[m]) {
                    out.insert(n, BoundaryLabel::Lateral);
                }
            }
        }
    }
    out
}

/// Indices of the six axis neighbours that exist (with periodic wrap).
pub fn neighbours(grid: &Grid3, i: usize, j: usize, k: usize) -> impl Iterator<Item = usize> + '_ {
    let d = grid.dims();
    let ijk = [i as i64, j as i64, k as i64];
    (0..6).filter_map(move |s| {
        let axis = s / 2;
        let step = if s % 2 == 0 { -1 } else { 1 };
        let mut p = ijk;
        p[axis] += step;
        let n = d[axis] as i64;
        if grid.periodic[axis] {
            p[axis] = p[axis].rem_euclid(n);
        } else if p[axis] < 0 || p[axis] >= n {
            return None;
        }
        Some(grid.idx(p[0] as usize, p[1] as usize, p[2] as usize))
    })
}

/// Plate nodes inside the cutoff annulus `R + ε < |x'| < R' − ε`.
pub fn annulus_nodes(grid: &Grid3, geom: &SlabGeometry, plate: Plate) -> Vec<usize> {
    let patch = BoundaryPatch::annulus(geom, plate);
    let d = grid.dims();
    let k = match plate {
        Plate::Top => d[2] - 1,
        Plate::Bottom => 0,
    };
    let mut out = Vec::new();
    for j in 0..d[1] {
        for i in 0..d[0] {
            let x = grid.coord(i, j, k);
            if patch.contains(x[0], x[1]) {
                out.push(grid.idx(i, j, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide() -> SlabGeometry {
        SlabGeometry::new(1.0, 1.0, 1.5, 2.0, 0.1).unwrap()
    }

    #[test]
    fn spacing_divides_thickness() {
        let g = build_domain(&wide(), 0.125).unwrap();
        assert_eq!(g.nz, 8);
        assert!((g.h - 0.125).abs() < 1e-15);
        let g = build_domain(&wide(), 0.2).unwrap();
        assert_eq!(g.nz, 5);
        assert!((g.h - 0.2).abs() < 1e-15);
    }

    #[test]
    fn resource_guard_trips() {
        assert!(matches!(build_domain(&wide(), 1e-6), Err(Error::ResourceGuard { .. })));
    }

    #[test]
    fn plates_lie_on_nodes() {
        let geom = SlabGeometry::reference();
        let g = build_domain(&geom, 0.07).unwrap();
        let top = g.coord(0, 0, g.nz)[2];
        assert!((top - geom.l).abs() < 1e-14);
        assert!(g.h <= 0.07);
        assert!(g.origin[0] <= -geom.r_lat);
    }

    #[test]
    fn example_labels() {
        let geom = wide();
        let g = build_domain(&geom, 0.125).unwrap();
        let labels = classify_boundary(&g, &geom);
        let at = |x: f64, y: f64, z: f64| {
            let n = g.idx(g.node_at(0, x).unwrap(), g.node_at(1, y).unwrap(), g.node_at(2, z).unwrap());
            labels.get(&n).copied()
        };
        assert_eq!(at(0.0, 0.0, 1.0), Some(BoundaryLabel::Gamma1N));
        assert_eq!(at(2.0, 0.0, 0.5), Some(BoundaryLabel::Lateral));
        assert_eq!(at(0.0, 1.625, 0.0), Some(BoundaryLabel::Gamma2Rest));
        assert_eq!(at(0.0, 1.5, 1.0), Some(BoundaryLabel::DirichletOnly));
        assert_eq!(at(0.0, 0.0, 0.5), None);
    }

    #[test]
    fn config_roundtrip() {
        let cfg = GeometryConfig::parse("# slab\nL=1\nR = 0.5\nR_prime=0.65\nR_lat=1\neps_cutoff=0.05\ntarget_h=0.1\n").unwrap();
        assert_eq!(cfg.geom, SlabGeometry::reference());
        assert!(GeometryConfig::parse("L=1\nfoo=2").is_err());
        assert!(GeometryConfig::parse("L=1\nR=1\nR_prime=0.5\nR_lat=1\neps_cutoff=0.1\ntarget_h=0.1").is_err());
    }

    #[test]
    fn commensurate_box_aligns() {
        let geom = SlabGeometry::reference();
        let g = build_domain(&geom, 1.0 / 16.0).unwrap();
        let b = commensurate_box(&geom, &g, 0.5, 1).unwrap();
        assert_eq!(b.nx, 48);
        for (i, j, k) in [(0, 0, 0), (g.nx, g.ny, g.nz), (7, 3, 5)] {
            let x = g.coord(i, j, k);
            for a in 0..3 {
                assert!(b.node_at(a, x[a]).is_some());
                assert!(b.node_at(a, -x[a]).is_some());
            }
        }
    }
}
