//! Complex fields on a square patch grid of one plate.

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPatch, Grid3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Grid-aligned square `[-m h, m h]²` with `2m` intervals per side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSquare {
    pub m: usize,
    pub h: f64,
}

impl PatchSquare {
    /// Smallest grid-aligned square containing the disc of the given radius.
    pub fn for_radius(radius: f64, h: f64) -> Self {
        PatchSquare { m: (radius / h - 1e-9).ceil().max(1.0) as usize, h }
    }

    pub fn intervals(&self) -> usize {
        2 * self.m
    }

    pub fn side(&self) -> usize {
        2 * self.m + 1
    }

    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_width(&self) -> f64 {
        self.m as f64 * self.h
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        let a = self.half_width();
        (-a + i as f64 * self.h, -a + j as f64 * self.h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryField {
    pub patch: BoundaryPatch,
    pub square: PatchSquare,
    /// values on the square nodes, x-fastest; zero off the patch
    pub values: Vec<C64>,
}

impl BoundaryField {
    pub fn zeros(patch: BoundaryPatch, square: PatchSquare) -> Self {
        BoundaryField { patch, square, values: vec![C64::new(0.0, 0.0); square.len()] }
    }

    pub fn new(patch: BoundaryPatch, square: PatchSquare, values: Vec<C64>) -> Result<Self> {
        if values.len() != square.len() {
            return Err(Error::Grid(format!("{} values for a {}-node patch square", values.len(), square.len())));
        }
        let f = BoundaryField { patch, square, values };
        for j in 0..square.side() {
            for i in 0..square.side() {
                let (x, y) = square.coord(i, j);
                if f.values[i + square.side() * j] != C64::new(0.0, 0.0) && !patch.contains(x, y) {
                    return Err(Error::Support(format!("boundary value at ({x}, {y}) outside its patch")));
                }
            }
        }
        Ok(f)
    }

    /// Sample `f` on the patch nodes; nodes outside the patch are set to zero.
    pub fn from_fn(patch: BoundaryPatch, square: PatchSquare, mut f: impl FnMut(f64, f64) -> C64) -> Self {
        let s = square.side();
        let mut values = vec![C64::new(0.0, 0.0); square.len()];
        for j in 0..s {
            for i in 0..s {
                let (x, y) = square.coord(i, j);
                if patch.contains(x, y) {
                    values[i + s * j] = f(x, y);
                }
            }
        }
        BoundaryField { patch, square, values }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == C64::new(0.0, 0.0))
    }

    /// Discrete L² norm `(h² Σ |g|²)^{1/2}`.
    pub fn norm_l2(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.square.h.powi(2)).sqrt()
    }

    pub fn scale(&self, a: C64) -> Self {
        BoundaryField { values: self.values.iter().map(|v| v * a).collect(), ..self.clone() }
    }

    /// Scatter onto the plate of a slab grid (array of `dims[0] * dims[1]` values).
    pub fn to_plate(&self, grid: &Grid3) -> Result<Vec<C64>> {
        let d = grid.dims();
        let mut out = vec![C64::new(0.0, 0.0); d[0] * d[1]];
        let s = self.square.side();
        for j in 0..s {
            for i in 0..s {
                let v = self.values[i + s * j];
                if v == C64::new(0.0, 0.0) {
                    continue;
                }
                let (x, y) = self.square.coord(i, j);
                match (grid.node_at(0, x), grid.node_at(1, y)) {
                    (Some(a), Some(b)) => out[a + d[0] * b] = v,
                    _ => return Err(Error::Grid(format!("patch node ({x}, {y}) is not a grid node"))),
                }
            }
        }
        Ok(out)
    }

    /// Gather from a plate array, keeping only nodes inside the patch.
    pub fn from_plate(plate: &[C64], grid: &Grid3, patch: BoundaryPatch, square: PatchSquare) -> Result<Self> {
        let d = grid.dims();
        let mut err = None;
        let f = BoundaryField::from_fn(patch, square, |x, y| match (grid.node_at(0, x), grid.node_at(1, y)) {
            (Some(a), Some(b)) => plate[a + d[0] * b],
            _ => {
                err = Some(Error::Grid(format!("patch node ({x}, {y}) is not a grid node")));
                C64::new(0.0, 0.0)
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(f),
        }
    }
}
