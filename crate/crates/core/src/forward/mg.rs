//! 7-point stencil on masked grids and a geometric multigrid V-cycle.

use crate::par::{for_each_mut, Execution};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

pub(crate) const NONE: u32 = u32::MAX;

/// `(−Δ_h + c) u` restricted to the unknowns of a masked grid, homogeneous outside.
#[derive(Clone, Debug)]
pub(crate) struct Stencil {
    pub h: f64,
    /// full node index of each unknown
    pub nodes: Vec<u32>,
    /// unknown index of each full node, or NONE
    pub index_of: Vec<u32>,
    pub nbr: Vec<[u32; 6]>,
    pub shift: Vec<f64>,
}

impl Stencil {
    pub fn new(dims: [usize; 3], periodic_lat: bool, h: f64, mask: &[bool], shift_full: &[f64]) -> Self {
        let mut index_of = vec![NONE; mask.len()];
        let mut nodes = Vec::new();
        for (n, &m) in mask.iter().enumerate() {
            if m {
                index_of[n] = nodes.len() as u32;
                nodes.push(n as u32);
            }
        }
        let [dx, dy, _] = dims;
        let nbr = nodes
            .iter()
            .map(|&n| {
                let n = n as usize;
                let (i, j, k) = (n % dx, (n / dx) % dy, n / (dx * dy));
                let at = |i: usize, j: usize, k: usize| index_of[i + dx * (j + dy * k)];
                let (im, ip) = lat(i, dx, periodic_lat);
                let (jm, jp) = lat(j, dy, periodic_lat);
                [at(im, j, k), at(ip, j, k), at(i, jm, k), at(i, jp, k), at(i, j, k - 1), at(i, j, k + 1)]
            })
            .collect();
        let shift = nodes.iter().map(|&n| shift_full[n as usize]).collect();
        Stencil { h, nodes, index_of, nbr, shift }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    fn row(&self, t: usize, u: &[C64]) -> C64 {
        let ih2 = 1.0 / (self.h * self.h);
        let mut s = C64::new(0.0, 0.0);
        for &m in &self.nbr[t] {
            if m != NONE {
                s += u[m as usize];
            }
        }
        u[t] * (6.0 * ih2 + self.shift[t]) - s * ih2
    }

    pub fn apply(&self, u: &[C64], out: &mut [C64], exec: Execution) {
        for_each_mut(exec, out, |t, o| *o = self.row(t, u));
    }

    pub fn diag(&self, t: usize) -> f64 {
        6.0 / (self.h * self.h) + self.shift[t]
    }
}

fn lat(i: usize, n: usize, periodic: bool) -> (usize, usize) {
    if periodic {
        ((i + n - 1) % n, (i + 1) % n)
    } else {
        (i.saturating_sub(1), (i + 1).min(n - 1))
    }
}

struct Level {
    st: Stencil,
    red: Vec<usize>,
    black: Vec<usize>,
    /// prolongation from the next coarser level: for each unknown, (coarse unknown, weight)
    prolong: Vec<Vec<(u32, f64)>>,
}

enum Coarsest {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Sweeps(usize),
}

pub(crate) struct Multigrid {
    levels: Vec<Level>,
    coarse: Coarsest,
    pub sweeps: usize,
}

const DENSE_LIMIT: usize = 3000;
const COARSEN_ABOVE: usize = 800;

impl Multigrid {
    /// Hierarchy for the SPD operator `−Δ_h + c` with `c ≥ 0` given on all fine nodes.
    pub fn new(dims: [usize; 3], periodic_lat: bool, h: f64, mask: &[bool], shift_full: &[f64]) -> Self {
        let mut levels = Vec::new();
        let mut cur_dims = dims;
        let mut cur_mask = mask.to_vec();
        let mut cur_shift = shift_full.to_vec();
        let mut cur_h = h;
        loop {
            let st = Stencil::new(cur_dims, periodic_lat, cur_h, &cur_mask, &cur_shift);
            let (red, black): (Vec<usize>, Vec<usize>) = (0..st.len()).partition(|&t| {
                let n = st.nodes[t] as usize;
                let (i, j, k) = (n % cur_dims[0], (n / cur_dims[0]) % cur_dims[1], n / (cur_dims[0] * cur_dims[1]));
                (i + j + k) % 2 == 0
            });
            let n_unknowns = st.len();
            levels.push(Level { st, red, black, prolong: Vec::new() });
            let cells = cells_of(cur_dims, periodic_lat);
            let can = cells.iter().all(|c| c % 2 == 0) && cells[2] >= 4 && n_unknowns > COARSEN_ABOVE;
            if !can {
                break;
            }
            let cc = cells.map(|c| c / 2);
            let cdims = dims_of(cc, periodic_lat);
            let mut cmask = vec![false; cdims[0] * cdims[1] * cdims[2]];
            let mut cshift = vec![0.0; cmask.len()];
            for kc in 0..cdims[2] {
                for jc in 0..cdims[1] {
                    for ic in 0..cdims[0] {
                        let f = 2 * ic + cur_dims[0] * (2 * jc + cur_dims[1] * 2 * kc);
                        let c = ic + cdims[0] * (jc + cdims[1] * kc);
                        cmask[c] = cur_mask[f];
                        cshift[c] = cur_shift[f];
                    }
                }
            }
            if !cmask.iter().any(|&m| m) {
                break;
            }
            // prolongation weights for the current (fine) level
            let cidx = {
                let mut v = vec![NONE; cmask.len()];
                let mut t = 0u32;
                for (n, &m) in cmask.iter().enumerate() {
                    if m {
                        v[n] = t;
                        t += 1;
                    }
                }
                v
            };
            let lvl = levels.last_mut().unwrap();
            lvl.prolong = lvl
                .st
                .nodes
                .iter()
                .map(|&n| {
                    let n = n as usize;
                    let (i, j, k) = (n % cur_dims[0], (n / cur_dims[0]) % cur_dims[1], n / (cur_dims[0] * cur_dims[1]));
                    let ax = |i: usize, nc: usize, periodic: bool| -> Vec<(usize, f64)> {
                        if i % 2 == 0 {
                            vec![(i / 2, 1.0)]
                        } else {
                            let hi = if periodic { ((i + 1) / 2) % nc } else { (i + 1) / 2 };
                            vec![((i - 1) / 2, 0.5), (hi, 0.5)]
                        }
                    };
                    let mut out = Vec::with_capacity(8);
                    for &(a, wa) in &ax(i, cdims[0], periodic_lat) {
                        for &(b, wb) in &ax(j, cdims[1], periodic_lat) {
                            for &(c, wc) in &ax(k, cdims[2], false) {
                                let ci = cidx[a + cdims[0] * (b + cdims[1] * c)];
                                if ci != NONE {
                                    out.push((ci, wa * wb * wc));
                                }
                            }
                        }
                    }
                    out
                })
                .collect();
            cur_dims = cdims;
            cur_mask = cmask;
            cur_shift = cshift;
            cur_h *= 2.0;
        }
        let last = &levels.last().unwrap().st;
        let coarse = if last.len() <= DENSE_LIMIT {
            let n = last.len();
            let mut m = DMatrix::<f64>::zeros(n, n);
            let ih2 = 1.0 / (last.h * last.h);
            for t in 0..n {
                m[(t, t)] = last.diag(t);
                for &s in &last.nbr[t] {
                    if s != NONE {
                        m[(t, s as usize)] -= ih2;
                    }
                }
            }
            match nalgebra::Cholesky::new(m) {
                Some(c) => Coarsest::Dense(c),
                None => Coarsest::Sweeps(20),
            }
        } else {
            Coarsest::Sweeps(20)
        };
        Multigrid { levels, coarse, sweeps: 2 }
    }

    /// One symmetric V-cycle applied to `b` from a zero initial guess.
    pub fn vcycle(&self, b: &[C64]) -> Vec<C64> {
        self.cycle(0, b)
    }

    fn cycle(&self, l: usize, b: &[C64]) -> Vec<C64> {
        let lvl = &self.levels[l];
        let n = lvl.st.len();
        let mut x = vec![C64::new(0.0, 0.0); n];
        if l + 1 == self.levels.len() {
            match &self.coarse {
                Coarsest::Dense(ch) => {
                    let re = ch.solve(&nalgebra::DVector::from_iterator(n, b.iter().map(|v| v.re)));
                    let im = ch.solve(&nalgebra::DVector::from_iterator(n, b.iter().map(|v| v.im)));
                    for t in 0..n {
                        x[t] = C64::new(re[t], im[t]);
                    }
                }
                Coarsest::Sweeps(s) => {
                    for _ in 0..*s {
                        gs(&lvl.st, &lvl.red, &mut x, b);
                        gs(&lvl.st, &lvl.black, &mut x, b);
                    }
                    for _ in 0..*s {
                        gs(&lvl.st, &lvl.black, &mut x, b);
                        gs(&lvl.st, &lvl.red, &mut x, b);
                    }
                }
            }
            return x;
        }
        for _ in 0..self.sweeps {
            gs(&lvl.st, &lvl.red, &mut x, b);
            gs(&lvl.st, &lvl.black, &mut x, b);
        }
        let mut ax = vec![C64::new(0.0, 0.0); n];
        lvl.st.apply(&x, &mut ax, Execution::Sequential);
        let nc = self.levels[l + 1].st.len();
        let mut bc = vec![C64::new(0.0, 0.0); nc];
        for t in 0..n {
            let r = b[t] - ax[t];
            for &(c, w) in &lvl.prolong[t] {
                bc[c as usize] += r * (w * 0.125);
            }
        }
        let ec = self.cycle(l + 1, &bc);
        for t in 0..n {
            for &(c, w) in &lvl.prolong[t] {
                x[t] += ec[c as usize] * w;
            }
        }
        for _ in 0..self.sweeps {
            gs(&lvl.st, &lvl.black, &mut x, b);
            gs(&lvl.st, &lvl.red, &mut x, b);
        }
        x
    }
}

fn gs(st: &Stencil, color: &[usize], x: &mut [C64], b: &[C64]) {
    let ih2 = 1.0 / (st.h * st.h);
    for &t in color {
        let mut s = C64::new(0.0, 0.0);
        for &m in &st.nbr[t] {
            if m != NONE {
                s += x[m as usize];
            }
        }
        x[t] = (b[t] + s * ih2) / st.diag(t);
    }
}

pub(crate) fn cells_of(dims: [usize; 3], periodic_lat: bool) -> [usize; 3] {
    let lat = |d: usize| if periodic_lat { d } else { d - 1 };
    [lat(dims[0]), lat(dims[1]), dims[2] - 1]
}

pub(crate) fn dims_of(cells: [usize; 3], periodic_lat: bool) -> [usize; 3] {
    let lat = |c: usize| if periodic_lat { c } else { c + 1 };
    [lat(cells[0]), lat(cells[1]), cells[2] + 1]
}
