//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Lower Cholesky factor of a Hermitian positive definite matrix.
pub fn cholesky_lower(m: &CMat, what: &str) -> Result<CMat> {
    nalgebra::Cholesky::new(hermitian_part(m))
        .map(|c| c.l())
        .ok_or_else(|| Error::SingularGram(format!("{what} is not positive definite")))
}

/// Largest eigenvalue of the pencil `(A, B)` with `A` Hermitian and `B` Hermitian positive definite.
#[derive(Clone, Debug)]
pub struct PencilEig {
    pub value: f64,
    pub iterations: usize,
    /// false when the power iteration hit its cap and the dense solver finished the job
    pub power_converged: bool,
}

pub fn pencil_max_eig(a: &CMat, b: &CMat, seed: u64, max_iter: usize) -> Result<PencilEig> {
    let n = a.nrows();
    if n == 0 {
        return Ok(PencilEig { value: 0.0, iterations: 0, power_converged: true });
    }
    let l = cholesky_lower(b, "pencil right-hand matrix")?;
    let c = whiten(a, &l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = CVec::from_fn(n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    v /= C64::new(v.norm(), 0.0);
    let mut last = f64::NAN;
    for it in 1..=max_iter {
        let w = &c * &v;
        let lam = v.dotc(&w).re;
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(PencilEig { value: 0.0, iterations: it, power_converged: true });
        }
        v = w / C64::new(nw, 0.0);
        if (lam - last).abs() <= 1e-14 * lam.abs() {
            let lam = v.dotc(&(&c * &v)).re;
            return Ok(PencilEig { value: lam, iterations: it, power_converged: true });
        }
        last = lam;
    }
    let eig = nalgebra::SymmetricEigen::new(c);
    let value = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(PencilEig { value, iterations: max_iter, power_converged: false })
}

/// `L⁻¹ A L⁻ᴴ` made exactly Hermitian.
fn whiten(a: &CMat, l: &CMat) -> Result<CMat> {
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::SingularGram("triangular solve failed".into()))?;
    let y = l
        .solve_lower_triangular(&x.adjoint())
        .ok_or_else(|| Error::SingularGram("triangular solve failed".into()))?;
    Ok(hermitian_part(&y))
}

/// All eigenvalues of the pencil `(A, B)` by the dense Hermitian solver, ascending.
pub fn pencil_eigs_dense(a: &CMat, b: &CMat) -> Result<Vec<f64>> {
    let l = cholesky_lower(b, "pencil right-hand matrix")?;
    let c = whiten(a, &l)?;
    let mut v: Vec<f64> = nalgebra::SymmetricEigen::new(c).eigenvalues.iter().cloned().collect();
    v.sort_by(|x, y| x.total_cmp(y));
    Ok(v)
}

/// 2-norm condition number of a Hermitian positive semidefinite matrix.
pub fn condition_hermitian(m: &CMat) -> f64 {
    let e = nalgebra::SymmetricEigen::new(hermitian_part(m)).eigenvalues;
    let (lo, hi) = e.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x.abs()), hi.max(x.abs())));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Least-squares slope and intercept of `y` against `x`, with R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, icpt, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pencil_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let g = CMat::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let a = &g * g.adjoint();
        let h = CMat::from_fn(n, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let b = &h * h.adjoint() + CMat::identity(n, n) * C64::new(0.5, 0.0);
        let p = pencil_max_eig(&a, &b, 7, 500).unwrap();
        let d = pencil_eigs_dense(&a, &b).unwrap();
        assert!((p.value - d[n - 1]).abs() <= 1e-9 * d[n - 1]);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (s, c, r2) = linear_fit(&x, &y);
        assert!((s + 0.5).abs() < 1e-14 && (c - 2.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }
}
