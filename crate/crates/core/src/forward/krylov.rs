//! Preconditioned CG and MINRES on complex vectors for Hermitian operators.

use num_complex::Complex64 as C64;

pub(crate) fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum KrylovMethod {
    Cg,
    Minres,
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<C64>,
    pub method: KrylovMethod,
    pub iterations: usize,
    /// relative residual after each iteration
    pub history: Vec<f64>,
    pub converged: bool,
}

pub(crate) enum CgFailure {
    Indefinite(Vec<f64>),
}

/// PCG; gives up as soon as a search direction has non-positive curvature.
pub(crate) fn pcg(
    apply: &dyn Fn(&[C64], &mut [C64]),
    precond: &dyn Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<KrylovOutcome, CgFailure> {
    let n = b.len();
    let bn = norm(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bn == 0.0 {
        return Ok(KrylovOutcome { x, method: KrylovMethod::Cg, iterations: 0, history: vec![0.0], converged: true });
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut ap = vec![C64::new(0.0, 0.0); n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap).re;
        if !(pap > 0.0) || !(rz > 0.0) {
            return Err(CgFailure::Indefinite(history));
        }
        let alpha = rz / pap;
        axpy(&mut x, C64::new(alpha, 0.0), &p);
        axpy(&mut r, C64::new(-alpha, 0.0), &ap);
        let rel = norm(&r) / bn;
        history.push(rel);
        if rel <= tol {
            return Ok(KrylovOutcome { x, method: KrylovMethod::Cg, iterations: it, history, converged: true });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z).re;
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + *pi * beta);
    }
    Ok(KrylovOutcome { x, method: KrylovMethod::Cg, iterations: max_iter, history, converged: false })
}

/// Preconditioned MINRES (Paige–Saunders) for Hermitian, possibly indefinite operators.
/// The preconditioner must be Hermitian positive definite.
pub(crate) fn minres(
    apply: &dyn Fn(&[C64], &mut [C64]),
    precond: &dyn Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    max_iter: usize,
) -> KrylovOutcome {
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let bn = norm(b);
    let mut x = vec![zero; n];
    let mut history = Vec::new();
    if bn == 0.0 {
        return KrylovOutcome { x, method: KrylovMethod::Minres, iterations: 0, history: vec![0.0], converged: true };
    }
    let mut r1 = b.to_vec();
    let mut y = precond(&r1);
    let beta1 = dot(&r1, &y).re.max(0.0).sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![zero; n];
    let mut w2 = vec![zero; n];
    let mut v = vec![zero; n];
    let mut av = vec![zero; n];
    let mut converged = false;
    let mut iterations = 0;
    let check_every = 10;
    for it in 1..=max_iter {
        iterations = it;
        let s = 1.0 / beta;
        v.iter_mut().zip(&y).for_each(|(vi, yi)| *vi = yi * s);
        apply(&v, &mut av);
        y.clone_from(&av);
        if it >= 2 {
            axpy(&mut y, C64::new(-beta / oldb, 0.0), &r1);
        }
        let alfa = dot(&v, &y).re;
        axpy(&mut y, C64::new(-alfa / beta, 0.0), &r2);
        std::mem::swap(&mut r1, &mut r2);
        r2.clone_from(&y);
        y = precond(&r2);
        oldb = beta;
        beta = dot(&r2, &y).re;
        if beta < 0.0 {
            break;
        }
        beta = beta.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, w.clone());
        for i in 0..n {
            w[i] = (v[i] - w1[i] * oldeps - w2[i] * delta) * denom;
            x[i] += w[i] * phi;
        }
        let est = phibar / beta1;
        if est <= 0.1 * tol || it % check_every == 0 || beta == 0.0 {
            let mut ax = vec![zero; n];
            apply(&x, &mut ax);
            let rel = ax.iter().zip(b).map(|(a, bb)| (bb - a).norm_sqr()).sum::<f64>().sqrt() / bn;
            history.push(rel);
            if rel <= tol {
                converged = true;
                break;
            }
            if beta == 0.0 {
                break;
            }
        }
    }
    KrylovOutcome { x, method: KrylovMethod::Minres, iterations, history, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(shift: f64) -> impl Fn(&[C64], &mut [C64]) {
        move |u: &[C64], out: &mut [C64]| {
            let n = u.len();
            for i in 0..n {
                let l = if i > 0 { u[i - 1] } else { C64::new(0.0, 0.0) };
                let r = if i + 1 < n { u[i + 1] } else { C64::new(0.0, 0.0) };
                out[i] = u[i] * (2.0 - shift) - l - r;
            }
        }
    }

    #[test]
    fn cg_and_minres_solve_spd() {
        let n = 50;
        let b: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let a = tridiag(0.0);
        let id = |r: &[C64]| r.to_vec();
        let cg = pcg(&a, &id, &b, 1e-10, 500).ok().unwrap();
        let mr = minres(&a, &id, &b, 1e-10, 500);
        assert!(cg.converged, "{:?}", cg.history.last());
        assert!(mr.converged, "{:?} {}", mr.history.last(), mr.iterations);
        for (p, q) in cg.x.iter().zip(&mr.x) {
            assert!((p - q).norm() < 1e-8 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn minres_handles_indefinite() {
        let n = 40;
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 0.0)).collect();
        let a = tridiag(1.3);
        let id = |r: &[C64]| r.to_vec();
        assert!(pcg(&a, &id, &b, 1e-12, 500).is_err());
        let mr = minres(&a, &id, &b, 1e-11, 2000);
        assert!(mr.converged);
    }
}
