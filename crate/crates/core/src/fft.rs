//! Three-dimensional FFT on x-fastest arrays, built from rustfft line transforms.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft3 {
    dims: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut p = FftPlanner::new();
        let fwd = dims.map(|n| p.plan_fft_forward(n));
        let inv = dims.map(|n| p.plan_fft_inverse(n));
        Fft3 { dims, fwd, inv }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Unnormalized forward transform, `X[m] = Σ x[n] e^{-2πi m·n/N}`.
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inv);
        let s = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }

    fn run(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(data.len(), nx * ny * nz);
        plans[0].process(data);
        let mut line = vec![C64::new(0.0, 0.0); ny.max(nz)];
        for k in 0..nz {
            for i in 0..nx {
                for j in 0..ny {
                    line[j] = data[i + nx * (j + ny * k)];
                }
                plans[1].process(&mut line[..ny]);
                for j in 0..ny {
                    data[i + nx * (j + ny * k)] = line[j];
                }
            }
        }
        let plane = nx * ny;
        for p in 0..plane {
            for k in 0..nz {
                line[k] = data[p + plane * k];
            }
            plans[2].process(&mut line[..nz]);
            for k in 0..nz {
                data[p + plane * k] = line[k];
            }
        }
    }
}

/// Angular frequencies `2π m / (n h)` in FFT order.
pub fn angular_freqs(n: usize, h: f64) -> Vec<f64> {
    let p = n as f64 * h;
    (0..n)
        .map(|m| {
            let s = if m <= n / 2 { m as f64 } else { m as f64 - n as f64 };
            2.0 * std::f64::consts::PI * s / p
        })
        .collect()
}
