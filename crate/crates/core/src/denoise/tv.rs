//! Total-variation (ROF) denoising by Chambolle's dual projection.
//!
//! Solves `min_u ½‖u − f‖² + λ·TV(u)` with forward differences and Neumann
//! boundary; the primal is recovered as `u = f − λ·div p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealGrid;

fn default_tau() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvParams {
    pub lambda: f64,
    pub iters: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

impl TvParams {
    pub fn new(lambda: f64, iters: usize) -> Self {
        Self {
            lambda,
            iters,
            tau: default_tau(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("tv lambda {} must be positive", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau <= 0.25) {
            return Err(Error::Parameter(format!("tv tau {} outside (0, 0.25]", self.tau)));
        }
        Ok(())
    }
}

/// Forward-difference gradient with zero difference at the last row/column.
fn gradient(u: &[f64], rows: usize, cols: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            gx[i] = if r + 1 < rows { u[i + cols] - u[i] } else { 0.0 };
            gy[i] = if c + 1 < cols { u[i + 1] - u[i] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let dx = if rows == 1 {
                0.0
            } else if r == 0 {
                px[i]
            } else if r + 1 == rows {
                -px[i - cols]
            } else {
                px[i] - px[i - cols]
            };
            let dy = if cols == 1 {
                0.0
            } else if c == 0 {
                py[i]
            } else if c + 1 == cols {
                -py[i - 1]
            } else {
                py[i] - py[i - 1]
            };
            out[i] = dx + dy;
        }
    }
}

/// `½‖u − f‖² + λ·Σ|∇u|` (isotropic).
pub fn rof_objective(u: &RealGrid, f: &RealGrid, lambda: f64) -> f64 {
    let (rows, cols) = u.dims();
    let n = rows * cols;
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    gradient(u.values(), rows, cols, &mut gx, &mut gy);
    let fid: f64 = u.values().iter().zip(f.values()).map(|(a, b)| (a - b).powi(2)).sum();
    let tv: f64 = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum();
    0.5 * fid + lambda * tv
}

pub fn tv_denoise(f: &RealGrid, p: &TvParams) -> Result<RealGrid> {
    p.validate()?;
    let (rows, cols) = f.dims();
    let n = rows * cols;
    let fv = f.values();
    let inv_lambda = 1.0 / p.lambda;
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut w = vec![0.0; n];
    for _ in 0..p.iters {
        divergence(&px, &py, rows, cols, &mut w);
        w.iter_mut().zip(fv).for_each(|(wi, fi)| *wi -= fi * inv_lambda);
        gradient(&w, rows, cols, &mut gx, &mut gy);
        for i in 0..n {
            let norm = 1.0 + p.tau * gx[i].hypot(gy[i]);
            px[i] = (px[i] + p.tau * gx[i]) / norm;
            py[i] = (py[i] + p.tau * gy[i]) / norm;
        }
    }
    divergence(&px, &py, rows, cols, &mut w);
    let u = fv.iter().zip(&w).map(|(fi, d)| fi - p.lambda * d).collect();
    Ok(RealGrid::new(rows, cols, u)?.with_spacing(f.spacing_mm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_step(seed: u64) -> RealGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealGrid::from_fn(16, 16, |_, c| if c < 8 { 0.0 } else { 1.0 } + rng.random_range(-0.3..0.3)).unwrap()
    }

    /// Projected gradient on the dual (Chambolle 2005 form, step 1/8).
    fn reference(f: &RealGrid, lambda: f64, iters: usize) -> RealGrid {
        let (rows, cols) = f.dims();
        let n = rows * cols;
        let (mut px, mut py, mut gx, mut gy, mut w) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..iters {
            divergence(&px, &py, rows, cols, &mut w);
            for i in 0..n {
                w[i] -= f.values()[i] / lambda;
            }
            gradient(&w, rows, cols, &mut gx, &mut gy);
            for i in 0..n {
                let (qx, qy) = (px[i] + gx[i] / 8.0, py[i] + gy[i] / 8.0);
                let m = qx.hypot(qy).max(1.0);
                px[i] = qx / m;
                py[i] = qy / m;
            }
        }
        divergence(&px, &py, rows, cols, &mut w);
        RealGrid::new(rows, cols, (0..n).map(|i| f.values()[i] - lambda * w[i]).collect()).unwrap()
    }

    #[test]
    fn adjointness() {
        let (rows, cols) = (5, 7);
        let u: Vec<f64> = (0..35).map(|i| ((i * 13) % 11) as f64).collect();
        let px: Vec<f64> = (0..35).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let py: Vec<f64> = (0..35).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let (mut gx, mut gy, mut d) = (vec![0.0; 35], vec![0.0; 35], vec![0.0; 35]);
        gradient(&u, rows, cols, &mut gx, &mut gy);
        divergence(&px, &py, rows, cols, &mut d);
        let lhs: f64 = (0..35).map(|i| gx[i] * px[i] + gy[i] * py[i]).sum();
        let rhs: f64 = (0..35).map(|i| -u[i] * d[i]).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn constant_is_fixed_point() {
        let f = RealGrid::filled(9, 7, 0.37).unwrap();
        let u = tv_denoise(&f, &TvParams::new(0.5, 100)).unwrap();
        for (a, b) in u.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn vanishing_lambda_is_identity() {
        let f = noisy_step(1);
        let u = tv_denoise(&f, &TvParams::new(1e-12, 200)).unwrap();
        for (a, b) in u.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn converges_to_long_run_reference() {
        let f = noisy_step(2);
        let u = tv_denoise(&f, &TvParams::new(0.5, 2000)).unwrap();
        let r = reference(&f, 0.5, 100_000);
        let (eu, er) = (rof_objective(&u, &f, 0.5), rof_objective(&r, &f, 0.5));
        assert!((eu - er).abs() <= 0.005 * er, "{eu} vs {er}");
    }

    #[test]
    fn objective_non_increasing_every_50() {
        let f = noisy_step(3);
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let u = tv_denoise(&f, &TvParams::new(0.3, 50 * k)).unwrap();
            let e = rof_objective(&u, &f, 0.3);
            assert!(e <= last + 1e-12, "iteration {}: {e} > {last}", 50 * k);
            last = e;
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let f = noisy_step(4);
        assert!(tv_denoise(&f, &TvParams::new(0.0, 10)).is_err());
        assert!(tv_denoise(&f, &TvParams { lambda: 0.1, iters: 10, tau: 0.3 }).is_err());
    }

    proptest! {
        #[test]
        fn additive_constant_equivariance(c in -5.0f64..5.0, seed in 0u64..100) {
            let f = noisy_step(seed);
            let p = TvParams::new(0.4, 60);
            let a = tv_denoise(&f, &p).unwrap();
            let b = tv_denoise(&f.map(|v| v + c).unwrap(), &p).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x + c - y).abs() < 1e-9);
            }
        }
    }
}
