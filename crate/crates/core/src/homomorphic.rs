//! Homomorphic despeckling: Wiener deconvolution, envelope, log, left-tail
//! shrinkage, a pluggable denoiser on the normalised log image, exponentiation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::demod::{envelope, IqImage};
use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Kernel2D, RealGrid};

fn default_log_epsilon() -> f64 {
    1e-3
}
fn default_shrink_k() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DespeckleConfig {
    /// Blur to undo. For IQ input this is the baseband PSF.
    pub psf: Kernel2D,
    pub wiener_noise_ratio: f64,
    /// Log offset as a fraction of the envelope maximum.
    #[serde(default = "default_log_epsilon")]
    pub log_epsilon: f64,
    #[serde(default = "default_shrink_k")]
    pub shrink_k: f64,
    pub denoiser: Denoiser,
}

impl DespeckleConfig {
    pub fn new(psf: Kernel2D, wiener_noise_ratio: f64, denoiser: Denoiser) -> Self {
        Self {
            psf,
            wiener_noise_ratio,
            log_epsilon: default_log_epsilon(),
            shrink_k: default_shrink_k(),
            denoiser,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wiener_noise_ratio >= 0.0 && self.wiener_noise_ratio.is_finite()) {
            return Err(Error::Parameter("wiener_noise_ratio must be >= 0".into()));
        }
        if !(self.log_epsilon > 0.0) {
            return Err(Error::Parameter("log_epsilon must be positive".into()));
        }
        if !(self.shrink_k > 0.0) {
            return Err(Error::Parameter("shrink_k must be positive".into()));
        }
        if self.psf.is_zero() {
            return Err(Error::InvalidKernel("psf is identically zero".into()));
        }
        self.denoiser.validate()
    }
}

/// In-place 2D DFT of a row-major buffer. The inverse is unnormalised.
fn fft2(buf: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    row_fft.process(buf);
    let mut col = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            col[r] = buf[r * cols + c];
        }
        col_fft.process(&mut col);
        for r in 0..rows {
            buf[r * cols + c] = col[r];
        }
    }
}

/// Transfer function of `psf` placed with its centre at the origin and
/// wrapped onto a `rows × cols` torus.
fn transfer_function(psf: &Kernel2D, rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut h = vec![Complex::new(0.0, 0.0); rows * cols];
    let (cr, cc) = psf.center();
    for a in 0..psf.rows() {
        for b in 0..psf.cols() {
            let r = (a as isize - cr as isize).rem_euclid(rows as isize) as usize;
            let c = (b as isize - cc as isize).rem_euclid(cols as isize) as usize;
            h[r * cols + c].re += psf.get(a, b);
        }
    }
    fft2(&mut h, rows, cols, false);
    h
}

/// Circular Wiener filter `H*/(|H|² + r)`. Frequencies with `|H|² + r == 0`
/// are zeroed.
pub fn wiener_deconvolve(iq: &IqImage, psf: &Kernel2D, noise_ratio: f64) -> Result<IqImage> {
    if psf.is_zero() {
        return Err(Error::InvalidKernel("psf is identically zero".into()));
    }
    if !(noise_ratio >= 0.0) {
        return Err(Error::Parameter("noise ratio must be >= 0".into()));
    }
    let (rows, cols) = iq.dims();
    let g = &iq.grid;
    let h = transfer_function(psf, rows, cols);
    // A real PSF filters re and im independently, so one complex pass suffices.
    let mut buf: Vec<Complex<f64>> = g.re().iter().zip(g.im()).map(|(&r, &i)| Complex::new(r, i)).collect();
    fft2(&mut buf, rows, cols, false);
    for (x, hk) in buf.iter_mut().zip(&h) {
        let den = hk.norm_sqr() + noise_ratio;
        *x = if den > 0.0 { *x * hk.conj() / den } else { Complex::new(0.0, 0.0) };
    }
    fft2(&mut buf, rows, cols, true);
    let n = (rows * cols) as f64;
    let re = buf.iter().map(|c| c.re / n).collect();
    let im = buf.iter().map(|c| c.im / n).collect();
    let grid = ComplexGrid::new(rows, cols, re, im)?.with_spacing(g.spacing_mm());
    IqImage::new(grid, iq.carrier_cycles_per_sample)
}

pub fn log_transform(env: &RealGrid, eps: f64) -> Result<RealGrid> {
    if !(eps > 0.0) {
        return Err(Error::Parameter("log epsilon must be positive".into()));
    }
    if env.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Domain("negative envelope value".into()));
    }
    env.map(|v| (v + eps).ln())
}

pub fn exp_transform(l: &RealGrid, eps: f64) -> Result<RealGrid> {
    if !(eps > 0.0) {
        return Err(Error::Parameter("log epsilon must be positive".into()));
    }
    // eps·expm1(l − ln eps) == exp(l) − eps, exact at the floor l == ln eps.
    let ln_eps = eps.ln();
    l.map(|v| (eps * (v - ln_eps).exp_m1()).max(0.0))
}

/// Soft-clamp values below `μ − kσ` with a tanh of width σ.
pub fn outlier_shrink(l: &RealGrid, k: f64) -> Result<RealGrid> {
    if !(k > 0.0) {
        return Err(Error::Parameter("shrink k must be positive".into()));
    }
    let (mu, sigma) = (l.mean(), l.std());
    if sigma == 0.0 {
        return Ok(l.clone());
    }
    let t = mu - k * sigma;
    l.map(|v| if v < t { t + ((v - t) / sigma).tanh() * sigma } else { v })
}

pub fn despeckle(iq: &IqImage, cfg: &DespeckleConfig) -> Result<RealGrid> {
    cfg.validate()?;
    let deconv = wiener_deconvolve(iq, &cfg.psf, cfg.wiener_noise_ratio)?;
    let env = envelope(&deconv);
    let peak = env.max();
    let eps = if peak > 0.0 { cfg.log_epsilon * peak } else { cfg.log_epsilon };
    let shrunk = outlier_shrink(&log_transform(&env, eps)?, cfg.shrink_k)?;
    let (mean, sd) = (shrunk.mean(), shrunk.std());
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let normalised = shrunk.map(|v| (v - mean) / sd)?;
    let denoised = cfg.denoiser.apply(&normalised)?;
    exp_transform(&denoised.map(|v| v * sd + mean)?, eps)
}
