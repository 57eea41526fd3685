//! RF to IQ demodulation, envelope detection and B-mode compression.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{reflect_index, ComplexGrid, RealGrid};

pub const LOWPASS_TAPS: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct IqImage {
    pub grid: ComplexGrid,
    pub carrier_cycles_per_sample: f64,
}

impl IqImage {
    pub fn new(grid: ComplexGrid, carrier_cycles_per_sample: f64) -> Result<Self> {
        check_carrier(carrier_cycles_per_sample)?;
        Ok(Self {
            grid,
            carrier_cycles_per_sample,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }
}

fn check_carrier(f: f64) -> Result<()> {
    if f > 0.0 && f < 0.5 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("carrier {f} outside (0, 0.5) cycles/sample")))
    }
}

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn lowpass_taps(cutoff: f64) -> Vec<f64> {
    let half = (LOWPASS_TAPS / 2) as f64;
    let mut h: Vec<f64> = (0..LOWPASS_TAPS)
        .map(|i| {
            let n = i as f64 - half;
            let sinc = if n == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * n).sin() / (PI * n)
            };
            sinc * (0.54 + 0.46 * (PI * n / half).cos())
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Mix each column down by the carrier, low-pass along rows, scale by 2.
pub fn demodulate(rf: &RealGrid, carrier: f64) -> Result<IqImage> {
    check_carrier(carrier)?;
    let (rows, cols) = rf.dims();
    let h = lowpass_taps(carrier);
    let half = (LOWPASS_TAPS / 2) as isize;
    let (mut mix_re, mut mix_im) = (vec![0.0; rows * cols], vec![0.0; rows * cols]);
    for d in 0..rows {
        let phase = 2.0 * PI * carrier * d as f64;
        let (s, c) = phase.sin_cos();
        for x in 0..cols {
            let v = rf.get(d, x);
            mix_re[d * cols + x] = v * c;
            mix_im[d * cols + x] = -v * s;
        }
    }
    let (mut re, mut im) = (vec![0.0; rows * cols], vec![0.0; rows * cols]);
    for d in 0..rows {
        for (k, &hk) in h.iter().enumerate() {
            let src = reflect_index(d as isize + k as isize - half, rows);
            let (o, i) = (d * cols, src * cols);
            for x in 0..cols {
                re[o + x] += hk * mix_re[i + x];
                im[o + x] += hk * mix_im[i + x];
            }
        }
    }
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= 2.0);
    let grid = ComplexGrid::new(rows, cols, re, im)?.with_spacing(rf.spacing_mm());
    IqImage::new(grid, carrier)
}

pub fn envelope(iq: &IqImage) -> RealGrid {
    let g = &iq.grid;
    let vals = g.re().iter().zip(g.im()).map(|(r, i)| r.hypot(*i)).collect();
    RealGrid::new(g.rows(), g.cols(), vals)
        .expect("finite")
        .with_spacing(g.spacing_mm())
}

/// Log compression to `[0, 1]` over `dynamic_range_db` below the peak.
pub fn bmode(env: &RealGrid, dynamic_range_db: f64) -> Result<RealGrid> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::Parameter("dynamic range must be positive".into()));
    }
    let peak = env.max();
    if !(peak > 0.0) {
        return Err(Error::Degenerate("envelope is all zero".into()));
    }
    env.map(|v| {
        let db = (20.0 * (v / peak + 1e-12).log10()).clamp(-dynamic_range_db, 0.0);
        (db + dynamic_range_db) / dynamic_range_db
    })
}
