//! Straight-ray ultrasound simulation on the CT pixel grid.
//!
//! One ray per column marches down the rows. Impedance steps reflect,
//! everything attenuates, and the reflection map plus a transmission-weighted
//! speckle field is convolved with a separable pulse-beam kernel.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acoustic::AcousticMap;
use crate::error::{Error, Result};
use crate::grid::{conv2d, Boundary, Kernel2D, RealGrid};

/// Soft-tissue attenuation used as the TGC reference.
const TGC_ALPHA: f64 = 0.54;

fn default_frequency() -> f64 {
    5e6
}
fn default_q() -> f64 {
    0.5
}
fn default_bandwidth_level_db() -> f64 {
    20.0
}
fn default_samples_per_pixel() -> usize {
    1
}
fn default_carrier() -> f64 {
    0.25
}
fn default_lateral_sigma() -> f64 {
    1.0
}
fn default_reflection_weight() -> f64 {
    1.0
}
fn default_scatter_weight() -> f64 {
    0.35
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    #[serde(default = "default_frequency")]
    pub center_frequency_hz: f64,
    #[serde(default = "default_q")]
    pub q_factor: f64,
    /// Level (dB below peak) at which the fractional bandwidth `1/q` is measured.
    #[serde(default = "default_bandwidth_level_db")]
    pub bandwidth_level_db: f64,
    /// Only 1 is supported by the dataset builder; larger values refine the
    /// axial sampling of the RF frame.
    #[serde(default = "default_samples_per_pixel")]
    pub axial_samples_per_pixel: usize,
    #[serde(default = "default_carrier")]
    pub carrier_cycles_per_sample: f64,
    #[serde(default = "default_lateral_sigma")]
    pub lateral_beam_sigma_px: f64,
    #[serde(default)]
    pub tgc_enabled: bool,
    #[serde(default = "default_reflection_weight")]
    pub reflection_weight: f64,
    #[serde(default = "default_scatter_weight")]
    pub scatter_weight: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            center_frequency_hz: default_frequency(),
            q_factor: default_q(),
            bandwidth_level_db: default_bandwidth_level_db(),
            axial_samples_per_pixel: default_samples_per_pixel(),
            carrier_cycles_per_sample: default_carrier(),
            lateral_beam_sigma_px: default_lateral_sigma(),
            tgc_enabled: false,
            reflection_weight: default_reflection_weight(),
            scatter_weight: default_scatter_weight(),
        }
    }
}

impl ProbeSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.center_frequency_hz > 0.0) {
            return bad("center_frequency_hz must be positive");
        }
        if !(self.q_factor > 0.0 && self.q_factor <= 10.0) {
            return bad("q_factor must lie in (0, 10]");
        }
        if !(self.carrier_cycles_per_sample > 0.0 && self.carrier_cycles_per_sample < 0.5) {
            return bad("carrier_cycles_per_sample must lie in (0, 0.5)");
        }
        if !(self.bandwidth_level_db > 0.0) {
            return bad("bandwidth_level_db must be positive");
        }
        if self.axial_samples_per_pixel == 0 {
            return bad("axial_samples_per_pixel must be at least 1");
        }
        if !(self.lateral_beam_sigma_px > 0.0) {
            return bad("lateral_beam_sigma_px must be positive");
        }
        if !(self.reflection_weight.is_finite() && self.scatter_weight.is_finite()) {
            return bad("mixing weights must be finite");
        }
        Ok(())
    }

    /// Axial standard deviation (samples) of the Gaussian pulse envelope.
    pub fn axial_sigma(&self) -> f64 {
        let f = self.carrier_cycles_per_sample;
        // Amplitude ratio at the bandwidth level, and the spectral sigma for
        // which the full width at that level equals f/q.
        let rho = 10f64.powf(-self.bandwidth_level_db / 20.0);
        let sigma_f = f / (2.0 * self.q_factor * (2.0 * (1.0 / rho).ln()).sqrt());
        1.0 / (2.0 * PI * sigma_f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub reflectivity: RealGrid,
    pub transmission: RealGrid,
    pub rf: RealGrid,
    pub seed: u64,
}

fn gaussian_taps(sigma: f64) -> (usize, Vec<f64>) {
    let half = (3.0 * sigma).ceil() as usize;
    let taps = (0..=2 * half)
        .map(|i| {
            let t = i as f64 - half as f64;
            (-0.5 * t * t / (sigma * sigma)).exp()
        })
        .collect();
    (half, taps)
}

fn lateral_profile(probe: &ProbeSpec) -> Vec<f64> {
    let (_, mut lat) = gaussian_taps(probe.lateral_beam_sigma_px);
    let s: f64 = lat.iter().sum();
    lat.iter_mut().for_each(|v| *v /= s);
    lat
}

/// Zero-sum axial RF pulse: Gaussian-windowed cosine at the carrier.
pub fn axial_pulse(probe: &ProbeSpec) -> Vec<f64> {
    let (half, g) = gaussian_taps(probe.axial_sigma());
    let f = probe.carrier_cycles_per_sample;
    let mut p: Vec<f64> = g
        .iter()
        .enumerate()
        .map(|(i, &gi)| gi * (2.0 * PI * f * (i as f64 - half as f64)).cos())
        .collect();
    // Remove DC with an envelope-shaped component, not a constant, so the
    // spectral peak stays on the carrier.
    let dc = p.iter().sum::<f64>() / g.iter().sum::<f64>();
    p.iter_mut().zip(&g).for_each(|(v, gi)| *v -= dc * gi);
    p
}

/// Separable RF pulse-beam kernel (axial along rows).
pub fn pulse_psf(probe: &ProbeSpec) -> Result<Kernel2D> {
    probe.validate()?;
    Kernel2D::separable(&axial_pulse(probe), &lateral_profile(probe))
}

/// Baseband counterpart of [`pulse_psf`]: the real Gaussian envelope that
/// demodulated data is blurred with. Use this to deconvolve IQ images.
pub fn baseband_psf(probe: &ProbeSpec) -> Result<Kernel2D> {
    probe.validate()?;
    let (_, g) = gaussian_taps(probe.axial_sigma());
    Kernel2D::separable(&g, &lateral_profile(probe))
}

/// Row spacing in cm of one RF sample.
fn sample_depth_cm(map: &AcousticMap, probe: &ProbeSpec) -> f64 {
    let mm = map.spacing_mm().map_or(crate::dicom::DEFAULT_SPACING_MM.0, |s| s.0);
    mm / 10.0 / probe.axial_samples_per_pixel as f64
}

/// Nearest-row axial upsampling of every property grid.
fn refine_rows(map: &AcousticMap, k: usize) -> AcousticMap {
    if k == 1 {
        return map.clone();
    }
    let up = |g: &RealGrid| {
        RealGrid::from_fn(g.rows() * k, g.cols(), |r, c| g.get(r / k, c))
            .expect("finite")
            .with_spacing(g.spacing_mm().map(|(a, b)| (a / k as f64, b)))
    };
    AcousticMap {
        density: up(&map.density),
        speed: up(&map.speed),
        impedance: up(&map.impedance),
        attenuation: up(&map.attenuation),
        echogenicity: up(&map.echogenicity),
    }
}

/// Reflectivity and one-way transmission along straight vertical rays.
/// With `axial_samples_per_pixel > 1` the outputs have that many rows per map row.
pub fn trace_scanlines(map: &AcousticMap, probe: &ProbeSpec) -> Result<(RealGrid, RealGrid)> {
    map.validate()?;
    probe.validate()?;
    let f_mhz = probe.center_frequency_hz / 1e6;
    let dd = sample_depth_cm(map, probe);
    let map = refine_rows(map, probe.axial_samples_per_pixel);
    let (rows, cols) = map.dims();
    let z = map.impedance.values();
    let alpha = map.attenuation.values();
    let mut refl = vec![0.0; rows * cols];
    let mut trans = vec![0.0; rows * cols];
    for c in 0..cols {
        let mut t = 1.0;
        for d in 0..rows {
            let i = d * cols + c;
            let r = if d + 1 < rows {
                let (z0, z1) = (z[i], z[i + cols]);
                (z1 - z0) / (z1 + z0)
            } else {
                0.0
            };
            trans[i] = t;
            refl[i] = t * r.abs();
            t *= (1.0 - r * r) * 10f64.powf(-alpha[i] * f_mhz * dd / 10.0);
        }
    }
    let sp = map.spacing_mm();
    Ok((
        RealGrid::new(rows, cols, refl)?.with_spacing(sp),
        RealGrid::new(rows, cols, trans)?.with_spacing(sp),
    ))
}

/// Seeded standard normal field scaled by the echogenicity.
pub fn scatter_field(map: &AcousticMap, seed: u64) -> RealGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = &map.echogenicity;
    let vals = e
        .values()
        .iter()
        .map(|&a| {
            let n: f64 = StandardNormal.sample(&mut rng);
            a * n
        })
        .collect();
    RealGrid::new(e.rows(), e.cols(), vals)
        .expect("finite")
        .with_spacing(e.spacing_mm())
}

pub fn simulate_rf(map: &AcousticMap, probe: &ProbeSpec, seed: u64) -> Result<ScanResult> {
    let (reflectivity, transmission) = trace_scanlines(map, probe)?;
    let f_mhz = probe.center_frequency_hz / 1e6;
    let dd = sample_depth_cm(map, probe);
    let map = refine_rows(map, probe.axial_samples_per_pixel);
    let scatter = scatter_field(&map, seed);
    let (wr, ws) = (probe.reflection_weight, probe.scatter_weight);
    let cols = map.dims().1;
    let mut field: Vec<f64> = reflectivity
        .values()
        .iter()
        .zip(scatter.values())
        .zip(transmission.values())
        .map(|((&r, &s), &t)| wr * r + ws * s * t)
        .collect();
    if probe.tgc_enabled {
        for (i, v) in field.iter_mut().enumerate() {
            let d = (i / cols) as f64;
            *v *= 10f64.powf(TGC_ALPHA * f_mhz * dd * d / 10.0);
        }
    }
    let field = RealGrid::new(reflectivity.rows(), cols, field)?.with_spacing(map.spacing_mm());
    let rf = conv2d(&field, &pulse_psf(probe)?, Boundary::Reflect)?;
    Ok(ScanResult {
        reflectivity,
        transmission,
        rf,
        seed,
    })
}
