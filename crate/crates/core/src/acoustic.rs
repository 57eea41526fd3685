//! Hounsfield units to acoustic property grids.

use serde::{Deserialize, Serialize};

use crate::dicom::HounsfieldSlice;
use crate::error::Result;
use crate::grid::{reflect_index, RealGrid, Spacing};

pub const AIR_DENSITY: f64 = 1.2;
pub const SPEED_MIN: f64 = 300.0;
pub const SPEED_MAX: f64 = 4500.0;
pub const BONE_SPEED: f64 = 2800.0;
/// Above this HU value tissue is treated as bone.
pub const BONE_HU: f64 = 300.0;
/// Local HU standard deviation that maps to echogenicity 1.
pub const ECHO_REF_HU: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticMap {
    pub density: RealGrid,
    pub speed: RealGrid,
    pub impedance: RealGrid,
    /// dB/(cm·MHz)
    pub attenuation: RealGrid,
    pub echogenicity: RealGrid,
}

impl AcousticMap {
    pub fn dims(&self) -> (usize, usize) {
        self.density.dims()
    }

    pub fn spacing_mm(&self) -> Option<Spacing> {
        self.density.spacing_mm()
    }

    pub fn named_grids(&self) -> [(&'static str, &RealGrid); 5] {
        [
            ("density", &self.density),
            ("speed", &self.speed),
            ("impedance", &self.impedance),
            ("attenuation", &self.attenuation),
            ("echogenicity", &self.echogenicity),
        ]
    }

    /// Check all grids share dimensions.
    pub fn validate(&self) -> Result<()> {
        for (_, g) in self.named_grids() {
            self.density.ensure_same_shape(g)?;
        }
        Ok(())
    }
}

pub fn density(hu: f64) -> f64 {
    (1000.0 + hu).max(AIR_DENSITY)
}

pub fn speed(hu: f64) -> f64 {
    if hu > BONE_HU {
        BONE_SPEED
    } else {
        (331.1 + 1.209 * density(hu).min(1100.0)).clamp(SPEED_MIN, SPEED_MAX)
    }
}

pub fn attenuation(hu: f64) -> f64 {
    if hu < -900.0 {
        41.0
    } else if hu < -30.0 {
        0.48
    } else if hu <= BONE_HU {
        0.54
    } else {
        6.9
    }
}

/// Population standard deviation of the 3×3 reflect-padded neighbourhood,
/// scaled by [`ECHO_REF_HU`] and clamped to `[0, 1]`.
pub fn echogenicity(hu: &RealGrid) -> RealGrid {
    let (rows, cols) = hu.dims();
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // Deviations from the centre sample keep constant windows exactly zero.
            let centre = hu.get(r, c);
            let (mut s, mut s2) = (0.0, 0.0);
            for dr in -1..=1isize {
                let rr = reflect_index(r as isize + dr, rows);
                for dc in -1..=1isize {
                    let cc = reflect_index(c as isize + dc, cols);
                    let d = hu.get(rr, cc) - centre;
                    s += d;
                    s2 += d * d;
                }
            }
            let mean = s / 9.0;
            let var = (s2 / 9.0 - mean * mean).max(0.0);
            out[r * cols + c] = (var.sqrt() / ECHO_REF_HU).clamp(0.0, 1.0);
        }
    }
    RealGrid::new(rows, cols, out)
        .expect("finite by construction")
        .with_spacing(hu.spacing_mm())
}

pub fn hu_to_acoustic(slice: &HounsfieldSlice) -> AcousticMap {
    let g = slice.grid.clone().with_spacing(Some(slice.pixel_spacing_mm));
    let elementwise = |f: fn(f64) -> f64| g.map(f).expect("finite by construction");
    let density = elementwise(density);
    let speed = elementwise(speed);
    let impedance = density
        .zip_map(&speed, |rho, c| rho * c)
        .expect("shapes agree");
    AcousticMap {
        attenuation: elementwise(attenuation),
        echogenicity: echogenicity(&g),
        density,
        speed,
        impedance,
    }
}
