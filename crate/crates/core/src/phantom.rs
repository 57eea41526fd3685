//! Synthetic CT phantoms used in place of archive data.
//!
//! Each phantom is built from tissue regions with smooth (smoothstep)
//! boundaries plus white HU texture, so the simulator sees both interfaces
//! and sub-resolution scatterers. The top rows are always tissue: the probe
//! sits on the skin line at row 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dicom::HounsfieldSlice;
use crate::error::{Error, Result};
use crate::grid::{RealGrid, Spacing};

pub const HU_AIR: f64 = -1000.0;
pub const HU_FAT: f64 = -90.0;
pub const HU_WATER: f64 = 0.0;
pub const HU_SOFT: f64 = 40.0;
pub const HU_BONE: f64 = 700.0;

/// Phantom pixel pitch. 256 rows span 7.7 cm, a typical 5 MHz field of view.
pub const PHANTOM_SPACING_MM: Spacing = (0.3, 0.3);

/// Standard deviation of the additive tissue texture.
pub const TEXTURE_HU: f64 = 12.0;

/// Width (in pixels) of the smoothstep transition at region boundaries.
const EDGE_PX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    Layered,
    Circles,
    AbdomenLike,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layered" => Ok(Self::Layered),
            "circles" => Ok(Self::Circles),
            "abdomen-like" | "abdomen" => Ok(Self::AbdomenLike),
            other => Err(Error::Parameter(format!("unknown phantom kind {other:?}"))),
        }
    }
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 3] = [Self::Layered, Self::Circles, Self::AbdomenLike];

    pub fn name(self) -> &'static str {
        match self {
            Self::Layered => "layered",
            Self::Circles => "circles",
            Self::AbdomenLike => "abdomen-like",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Self::Layered => 0x6c61_7965,
            Self::Circles => 0x6369_7263,
            Self::AbdomenLike => 0x6162_646f,
        }
    }
}

/// Smooth 0→1 ramp across a signed distance (negative = inside).
fn inside_weight(signed_dist: f64) -> f64 {
    let t = (0.5 - signed_dist / (2.0 * EDGE_PX)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

struct Canvas {
    rows: usize,
    cols: usize,
    hu: Vec<f64>,
}

impl Canvas {
    fn new(rows: usize, cols: usize, background: f64) -> Self {
        Self {
            rows,
            cols,
            hu: vec![background; rows * cols],
        }
    }

    /// Blend `value` into the region described by a signed-distance function.
    fn paint(&mut self, value: f64, sdf: impl Fn(f64, f64) -> f64) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let w = inside_weight(sdf(r as f64, c as f64));
                if w > 0.0 {
                    let v = &mut self.hu[r * self.cols + c];
                    *v = (1.0 - w) * *v + w * value;
                }
            }
        }
    }

    fn ellipse(&mut self, value: f64, cr: f64, cc: f64, ar: f64, ac: f64) {
        // Approximate signed distance: scaled radial distance.
        let scale = ar.min(ac);
        self.paint(value, |r, c| {
            let q = (((r - cr) / ar).powi(2) + ((c - cc) / ac).powi(2)).sqrt();
            (q - 1.0) * scale
        });
    }

    /// Everything below a wavy boundary `row = base + amp·sin(2π·c/period + phase)`.
    fn below(&mut self, value: f64, base: f64, amp: f64, period: f64, phase: f64) {
        self.paint(value, |r, c| {
            let b = base + amp * (2.0 * std::f64::consts::PI * c / period + phase).sin();
            b - r
        });
    }

    fn finish(mut self, rng: &mut ChaCha8Rng) -> Result<RealGrid> {
        for v in &mut self.hu {
            let n: f64 = rng.sample(StandardNormal);
            *v += TEXTURE_HU * n;
        }
        RealGrid::new(self.rows, self.cols, self.hu)
    }
}

fn layered(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let (rf, cf) = (rows as f64, cols as f64);
    let mut cv = Canvas::new(rows, cols, HU_FAT);
    let period = cf * rng.random_range(0.6..1.5);
    let mut depth = rf * rng.random_range(0.08..0.15);
    let plan = [HU_SOFT, HU_WATER, HU_SOFT + 20.0, HU_FAT, HU_SOFT];
    for &value in &plan {
        cv.below(
            value,
            depth,
            rf * rng.random_range(0.005..0.03),
            period,
            rng.random_range(0.0..6.28),
        );
        depth += rf * rng.random_range(0.1..0.17);
    }
    // Thin bone layer near the bottom, then soft tissue beneath it.
    let bone_top = rf * rng.random_range(0.78..0.86);
    cv.below(HU_BONE, bone_top, rf * 0.01, period, 0.0);
    cv.below(HU_SOFT, bone_top + rf * rng.random_range(0.04..0.07), rf * 0.01, period, 0.0);
    cv
}

fn circles(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let (rf, cf) = (rows as f64, cols as f64);
    let m = rf.min(cf);
    let mut cv = Canvas::new(rows, cols, HU_SOFT);
    let count = rng.random_range(3..=6);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..count {
        let value = match i {
            0 => HU_FAT,
            1 => HU_BONE,
            2 => HU_WATER,
            _ => [HU_FAT, HU_WATER, HU_BONE][rng.random_range(0..3)],
        };
        for _ in 0..64 {
            let rad = m * rng.random_range(0.09..0.17);
            let cr = rng.random_range(rad + 2.0..rf - rad - 2.0);
            let cc = rng.random_range(rad + 2.0..cf - rad - 2.0);
            let clear = placed
                .iter()
                .all(|&(pr, pc, prad)| ((cr - pr).powi(2) + (cc - pc).powi(2)).sqrt() > rad + prad + 3.0);
            if clear {
                cv.ellipse(value, cr, cc, rad, rad);
                placed.push((cr, cc, rad));
                break;
            }
        }
    }
    cv
}

fn abdomen_like(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let (rf, cf) = (rows as f64, cols as f64);
    let mut cv = Canvas::new(rows, cols, HU_FAT);
    let period = cf * rng.random_range(0.8..1.6);
    // Subcutaneous fat, then the abdominal wall muscle, then viscera.
    cv.below(HU_SOFT + 10.0, rf * rng.random_range(0.06..0.1), rf * 0.01, period, 0.0);
    cv.below(HU_SOFT, rf * rng.random_range(0.16..0.2), rf * 0.015, period, 1.0);
    // Liver-like organ.
    cv.ellipse(
        HU_SOFT + 20.0,
        rf * rng.random_range(0.35..0.45),
        cf * rng.random_range(0.25..0.4),
        rf * rng.random_range(0.12..0.18),
        cf * rng.random_range(0.18..0.26),
    );
    // Kidney-like organ wrapped in retroperitoneal fat.
    let (kr, kc) = (rf * rng.random_range(0.55..0.65), cf * rng.random_range(0.65..0.78));
    let (ka, kb) = (rf * rng.random_range(0.07..0.1), cf * rng.random_range(0.05..0.08));
    cv.ellipse(HU_FAT, kr, kc, ka + 4.0, kb + 4.0);
    cv.ellipse(HU_SOFT - 10.0, kr, kc, ka, kb);
    // Fluid-filled structure.
    cv.ellipse(
        HU_WATER,
        rf * rng.random_range(0.3..0.4),
        cf * rng.random_range(0.6..0.75),
        rf * 0.05,
        cf * 0.06,
    );
    // Small gas pocket.
    cv.ellipse(
        HU_AIR,
        rf * rng.random_range(0.55..0.65),
        cf * rng.random_range(0.3..0.45),
        rf * 0.025,
        cf * 0.035,
    );
    // Vertebral body near the bottom centre.
    cv.ellipse(
        HU_BONE,
        rf * rng.random_range(0.82..0.88),
        cf * rng.random_range(0.45..0.55),
        rf * 0.07,
        cf * 0.1,
    );
    cv
}

/// Generate a deterministic phantom slice. Requires `rows, cols >= 32`.
pub fn make_phantom(kind: PhantomKind, rows: usize, cols: usize, seed: u64) -> Result<HounsfieldSlice> {
    if rows < 32 || cols < 32 {
        return Err(Error::Size(format!("phantom must be at least 32x32, got {rows}x{cols}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind.salt());
    let canvas = match kind {
        PhantomKind::Layered => layered(rows, cols, &mut rng),
        PhantomKind::Circles => circles(rows, cols, &mut rng),
        PhantomKind::AbdomenLike => abdomen_like(rows, cols, &mut rng),
    };
    let grid = canvas.finish(&mut rng)?;
    HounsfieldSlice::new(
        grid,
        PHANTOM_SPACING_MM,
        format!("phantom:{}:{rows}x{cols}:seed={seed}", kind.name()),
    )
}
