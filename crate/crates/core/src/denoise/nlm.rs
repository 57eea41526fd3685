//! Non-local means with the classic exponential patch kernel.
//!
//! `u_i = Σ_j w_ij f_j / Σ_j w_ij`, `w_ij = exp(−‖P_i − P_j‖² / (h²·|P|))`,
//! over the search window clipped to the frame. Patches are compared on a
//! reflect-padded copy so every pixel has a full patch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pad_reflect, RealGrid};

fn default_patch_radius() -> usize {
    2
}
fn default_search_radius() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlmParams {
    #[serde(default = "default_patch_radius")]
    pub patch_radius: usize,
    #[serde(default = "default_search_radius")]
    pub search_radius: usize,
    pub h: f64,
}

impl NlmParams {
    pub fn new(h: f64) -> Self {
        Self {
            patch_radius: default_patch_radius(),
            search_radius: default_search_radius(),
            h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(Error::Parameter(format!("nlm h {} must be positive", self.h)));
        }
        if self.search_radius < self.patch_radius {
            return Err(Error::Parameter("nlm search_radius must be >= patch_radius".into()));
        }
        Ok(())
    }
}

pub fn nlm_denoise(f: &RealGrid, p: &NlmParams) -> Result<RealGrid> {
    p.validate()?;
    let (rows, cols) = f.dims();
    let pr = p.patch_radius;
    if pr >= rows.min(cols) {
        return Err(Error::Size(format!(
            "{rows}x{cols} grid too small for patch radius {pr}"
        )));
    }
    let padded = pad_reflect(f, pr)?;
    let pv = padded.values();
    let stride = padded.cols();
    let side = 2 * pr + 1;
    let inv = 1.0 / (p.h * p.h * (side * side) as f64);
    let sr = p.search_radius;
    let fv = f.values();

    let mut out = vec![0.0; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(r, out_row)| {
        for (c, slot) in out_row.iter_mut().enumerate() {
            // Patch centred on (r, c) starts at padded (r, c). Averaging
            // offsets from the centre value keeps constant regions exact.
            let centre = fv[r * cols + c];
            let (mut num, mut den) = (0.0, 0.0);
            for rj in r.saturating_sub(sr)..(r + sr + 1).min(rows) {
                for cj in c.saturating_sub(sr)..(c + sr + 1).min(cols) {
                    let mut d2 = 0.0;
                    for a in 0..side {
                        let pi = &pv[(r + a) * stride + c..][..side];
                        let pj = &pv[(rj + a) * stride + cj..][..side];
                        for b in 0..side {
                            let d = pi[b] - pj[b];
                            d2 += d * d;
                        }
                    }
                    let w = (-d2 * inv).exp();
                    num += w * (fv[rj * cols + cj] - centre);
                    den += w;
                }
            }
            *slot = centre + num / den;
        }
    });
    Ok(RealGrid::new(rows, cols, out)?.with_spacing(f.spacing_mm()))
}
