//! Two-stage BM3D: block matching, 3D transform (2D DCT-II per block, Haar
//! across the group), hard thresholding, then empirical Wiener filtering
//! guided by the first-stage estimate.
//!
//! The group DC coefficient passes both stages untouched, so constant images
//! are fixed points and adding a constant commutes with the filter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealGrid;

/// Stage-2 matching threshold relative to stage 1.
const WIENER_TAU_RATIO: f64 = 0.16;

fn default_block() -> usize {
    8
}
fn default_step() -> usize {
    3
}
fn default_search() -> usize {
    19
}
fn default_max_matches() -> usize {
    16
}
fn default_lambda3d() -> f64 {
    2.7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm3dParams {
    /// Noise level; estimated from the data when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_block")]
    pub block: usize,
    #[serde(default = "default_step")]
    pub step: usize,
    /// Half-width of the matching window.
    #[serde(default = "default_search")]
    pub search: usize,
    #[serde(default = "default_max_matches")]
    pub max_matches: usize,
    #[serde(default = "default_lambda3d")]
    pub hard_lambda3d: f64,
    /// Stage-1 mean squared block distance threshold. Default `4σ²`.
    #[serde(default)]
    pub match_tau: Option<f64>,
}

impl Default for Bm3dParams {
    fn default() -> Self {
        Self {
            sigma: None,
            block: default_block(),
            step: default_step(),
            search: default_search(),
            max_matches: default_max_matches(),
            hard_lambda3d: default_lambda3d(),
            match_tau: None,
        }
    }
}

impl Bm3dParams {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma: Some(sigma),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("bm3d sigma {s} must be positive"));
            }
        }
        if self.block < 2 {
            return bad("bm3d block must be at least 2".into());
        }
        if self.step == 0 || self.step > self.block {
            return bad(format!("bm3d step must lie in [1, block], got {}", self.step));
        }
        if !self.max_matches.is_power_of_two() {
            return bad(format!("bm3d max_matches {} is not a power of two", self.max_matches));
        }
        if !(self.hard_lambda3d >= 0.0) {
            return bad("bm3d hard_lambda3d must be non-negative".into());
        }
        if let Some(t) = self.match_tau {
            if !(t >= 0.0) {
                return bad("bm3d match_tau must be non-negative".into());
            }
        }
        Ok(())
    }
}

/// Robust noise estimate: median absolute diagonal Haar detail / 0.6745.
pub fn estimate_sigma(f: &RealGrid) -> f64 {
    let (rows, cols) = f.dims();
    let mut d: Vec<f64> = Vec::with_capacity(rows * cols / 4);
    for i in 0..rows / 2 {
        for j in 0..cols / 2 {
            let (r, c) = (2 * i, 2 * j);
            let hh = (f.get(r, c) - f.get(r, c + 1) - f.get(r + 1, c) + f.get(r + 1, c + 1)) / 2.0;
            d.push(hh.abs());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m / 0.6745
}

/// Reference block origins along one axis: every `step`, plus the last fit.
pub fn reference_positions(n: usize, block: usize, step: usize) -> Vec<usize> {
    let last = n - block;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if *v.last().expect("n >= block") != last {
        v.push(last);
    }
    v
}

/// Orthonormal 2D DCT-II on square blocks and Haar across groups.
struct Transform {
    b: usize,
    /// Row-major DCT matrix `D[k][n]`.
    d: Vec<f64>,
}

impl Transform {
    fn new(b: usize) -> Self {
        let mut d = vec![0.0; b * b];
        for k in 0..b {
            let a = if k == 0 { (1.0 / b as f64).sqrt() } else { (2.0 / b as f64).sqrt() };
            for n in 0..b {
                d[k * b + n] =
                    a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * b) as f64).cos();
            }
        }
        Self { b, d }
    }

    /// `x ← D x Dᵀ` (forward) or `x ← Dᵀ x D` (inverse).
    fn dct2(&self, x: &mut [f64], tmp: &mut [f64], inverse: bool) {
        let b = self.b;
        let m = |i: usize, j: usize| if inverse { self.d[j * b + i] } else { self.d[i * b + j] };
        for i in 0..b {
            for j in 0..b {
                tmp[i * b + j] = (0..b).map(|k| m(i, k) * x[k * b + j]).sum();
            }
        }
        for i in 0..b {
            for j in 0..b {
                x[i * b + j] = (0..b).map(|k| tmp[i * b + k] * m(j, k)).sum();
            }
        }
    }

    fn haar(v: &mut [f64], tmp: &mut [f64], inverse: bool) {
        let n = v.len();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        if !inverse {
            let mut len = n;
            while len > 1 {
                let half = len / 2;
                for i in 0..half {
                    tmp[i] = (v[2 * i] + v[2 * i + 1]) * s;
                    tmp[half + i] = (v[2 * i] - v[2 * i + 1]) * s;
                }
                v[..len].copy_from_slice(&tmp[..len]);
                len = half;
            }
        } else {
            let mut len = 2;
            while len <= n {
                let half = len / 2;
                for i in 0..half {
                    tmp[2 * i] = (v[i] + v[half + i]) * s;
                    tmp[2 * i + 1] = (v[i] - v[half + i]) * s;
                }
                v[..len].copy_from_slice(&tmp[..len]);
                len *= 2;
            }
        }
    }

    /// Group layout: `n` blocks of `b²` values, block-major.
    fn group(&self, g: &mut [f64], inverse: bool) {
        let bb = self.b * self.b;
        let n = g.len() / bb;
        let mut tmp = vec![0.0; bb.max(n)];
        let mut col = vec![0.0; n];
        let mut tmp_col = vec![0.0; n];
        let across = |g: &mut [f64], col: &mut [f64], tmp_col: &mut [f64]| {
            for k in 0..bb {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = g[i * bb + k];
                }
                Self::haar(col, tmp_col, inverse);
                for (i, c) in col.iter().enumerate() {
                    g[i * bb + k] = *c;
                }
            }
        };
        if inverse {
            across(g, &mut col, &mut tmp_col);
        }
        for blk in g.chunks_exact_mut(bb) {
            self.dct2(blk, &mut tmp, inverse);
        }
        if !inverse {
            across(g, &mut col, &mut tmp_col);
        }
    }
}

/// Transform a group, zero coefficients below `threshold` except the group
/// DC, and transform back. Returns the number of retained coefficients.
pub fn hard_threshold_group(group: &mut [f64], block: usize, threshold: f64) -> Result<usize> {
    let bb = block * block;
    if block == 0 || group.is_empty() || group.len() % bb != 0 || !(group.len() / bb).is_power_of_two() {
        return Err(Error::Shape(format!(
            "group of {} values is not a power-of-two stack of {block}x{block} blocks",
            group.len()
        )));
    }
    let t = Transform::new(block);
    Ok(threshold_in_place(&t, group, threshold))
}

fn threshold_in_place(t: &Transform, group: &mut [f64], threshold: f64) -> usize {
    t.group(group, false);
    let mut kept = 1;
    for c in group.iter_mut().skip(1) {
        if c.abs() < threshold {
            *c = 0.0;
        } else {
            kept += 1;
        }
    }
    t.group(group, true);
    kept
}

struct Image<'a> {
    v: &'a [f64],
    rows: usize,
    cols: usize,
}

impl Image<'_> {
    fn block_into(&self, r: usize, c: usize, b: usize, out: &mut [f64]) {
        for i in 0..b {
            out[i * b..(i + 1) * b].copy_from_slice(&self.v[(r + i) * self.cols + c..][..b]);
        }
    }

    /// Matches for the block at `(r0, c0)`, best first, self always first,
    /// truncated to a power of two.
    fn matches(&self, r0: usize, c0: usize, p: &Bm3dParams, tau: f64) -> Vec<(usize, usize)> {
        let b = p.block;
        let limit = tau * (b * b) as f64;
        let mut found: Vec<(f64, usize, usize)> = Vec::new();
        let r_hi = (r0 + p.search).min(self.rows - b);
        let c_hi = (c0 + p.search).min(self.cols - b);
        for r in r0.saturating_sub(p.search)..=r_hi {
            for c in c0.saturating_sub(p.search)..=c_hi {
                if r == r0 && c == c0 {
                    continue;
                }
                let mut ssd = 0.0;
                for i in 0..b {
                    let a = &self.v[(r0 + i) * self.cols + c0..][..b];
                    let q = &self.v[(r + i) * self.cols + c..][..b];
                    ssd += a.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                    if ssd > limit {
                        break;
                    }
                }
                if ssd <= limit {
                    found.push((ssd, r, c));
                }
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut out = vec![(r0, c0)];
        out.extend(found.iter().take(p.max_matches - 1).map(|&(_, r, c)| (r, c)));
        let keep = 1 << out.len().ilog2();
        out.truncate(keep);
        out
    }
}

struct Contribution {
    positions: Vec<(usize, usize)>,
    blocks: Vec<f64>,
    weight: f64,
}

fn aggregate(rows: usize, cols: usize, b: usize, parts: &[Vec<Contribution>]) -> Vec<f64> {
    let mut num = vec![0.0; rows * cols];
    let mut den = vec![0.0; rows * cols];
    for part in parts {
        for ct in part {
            for (g, &(r, c)) in ct.positions.iter().enumerate() {
                let blk = &ct.blocks[g * b * b..][..b * b];
                for i in 0..b {
                    let row = (r + i) * cols + c;
                    for j in 0..b {
                        num[row + j] += ct.weight * blk[i * b + j];
                        den[row + j] += ct.weight;
                    }
                }
            }
        }
    }
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

/// Run `per_ref` over every reference block, rows in parallel, and return
/// contributions in raster order of the references.
fn for_references<F>(rows: usize, cols: usize, p: &Bm3dParams, per_ref: F) -> Vec<Vec<Contribution>>
where
    F: Fn(usize, usize) -> Contribution + Sync,
{
    let rr = reference_positions(rows, p.block, p.step);
    let cc = reference_positions(cols, p.block, p.step);
    rr.par_iter()
        .map(|&r| cc.iter().map(|&c| per_ref(r, c)).collect())
        .collect()
}

pub fn bm3d_denoise(f: &RealGrid, p: &Bm3dParams) -> Result<RealGrid> {
    p.validate()?;
    let (rows, cols) = f.dims();
    let b = p.block;
    if rows < 2 * b || cols < 2 * b {
        return Err(Error::Size(format!("{rows}x{cols} grid smaller than twice the {b}px block")));
    }
    let sigma = match p.sigma {
        Some(s) => s,
        None => estimate_sigma(f),
    };
    if sigma <= 0.0 {
        // Noise-free by the estimate: nothing to remove.
        return Ok(f.clone());
    }
    let var = sigma * sigma;
    let tau1 = p.match_tau.unwrap_or(4.0 * var);
    let tau2 = WIENER_TAU_RATIO * tau1;
    let t = Transform::new(b);
    let bb = b * b;
    let noisy = Image {
        v: f.values(),
        rows,
        cols,
    };

    let stage1 = for_references(rows, cols, p, |r, c| {
        let positions = noisy.matches(r, c, p, tau1);
        let mut blocks = vec![0.0; positions.len() * bb];
        for (g, &(pr, pc)) in positions.iter().enumerate() {
            noisy.block_into(pr, pc, b, &mut blocks[g * bb..(g + 1) * bb]);
        }
        let kept = threshold_in_place(&t, &mut blocks, p.hard_lambda3d * sigma);
        Contribution {
            positions,
            blocks,
            weight: 1.0 / (var * kept as f64),
        }
    });
    let basic_values = aggregate(rows, cols, b, &stage1);
    drop(stage1);
    let basic = Image {
        v: &basic_values,
        rows,
        cols,
    };

    let stage2 = for_references(rows, cols, p, |r, c| {
        let positions = basic.matches(r, c, p, tau2);
        let n = positions.len();
        let mut blocks = vec![0.0; n * bb];
        let mut guide = vec![0.0; n * bb];
        for (g, &(pr, pc)) in positions.iter().enumerate() {
            noisy.block_into(pr, pc, b, &mut blocks[g * bb..(g + 1) * bb]);
            basic.block_into(pr, pc, b, &mut guide[g * bb..(g + 1) * bb]);
        }
        t.group(&mut blocks, false);
        t.group(&mut guide, false);
        let mut energy = 1.0;
        for (c, e) in blocks.iter_mut().zip(&guide).skip(1) {
            let w = e * e / (e * e + var);
            *c *= w;
            energy += w * w;
        }
        t.group(&mut blocks, true);
        Contribution {
            positions,
            blocks,
            weight: 1.0 / (var * energy),
        }
    });
    let out = aggregate(rows, cols, b, &stage2);
    Ok(RealGrid::new(rows, cols, out)?.with_spacing(f.spacing_mm()))
}
