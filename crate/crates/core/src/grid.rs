//! Dense row-major 2D grids and the shared convolution, padding and patch
//! primitives.
//!
//! Grids are immutable once constructed: every operation returns a new grid.
//! All values are `f64`; finiteness is checked at construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical pixel spacing in millimetres, `(row, col)`.
pub type Spacing = (f64, f64);

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Domain(format!("{what}: non-finite value at index {i}"))),
        None => Ok(()),
    }
}

/// Real-valued image. Units depend on context (HU, pressure, envelope, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealGrid {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    spacing_mm: Option<Spacing>,
}

impl RealGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} grid needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        check_finite(&values, "RealGrid")?;
        Ok(Self {
            rows,
            cols,
            values,
            spacing_mm: None,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn with_spacing(mut self, spacing: Option<Spacing>) -> Self {
        self.spacing_mm = spacing;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing_mm(&self) -> Option<Spacing> {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Elementwise map, keeping dimensions and spacing.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Ok(Self::new(self.rows, self.cols, self.values.iter().map(|&v| f(v)).collect())?
            .with_spacing(self.spacing_mm))
    }

    /// Elementwise combination of two grids of equal shape.
    pub fn zip_map(&self, other: &RealGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::new(self.rows, self.cols, values)?.with_spacing(self.spacing_mm))
    }

    pub fn ensure_same_shape(&self, other: &RealGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Mirror image left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.rows {
            values.extend(self.row(r).iter().rev());
        }
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                values.push(self.get(r, c));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
            spacing_mm: self.spacing_mm.map(|(a, b)| (b, a)),
        }
    }
}

/// Complex-valued image stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    spacing_mm: Option<Spacing>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} complex grid needs {} values per plane, got {}/{}",
                rows * cols,
                re.len(),
                im.len()
            )));
        }
        check_finite(&re, "ComplexGrid re")?;
        check_finite(&im, "ComplexGrid im")?;
        Ok(Self {
            rows,
            cols,
            re,
            im,
            spacing_mm: None,
        })
    }

    pub fn from_parts(re: &RealGrid, im: &RealGrid) -> Result<Self> {
        re.ensure_same_shape(im)?;
        Ok(Self::new(re.rows(), re.cols(), re.values().to_vec(), im.values().to_vec())?
            .with_spacing(re.spacing_mm()))
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols], vec![0.0; rows * cols])
    }

    pub fn with_spacing(mut self, spacing: Option<Spacing>) -> Self {
        self.spacing_mm = spacing;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn spacing_mm(&self) -> Option<Spacing> {
        self.spacing_mm
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_grid(&self) -> RealGrid {
        RealGrid {
            rows: self.rows,
            cols: self.cols,
            values: self.re.clone(),
            spacing_mm: self.spacing_mm,
        }
    }

    pub fn im_grid(&self) -> RealGrid {
        RealGrid {
            rows: self.rows,
            cols: self.cols,
            values: self.im.clone(),
            spacing_mm: self.spacing_mm,
        }
    }

    /// Multiply every sample by `exp(i·theta)`.
    pub fn rotate_phase(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let (re, im) = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(&a, &b)| (a * c - b * s, a * s + b * c))
            .unzip();
        Self {
            re,
            im,
            ..self.clone()
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    pub fn extract_patch(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let re = extract_patch(&self.re_grid(), top, left, h, w)?;
        let im = extract_patch(&self.im_grid(), top, left, h, w)?;
        ComplexGrid::from_parts(&re, &im)
    }
}

/// Centered 2D kernel with odd dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Kernel2D {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::InvalidKernel(format!(
                "kernel dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidKernel(format!(
                "{rows}x{cols} kernel needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel("non-finite kernel value".into()));
        }
        Ok(Self { rows, cols, values })
    }

    /// The 1x1 kernel `[1.0]`.
    pub fn impulse() -> Self {
        Self {
            rows: 1,
            cols: 1,
            values: vec![1.0],
        }
    }

    /// Outer product `axial ⊗ lateral` (rows × cols).
    pub fn separable(axial: &[f64], lateral: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(axial.len() * lateral.len());
        for a in axial {
            values.extend(lateral.iter().map(|l| a * l));
        }
        Self::new(axial.len(), lateral.len(), values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn center(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Reflect,
    Zero,
}

/// Mirror an index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n-2`). Periodic with period `2(n-1)`, so any offset is
/// handled.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// 2D convolution `out(i,j) = Σ k(a,b) · in(i - a + ca, j - b + cb)`,
/// evaluated as a direct sum. Output has the input's dimensions.
pub fn conv2d(input: &RealGrid, k: &Kernel2D, boundary: Boundary) -> Result<RealGrid> {
    if k.rows % 2 == 0 || k.cols % 2 == 0 {
        return Err(Error::InvalidKernel("kernel dimensions must be odd".into()));
    }
    let (rows, cols) = input.dims();
    let (cr, cc) = k.center();
    let (cr, cc) = (cr as isize, cc as isize);
    let src = input.values();
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let mut acc = 0.0;
            for a in 0..k.rows {
                let si = i as isize - a as isize + cr;
                let si = match boundary {
                    Boundary::Reflect => reflect_index(si, rows),
                    Boundary::Zero if si < 0 || si >= rows as isize => continue,
                    Boundary::Zero => si as usize,
                };
                let src_row = &src[si * cols..(si + 1) * cols];
                let krow = &k.values[a * k.cols..(a + 1) * k.cols];
                for (b, &kv) in krow.iter().enumerate() {
                    let sj = j as isize - b as isize + cc;
                    let sj = match boundary {
                        Boundary::Reflect => reflect_index(sj, cols),
                        Boundary::Zero if sj < 0 || sj >= cols as isize => continue,
                        Boundary::Zero => sj as usize,
                    };
                    acc += kv * src_row[sj];
                }
            }
            out[i * cols + j] = acc;
        }
    }
    Ok(RealGrid::new(rows, cols, out)?.with_spacing(input.spacing_mm()))
}

/// Copy of the `h`×`w` window whose top-left corner is `(top, left)`.
pub fn extract_patch(g: &RealGrid, top: usize, left: usize, h: usize, w: usize) -> Result<RealGrid> {
    if h == 0 || w == 0 || top + h > g.rows() || left + w > g.cols() {
        return Err(Error::Bounds(format!(
            "patch {h}x{w} at ({top},{left}) does not fit in {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    let mut values = Vec::with_capacity(h * w);
    for r in top..top + h {
        values.extend_from_slice(&g.row(r)[left..left + w]);
    }
    Ok(RealGrid::new(h, w, values)?.with_spacing(g.spacing_mm()))
}

/// Grow the grid by `margin` on every side, mirroring the interior without
/// repeating the edge sample.
pub fn pad_reflect(g: &RealGrid, margin: usize) -> Result<RealGrid> {
    if margin >= g.rows().min(g.cols()) && margin > 0 {
        return Err(Error::Bounds(format!(
            "reflect margin {margin} requires a grid larger than {margin} in both axes, got {}x{}",
            g.rows(),
            g.cols()
        )));
    }
    let (rows, cols) = (g.rows() + 2 * margin, g.cols() + 2 * margin);
    let m = margin as isize;
    RealGrid::from_fn(rows, cols, |r, c| {
        g.get(
            reflect_index(r as isize - m, g.rows()),
            reflect_index(c as isize - m, g.cols()),
        )
    })
    .map(|p| p.with_spacing(g.spacing_mm()))
}
