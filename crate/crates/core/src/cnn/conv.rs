//! Tiled im2col convolution kernels, generic over `f32`/`f64`.
//!
//! Columns are built a few output rows at a time so the buffer stays in
//! cache. Nearest-neighbour ×2 upsampling is folded into the column
//! gather, and its adjoint (2×2 sum) into the scatter.

use std::ops::{AddAssign, Mul};

use super::spec::{LayerSpec, Resample};

/// Target size of one column tile, in elements.
const TILE_ELEMS: usize = 1 << 15;

pub(crate) trait Elem: Copy + Default + Send + Sync + AddAssign + Mul<Output = Self> + PartialOrd + 'static {
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// # Safety
    /// Strides and dims must stay inside the buffers behind the pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Elem for f64 {
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Elem for f32 {
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Strided matrix view `(slice, row stride, column stride)`.
type View<'a, T> = (&'a [T], usize, usize);

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// `C (m×n) = A·B + beta·C`.
fn gemm<T: Elem>(m: usize, k: usize, n: usize, a: View<T>, b: View<T>, beta: T, c: (&mut [T], usize, usize)) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(last_index(m, k, a.1, a.2) < a.0.len());
    assert!(last_index(k, n, b.1, b.2) < b.0.len());
    assert!(last_index(m, n, c.1, c.2) < c.0.len());
    // SAFETY: the asserts bound every element the strides reach, and `c`
    // is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.0.as_mut_ptr(),
            c.1 as isize,
            c.2 as isize,
        )
    }
}

/// Geometry of one 3×3, pad-1 convolution applied to an `h × w` input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Geom {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    up: bool,
    stride: usize,
    /// Convolution input dims (after virtual upsampling).
    hc: usize,
    wc: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geom {
    pub fn new(spec: &LayerSpec, h: usize, w: usize) -> Self {
        let up = spec.resample == Resample::Up2;
        let stride = if spec.resample == Resample::Down2 { 2 } else { 1 };
        let (hc, wc) = if up { (2 * h, 2 * w) } else { (h, w) };
        Self {
            cin: spec.in_channels,
            cout: spec.out_channels,
            h,
            w,
            up,
            stride,
            hc,
            wc,
            ho: hc.div_ceil(stride),
            wo: wc.div_ceil(stride),
        }
    }

    fn k(&self) -> usize {
        self.cin * 9
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_ELEMS / (self.k() * self.wo)).clamp(1, self.ho)
    }

    /// Output columns `ox` whose tap `kx` lands inside the conv input.
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let lo = if kx == 0 { 1usize.div_ceil(self.stride) } else { 0 };
        // ox·stride + kx − 1 < wc
        let hi = (self.wc + 1 - kx).div_ceil(self.stride).min(self.wo);
        (lo, hi)
    }

    fn src_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(1)?;
        (iy < self.hc).then_some(if self.up { iy / 2 } else { iy })
    }
}

/// Columns `(cin·9) × (nrows·wo)` for output rows `oy0..oy0 + nrows`.
pub(crate) fn im2col_rows<T: Elem>(x: &[T], g: &Geom, oy0: usize, nrows: usize, cols: &mut [T]) {
    let pt = nrows * g.wo;
    cols[..g.k() * pt].fill(T::default());
    let mut uprow = vec![T::default(); g.wc];
    for ch in 0..g.cin {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..3 {
            for r in 0..nrows {
                let Some(sy) = g.src_row(oy0 + r, ky) else { continue };
                let mut src = &plane[sy * g.w..][..g.w];
                if g.up {
                    for (pair, &v) in uprow.chunks_exact_mut(2).zip(src) {
                        pair.fill(v);
                    }
                    src = &uprow;
                }
                for kx in 0..3 {
                    let (lo, hi) = g.ox_range(kx);
                    let dst = &mut cols[(ch * 9 + ky * 3 + kx) * pt + r * g.wo..][..g.wo];
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[lo + kx - 1..hi + kx - 1]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                            *d = src[ox * g.stride + kx - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_rows`], accumulated into `dx`.
pub(crate) fn col2im_rows<T: Elem>(cols: &[T], g: &Geom, oy0: usize, nrows: usize, dx: &mut [T]) {
    let pt = nrows * g.wo;
    let mut uprow = vec![T::default(); g.wc];
    for ch in 0..g.cin {
        let plane = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ky in 0..3 {
            for r in 0..nrows {
                let Some(sy) = g.src_row(oy0 + r, ky) else { continue };
                let dst_row = &mut plane[sy * g.w..][..g.w];
                if g.up {
                    uprow.fill(T::default());
                }
                let acc: &mut [T] = if g.up { &mut uprow } else { dst_row };
                for kx in 0..3 {
                    let (lo, hi) = g.ox_range(kx);
                    let src = &cols[(ch * 9 + ky * 3 + kx) * pt + r * g.wo..][..g.wo];
                    if g.stride == 1 {
                        for (a, &v) in acc[lo + kx - 1..hi + kx - 1].iter_mut().zip(&src[lo..hi]) {
                            *a += v;
                        }
                    } else {
                        for (ox, &v) in src.iter().enumerate().take(hi).skip(lo) {
                            acc[ox * g.stride + kx - 1] += v;
                        }
                    }
                }
                if g.up {
                    let dst_row = &mut plane[sy * g.w..][..g.w];
                    for (d, pair) in dst_row.iter_mut().zip(uprow.chunks_exact(2)) {
                        *d += pair[0];
                        *d += pair[1];
                    }
                }
            }
        }
    }
}

/// Pre-activation `cout × (ho·wo)` of one sample: bias plus convolution.
pub(crate) fn conv_forward<T: Elem>(x: &[T], g: &Geom, weights: &[T], bias: &[T]) -> Vec<T> {
    let (k, p) = (g.k(), g.ho * g.wo);
    let rows = g.rows_per_tile();
    let mut cols = vec![T::default(); k * rows * g.wo];
    let mut z = vec![T::default(); g.cout * p];
    for (plane, &b) in z.chunks_exact_mut(p).zip(bias) {
        plane.fill(b);
    }
    let mut oy0 = 0;
    while oy0 < g.ho {
        let nrows = rows.min(g.ho - oy0);
        let pt = nrows * g.wo;
        im2col_rows(x, g, oy0, nrows, &mut cols);
        gemm(
            g.cout,
            k,
            pt,
            (weights, k, 1),
            (&cols[..k * pt], pt, 1),
            T::ONE,
            (&mut z[oy0 * g.wo..], p, 1),
        );
        oy0 += nrows;
    }
    z
}

/// Gradients of one sample: `(d weights, d bias, d input)`.
pub(crate) fn conv_backward<T: Elem>(x: &[T], g: &Geom, weights: &[T], dz: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (k, p) = (g.k(), g.ho * g.wo);
    let rows = g.rows_per_tile();
    let mut cols = vec![T::default(); k * rows * g.wo];
    let mut dcols = vec![T::default(); k * rows * g.wo];
    let mut dw = vec![T::default(); g.cout * k];
    let mut dx = vec![T::default(); g.cin * g.h * g.w];
    let db = dz
        .chunks_exact(p)
        .map(|plane| {
            let mut s = T::default();
            for &v in plane {
                s += v;
            }
            s
        })
        .collect();
    let mut oy0 = 0;
    while oy0 < g.ho {
        let nrows = rows.min(g.ho - oy0);
        let pt = nrows * g.wo;
        let dz_tile = &dz[oy0 * g.wo..];
        im2col_rows(x, g, oy0, nrows, &mut cols);
        gemm(g.cout, pt, k, (dz_tile, p, 1), (&cols[..k * pt], 1, pt), T::ONE, (&mut dw, k, 1));
        gemm(k, g.cout, pt, (weights, 1, k), (dz_tile, p, 1), T::default(), (&mut dcols[..k * pt], pt, 1));
        col2im_rows(&dcols, g, oy0, nrows, &mut dx);
        oy0 += nrows;
    }
    (dw, db, dx)
}
