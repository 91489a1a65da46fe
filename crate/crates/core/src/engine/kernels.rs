//! Slice-level numeric kernels behind the graph ops.
//!
//! Convolutions use the cross-correlation convention (no kernel flip) and are
//! lowered to im2col followed by row-major matrix products.

/// Geometry of a 2-D convolution over a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding.0 - self.kh) / self.stride.0 + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding.1 - self.kw) / self.stride.1 + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Output columns `x` whose input column `x·stride + k − pad` lies inside
/// `0..width`.
#[inline]
fn valid_range(out: usize, width: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    // first x with x·s + k ≥ pad, first x with x·s + k ≥ pad + width
    let first_at = |bound: usize| {
        if k >= bound {
            0
        } else {
            (bound - k).div_ceil(stride)
        }
    };
    let lo = first_at(pad).min(out);
    let hi = first_at(pad + width).clamp(lo, out);
    (lo, hi)
}

/// Unfolds `input` (C×H×W) into a `(C·kh·kw) × (OH·OW)` matrix.
pub fn im2col(input: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    im2col_band(input, g, 0, g.out_height(), cols);
}

/// [`im2col`] restricted to output rows `y0..y1`; `cols` is
/// `(C·kh·kw) × ((y1−y0)·OW)`.
pub fn im2col_band(input: &[f64], g: &ConvGeom, y0: usize, y1: usize, cols: &mut [f64]) {
    let (oh, ow) = (y1 - y0, g.out_width());
    let (sh, sw) = g.stride;
    let ph = g.padding.0 as isize;
    debug_assert_eq!(cols.len(), g.col_rows() * oh * ow);
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_range(ow, g.width, sw, kj, g.padding.1);
                for y in 0..oh {
                    let iy = ((y + y0) * sh + ki) as isize - ph;
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if hi > lo {
                        let start = lo * sw + kj - g.padding.1;
                        if sw == 1 {
                            line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (out, ix) in line[lo..hi].iter_mut().zip((start..).step_by(sw)) {
                                *out = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a C×H×W buffer.
pub fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    col2im_band(cols, g, 0, g.out_height(), out);
}

/// Adjoint of [`im2col_band`].
pub fn col2im_band(cols: &[f64], g: &ConvGeom, y0: usize, y1: usize, out: &mut [f64]) {
    let (oh, ow) = (y1 - y0, g.out_width());
    let (sh, sw) = g.stride;
    let ph = g.padding.0 as isize;
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                let (lo, hi) = valid_range(ow, g.width, sw, kj, g.padding.1);
                if hi <= lo {
                    continue;
                }
                let start = lo * sw + kj - g.padding.1;
                for y in 0..oh {
                    let iy = ((y + y0) * sh + ki) as isize - ph;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[y * ow + lo..y * ow + hi];
                    if sw == 1 {
                        for (d, v) in dst[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (v, ix) in line.iter().zip((start..).step_by(sw)) {
                            dst[ix] += v;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot product with four independent accumulators, combined in fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// `y += a0·x0 + a1·x1 + a2·x2 + a3·x3`, one pass over `y`.
#[inline]
fn axpy4(a: [f64; 4], x: [&[f64]; 4], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for j in 0..n {
        y[j] += a[0] * x0[j] + a[1] * x1[j] + a[2] * x2[j] + a[3] * x3[j];
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let row = |p: usize| &b[p * n..(p + 1) * n];
    let k4 = k / 4 * 4;
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for p in (0..k4).step_by(4) {
            axpy4(
                [arow[p], arow[p + 1], arow[p + 2], arow[p + 3]],
                [row(p), row(p + 1), row(p + 2), row(p + 3)],
                crow,
            );
        }
        for (p, &ap) in arow.iter().enumerate().skip(k4) {
            axpy(ap, row(p), crow);
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let row = |p: usize| &b[p * n..(p + 1) * n];
    let k4 = k / 4 * 4;
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in (0..k4).step_by(4) {
            axpy4(
                [a[p * m + i], a[(p + 1) * m + i], a[(p + 2) * m + i], a[(p + 3) * m + i]],
                [row(p), row(p + 1), row(p + 2), row(p + 3)],
                crow,
            );
        }
        for p in k4..k {
            axpy(a[p * m + i], row(p), crow);
        }
    }
}

/// `c[m×n] += a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Output rows per im2col band, sized so one band stays cache-resident.
fn band_rows(g: &ConvGeom) -> usize {
    const BAND_ELEMS: usize = 16 * 1024;
    (BAND_ELEMS / (g.col_rows() * g.out_width()).max(1)).clamp(1, g.out_height().max(1))
}

/// Forward convolution over a batch. `input` is N×C×H×W, `weight` O×C×kh×kw.
pub fn conv2d_forward(input: &[f64], batch: usize, weight: &[f64], out_ch: usize, g: &ConvGeom) -> Vec<f64> {
    let in_len = g.channels * g.height * g.width;
    let (rows, ncols, ow) = (g.col_rows(), g.col_cols(), g.out_width());
    let band = band_rows(g);
    let mut out = vec![0.0; batch * out_ch * ncols];
    let mut cols = vec![0.0; rows * band * ow];
    let mut tile = vec![0.0; out_ch * band * ow];
    for b in 0..batch {
        let x = &input[b * in_len..(b + 1) * in_len];
        let y_out = &mut out[b * out_ch * ncols..(b + 1) * out_ch * ncols];
        for y0 in (0..g.out_height()).step_by(band) {
            let y1 = (y0 + band).min(g.out_height());
            let w = (y1 - y0) * ow;
            im2col_band(x, g, y0, y1, &mut cols[..rows * w]);
            let t = &mut tile[..out_ch * w];
            t.fill(0.0);
            gemm_nn(out_ch, rows, w, weight, &cols[..rows * w], t);
            for o in 0..out_ch {
                y_out[o * ncols + y0 * ow..o * ncols + y1 * ow].copy_from_slice(&t[o * w..(o + 1) * w]);
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and weight.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    batch: usize,
    weight: &[f64],
    out_ch: usize,
    g: &ConvGeom,
    grad_out: &[f64],
    want_input: bool,
    want_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let in_len = g.channels * g.height * g.width;
    let (rows, ncols, ow) = (g.col_rows(), g.col_cols(), g.out_width());
    let band = band_rows(g);
    let mut grad_in = want_input.then(|| vec![0.0; batch * in_len]);
    let mut grad_w = want_weight.then(|| vec![0.0; out_ch * rows]);
    let mut cols = vec![0.0; rows * band * ow];
    let mut tile = vec![0.0; out_ch * band * ow];
    for b in 0..batch {
        let go = &grad_out[b * out_ch * ncols..(b + 1) * out_ch * ncols];
        for y0 in (0..g.out_height()).step_by(band) {
            let y1 = (y0 + band).min(g.out_height());
            let w = (y1 - y0) * ow;
            let t = &mut tile[..out_ch * w];
            for o in 0..out_ch {
                t[o * w..(o + 1) * w].copy_from_slice(&go[o * ncols + y0 * ow..o * ncols + y1 * ow]);
            }
            let c = &mut cols[..rows * w];
            if let Some(gw) = grad_w.as_mut() {
                im2col_band(&input[b * in_len..(b + 1) * in_len], g, y0, y1, c);
                gemm_nt(out_ch, w, rows, t, c, gw);
            }
            if let Some(gi) = grad_in.as_mut() {
                c.fill(0.0);
                gemm_tn(rows, out_ch, w, weight, t, c);
                col2im_band(c, g, y0, y1, &mut gi[b * in_len..(b + 1) * in_len]);
            }
        }
    }
    (grad_in, grad_w)
}
