//! Numeric kernels behind the graph operations.
//!
//! All kernels are bitwise deterministic under any thread count: every output
//! element is produced by exactly one serial reduction, and parallelism only
//! splits disjoint output regions. Matrix products use explicit `mul_add`
//! with multi-accumulator unrolling so LLVM emits vector FMAs.

use crate::error::{Error, Result};
use crate::special;
use rayon::prelude::*;

/// Below this many multiply-adds a product is not worth parallelizing.
const PAR_FLOPS: usize = 1 << 17;

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

/// out = a (m x k) * b (k x n). Overwrites out.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if n == 0 || m == 0 {
        return;
    }
    if m * k * n < PAR_FLOPS || m < 8 {
        nn_block(a, b, out, m, k, n);
        return;
    }
    let threads = rayon::current_num_threads().max(1);
    let band = m.div_ceil(threads * 4).max(4);
    out.par_chunks_mut(band * n)
        .enumerate()
        .for_each(|(bi, oc)| {
            let i0 = bi * band;
            let rows = oc.len() / n;
            nn_block(&a[i0 * k..(i0 + rows) * k], b, oc, rows, k, n);
        });
}

/// Serial band of the nn product: 4-row outer-product microkernel.
fn nn_block(a: &[f64], b: &[f64], out: &mut [f64], rows: usize, k: usize, n: usize) {
    out.fill(0.0);
    let mut i = 0;
    while i + 4 <= rows {
        let (o0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        let (r0, r1, r2, r3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for p in 0..k {
            let (c0, c1, c2, c3) = (r0[p], r1[p], r2[p], r3[p]);
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                o0[j] = c0.mul_add(br[j], o0[j]);
                o1[j] = c1.mul_add(br[j], o1[j]);
                o2[j] = c2.mul_add(br[j], o2[j]);
                o3[j] = c3.mul_add(br[j], o3[j]);
            }
        }
        i += 4;
    }
    while i < rows {
        let o = &mut out[i * n..(i + 1) * n];
        let r = &a[i * k..(i + 1) * k];
        for p in 0..k {
            let c = r[p];
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                o[j] = c.mul_add(br[j], o[j]);
            }
        }
        i += 1;
    }
}

/// Dot product with 8 independent accumulators, reduced in fixed order.
fn dot8(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xb = &x[c * 8..c * 8 + 8];
        let yb = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = xb[l].mul_add(yb[l], acc[l]);
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for p in chunks * 8..x.len() {
        s = x[p].mul_add(y[p], s);
    }
    s
}

/// out = a (m x k) * b^T where b is stored (n x k). `acc` adds into out
/// instead of overwriting.
pub(crate) fn matmul_nt(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    acc: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let body = |(i, orow): (usize, &mut [f64])| {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let d = dot8(ar, &b[j * k..(j + 1) * k]);
            if acc {
                orow[j] += d;
            } else {
                orow[j] = d;
            }
        }
    };
    if m * k * n < PAR_FLOPS || m < 8 {
        out.chunks_mut(n).enumerate().for_each(body);
    } else {
        out.par_chunks_mut(n).enumerate().for_each(body);
    }
}

/// Row-major transpose of a (rows x cols) into a new buffer (cols x rows).
pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    const B: usize = 32;
    for ib in (0..rows).step_by(B) {
        for jb in (0..cols).step_by(B) {
            for i in ib..(ib + B).min(rows) {
                for j in jb..(jb + B).min(cols) {
                    out[j * rows + i] = a[i * cols + j];
                }
            }
        }
    }
    out
}

/// out = a^T * b where a is stored (m x k) and b (m x n); result (k x n).
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    let at = transpose(a, m, k);
    matmul_nn(&at, b, out, k, m, n);
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) via im2col
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvDims {
    pub fn in_image(&self) -> usize {
        self.c * self.h * self.w
    }
    pub fn out_image(&self) -> usize {
        self.f * self.ho * self.wo
    }
    pub fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }
    pub fn out_hw(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn conv_dims(
    x_shape: &[usize; 4],
    w_shape: &[usize; 4],
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let [n, c, h, w] = *x_shape;
    let [f, wc, kh, kw] = *w_shape;
    if wc != c {
        return Err(Error::Shape {
            op: "conv2d",
            details: format!("input has {c} channels, kernel expects {wc}"),
        });
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be >= 1".into()));
    }
    if kh == 0 || kw == 0 {
        return Err(Error::Config("conv2d kernel extents must be >= 1".into()));
    }
    let span_h = h + 2 * padding;
    let span_w = w + 2 * padding;
    if span_h < kh || span_w < kw {
        return Err(Error::Config(format!(
            "conv2d output extent is not positive: input {h}x{w}, padding {padding}, kernel {kh}x{kw}"
        )));
    }
    Ok(ConvDims {
        n,
        c,
        h,
        w,
        f,
        kh,
        kw,
        stride,
        padding,
        ho: (span_h - kh) / stride + 1,
        wo: (span_w - kw) / stride + 1,
    })
}

/// Unrolls one image (C,H,W) into the patch matrix (C*kh*kw, Ho*Wo).
/// Padding positions contribute zeros.
pub(crate) fn im2col(x: &[f64], d: &ConvDims, col: &mut [f64]) {
    debug_assert_eq!(x.len(), d.in_image());
    debug_assert_eq!(col.len(), d.col_rows() * d.out_hw());
    let (h, w, wo, s, p) = (d.h, d.w, d.wo, d.stride, d.padding);
    for c in 0..d.c {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * d.out_hw();
                for oh in 0..d.ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    let dst = &mut col[row + oh * wo..row + (oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let xrow = &xc[ih as usize * w..(ih as usize + 1) * w];
                    if s == 1 {
                        // iw = ow + kj - p; valid ow in [lo, hi)
                        let lo = p.saturating_sub(kj).min(wo);
                        let hi = (w + p - kj).min(wo).max(lo);
                        dst[..lo].fill(0.0);
                        dst[lo..hi].copy_from_slice(&xrow[lo + kj - p..hi + kj - p]);
                        dst[hi..].fill(0.0);
                    } else {
                        for (ow, d_el) in dst.iter_mut().enumerate() {
                            let iw = (ow * s + kj) as isize - p as isize;
                            *d_el = if iw >= 0 && iw < w as isize {
                                xrow[iw as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto one image gradient.
pub(crate) fn col2im_add(col: &[f64], d: &ConvDims, gx: &mut [f64]) {
    debug_assert_eq!(gx.len(), d.in_image());
    let (h, w, wo, s, p) = (d.h, d.w, d.wo, d.stride, d.padding);
    for c in 0..d.c {
        let gc = &mut gx[c * h * w..(c + 1) * h * w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * d.out_hw();
                for oh in 0..d.ho {
                    let ih = (oh * s + ki) as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &col[row + oh * wo..row + (oh + 1) * wo];
                    let grow = &mut gc[ih as usize * w..(ih as usize + 1) * w];
                    if s == 1 {
                        let lo = p.saturating_sub(kj).min(wo);
                        let hi = (w + p - kj).min(wo).max(lo);
                        for ow in lo..hi {
                            grow[ow + kj - p] += src[ow];
                        }
                    } else {
                        for (ow, &v) in src.iter().enumerate() {
                            let iw = (ow * s + kj) as isize - p as isize;
                            if iw >= 0 && iw < w as isize {
                                grow[iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation with optional per-filter bias.
pub(crate) fn conv2d_forward(x: &[f64], wt: &[f64], bias: Option<&[f64]>, d: &ConvDims, out: &mut [f64]) {
    debug_assert_eq!(out.len(), d.n * d.out_image());
    let run = |(xi, oi): (&[f64], &mut [f64])| {
        let mut col = vec![0.0; d.col_rows() * d.out_hw()];
        im2col(xi, d, &mut col);
        matmul_nn(wt, &col, oi, d.f, d.col_rows(), d.out_hw());
        if let Some(b) = bias {
            for f in 0..d.f {
                let orow = &mut oi[f * d.out_hw()..(f + 1) * d.out_hw()];
                for v in orow.iter_mut() {
                    *v += b[f];
                }
            }
        }
    };
    if d.n >= 2 && d.n * d.f * d.col_rows() * d.out_hw() >= PAR_FLOPS {
        x.par_chunks(d.in_image())
            .zip(out.par_chunks_mut(d.out_image()))
            .for_each(run);
    } else {
        x.chunks(d.in_image())
            .zip(out.chunks_mut(d.out_image()))
            .for_each(run);
    }
}

/// Gradients of conv2d. Any of the output buffers may be absent. `gx` and
/// `gw`/`gb` are accumulated into (+=). Serial over images so the kernel
/// accumulation order is fixed.
pub(crate) fn conv2d_backward(
    x: &[f64],
    wt: &[f64],
    gout: &[f64],
    d: &ConvDims,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
) {
    let wt_t = if gx.is_some() {
        Some(transpose(wt, d.f, d.col_rows()))
    } else {
        None
    };
    let mut col = vec![0.0; d.col_rows() * d.out_hw()];
    let mut gcol = vec![0.0; d.col_rows() * d.out_hw()];
    for img in 0..d.n {
        let go = &gout[img * d.out_image()..(img + 1) * d.out_image()];
        if let Some(gb) = gb.as_deref_mut() {
            for f in 0..d.f {
                let mut s = 0.0;
                for &g in &go[f * d.out_hw()..(f + 1) * d.out_hw()] {
                    s += g;
                }
                gb[f] += s;
            }
        }
        if gw.is_some() || gx.is_some() {
            if let Some(gw) = gw.as_deref_mut() {
                let xi = &x[img * d.in_image()..(img + 1) * d.in_image()];
                im2col(xi, d, &mut col);
                // gw[f, r] += sum_hw go[f, hw] col[r, hw]
                matmul_nt(go, &col, gw, d.f, d.out_hw(), d.col_rows(), true);
            }
            if let Some(gx) = gx.as_deref_mut() {
                let wt_t = wt_t.as_ref().unwrap();
                matmul_nn(wt_t, go, &mut gcol, d.col_rows(), d.f, d.out_hw());
                col2im_add(&gcol, d, &mut gx[img * d.in_image()..(img + 1) * d.in_image()]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Max pooling
// ---------------------------------------------------------------------------

pub(crate) fn pool_dims(
    x_shape: &[usize; 4],
    k: usize,
    stride: usize,
) -> Result<(usize, usize)> {
    let [_, _, h, w] = *x_shape;
    if k == 0 || stride == 0 {
        return Err(Error::Config("maxpool2d window and stride must be >= 1".into()));
    }
    if k > h || k > w {
        return Err(Error::Config(format!(
            "maxpool2d window {k} does not fit input {h}x{w}"
        )));
    }
    Ok(((h - k) / stride + 1, (w - k) / stride + 1))
}

/// Windowed maximum; `argmax` records the within-image flat index of the
/// first maximal element (row-major window order) for the backward pass.
pub(crate) fn maxpool2d_forward(
    x: &[f64],
    shape: &[usize; 4],
    k: usize,
    stride: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let [n, c, h, w] = *shape;
    let ho = (h - k) / stride + 1;
    let wo = (w - k) / stride + 1;
    debug_assert_eq!(out.len(), n * c * ho * wo);
    let mut o = 0;
    for img in 0..n {
        for ch in 0..c {
            let base = (img * c + ch) * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let (i0, j0) = (oh * stride, ow * stride);
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0u32;
                    for di in 0..k {
                        let row = base + (i0 + di) * w + j0;
                        for dj in 0..k {
                            let v = x[row + dj];
                            if v > best {
                                best = v;
                                at = (ch * h * w + (i0 + di) * w + j0 + dj) as u32;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = at;
                    o += 1;
                }
            }
        }
    }
}

pub(crate) fn maxpool2d_backward(
    argmax: &[u32],
    gout: &[f64],
    gx: &mut [f64],
    n: usize,
    in_image: usize,
) {
    let per_img = gout.len() / n;
    for img in 0..n {
        for e in 0..per_img {
            let o = img * per_img + e;
            gx[img * in_image + argmax[o] as usize] += gout[o];
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise and loss kernels
// ---------------------------------------------------------------------------

pub(crate) fn relu_forward(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > 0.0 { v } else { 0.0 };
    }
}

/// Mask from the *output* values: out > 0 iff in > 0, and the convention at
/// exactly 0 is a zero subgradient either way.
pub(crate) fn relu_backward(out_vals: &[f64], g: &[f64], gx: &mut [f64]) {
    for i in 0..g.len() {
        if out_vals[i] > 0.0 {
            gx[i] += g[i];
        }
    }
}

/// Mean cross-entropy with max-subtracted softmax. Returns the loss and the
/// softmax probabilities (saved for the backward pass).
pub(crate) fn softmax_ce_forward(
    logits: &[f64],
    labels: &[usize],
    n: usize,
    d: usize,
) -> Result<(f64, Vec<f64>)> {
    let mut probs = vec![0.0; n * d];
    let mut total = 0.0;
    for i in 0..n {
        let y = labels[i];
        if y >= d {
            return Err(Error::Index(format!(
                "label {y} out of range for {d} classes (row {i})"
            )));
        }
        let row = &logits[i * d..(i + 1) * d];
        let p = &mut probs[i * d..(i + 1) * d];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..d {
            p[j] = (row[j] - mx).exp();
            z += p[j];
        }
        for v in p.iter_mut() {
            *v /= z;
        }
        total += z.ln() - (row[y] - mx);
    }
    Ok((total / n as f64, probs))
}

pub(crate) fn softmax_ce_backward(
    probs: &[f64],
    labels: &[usize],
    n: usize,
    d: usize,
    g: f64,
    gx: &mut [f64],
) {
    let scale = g / n as f64;
    for i in 0..n {
        for j in 0..d {
            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
            gx[i * d + j] += scale * (probs[i * d + j] - onehot);
        }
    }
}

/// Gaussian-ReLU mean T(mu, sigma) = mu*CDF(r) + sigma*PDF(r), r = mu/sigma,
/// with the exact ReLU branch at sigma == 0. Saves CDF(r) and PDF(r): they
/// are the closed-form partials used by the backward pass. `sigma` is either
/// the same length as `mu` or one "row" broadcast across `rows` blocks.
pub(crate) fn relu_gauss_mean_forward(
    mu: &[f64],
    sigma: &[f64],
    rows: usize,
    out: &mut [f64],
    phi: &mut [f64],
    pdf: &mut [f64],
) {
    let l = sigma.len();
    debug_assert_eq!(mu.len(), rows * l);
    for r in 0..rows {
        let base = r * l;
        for e in 0..l {
            let (m, s) = (mu[base + e], sigma[e]);
            let (t, c, p) = relu_gauss_mean_scalar(m, s);
            out[base + e] = t;
            phi[base + e] = c;
            pdf[base + e] = p;
        }
    }
}

/// Returns (T, dT/dmu, dT/dsigma) at one point.
pub(crate) fn relu_gauss_mean_scalar(m: f64, s: f64) -> (f64, f64, f64) {
    if s == 0.0 {
        let t = if m > 0.0 { m } else { 0.0 };
        let c = if m > 0.0 { 1.0 } else { 0.0 };
        // sigma -> 0+ limit of PDF(mu/sigma): nonzero only at mu == 0.
        let p = if m == 0.0 { special::INV_SQRT_2PI } else { 0.0 };
        (t, c, p)
    } else {
        let r = m / s;
        let c = special::normal_cdf(r);
        let p = special::normal_pdf(r);
        (m.mul_add(c, s * p), c, p)
    }
}

pub(crate) fn relu_gauss_mean_backward(
    phi: &[f64],
    pdf: &[f64],
    g: &[f64],
    rows: usize,
    gmu: Option<&mut [f64]>,
    gsigma: Option<&mut [f64]>,
) {
    if let Some(gmu) = gmu {
        for i in 0..g.len() {
            gmu[i] += g[i] * phi[i];
        }
    }
    if let Some(gsigma) = gsigma {
        let l = g.len() / rows;
        for r in 0..rows {
            for e in 0..l {
                gsigma[e] += g[r * l + e] * pdf[r * l + e];
            }
        }
    }
}
