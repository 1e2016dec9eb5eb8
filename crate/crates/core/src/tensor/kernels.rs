// Raw forward/backward kernels on flat slices. Shapes are validated by the
// graph before these are called.

use crate::par;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    // Output columns `ox` whose input column `ox*stride + k - pad` lies in [0, len).
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len-1
        let top = len as isize - 1 - off;
        if top < 0 {
            return (0, 0);
        }
        let hi = (top / s + 1).min(out_len as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample into a `[C*kh*kw, oh*ow]` patch matrix, zero where the
/// window overlaps the padding.
fn im2col(sample: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut col = Vec::with_capacity(g.rows() * g.out_plane());
    for c in 0..g.c {
        let src = &sample[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                col.resize(col.len() + oy_lo * g.ow, 0.0);
                for oy in oy_lo..oy_hi {
                    let row = &src[(oy * g.stride + ky - g.pad) * g.w..][..g.w];
                    col.resize(col.len() + ox_lo, 0.0);
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        col.extend_from_slice(&row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        col.extend((ox_lo..ox_hi).map(|ox| row[ox * g.stride + kx - g.pad]));
                    }
                    col.resize(col.len() + g.ow - ox_hi, 0.0);
                }
                col.resize(col.len() + (g.oh - oy_hi) * g.ow, 0.0);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: adds patch-matrix entries back onto the sample.
fn col2im_add(col: &[f64], sample: &mut [f64], g: &ConvGeom) {
    let p = g.out_plane();
    for c in 0..g.c {
        let dst = &mut sample[c * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid_range(kx, g.w, g.ow);
                let src = &col[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let row = &mut dst[(oy * g.stride + ky - g.pad) * g.w..][..g.w];
                    let srow = &src[oy * g.ow..][..g.ow];
                    for ox in ox_lo..ox_hi {
                        row[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

fn patch_matrices(input: &[f64], g: &ConvGeom) -> Vec<Vec<f64>> {
    let sample = g.c * g.h * g.w;
    par::map_indexed(g.n, |n| im2col(&input[n * sample..][..sample], g))
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn conv2d_forward(input: &[f64], kernel: &[f64], bias: &[f64], g: ConvGeom) -> Vec<f64> {
    let (p, rows) = (g.out_plane(), g.rows());
    let sample = g.c * g.h * g.w;
    let mut out = vec![0.0; g.n * g.f * p];
    par::for_each_chunk_mut(&mut out, g.f * p, |n, dst| {
        let col = im2col(&input[n * sample..][..sample], &g);
        for (f, plane) in dst.chunks_exact_mut(p).enumerate() {
            plane.fill(bias[f]);
        }
        // each patch row is read once and applied to every filter
        for r in 0..rows {
            let x = &col[r * p..][..p];
            for (f, plane) in dst.chunks_exact_mut(p).enumerate() {
                axpy(plane, kernel[f * rows + r], x);
            }
        }
    });
    out
}

/// Gradient with respect to the convolution input.
pub(crate) fn conv2d_backward_input(kernel: &[f64], gout: &[f64], g: ConvGeom) -> Vec<f64> {
    let (p, rows) = (g.out_plane(), g.rows());
    let sample = g.c * g.h * g.w;
    let mut gin = vec![0.0; g.n * sample];
    par::for_each_chunk_mut(&mut gin, sample, |n, dst| {
        let go = &gout[n * g.f * p..][..g.f * p];
        let mut dcol = Vec::with_capacity(rows * p);
        for r in 0..rows {
            let k0 = kernel[r];
            dcol.extend(go[..p].iter().map(|v| k0 * v));
            let drow = &mut dcol[r * p..];
            for (f, gplane) in go.chunks_exact(p).enumerate().skip(1) {
                axpy(drow, kernel[f * rows + r], gplane);
            }
        }
        col2im_add(&dcol, dst, &g);
    });
    gin
}

/// Gradient with respect to the kernel. Computed as `[rows, F]` so each
/// patch row is read once per sample, then transposed.
pub(crate) fn conv2d_backward_kernel(input: &[f64], gout: &[f64], g: ConvGeom) -> Vec<f64> {
    let (p, rows) = (g.out_plane(), g.rows());
    let cols = patch_matrices(input, &g);
    let mut gt = vec![0.0; rows * g.f];
    par::for_each_chunk_mut(&mut gt, g.f, |r, dst| {
        for (n, col) in cols.iter().enumerate() {
            let x = &col[r * p..][..p];
            for (f, d) in dst.iter_mut().enumerate() {
                *d += dot(&gout[(n * g.f + f) * p..][..p], x);
            }
        }
    });
    let mut gk = vec![0.0; g.f * rows];
    for r in 0..rows {
        for f in 0..g.f {
            gk[f * rows + r] = gt[r * g.f + f];
        }
    }
    gk
}

pub(crate) fn conv2d_backward_bias(gout: &[f64], g: ConvGeom) -> Vec<f64> {
    let plane = g.oh * g.ow;
    let mut gb = vec![0.0; g.f];
    for n in 0..g.n {
        for (f, b) in gb.iter_mut().enumerate() {
            *b += gout[(n * g.f + f) * plane..][..plane].iter().sum::<f64>();
        }
    }
    gb
}

/// Channel-axis log-softmax over `[n, k, plane]` laid out row-major.
pub(crate) fn log_softmax(input: &[f64], n: usize, k: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    par::for_each_chunk_mut(&mut out, k * plane, |s, dst| {
        let src = &input[s * k * plane..][..k * plane];
        for p in 0..plane {
            let max = (0..k)
                .map(|c| src[c * plane + p])
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..k).map(|c| (src[c * plane + p] - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..k {
                dst[c * plane + p] = src[c * plane + p] - lse;
            }
        }
    });
    debug_assert_eq!(out.len(), n * k * plane);
    out
}

pub(crate) fn log_softmax_backward(out: &[f64], gout: &[f64], k: usize, plane: usize) -> Vec<f64> {
    let mut gin = vec![0.0; out.len()];
    par::for_each_chunk_mut(&mut gin, k * plane, |s, dst| {
        let o = &out[s * k * plane..][..k * plane];
        let go = &gout[s * k * plane..][..k * plane];
        for p in 0..plane {
            let total: f64 = (0..k).map(|c| go[c * plane + p]).sum();
            for c in 0..k {
                let i = c * plane + p;
                dst[i] = go[i] - o[i].exp() * total;
            }
        }
    });
    gin
}

pub(crate) fn upsample_nearest(input: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0; planes * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
        let src = &input[p * h * w..][..h * w];
        for oy in 0..oh {
            let row = &src[(oy / factor) * w..][..w];
            for (ox, d) in dst[oy * ow..][..ow].iter_mut().enumerate() {
                *d = row[ox / factor];
            }
        }
    });
    out
}

/// Sums each `factor x factor` block; the adjoint of nearest upsampling.
pub(crate) fn block_sum(input: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0.0; planes * oh * ow];
    par::for_each_chunk_mut(&mut out, oh * ow, |p, dst| {
        let src = &input[p * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                dst[(y / factor) * ow + x / factor] += src[y * w + x];
            }
        }
    });
    out
}

pub(crate) fn linear_forward(input: &[f64], weight: &[f64], bias: &[f64], n: usize, c: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for s in 0..n {
        let x = &input[s * c..][..c];
        for j in 0..m {
            let wr = &weight[j * c..][..c];
            out[s * m + j] = bias[j] + wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], kernel: &[f64], bias: &[f64], g: ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.f * g.oh * g.ow];
        for n in 0..g.n {
            for f in 0..g.f {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = bias[f];
                        for c in 0..g.c {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    acc += kernel[((f * g.c + c) * g.kh + ky) * g.kw + kx]
                                        * input[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize];
                                }
                            }
                        }
                        out[((n * g.f + f) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop_including_strides() {
        for &(h, w, k, stride, pad) in &[(5, 7, 3, 1, 1), (7, 7, 3, 2, 0), (9, 5, 5, 2, 2), (4, 4, 1, 1, 0)] {
            let (n, c, f) = (2, 3, 2);
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let g = ConvGeom { n, c, h, w, f, kh: k, kw: k, stride, pad, oh, ow };
            let input: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let kernel: Vec<f64> = (0..f * c * k * k).map(|i| ((i * 13) % 7) as f64 * 0.25 - 0.5).collect();
            let bias = vec![0.5, -1.0];
            assert_eq!(conv2d_forward(&input, &kernel, &bias, g), naive_conv(&input, &kernel, &bias, g));
        }
    }
}
