//! Convolution kernels, all expressed through one im2col/col2im pair plus a
//! row-accumulating matrix product:
//!
//!   conv2d            out  = K  . cols(x)        K: (Cout, Cin*Kh*Kw)
//!   conv2d d_input    d_x  = col2im(K^T . g)
//!   conv2d d_kernel   d_K  = g . cols(x)^T
//!   transpose fwd     out  = col2im(K'^T . x)    K': (Cin, Cout*Kh*Kw)
//!   transpose d_input d_x  = K' . cols(g)
//!   transpose d_kernel d_K'= x . cols(g)^T
//!
//! `cols` gathers over a grid of positions whose taps map into a source
//! plane by `src = grid * stride + k - padding`; `col2im` is its scatter
//! adjoint. Work splits over independent output rows or planes and every
//! accumulation runs in a fixed order, so results are bitwise reproducible
//! at any thread count. Column chunks bound the scratch memory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Output extent of a strided convolution along one axis.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Scratch budget per im2col buffer, in elements.
const COLS_BUDGET: usize = 1 << 20;

#[derive(Clone, Copy)]
struct TapGeometry {
    grid_h: usize,
    grid_w: usize,
    src_h: usize,
    src_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
}

impl TapGeometry {
    fn cols_per_chunk(&self, channels: usize) -> usize {
        let rows = channels * self.kh * self.kw;
        let total = (self.grid_h * self.grid_w).max(1);
        (COLS_BUDGET / rows.max(1)).max(64).min(total)
    }
}

/// Gather `cols[(c, ky, kx), col - col0] = src[c, gy*s + ky - p, gx*s + kx - p]`
/// (zero outside) for the flattened grid positions `col in [col0, col1)`.
fn im2col_chunk<T: Scalar>(
    src: &[T],
    channels: usize,
    geo: &TapGeometry,
    col0: usize,
    col1: usize,
    cols: &mut [T],
) {
    let n = col1 - col0;
    let (kh, kw, stride, pad) = (geo.kh, geo.kw, geo.stride, geo.padding);
    let (sh, sw, gw) = (geo.src_h, geo.src_w, geo.grid_w);
    cols.par_chunks_mut(kh * kw * n)
        .enumerate()
        .for_each(|(c, chan_rows)| {
            let plane = &src[c * sh * sw..][..sh * sw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &mut chan_rows[(ky * kw + kx) * n..][..n];
                    let mut col = col0;
                    let mut i = 0usize;
                    while i < n {
                        let gy = col / gw;
                        let gx = col % gw;
                        // Run length to the end of this grid row or chunk.
                        let run = (gw - gx).min(n - i);
                        let sy = (gy * stride + ky) as isize - pad as isize;
                        if sy < 0 || sy >= sh as isize {
                            row[i..i + run].fill(T::ZERO);
                        } else {
                            let src_row = &plane[sy as usize * sw..][..sw];
                            // sx = gx' * stride + kx - pad for gx' in [gx, gx+run)
                            for (j, slot) in row[i..i + run].iter_mut().enumerate() {
                                let sx = ((gx + j) * stride + kx) as isize - pad as isize;
                                *slot = if sx < 0 || sx >= sw as isize {
                                    T::ZERO
                                } else {
                                    src_row[sx as usize]
                                };
                            }
                        }
                        i += run;
                        col += run;
                    }
                }
            }
        });
}

/// Scatter-add adjoint of [`im2col_chunk`]: `dst[c, sy, sx] += cols[...]`.
/// Parallel over channels (each channel owns its plane), sequential within.
fn col2im_add_chunk<T: Scalar>(
    cols: &[T],
    channels: usize,
    geo: &TapGeometry,
    col0: usize,
    col1: usize,
    dst: &mut [T],
) {
    let n = col1 - col0;
    let (kh, kw, stride, pad) = (geo.kh, geo.kw, geo.stride, geo.padding);
    let (sh, sw, gw) = (geo.src_h, geo.src_w, geo.grid_w);
    dst.par_chunks_mut(sh * sw)
        .take(channels)
        .enumerate()
        .for_each(|(c, plane)| {
            let chan_rows = &cols[c * kh * kw * n..][..kh * kw * n];
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = &chan_rows[(ky * kw + kx) * n..][..n];
                    let mut col = col0;
                    let mut i = 0usize;
                    while i < n {
                        let gy = col / gw;
                        let gx = col % gw;
                        let run = (gw - gx).min(n - i);
                        let sy = (gy * stride + ky) as isize - pad as isize;
                        if sy >= 0 && sy < sh as isize {
                            let dst_row = &mut plane[sy as usize * sw..][..sw];
                            for (j, &v) in row[i..i + run].iter().enumerate() {
                                let sx = ((gx + j) * stride + kx) as isize - pad as isize;
                                if sx >= 0 && sx < sw as isize {
                                    dst_row[sx as usize] += v;
                                }
                            }
                        }
                        i += run;
                        col += run;
                    }
                }
            }
        });
}

/// `dst[m, col0..col1] (+)= a[m, :] . b`, with `b` shaped `(k, n)`; `dst`
/// rows live in planes of `dst_stride` elements. Parallel over rows, inner
/// accumulation in fixed `k` order.
fn gemm_into_rows<T: Scalar>(
    a: &[T],
    m: usize,
    k: usize,
    b: &[T],
    n: usize,
    dst: &mut [T],
    dst_stride: usize,
    dst_off: usize,
    accumulate: bool,
) {
    dst.par_chunks_mut(dst_stride)
        .take(m)
        .enumerate()
        .for_each(|(i, dst_plane)| {
            let out = &mut dst_plane[dst_off..dst_off + n];
            if !accumulate {
                out.fill(T::ZERO);
            }
            let a_row = &a[i * k..][..k];
            for (kk, &aik) in a_row.iter().enumerate() {
                if aik == T::ZERO {
                    continue;
                }
                let b_row = &b[kk * n..][..n];
                for (o, &bv) in out.iter_mut().zip(b_row) {
                    *o += aik * bv;
                }
            }
        });
}

/// `dst[m, k] += rows[m, :] . cols[k, :]^T` where both operands share the
/// column extent `n`. Four-lane dot accumulation, fixed order.
fn gemm_abt_accumulate<T: Scalar>(
    rows: &[T],
    m: usize,
    cols: &[T],
    k: usize,
    n: usize,
    dst: &mut [T],
) {
    dst.par_chunks_mut(k)
        .take(m)
        .enumerate()
        .for_each(|(i, dst_row)| {
            let a_row = &rows[i * n..][..n];
            for (kk, slot) in dst_row.iter_mut().enumerate() {
                let b_row = &cols[kk * n..][..n];
                let mut acc = [T::ZERO; 4];
                let mut j = 0usize;
                while j + 4 <= n {
                    acc[0] += a_row[j] * b_row[j];
                    acc[1] += a_row[j + 1] * b_row[j + 1];
                    acc[2] += a_row[j + 2] * b_row[j + 2];
                    acc[3] += a_row[j + 3] * b_row[j + 3];
                    j += 4;
                }
                let mut tail = T::ZERO;
                while j < n {
                    tail += a_row[j] * b_row[j];
                    j += 1;
                }
                *slot += ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
            }
        });
}

fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    transposed: bool,
) -> Result<()> {
    if input.rank() != 4 || kernel.rank() != 4 {
        return Err(Error::config(if transposed {
            "conv_transpose2d expects rank-4 input and kernel"
        } else {
            "conv2d expects rank-4 input and kernel"
        }));
    }
    if stride == 0 {
        return Err(Error::config("convolution stride must be >= 1"));
    }
    let cin = input.dim(1);
    let kcin = if transposed {
        kernel.dim(0)
    } else {
        kernel.dim(1)
    };
    if kcin != cin {
        return Err(Error::config(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    Ok(())
}

/// 2-D convolution (cross-correlation, the deep-learning convention).
/// `input` is `[B, Cin, H, W]`, `kernel` is `[Cout, Cin, Kh, Kw]`, zero
/// padding.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_conv_args(input, kernel, stride, false)?;
    let (b, cin, h, w) = dims4(input);
    let (cout, _, kh, kw) = dims4(kernel);
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::config(format!(
            "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let oh = conv_out_extent(h, kh, stride, padding);
    let ow = conv_out_extent(w, kw, stride, padding);
    let mut out = Tensor::zeros(&[b, cout, oh, ow]);
    if is_pointwise(kh, kw, stride, padding) {
        // 1x1 convolutions are plain channel-mixing products.
        for bi in 0..b {
            let src = &input.data()[bi * cin * h * w..][..cin * h * w];
            let dst = &mut out.data_mut()[bi * cout * h * w..][..cout * h * w];
            gemm_into_rows(kernel.data(), cout, cin, src, h * w, dst, h * w, 0, false);
        }
        return Ok(out);
    }
    let geo = TapGeometry {
        grid_h: oh,
        grid_w: ow,
        src_h: h,
        src_w: w,
        kh,
        kw,
        stride,
        padding,
    };
    let ckk = cin * kh * kw;
    let chunk = geo.cols_per_chunk(cin);
    let mut cols = vec![T::ZERO; ckk * chunk];
    for bi in 0..b {
        let src = &input.data()[bi * cin * h * w..][..cin * h * w];
        let mut col0 = 0;
        while col0 < oh * ow {
            let col1 = (col0 + chunk).min(oh * ow);
            im2col_chunk(src, cin, &geo, col0, col1, &mut cols[..ckk * (col1 - col0)]);
            let dst = &mut out.data_mut()[bi * cout * oh * ow..][..cout * oh * ow];
            gemm_into_rows(
                kernel.data(),
                cout,
                ckk,
                &cols[..ckk * (col1 - col0)],
                col1 - col0,
                dst,
                oh * ow,
                col0,
                false,
            );
            col0 = col1;
        }
    }
    Ok(out)
}

#[inline]
fn is_pointwise(kh: usize, kw: usize, stride: usize, padding: usize) -> bool {
    kh == 1 && kw == 1 && stride == 1 && padding == 0
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (b, cin, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (cout, _, kh, kw) = dims4(kernel);
    let (oh, ow) = (grad_out.dim(2), grad_out.dim(3));
    let geo = TapGeometry {
        grid_h: oh,
        grid_w: ow,
        src_h: h,
        src_w: w,
        kh,
        kw,
        stride,
        padding,
    };
    let ckk = cin * kh * kw;
    let chunk = geo.cols_per_chunk(cin);
    // K^T as (CKK, Cout): build once. kt[(ci,ky,kx), co] = K[co, ci, ky, kx]
    let mut kt = vec![T::ZERO; ckk * cout];
    for co in 0..cout {
        for j in 0..ckk {
            kt[j * cout + co] = kernel.data()[co * ckk + j];
        }
    }
    let mut d_cols = vec![T::ZERO; ckk * chunk];
    let mut out = Tensor::zeros(input_shape);
    for bi in 0..b {
        let g = &grad_out.data()[bi * cout * oh * ow..][..cout * oh * ow];
        let dst = &mut out.data_mut()[bi * cin * h * w..][..cin * h * w];
        let mut col0 = 0;
        while col0 < oh * ow {
            let col1 = (col0 + chunk).min(oh * ow);
            let n = col1 - col0;
            // d_cols = K^T . g[:, col0..col1]
            d_cols[..ckk * n]
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(j, row)| {
                    row.fill(T::ZERO);
                    for co in 0..cout {
                        let kv = kt[j * cout + co];
                        if kv == T::ZERO {
                            continue;
                        }
                        let g_row = &g[co * oh * ow + col0..][..n];
                        for (o, &gv) in row.iter_mut().zip(g_row) {
                            *o += kv * gv;
                        }
                    }
                });
            col2im_add_chunk(&d_cols[..ckk * n], cin, &geo, col0, col1, dst);
            col0 = col1;
        }
    }
    out
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_grad_kernel<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (b, cin, h, w) = dims4(input);
    let (cout, _, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
    );
    let (oh, ow) = (grad_out.dim(2), grad_out.dim(3));
    let geo = TapGeometry {
        grid_h: oh,
        grid_w: ow,
        src_h: h,
        src_w: w,
        kh,
        kw,
        stride,
        padding,
    };
    let ckk = cin * kh * kw;
    let chunk = geo.cols_per_chunk(cin);
    let mut cols = vec![T::ZERO; ckk * chunk];
    let mut out = Tensor::zeros(kernel_shape);
    for bi in 0..b {
        let src = &input.data()[bi * cin * h * w..][..cin * h * w];
        let g = &grad_out.data()[bi * cout * oh * ow..][..cout * oh * ow];
        let mut col0 = 0;
        while col0 < oh * ow {
            let col1 = (col0 + chunk).min(oh * ow);
            let n = col1 - col0;
            im2col_chunk(src, cin, &geo, col0, col1, &mut cols[..ckk * n]);
            // d_K[co, j] += g[co, chunk] . cols[j, chunk]^T
            let g_rows: Vec<T> = (0..cout)
                .flat_map(|co| g[co * oh * ow + col0..][..n].iter().copied())
                .collect();
            gemm_abt_accumulate(&g_rows, cout, &cols[..ckk * n], ckk, n, out.data_mut());
            col0 = col1;
        }
    }
    out
}

/// Transposed 2-D convolution (the adjoint of `conv2d`). `input` is
/// `[B, Cin, H, W]`, `kernel` is `[Cin, Cout, Kh, Kw]`; output extent is
/// `(H-1)*stride + Kh - 2*padding`.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_conv_args(input, kernel, stride, true)?;
    let (b, cin, h, w) = dims4(input);
    let (_, cout, kh, kw) = dims4(kernel);
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h < 2 * padding + 1 || full_w < 2 * padding + 1 {
        return Err(Error::config(format!(
            "conv_transpose2d output extent would be non-positive ({full_h}x{full_w} minus padding {padding})"
        )));
    }
    let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
    conv_transpose2d_into(input, kernel, stride, padding, oh, ow)
}

/// Transposed convolution with explicit output extents (needed when it acts
/// as the adjoint of a strided convolution whose extent arithmetic floors).
fn conv_transpose2d_into<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Result<Tensor<T>> {
    let (b, cin, h, w) = dims4(input);
    let (_, cout, kh, kw) = dims4(kernel);
    // Grid = input positions, source = output plane (scatter target).
    let geo = TapGeometry {
        grid_h: h,
        grid_w: w,
        src_h: oh,
        src_w: ow,
        kh,
        kw,
        stride,
        padding,
    };
    let okk = cout * kh * kw;
    let chunk = geo.cols_per_chunk(cout);
    // K'^T as (Cout*Kh*Kw, Cin): kt[(co,ky,kx), ci] = K'[ci, co, ky, kx]
    let mut kt = vec![T::ZERO; okk * cin];
    for ci in 0..cin {
        for j in 0..okk {
            kt[j * cin + ci] = kernel.data()[ci * okk + j];
        }
    }
    let mut cols = vec![T::ZERO; okk * chunk];
    let mut out = Tensor::zeros(&[b, cout, oh, ow]);
    for bi in 0..b {
        let x = &input.data()[bi * cin * h * w..][..cin * h * w];
        let dst = &mut out.data_mut()[bi * cout * oh * ow..][..cout * oh * ow];
        let mut col0 = 0;
        while col0 < h * w {
            let col1 = (col0 + chunk).min(h * w);
            let n = col1 - col0;
            // cols = K'^T . x[:, col0..col1]
            cols[..okk * n]
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(j, row)| {
                    row.fill(T::ZERO);
                    for ci in 0..cin {
                        let kv = kt[j * cin + ci];
                        if kv == T::ZERO {
                            continue;
                        }
                        let x_row = &x[ci * h * w + col0..][..n];
                        for (o, &xv) in row.iter_mut().zip(x_row) {
                            *o += kv * xv;
                        }
                    }
                });
            col2im_add_chunk(&cols[..okk * n], cout, &geo, col0, col1, dst);
            col0 = col1;
        }
    }
    Ok(out)
}

/// Gradient of `conv_transpose2d` w.r.t. its input: gather the output
/// gradient and contract with the kernel matrix.
pub fn conv_transpose2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    kernel: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (b, cin, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (_, cout, kh, kw) = dims4(kernel);
    let (goh, gow) = (grad_out.dim(2), grad_out.dim(3));
    let geo = TapGeometry {
        grid_h: h,
        grid_w: w,
        src_h: goh,
        src_w: gow,
        kh,
        kw,
        stride,
        padding,
    };
    let okk = cout * kh * kw;
    let chunk = geo.cols_per_chunk(cout);
    let mut cols = vec![T::ZERO; okk * chunk];
    let mut out = Tensor::zeros(input_shape);
    for bi in 0..b {
        let g = &grad_out.data()[bi * cout * goh * gow..][..cout * goh * gow];
        let dst = &mut out.data_mut()[bi * cin * h * w..][..cin * h * w];
        let mut col0 = 0;
        while col0 < h * w {
            let col1 = (col0 + chunk).min(h * w);
            let n = col1 - col0;
            im2col_chunk(g, cout, &geo, col0, col1, &mut cols[..okk * n]);
            // d_x[:, chunk] = K' . cols
            gemm_into_rows(
                kernel.data(),
                cin,
                okk,
                &cols[..okk * n],
                n,
                dst,
                h * w,
                col0,
                false,
            );
            col0 = col1;
        }
    }
    out
}

/// Gradient of `conv_transpose2d` w.r.t. its kernel.
pub fn conv_transpose2d_grad_kernel<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    let (b, cin, h, w) = dims4(input);
    let (_, cout, kh, kw) = (
        kernel_shape[0],
        kernel_shape[1],
        kernel_shape[2],
        kernel_shape[3],
    );
    let (goh, gow) = (grad_out.dim(2), grad_out.dim(3));
    let geo = TapGeometry {
        grid_h: h,
        grid_w: w,
        src_h: goh,
        src_w: gow,
        kh,
        kw,
        stride,
        padding,
    };
    let okk = cout * kh * kw;
    let chunk = geo.cols_per_chunk(cout);
    let mut cols = vec![T::ZERO; okk * chunk];
    let mut out = Tensor::zeros(kernel_shape);
    for bi in 0..b {
        let x = &input.data()[bi * cin * h * w..][..cin * h * w];
        let g = &grad_out.data()[bi * cout * goh * gow..][..cout * goh * gow];
        let mut col0 = 0;
        while col0 < h * w {
            let col1 = (col0 + chunk).min(h * w);
            let n = col1 - col0;
            im2col_chunk(g, cout, &geo, col0, col1, &mut cols[..okk * n]);
            // d_K'[ci, j] += x[ci, chunk] . cols[j, chunk]^T
            let x_rows: Vec<T> = (0..cin)
                .flat_map(|ci| x[ci * h * w + col0..][..n].iter().copied())
                .collect();
            gemm_abt_accumulate(&x_rows, cin, &cols[..okk * n], okk, n, out.data_mut());
            col0 = col1;
        }
    }
    out
}

#[inline]
fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    (t.dim(0), t.dim(1), t.dim(2), t.dim(3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        Tensor::generate(shape, || rng.uniform_in(-1.0, 1.0))
    }

    /// Direct nested-loop convolution used as the independent oracle.
    fn conv2d_oracle(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        stride: usize,
        padding: usize,
    ) -> Tensor<f64> {
        let (b, cin, h, w) = dims4(input);
        let (cout, _, kh, kw) = dims4(kernel);
        let oh = conv_out_extent(h, kh, stride, padding);
        let ow = conv_out_extent(w, kw, stride, padding);
        let mut out = Tensor::zeros(&[b, cout, oh, ow]);
        for bi in 0..b {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                        acc += input.at4(bi, ci, iy as usize, ix as usize)
                                            * kernel.at4(co, ci, ky, kx);
                                    }
                                }
                            }
                        }
                        out.set4(bi, co, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    /// Scatter-add oracle for the transposed convolution.
    fn conv_transpose2d_oracle(
        input: &Tensor<f64>,
        kernel: &Tensor<f64>,
        stride: usize,
        padding: usize,
    ) -> Tensor<f64> {
        let (b, cin, h, w) = dims4(input);
        let (_, cout, kh, kw) = dims4(kernel);
        let oh = (h - 1) * stride + kh - 2 * padding;
        let ow = (w - 1) * stride + kw - 2 * padding;
        let mut out = Tensor::zeros(&[b, cout, oh, ow]);
        for bi in 0..b {
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..w {
                        for co in 0..cout {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let oy = (iy * stride + ky) as isize - padding as isize;
                                    let ox = (ix * stride + kx) as isize - padding as isize;
                                    if oy >= 0
                                        && oy < oh as isize
                                        && ox >= 0
                                        && ox < ow as isize
                                    {
                                        let v = out.at4(bi, co, oy as usize, ox as usize)
                                            + input.at4(bi, ci, iy, ix)
                                                * kernel.at4(ci, co, ky, kx);
                                        out.set4(bi, co, oy as usize, ox as usize, v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = Rng::from_seed(1);
        let x = random(&[1, 1, 3, 3], &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn zero_kernel_annihilates() {
        let mut rng = Rng::from_seed(2);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let k = Tensor::zeros(&[2, 3, 3, 3]);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_box_filter_sums_window() {
        let x = Tensor::filled(&[1, 1, 4, 4], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn matches_nested_loop_oracle_on_random_shapes() {
        let mut rng = Rng::from_seed(3);
        for (stride, padding) in [(1, 0), (1, 1), (2, 2), (3, 4), (2, 0)] {
            let x = random(&[2, 3, 9, 11], &mut rng);
            let k = random(&[4, 3, 3, 5], &mut rng);
            let got = conv2d(&x, &k, stride, padding).unwrap();
            let want = conv2d_oracle(&x, &k, stride, padding);
            assert!(
                got.max_abs_diff(&want) < 1e-12,
                "stride {stride} padding {padding}"
            );
        }
    }

    #[test]
    fn transpose_matches_scatter_oracle_on_random_shapes() {
        let mut rng = Rng::from_seed(13);
        for (stride, padding) in [(1, 0), (1, 1), (2, 2), (2, 0), (3, 1)] {
            let x = random(&[2, 2, 4, 5], &mut rng);
            let k = random(&[2, 3, 4, 4], &mut rng);
            let got = conv_transpose2d(&x, &k, stride, padding).unwrap();
            let want = conv_transpose2d_oracle(&x, &k, stride, padding);
            assert!(
                got.max_abs_diff(&want) < 1e-12,
                "stride {stride} padding {padding}"
            );
        }
    }

    #[test]
    fn cols_chunking_does_not_change_results() {
        // Shapes big enough to span several chunks with a tiny budget are
        // impractical in tests, so instead verify a shape whose column
        // count straddles the minimum chunk size of 64.
        let mut rng = Rng::from_seed(14);
        let x = random(&[1, 2, 9, 9], &mut rng); // 81 columns > 64 once kernels widen
        let k = random(&[3, 2, 5, 5], &mut rng);
        let got = conv2d(&x, &k, 1, 2).unwrap();
        let want = conv2d_oracle(&x, &k, 1, 2);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let k = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        assert!(matches!(
            conv2d(&x, &k, 1, 1),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn oversized_kernel_is_config_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d(&x, &k, 1, 0).is_err());
        assert!(conv2d(&x, &k, 1, 1).is_ok());
    }

    #[test]
    fn transpose_identity_kernel() {
        let mut rng = Rng::from_seed(4);
        let x = random(&[1, 1, 3, 4], &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv_transpose2d(&x, &k, 1, 0).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn transpose_scatter_by_hand() {
        // Single input element 2 scattered by a 2x2 kernel at stride 2.
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv_transpose2d(&x, &k, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn adjoint_identity_over_random_cases() {
        let mut rng = Rng::from_seed(5);
        for case in 0..50 {
            let b = 1 + case % 2;
            let cin = 1 + case % 3;
            let cout = 1 + (case / 2) % 3;
            let stride = 1 + case % 3;
            let kh = 1 + case % 4;
            let kw = 1 + (case / 3) % 4;
            let padding = (case / 5) % 2 * (usize::min(kh, kw).saturating_sub(1) / 2);
            // Choose an input extent that the stride divides exactly so the
            // transpose reconstructs the same extent.
            let oh = 2 + case % 3;
            let ow = 2 + (case / 7) % 3;
            let h = (oh - 1) * stride + kh - 2 * padding;
            let w = (ow - 1) * stride + kw - 2 * padding;
            let x = random(&[b, cin, h, w], &mut rng);
            let k = random(&[cout, cin, kh, kw], &mut rng);
            let cx = conv2d(&x, &k, stride, padding).unwrap();
            let y = random(cx.shape(), &mut rng);
            // Same kernel buffer, first axis reinterpreted as the transpose
            // input channels.
            let kt = Tensor::from_vec(&[cout, cin, kh, kw], k.data().to_vec()).unwrap();
            let ty = conv_transpose2d(&y, &kt, stride, padding).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "case {case}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn grad_kernels_match_oracle_adjoints() {
        // d_input must be the adjoint map applied to grad_out, and d_kernel
        // the correlation of input with grad_out; checked against the oracle
        // by inner-product identities.
        let mut rng = Rng::from_seed(6);
        let x = random(&[2, 2, 6, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        for (stride, padding) in [(1, 1), (2, 1)] {
            let y = conv2d(&x, &k, stride, padding).unwrap();
            let g = random(y.shape(), &mut rng);
            let dx = conv2d_grad_input(&g, &k, x.shape(), stride, padding);
            let dk = conv2d_grad_kernel(&g, &x, k.shape(), stride, padding);
            // <conv(x,k), g> == <x, dx> == <k, dk>
            let e: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let ex: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let ek: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
            assert!((e - ex).abs() < 1e-10);
            assert!((e - ek).abs() < 1e-10);
        }
    }

    #[test]
    fn transpose_grad_kernels_match_adjoints() {
        let mut rng = Rng::from_seed(7);
        let x = random(&[1, 3, 4, 4], &mut rng);
        let k = random(&[3, 2, 4, 4], &mut rng);
        for (stride, padding) in [(2, 1), (1, 0)] {
            let y = conv_transpose2d(&x, &k, stride, padding).unwrap();
            let g = random(y.shape(), &mut rng);
            let dx = conv_transpose2d_grad_input(&g, &k, x.shape(), stride, padding);
            let dk = conv_transpose2d_grad_kernel(&g, &x, k.shape(), stride, padding);
            let e: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let ex: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            let ek: f64 = k.data().iter().zip(dk.data()).map(|(a, b)| a * b).sum();
            assert!((e - ex).abs() < 1e-10);
            assert!((e - ek).abs() < 1e-10);
        }
    }
}
