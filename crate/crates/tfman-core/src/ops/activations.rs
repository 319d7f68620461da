use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerically stabilized softmax along `axis`. Slices are independent, so
/// the work parallelizes over the leading axes without changing results.
pub fn softmax<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= input.rank() {
        return Err(Error::usage(format!(
            "softmax axis {axis} out of range for rank {}",
            input.rank()
        )));
    }
    let shape = input.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let x = input.data();
    let mut out = Tensor::zeros(shape);
    let block = axis_len * inner;
    out.data_mut()
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(oi, o)| {
            let xs = &x[oi * block..][..block];
            for ii in 0..inner {
                let mut m = xs[ii];
                for a in 1..axis_len {
                    m = m.max(xs[a * inner + ii]);
                }
                let mut sum = T::ZERO;
                for a in 0..axis_len {
                    let e = (xs[a * inner + ii] - m).exp_fast();
                    o[a * inner + ii] = e;
                    sum += e;
                }
                let inv = T::ONE / sum;
                for a in 0..axis_len {
                    o[a * inner + ii] *= inv;
                }
            }
        });
    Ok(out)
}

/// Gradient of softmax: `ds_a = s_a * (g_a - sum_b g_b s_b)` per slice.
pub fn softmax_grad<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = output.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let s = output.data();
    let g = grad_out.data();
    let mut out = Tensor::zeros(shape);
    let block = axis_len * inner;
    out.data_mut()
        .par_chunks_mut(block)
        .enumerate()
        .for_each(|(oi, o)| {
            let base = oi * block;
            for ii in 0..inner {
                let mut dot = T::ZERO;
                for a in 0..axis_len {
                    let idx = base + a * inner + ii;
                    dot += g[idx] * s[idx];
                }
                for a in 0..axis_len {
                    let idx = base + a * inner + ii;
                    o[a * inner + ii] = s[idx] * (g[idx] - dot);
                }
            }
        });
    out
}

/// Parametric ReLU: `x` if `x >= 0`, else `slope[channel] * x`.
///
/// `slope` has either one entry (shared) or one per extent of `channel_axis`.
pub fn prelu<T: Scalar>(
    input: &Tensor<T>,
    slope: &Tensor<T>,
    channel_axis: usize,
) -> Result<Tensor<T>> {
    let channels = input.dim(channel_axis);
    if slope.numel() != channels && slope.numel() != 1 {
        return Err(Error::config(format!(
            "prelu slope has {} entries, channel extent is {channels}",
            slope.numel()
        )));
    }
    let inner: usize = input.shape()[channel_axis + 1..].iter().product();
    let s = slope.data();
    let shared = slope.numel() == 1;
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < T::ZERO {
            let c = if shared { 0 } else { (i / inner) % channels };
            *v = s[c] * *v;
        }
    }
    Ok(out)
}

/// Gradient of prelu w.r.t. its input.
pub fn prelu_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    slope: &Tensor<T>,
    channel_axis: usize,
) -> Tensor<T> {
    let channels = input.dim(channel_axis);
    let inner: usize = input.shape()[channel_axis + 1..].iter().product();
    let s = slope.data();
    let shared = slope.numel() == 1;
    let x = input.data();
    let g = grad_out.data();
    let mut out = Tensor::zeros(input.shape());
    for (i, d) in out.data_mut().iter_mut().enumerate() {
        *d = if x[i] >= T::ZERO {
            g[i]
        } else {
            let c = if shared { 0 } else { (i / inner) % channels };
            g[i] * s[c]
        };
    }
    out
}

/// Gradient of prelu w.r.t. its slope: per channel, sum of `g * x` over the
/// negative sites.
pub fn prelu_grad_slope<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    slope_len: usize,
    channel_axis: usize,
) -> Tensor<T> {
    let channels = input.dim(channel_axis);
    let inner: usize = input.shape()[channel_axis + 1..].iter().product();
    let x = input.data();
    let g = grad_out.data();
    let mut out = Tensor::zeros(&[slope_len]);
    let o = out.data_mut();
    for i in 0..x.len() {
        if x[i] < T::ZERO {
            let c = if slope_len == 1 {
                0
            } else {
                (i / inner) % channels
            };
            o[c] += g[i] * x[i];
        }
    }
    out
}
