use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A half-open spatial rectangle `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.r1 - self.r0
    }
    pub fn width(&self) -> usize {
        self.c1 - self.c0
    }
    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }
}

pub fn zip_elementwise<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::config(format!(
            "elementwise shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(a.shape());
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        *o = f(x, y);
    }
    Ok(out)
}

/// Concatenate rank-3 tensors along axis 0 (channels).
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::config("concat of zero tensors"))?;
    let (h, w) = (first.dim(1), first.dim(2));
    let mut channels = 0;
    for t in inputs {
        if t.rank() != 3 || t.dim(1) != h || t.dim(2) != w {
            return Err(Error::config("concat_channels spatial extents differ"));
        }
        channels += t.dim(0);
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[channels, h, w], data)
}

/// Crop a spatial rectangle out of a rank-3 tensor.
pub fn crop3<T: Scalar>(input: &Tensor<T>, rect: Rect) -> Result<Tensor<T>> {
    if input.rank() != 3 {
        return Err(Error::config("crop3 expects rank 3"));
    }
    let (c, h, w) = (input.dim(0), input.dim(1), input.dim(2));
    if rect.r1 > h || rect.c1 > w || rect.r0 >= rect.r1 || rect.c0 >= rect.c1 {
        return Err(Error::config(format!(
            "crop rect {rect:?} out of bounds for {h}x{w}"
        )));
    }
    let (bh, bw) = (rect.height(), rect.width());
    let x = input.data();
    let mut out = Tensor::zeros(&[c, bh, bw]);
    let o = out.data_mut();
    for ci in 0..c {
        for r in 0..bh {
            let src = (ci * h + rect.r0 + r) * w + rect.c0;
            let dst = (ci * bh + r) * bw;
            o[dst..dst + bw].copy_from_slice(&x[src..src + bw]);
        }
    }
    Ok(out)
}

/// Adjoint of `crop3`: paste the gradient back into a zero tensor.
pub fn crop3_grad<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize], rect: Rect) -> Tensor<T> {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (bh, bw) = (rect.height(), rect.width());
    let g = grad_out.data();
    let mut out = Tensor::zeros(input_shape);
    let o = out.data_mut();
    for ci in 0..c {
        for r in 0..bh {
            let dst = (ci * h + rect.r0 + r) * w + rect.c0;
            let src = (ci * bh + r) * bw;
            o[dst..dst + bw].copy_from_slice(&g[src..src + bw]);
        }
    }
    out
}

/// For each output pixel, the index of the block that wins it: blocks are
/// written in order and later writes cover earlier ones. `usize::MAX` marks
/// pixels no rect covers.
pub fn cover_winners(rects: &[Rect], h: usize, w: usize) -> Vec<usize> {
    let mut winner = vec![usize::MAX; h * w];
    for (idx, rect) in rects.iter().enumerate() {
        for r in rect.r0..rect.r1 {
            for c in rect.c0..rect.c1 {
                winner[r * w + c] = idx;
            }
        }
    }
    winner
}

/// Write rank-3 blocks at their rectangles in sequence; overlapping pixels
/// take the value of the last block written. Pixels no block covers are 0.
pub fn paste_seq<T: Scalar>(
    blocks: &[&Tensor<T>],
    rects: &[Rect],
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    if blocks.len() != rects.len() || blocks.is_empty() {
        return Err(Error::config("paste_seq needs matching non-empty lists"));
    }
    let c = blocks[0].dim(0);
    for (t, rect) in blocks.iter().zip(rects) {
        if t.rank() != 3 || t.dim(0) != c || t.dim(1) != rect.height() || t.dim(2) != rect.width() {
            return Err(Error::config(format!(
                "paste_seq block shape {:?} does not match rect {rect:?}",
                t.shape()
            )));
        }
        if rect.r1 > h || rect.c1 > w {
            return Err(Error::config(format!(
                "paste_seq rect {rect:?} out of bounds for {h}x{w}"
            )));
        }
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    let o = out.data_mut();
    for (t, rect) in blocks.iter().zip(rects) {
        let (bh, bw) = (rect.height(), rect.width());
        let x = t.data();
        for ci in 0..c {
            for r in 0..bh {
                let dst = (ci * h + rect.r0 + r) * w + rect.c0;
                let src = (ci * bh + r) * bw;
                o[dst..dst + bw].copy_from_slice(&x[src..src + bw]);
            }
        }
    }
    Ok(out)
}

/// Gradient of `paste_seq` for block `idx`: the output gradient restricted
/// to the pixels this block actually won (later blocks mask earlier ones).
pub fn paste_seq_grad_block<T: Scalar>(
    grad_out: &Tensor<T>,
    rects: &[Rect],
    winners: &[usize],
    idx: usize,
) -> Tensor<T> {
    let (c, h, w) = (grad_out.dim(0), grad_out.dim(1), grad_out.dim(2));
    let rect = rects[idx];
    let (bh, bw) = (rect.height(), rect.width());
    let g = grad_out.data();
    let mut out = Tensor::zeros(&[c, bh, bw]);
    let o = out.data_mut();
    for ci in 0..c {
        for r in 0..bh {
            for cc in 0..bw {
                let (gy, gx) = (rect.r0 + r, rect.c0 + cc);
                if winners[gy * w + gx] == idx {
                    o[(ci * bh + r) * bw + cc] = g[(ci * h + gy) * w + gx];
                }
            }
        }
    }
    out
}

/// Add a per-channel bias to `[B, C, H, W]` or `[C, H, W]`.
pub fn add_channel_bias<T: Scalar>(
    input: &Tensor<T>,
    bias: &Tensor<T>,
    channel_axis: usize,
) -> Result<Tensor<T>> {
    let c = input.dim(channel_axis);
    if bias.numel() != c {
        return Err(Error::config(format!(
            "bias has {} entries, channel extent is {c}",
            bias.numel()
        )));
    }
    let inner: usize = input.shape()[channel_axis + 1..].iter().product();
    let b = bias.data();
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += b[(i / inner) % c];
    }
    Ok(out)
}

/// Gradient of the bias in `add_channel_bias`: per-channel sum of the
/// output gradient.
pub fn channel_bias_grad<T: Scalar>(
    grad_out: &Tensor<T>,
    channels: usize,
    channel_axis: usize,
) -> Tensor<T> {
    let inner: usize = grad_out.shape()[channel_axis + 1..].iter().product();
    let g = grad_out.data();
    let mut out = Tensor::zeros(&[channels]);
    let o = out.data_mut();
    for (i, &v) in g.iter().enumerate() {
        o[(i / inner) % channels] += v;
    }
    out
}

/// Multiply each channel of a rank-3 tensor by a per-channel factor.
pub fn mul_channels<T: Scalar>(input: &Tensor<T>, factors: &Tensor<T>) -> Result<Tensor<T>> {
    if input.rank() != 3 || factors.numel() != input.dim(0) {
        return Err(Error::config("mul_channels expects [C,H,W] and C factors"));
    }
    let hw = input.dim(1) * input.dim(2);
    let f = factors.data();
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= f[i / hw];
    }
    Ok(out)
}

pub fn mul_channels_grad_input<T: Scalar>(grad_out: &Tensor<T>, factors: &Tensor<T>) -> Tensor<T> {
    let hw = grad_out.dim(1) * grad_out.dim(2);
    let f = factors.data();
    let mut out = grad_out.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= f[i / hw];
    }
    out
}

pub fn mul_channels_grad_factors<T: Scalar>(grad_out: &Tensor<T>, input: &Tensor<T>) -> Tensor<T> {
    let c = input.dim(0);
    let hw = input.dim(1) * input.dim(2);
    let g = grad_out.data();
    let x = input.data();
    let mut out = Tensor::zeros(&[c]);
    let o = out.data_mut();
    for i in 0..x.len() {
        o[i / hw] += g[i] * x[i];
    }
    out
}

/// Divide the trailing spatial plane of `input` by a constant `[H, W]` map,
/// broadcast over the leading axes. Used for TFM overlap averaging.
pub fn div_const_map<T: Scalar>(input: &Tensor<T>, map: &Tensor<T>) -> Result<Tensor<T>> {
    let rank = input.rank();
    if rank < 2 || map.rank() != 2 {
        return Err(Error::config("div_const_map expects trailing [H, W]"));
    }
    let hw = input.dim(rank - 2) * input.dim(rank - 1);
    if map.numel() != hw {
        return Err(Error::config("div_const_map extents differ"));
    }
    let m = map.data();
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v /= m[i % hw];
    }
    Ok(out)
}

pub fn div_const_map_grad<T: Scalar>(grad_out: &Tensor<T>, map: &Tensor<T>) -> Tensor<T> {
    let hw = map.numel();
    let m = map.data();
    let mut out = grad_out.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v /= m[i % hw];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_stacks_channels() {
        let a = Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), &[3, 1, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn crop_and_paste_roundtrip() {
        let x = Tensor::from_vec(&[1, 3, 3], (0..9).map(|i| i as f64).collect()).unwrap();
        let rect = Rect {
            r0: 1,
            r1: 3,
            c0: 0,
            c1: 2,
        };
        let b = crop3(&x, rect).unwrap();
        assert_eq!(b.data(), &[3.0, 4.0, 6.0, 7.0]);
        let y = paste_seq(&[&b], &[rect], 3, 3).unwrap();
        assert_eq!(y.at3(0, 1, 0), 3.0);
        assert_eq!(y.at3(0, 0, 0), 0.0);
    }

    #[test]
    fn later_blocks_cover_earlier() {
        let a = Tensor::filled(&[1, 2, 2], 1.0f64);
        let b = Tensor::filled(&[1, 2, 2], 2.0f64);
        let ra = Rect {
            r0: 0,
            r1: 2,
            c0: 0,
            c1: 2,
        };
        let rb = Rect {
            r0: 1,
            r1: 3,
            c0: 1,
            c1: 3,
        };
        let y = paste_seq(&[&a, &b], &[ra, rb], 3, 3).unwrap();
        assert_eq!(y.at3(0, 1, 1), 2.0); // overlap goes to the later block
        assert_eq!(y.at3(0, 0, 0), 1.0);
        assert_eq!(y.at3(0, 2, 0), 0.0);

        let winners = cover_winners(&[ra, rb], 3, 3);
        assert_eq!(winners[1 * 3 + 1], 1);
        assert_eq!(winners[0], 0);
        assert_eq!(winners[2 * 3 + 0], usize::MAX);
    }

    #[test]
    fn cover_grad_masks_overwritten_pixels() {
        let ra = Rect {
            r0: 0,
            r1: 2,
            c0: 0,
            c1: 2,
        };
        let rb = Rect {
            r0: 1,
            r1: 3,
            c0: 1,
            c1: 3,
        };
        let g = Tensor::filled(&[1, 3, 3], 1.0f64);
        let winners = cover_winners(&[ra, rb], 3, 3);
        let ga = paste_seq_grad_block(&g, &[ra, rb], &winners, 0);
        // Pixel (1,1) was overwritten by block b, so block a gets no signal.
        assert_eq!(ga.data(), &[1.0, 1.0, 1.0, 0.0]);
        let gb = paste_seq_grad_block(&g, &[ra, rb], &winners, 1);
        assert_eq!(gb.data(), &[1.0, 1.0, 1.0, 1.0]);
    }
}
