use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-output-pixel taps of a 1-D bilinear resize with half-pixel centers:
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the valid
/// range. Returns `(lo_index, hi_index, hi_weight)` per output index.
fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
            let src = src.clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear interpolation over the trailing two axes of `input`.
pub fn bilinear_resize<T: Scalar>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    if input.rank() < 2 {
        return Err(Error::config("bilinear_resize expects rank >= 2"));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("bilinear_resize output extents must be >= 1"));
    }
    let rank = input.rank();
    let (h, w) = (input.dim(rank - 2), input.dim(rank - 1));
    let lead: usize = input.shape()[..rank - 2].iter().product();
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);

    let mut shape = input.shape().to_vec();
    shape[rank - 2] = out_h;
    shape[rank - 1] = out_w;
    let mut out = Tensor::zeros(&shape);
    let x = input.data();
    let o = out.data_mut();
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * out_h * out_w;
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let v00 = x[in_base + y0 * w + x0].to_f64();
                let v01 = x[in_base + y0 * w + x1].to_f64();
                let v10 = x[in_base + y1 * w + x0].to_f64();
                let v11 = x[in_base + y1 * w + x1].to_f64();
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                o[out_base + oy * out_w + ox] = T::from_f64(top + fy * (bot - top));
            }
        }
    }
    Ok(out)
}

/// Adjoint of `bilinear_resize`: scatter each output gradient back onto its
/// four source taps. Sequential per leading slice, so the accumulation order
/// is fixed.
pub fn bilinear_resize_grad<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let rank = input_shape.len();
    let (h, w) = (input_shape[rank - 2], input_shape[rank - 1]);
    let grank = grad_out.rank();
    let (oh, ow) = (grad_out.dim(grank - 2), grad_out.dim(grank - 1));
    let lead: usize = input_shape[..rank - 2].iter().product();
    let rows = bilinear_taps(h, oh);
    let cols = bilinear_taps(w, ow);

    let g = grad_out.data();
    let mut out = Tensor::zeros(input_shape);
    let o = out.data_mut();
    for l in 0..lead {
        let in_base = l * h * w;
        let out_base = l * oh * ow;
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let gv = g[out_base + oy * ow + ox].to_f64();
                o[in_base + y0 * w + x0] += T::from_f64(gv * (1.0 - fy) * (1.0 - fx));
                o[in_base + y0 * w + x1] += T::from_f64(gv * (1.0 - fy) * fx);
                o[in_base + y1 * w + x0] += T::from_f64(gv * fy * (1.0 - fx));
                o[in_base + y1 * w + x1] += T::from_f64(gv * fy * fx);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let y = bilinear_resize(&x, 2, 3).unwrap();
        assert!(x.max_abs_diff(&y) < 1e-15);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::filled(&[1, 4, 4], 7.5f64);
        let y = bilinear_resize(&x, 3, 7).unwrap();
        assert!(y.data().iter().all(|&v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn column_downsample_hand_value() {
        // Column [0,1,2,3] down to 2 rows: sources at 0.5 and 2.5.
        let x = Tensor::from_vec(&[1, 1, 4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_resize(&x, 2, 1).unwrap();
        assert!((y.data()[0] - 0.5).abs() < 1e-12);
        assert!((y.data()[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn grad_is_adjoint() {
        let mut rng = crate::rng::Rng::from_seed(11);
        let x = Tensor::generate(&[2, 5, 4], || rng.uniform_in(-1.0, 1.0));
        let y = bilinear_resize(&x, 3, 6).unwrap();
        let g = Tensor::generate(y.shape(), || rng.uniform_in(-1.0, 1.0));
        let dx = bilinear_resize_grad(&g, x.shape());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
