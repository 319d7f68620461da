use super::ImageRGB;
use crate::error::{Error, Result};

/// Cubic convolution kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 1.0 {
        (1.5 * ax - 2.5) * ax * ax + 1.0
    } else if ax < 2.0 {
        ((-0.5 * ax + 2.5) * ax - 4.0) * ax + 2.0
    } else {
        0.0
    }
}

/// Contribution window of one output sample: clamped source indices and
/// normalized weights.
struct Taps {
    start: usize,
    weights: Vec<f64>,
}

/// Per-output-pixel taps for a 1-D cubic resample with half-pixel centers.
/// When downscaling, the kernel is stretched by the scale ratio and its
/// support widened accordingly (antialiasing); weights always sum to 1 and
/// out-of-range taps clamp to the edge.
fn contributions(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = out_len as f64 / in_len as f64;
    let (kernel_scale, width) = if scale < 1.0 {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let p = width.ceil() as i64 + 2;
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as i64;
            let mut weights: Vec<f64> = (0..p)
                .map(|j| kernel_scale * cubic(kernel_scale * (u - (left + j) as f64)))
                .collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            // Edge clamping: fold out-of-range taps onto the border pixels.
            let lo = left.clamp(0, in_len as i64 - 1);
            let hi = (left + p - 1).clamp(0, in_len as i64 - 1);
            let mut compact = vec![0.0; (hi - lo + 1) as usize];
            for (j, &w) in weights.iter().enumerate() {
                let idx = (left + j as i64).clamp(0, in_len as i64 - 1);
                compact[(idx - lo) as usize] += w;
            }
            Taps {
                start: lo as usize,
                weights: compact,
            }
        })
        .collect()
}

fn resample_rows(src: &[f64], _h: usize, w: usize, taps: &[Taps], out_h: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_h * w];
    for (oy, t) in taps.iter().enumerate() {
        for c in 0..w {
            let mut acc = 0.0;
            for (j, &wt) in t.weights.iter().enumerate() {
                acc += wt * src[(t.start + j) * w + c];
            }
            out[oy * w + c] = acc;
        }
    }
    out
}

fn resample_cols(src: &[f64], h: usize, w: usize, taps: &[Taps], out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * out_w];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for (ox, t) in taps.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &wt) in t.weights.iter().enumerate() {
                acc += wt * row[t.start + j];
            }
            out[r * out_w + ox] = acc;
        }
    }
    out
}

/// Separable cubic-convolution resize (a = -0.5, antialiased downscale,
/// half-pixel centers, edge clamping). Output clamped to `[0, 255]`.
pub fn bicubic_resize(img: &ImageRGB, out_h: usize, out_w: usize) -> Result<ImageRGB> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::usage("bicubic_resize output extents must be >= 1"));
    }
    let (h, w) = (img.height(), img.width());
    let row_taps = contributions(h, out_h);
    let col_taps = contributions(w, out_w);
    let mut out = ImageRGB::new(out_h, out_w);
    for ch in 0..3 {
        let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
        let tmp = resample_cols(plane, h, w, &col_taps, out_w);
        let res = resample_rows(&tmp, h, out_w, &row_taps, out_h);
        let dst = &mut out.data_mut()[ch * out_h * out_w..(ch + 1) * out_h * out_w];
        for (d, v) in dst.iter_mut().zip(res) {
            *d = v.clamp(0.0, 255.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> ImageRGB {
        let mut img = ImageRGB::new(h, w);
        for r in 0..h {
            for c in 0..w {
                let v = f(r, c);
                for ch in 0..3 {
                    img.set(ch, r, c, v);
                }
            }
        }
        img
    }

    #[test]
    fn same_size_is_identity() {
        let img = gray_image(5, 7, |r, c| (r * 7 + c) as f64 * 3.0 % 200.0);
        let out = bicubic_resize(&img, 5, 7).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_image_stays_constant_any_scale() {
        let img = gray_image(12, 12, |_, _| 77.0);
        for (oh, ow) in [(6, 6), (4, 4), (24, 24), (5, 9)] {
            let out = bicubic_resize(&img, oh, ow).unwrap();
            for &v in out.data() {
                assert!((v - 77.0).abs() < 1e-9, "size {oh}x{ow}: {v}");
            }
        }
    }

    #[test]
    fn weights_sum_to_one_per_output_pixel() {
        for (in_len, out_len) in [(8, 4), (10, 3), (4, 8), (7, 7), (9, 2)] {
            for t in contributions(in_len, out_len) {
                let s: f64 = t.weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    /// Independent oracle: evaluate the stretched kernel against every
    /// source pixel (with edge clamping via explicit out-of-range taps),
    /// normalize, and sum directly.
    fn downscale_row_oracle(row: &[f64], out_len: usize) -> Vec<f64> {
        let in_len = row.len();
        let scale = out_len as f64 / in_len as f64;
        (0..out_len)
            .map(|i| {
                let u = (i as f64 + 0.5) / scale - 0.5;
                let support = 2.0 / scale;
                let lo = (u - support).floor() as i64 - 1;
                let hi = (u + support).ceil() as i64 + 1;
                let mut num = 0.0;
                let mut den = 0.0;
                for idx in lo..=hi {
                    let w = scale * cubic(scale * (u - idx as f64));
                    let clamped = idx.clamp(0, in_len as i64 - 1) as usize;
                    num += w * row[clamped];
                    den += w;
                }
                num / den
            })
            .collect()
    }

    #[test]
    fn downscale_matches_direct_summation_oracle() {
        let row = [0.0, 8.0, 16.0, 24.0, 32.0, 40.0, 48.0, 56.0];
        let img = gray_image(1, 8, |_, c| row[c]);
        let out = bicubic_resize(&img, 1, 4).unwrap();
        let want = downscale_row_oracle(&row, 4);
        for c in 0..4 {
            assert!(
                (out.get(0, 0, c) - want[c]).abs() < 1e-9,
                "col {c}: {} vs {}",
                out.get(0, 0, c),
                want[c]
            );
        }
    }

    #[test]
    fn downscale_by_three_matches_oracle_on_random_row() {
        let mut rng = crate::rng::Rng::from_seed(77);
        let row: Vec<f64> = (0..15).map(|_| rng.uniform_in(10.0, 240.0)).collect();
        let img = gray_image(1, 15, |_, c| row[c]);
        let out = bicubic_resize(&img, 1, 5).unwrap();
        let want = downscale_row_oracle(&row, 5);
        for c in 0..5 {
            assert!((out.get(0, 0, c) - want[c]).abs() < 1e-9);
        }
    }
}
