use super::ImageRGB;
use crate::tensor::Tensor;

/// Luma channel of the studio-swing BT.601 YCbCr transform:
/// `Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255`, inputs in `[0, 255]`.
///
/// Output range is `[16, 235]` (the coefficients sum to 219).
pub fn rgb_to_y(img: &ImageRGB) -> Tensor<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Tensor::zeros(&[1, h, w]);
    let o = out.data_mut();
    for r in 0..h {
        for c in 0..w {
            o[r * w + c] = 16.0
                + (65.481 * img.get(0, r, c)
                    + 128.553 * img.get(1, r, c)
                    + 24.966 * img.get(2, r, c))
                    / 255.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(r: f64, g: f64, b: f64) -> ImageRGB {
        let mut img = ImageRGB::new(2, 2);
        for row in 0..2 {
            for col in 0..2 {
                img.set(0, row, col, r);
                img.set(1, row, col, g);
                img.set(2, row, col, b);
            }
        }
        img
    }

    #[test]
    fn black_maps_to_16() {
        let y = rgb_to_y(&flat(0.0, 0.0, 0.0));
        assert!((y.data()[0] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn white_maps_to_235() {
        let y = rgb_to_y(&flat(255.0, 255.0, 255.0));
        assert!((y.data()[0] - 235.0).abs() < 1e-9);
    }

    #[test]
    fn mid_gray_plugs_into_formula() {
        let y = rgb_to_y(&flat(127.5, 127.5, 127.5));
        assert!((y.data()[0] - 125.5).abs() < 1e-9);
    }

    #[test]
    fn transform_is_affine() {
        // rgb_to_y(a x + b y) == a Y(x) + b Y(y) - (a + b - 1) * 16
        let x = flat(30.0, 90.0, 10.0);
        let y = flat(200.0, 40.0, 120.0);
        let (a, b) = (0.3, 0.6);
        let mut mix = ImageRGB::new(2, 2);
        for (m, (&xv, &yv)) in mix
            .data_mut()
            .iter_mut()
            .zip(x.data().iter().zip(y.data()))
        {
            *m = a * xv + b * yv;
        }
        let lhs = rgb_to_y(&mix);
        let yx = rgb_to_y(&x);
        let yy = rgb_to_y(&y);
        for i in 0..lhs.numel() {
            let rhs = a * yx.data()[i] + b * yy.data()[i] - (a + b - 1.0) * 16.0;
            assert!((lhs.data()[i] - rhs).abs() < 1e-9);
        }
    }
}
