use crate::error::{Error, Result};
use crate::image::{rgb_to_y, ImageRGB};

/// PSNR is reported as this sentinel when the images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

fn y_plane_cropped(img: &ImageRGB, crop: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (h, w) = (img.height(), img.width());
    if h <= 2 * crop || w <= 2 * crop {
        return Err(Error::usage(format!(
            "crop {crop} leaves no pixels of a {h}x{w} image"
        )));
    }
    let y = rgb_to_y(img);
    let (ch, cw) = (h - 2 * crop, w - 2 * crop);
    let mut out = Vec::with_capacity(ch * cw);
    for r in 0..ch {
        for c in 0..cw {
            out.push(y.data()[(r + crop) * w + (c + crop)]);
        }
    }
    Ok((out, ch, cw))
}

/// PSNR between the Y channels, after shaving `crop` pixels from every
/// border: `10 log10(255^2 / MSE)`. Identical images give `+inf`.
pub fn psnr_y(a: &ImageRGB, b: &ImageRGB, crop: usize) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::usage(format!(
            "psnr extents differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (ya, _, _) = y_plane_cropped(a, crop)?;
    let (yb, _, _) = y_plane_cropped(b, crop)?;
    let mut mse = 0.0;
    for (&x, &y) in ya.iter().zip(&yb) {
        let d = x - y;
        mse += d * d;
    }
    mse /= ya.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// The 11x11 Gaussian SSIM window, sigma 1.5, normalized to sum 1.
fn ssim_window() -> [[f64; 11]; 11] {
    let sigma = 1.5f64;
    let mut w = [[0.0; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (x, y) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    w
}

/// Single-scale SSIM on the Y channel: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, L = 255, averaged over valid window positions.
pub fn ssim_y(a: &ImageRGB, b: &ImageRGB, crop: usize) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::usage("ssim extents differ"));
    }
    let (ya, h, w) = y_plane_cropped(a, crop)?;
    let (yb, _, _) = y_plane_cropped(b, crop)?;
    if h < 11 || w < 11 {
        return Err(Error::usage(format!(
            "ssim needs at least 11x11 pixels after crop, got {h}x{w}"
        )));
    }
    let win = ssim_window();
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = win[i][j];
                    mx += wgt * ya[(r + i) * w + c + j];
                    my += wgt * yb[(r + i) * w + c + j];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wgt = win[i][j];
                    let dx = ya[(r + i) * w + c + j] - mx;
                    let dy = yb[(r + i) * w + c + j] - my;
                    vx += wgt * dx * dx;
                    vy += wgt * dy * dy;
                    cov += wgt * dx * dy;
                }
            }
            let s = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn gray(h: usize, w: usize, v: f64) -> ImageRGB {
        let mut img = ImageRGB::new(h, w);
        for x in img.data_mut() {
            *x = v;
        }
        img
    }

    fn noisy(h: usize, w: usize, seed: u64) -> ImageRGB {
        let mut rng = Rng::from_seed(seed);
        let mut img = ImageRGB::new(h, w);
        for x in img.data_mut() {
            *x = rng.uniform_in(0.0, 255.0);
        }
        img
    }

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = noisy(16, 16, 1);
        assert!(psnr_y(&img, &img, 0).unwrap().is_infinite());
        let s = ssim_y(&img, &img, 0).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_y_difference_closed_form() {
        // A gray offset of 255/219 moves Y by exactly 1.
        let a = gray(12, 12, 100.0);
        let b = gray(12, 12, 100.0 + 255.0 / 219.0);
        let got = psnr_y(&a, &b, 0).unwrap();
        let want = 20.0 * 255.0f64.log10();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!((got - 48.1308).abs() < 1e-3);
    }

    #[test]
    fn psnr_matches_straight_line_oracle_and_is_symmetric() {
        let a = noisy(20, 24, 2);
        let b = noisy(20, 24, 3);
        let crop = 2;
        let got = psnr_y(&a, &b, crop).unwrap();
        // Straight-line oracle with explicit loops.
        let y = |img: &ImageRGB, r: usize, c: usize| {
            16.0 + (65.481 * img.get(0, r, c)
                + 128.553 * img.get(1, r, c)
                + 24.966 * img.get(2, r, c))
                / 255.0
        };
        let mut mse = 0.0;
        let mut n = 0.0;
        for r in crop..20 - crop {
            for c in crop..24 - crop {
                let d = y(&a, r, c) - y(&b, r, c);
                mse += d * d;
                n += 1.0;
            }
        }
        let want = 10.0 * (255.0 * 255.0 / (mse / n)).log10();
        assert!((got - want).abs() < 1e-9);
        let sym = psnr_y(&b, &a, crop).unwrap();
        assert_eq!(got, sym);
    }

    #[test]
    fn constant_images_match_ssim_closed_form() {
        // Zero variance: only the luminance term differs from 1.
        let a = gray(16, 16, 100.0);
        let b = gray(16, 16, 150.0);
        let ya = 16.0 + 219.0 * 100.0 / 255.0;
        let yb = 16.0 + 219.0 * 150.0 / 255.0;
        let c1 = (0.01f64 * 255.0).powi(2);
        let want = (2.0 * ya * yb + c1) / (ya * ya + yb * yb + c1);
        let got = ssim_y(&a, &b, 0).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn ssim_matches_explicit_loop_oracle() {
        let a = noisy(14, 13, 4);
        let b = noisy(14, 13, 5);
        let got = ssim_y(&a, &b, 1).unwrap();

        // Oracle: rebuild everything with plain loops and fresh formulas.
        let y_of = |img: &ImageRGB| {
            let t = crate::image::rgb_to_y(img);
            t.data().to_vec()
        };
        let (h, w) = (14usize, 13usize);
        let crop = 1usize;
        let ya = y_of(&a);
        let yb = y_of(&b);
        let sigma = 1.5f64;
        let mut win = vec![0.0; 121];
        let mut sum = 0.0;
        for i in 0..11 {
            for j in 0..11 {
                let (x, yv) = (i as f64 - 5.0, j as f64 - 5.0);
                win[i * 11 + j] = (-(x * x + yv * yv) / (2.0 * sigma * sigma)).exp();
                sum += win[i * 11 + j];
            }
        }
        for v in &mut win {
            *v /= sum;
        }
        let (ch, cw) = (h - 2 * crop, w - 2 * crop);
        let at = |buf: &[f64], r: usize, c: usize| buf[(r + crop) * w + c + crop];
        let c1 = 6.5025f64;
        let c2 = 58.5225f64;
        let mut total = 0.0;
        let mut count = 0;
        for r in 0..=ch - 11 {
            for c in 0..=cw - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        mx += win[i * 11 + j] * at(&ya, r + i, c + j);
                        my += win[i * 11 + j] * at(&yb, r + i, c + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let dx = at(&ya, r + i, c + j) - mx;
                        let dy = at(&yb, r + i, c + j) - my;
                        vx += win[i * 11 + j] * dx * dx;
                        vy += win[i * 11 + j] * dy * dy;
                        cov += win[i * 11 + j] * dx * dy;
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        let want = total / count as f64;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn too_small_after_crop_is_usage_error() {
        let img = gray(12, 12, 10.0);
        assert!(ssim_y(&img, &img, 1).is_err());
        assert!(psnr_y(&img, &img, 6).is_err());
    }
}
