use super::{bicubic_resize, ImageRGB};
use crate::error::{Error, Result};
use crate::rng::{Rng, StreamKind};

/// The three LR production models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationKind {
    /// Bicubic downscale.
    Bi,
    /// 7x7 Gaussian blur (sigma 1.6), then bicubic downscale.
    Bd,
    /// Bicubic downscale, then Gaussian noise with level 30.
    Dn,
}

impl DegradationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::Bi => "bi",
            DegradationKind::Bd => "bd",
            DegradationKind::Dn => "dn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" => Ok(DegradationKind::Bi),
            "bd" => Ok(DegradationKind::Bd),
            "dn" => Ok(DegradationKind::Dn),
            other => Err(Error::config(format!(
                "unknown degradation kind '{other}' (expected bi, bd or dn)"
            ))),
        }
    }
}

/// Which degradation to apply and with what scale and noise seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: usize,
    /// Seed of the noise stream; only the DN model draws from it.
    pub noise_seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, scale: usize, noise_seed: u64) -> Result<Self> {
        if ![2, 3, 4, 8].contains(&scale) {
            return Err(Error::config(format!(
                "unsupported scale factor {scale} (expected 2, 3, 4 or 8)"
            )));
        }
        Ok(DegradationSpec {
            kind,
            scale,
            noise_seed,
        })
    }

    /// Per-file spec: the noise stream is derived from the master seed and
    /// the file stem, so directory processing is schedule-independent.
    pub fn for_stem(&self, stem: &str) -> DegradationSpec {
        DegradationSpec {
            noise_seed: self.noise_seed ^ crate::rng::hash_str(stem),
            ..*self
        }
    }
}

/// Gaussian noise level (standard deviation on the 0-255 scale) of the DN
/// degradation model.
pub const DN_NOISE_LEVEL: f64 = 30.0;

/// The 7x7 blur kernel of the BD model: `exp(-(x^2+y^2) / (2 * 1.6^2))` on
/// the grid `x, y in {-3..3}`, normalized to sum 1.
pub fn blur_kernel_7x7() -> [[f64; 7]; 7] {
    let sigma = 1.6f64;
    let mut k = [[0.0; 7]; 7];
    let mut sum = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (x, y) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            sum += *v;
        }
    }
    for row in k.iter_mut() {
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    k
}

/// 7x7 Gaussian blur with sigma 1.6 and edge replication at the borders.
pub fn gaussian_blur7(img: &ImageRGB) -> ImageRGB {
    let k = blur_kernel_7x7();
    let (h, w) = (img.height(), img.width());
    let mut out = ImageRGB::new(h, w);
    for ch in 0..3 {
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (i, row) in k.iter().enumerate() {
                    let sr = (r as i64 + i as i64 - 3).clamp(0, h as i64 - 1) as usize;
                    for (j, &kv) in row.iter().enumerate() {
                        let sc = (c as i64 + j as i64 - 3).clamp(0, w as i64 - 1) as usize;
                        acc += kv * img.get(ch, sr, sc);
                    }
                }
                out.set(ch, r, c, acc.clamp(0.0, 255.0));
            }
        }
    }
    out
}

/// Add i.i.d. zero-mean Gaussian noise with standard deviation `level`
/// (0-255 scale) from a seeded stream, then clamp to `[0, 255]`.
pub fn add_gaussian_noise(img: &ImageRGB, level: f64, seed: u64) -> ImageRGB {
    let mut rng = Rng::stream(seed, StreamKind::Noise);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + level * rng.gaussian()).clamp(0.0, 255.0);
    }
    out
}

/// Produce the LR counterpart of `hr` under `spec`.
///
/// The HR image is center-cropped to extents divisible by the scale first,
/// so the resampling grid has no fractional phase.
pub fn degrade(hr: &ImageRGB, spec: &DegradationSpec) -> Result<ImageRGB> {
    let s = spec.scale;
    let hr = hr.modcrop_center(s);
    if hr.height() < s || hr.width() < s {
        return Err(Error::usage(format!(
            "image {}x{} too small for scale {s}",
            hr.height(),
            hr.width()
        )));
    }
    let (lh, lw) = (hr.height() / s, hr.width() / s);
    match spec.kind {
        DegradationKind::Bi => bicubic_resize(&hr, lh, lw),
        DegradationKind::Bd => bicubic_resize(&gaussian_blur7(&hr), lh, lw),
        DegradationKind::Dn => {
            let lr = bicubic_resize(&hr, lh, lw)?;
            Ok(add_gaussian_noise(&lr, DN_NOISE_LEVEL, spec.noise_seed))
        }
    }
}
