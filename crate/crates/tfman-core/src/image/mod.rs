//! Image values, PNG I/O and the LR production pipeline.
//!
//! Images stay in floating point (`f64`, range `[0, 255]`) through every
//! degradation step; quantization to 8 bits happens only when a file is
//! written, which keeps metrics free of double-quantization bias.

mod bicubic;
mod color;
mod degrade;
mod patch;

pub use bicubic::bicubic_resize;
pub use color::rgb_to_y;
pub use degrade::{add_gaussian_noise, degrade, gaussian_blur7, DegradationKind, DegradationSpec};
pub use patch::{
    augment_image, compose_dihedral, sample_from_prepared, sample_patch_pair, PatchPair,
    PreparedImage, Provenance, DIHEDRAL_CODES,
};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with `f64` samples in `[0, 255]`, stored channel-major
/// (`[3][H][W]`, rows fastest within a channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize) -> Self {
        ImageRGB {
            height,
            width,
            data: vec![0.0; 3 * height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::config("image buffer does not match extents"));
        }
        Ok(ImageRGB {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        self.data[(channel * self.height + row) * self.width + col] = v;
    }

    pub fn clamp_255(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 255.0);
        }
    }

    /// Crop `h x w` starting at `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, h: usize, w: usize) -> Result<ImageRGB> {
        if r0 + h > self.height || c0 + w > self.width {
            return Err(Error::usage("crop exceeds image extents"));
        }
        let mut out = ImageRGB::new(h, w);
        for ch in 0..3 {
            for r in 0..h {
                for c in 0..w {
                    out.set(ch, r, c, self.get(ch, r0 + r, c0 + c));
                }
            }
        }
        Ok(out)
    }

    /// Center-crop so both extents are divisible by `s`.
    pub fn modcrop_center(&self, s: usize) -> ImageRGB {
        let h = self.height - self.height % s;
        let w = self.width - self.width % s;
        let r0 = (self.height - h) / 2;
        let c0 = (self.width - w) / 2;
        self.crop(r0, c0, h, w).expect("modcrop stays in bounds")
    }

    /// Tensor view in `[0, 1]` for feeding the network.
    pub fn to_unit_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[3, self.height, self.width],
            self.data.iter().map(|&v| (v / 255.0) as f32).collect(),
        )
        .expect("image buffer matches extents")
    }

    /// Inverse of [`ImageRGB::to_unit_tensor`]; clamps to `[0, 255]`.
    pub fn from_unit_tensor(t: &Tensor<f32>) -> Result<ImageRGB> {
        if t.rank() != 3 || t.dim(0) != 3 {
            return Err(Error::usage("expected a [3, H, W] tensor"));
        }
        let (h, w) = (t.dim(1), t.dim(2));
        let data = t
            .data()
            .iter()
            .map(|&v| (v as f64 * 255.0).clamp(0.0, 255.0))
            .collect();
        ImageRGB::from_data(h, w, data)
    }

    /// Quantize to 8 bits (round half away from zero, like a file write).
    pub fn quantize_u8(&self) -> ImageRGB {
        ImageRGB {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| v.clamp(0.0, 255.0).round())
                .collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<ImageRGB> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut out = ImageRGB::new(h, w);
        for (r, row) in rgb.rows().enumerate() {
            for (c, px) in row.enumerate() {
                out.set(0, r, c, px.0[0] as f64);
                out.set(1, r, c, px.0[1] as f64);
                out.set(2, r, c, px.0[2] as f64);
            }
        }
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let px = [
                    self.get(0, r, c).clamp(0.0, 255.0).round() as u8,
                    self.get(1, r, c).clamp(0.0, 255.0).round() as u8,
                    self.get(2, r, c).clamp(0.0, 255.0).round() as u8,
                ];
                buf.put_pixel(c as u32, r as u32, image::Rgb(px));
            }
        }
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Sorted `(stem, path)` pairs of the PNGs in `dir`, the deterministic
/// dataset traversal order.
pub fn list_png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

/// `LR_<kind>_x<s>`, the LR sibling of a dataset's `HR` directory.
pub fn lr_dir_name(kind: DegradationKind, scale: usize) -> String {
    format!("LR_{}_x{}", kind.as_str(), scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modcrop_center_divisibility() {
        let img = ImageRGB::new(17, 23);
        let c = img.modcrop_center(3);
        assert_eq!((c.height(), c.width()), (15, 21));
        let d = img.modcrop_center(1);
        assert_eq!((d.height(), d.width()), (17, 23));
    }

    #[test]
    fn unit_tensor_roundtrip() {
        let mut img = ImageRGB::new(2, 2);
        img.set(0, 0, 0, 255.0);
        img.set(1, 1, 1, 128.0);
        let t = img.to_unit_tensor();
        let back = ImageRGB::from_unit_tensor(&t).unwrap();
        assert!(img
            .data()
            .iter()
            .zip(back.data())
            .all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn png_roundtrip_is_exact_for_integral_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let mut img = ImageRGB::new(3, 5);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = (i * 7 % 256) as f64;
        }
        img.save_png(&path).unwrap();
        let back = ImageRGB::load_png(&path).unwrap();
        assert_eq!(img.data(), back.data());
    }
}
