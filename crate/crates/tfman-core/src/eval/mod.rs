//! Dataset-level PSNR/SSIM benchmarking: degrade each HR image, super-
//! resolve it, score on the Y channel with a border shave, aggregate.

mod metrics;

pub use metrics::{psnr_y, ssim_y, PSNR_CAP_DB};

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{bicubic_resize, degrade, DegradationSpec, ImageRGB};
use crate::net::Model;
use crate::tensor::Tensor;

/// Something that can turn an LR image into an SR image.
pub trait Upscaler {
    fn name(&self) -> String;
    fn upscale(&self, lr: &ImageRGB, scale: usize) -> Result<ImageRGB>;
}

/// The classical baseline: plain bicubic upscaling.
pub struct BicubicUpscaler;

impl Upscaler for BicubicUpscaler {
    fn name(&self) -> String {
        "bicubic".to_string()
    }

    fn upscale(&self, lr: &ImageRGB, scale: usize) -> Result<ImageRGB> {
        bicubic_resize(lr, lr.height() * scale, lr.width() * scale)
    }
}

/// A trained network. Inputs are scaled to `[0, 1]` for the forward pass
/// and back to `[0, 255]` afterwards (clamped at export).
pub struct ModelUpscaler {
    pub model: Model<f32>,
}

impl Upscaler for ModelUpscaler {
    fn name(&self) -> String {
        format!("tfman_x{}", self.model.cfg.scale)
    }

    fn upscale(&self, lr: &ImageRGB, scale: usize) -> Result<ImageRGB> {
        if scale != self.model.cfg.scale {
            return Err(Error::usage(format!(
                "model is x{}, requested x{scale}",
                self.model.cfg.scale
            )));
        }
        let out = self.model.forward(&lr.to_unit_tensor())?;
        ImageRGB::from_unit_tensor(&out)
    }
}

/// Per-image metric row.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub file: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Aggregated benchmark result.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub model_id: String,
    pub spec: DegradationSpec,
    pub crop: usize,
    pub rows: Vec<MetricsRow>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Files skipped with the reason, one line each.
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,psnr_db,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.4},{:.6}\n", r.file, r.psnr_db, r.ssim));
        }
        s.push_str(&format!(
            "mean,{:.4},{:.6}\n",
            self.mean_psnr_db, self.mean_ssim
        ));
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "model {} | {:?} x{} | crop {}\n{:<24} {:>9} {:>8}\n",
            self.model_id, self.spec.kind, self.spec.scale, self.crop, "file", "psnr_db", "ssim"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<24} {:>9.4} {:>8.4}\n",
                r.file, r.psnr_db, r.ssim
            ));
        }
        s.push_str(&format!(
            "{:<24} {:>9.4} {:>8.4}\n",
            "mean", self.mean_psnr_db, self.mean_ssim
        ));
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

/// Resolve the HR directory of a dataset: `<dir>/HR` when present,
/// otherwise `<dir>` itself.
pub fn hr_dir(dataset: &Path) -> std::path::PathBuf {
    let hr = dataset.join("HR");
    if hr.is_dir() {
        hr
    } else {
        dataset.to_path_buf()
    }
}

/// Benchmark an upscaler over a dataset directory.
///
/// Each HR image is center-cropped to the scale, degraded per `spec` (the
/// DN noise stream is derived per file from the spec seed and the stem),
/// super-resolved, rounded to 8 bits and scored against the cropped HR.
/// Unreadable files are skipped with a warning. Files are processed in
/// stem order, so the report is deterministic.
pub fn evaluate(
    upscaler: &dyn Upscaler,
    dataset: &Path,
    spec: &DegradationSpec,
    crop: usize,
) -> Result<MetricsReport> {
    let dir = hr_dir(dataset);
    let entries = crate::image::list_png_stems(&dir)?;
    if entries.is_empty() {
        return Err(Error::usage(format!(
            "no PNG images found in {}",
            dir.display()
        )));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (stem, path) in entries {
        let hr = match ImageRGB::load_png(&path) {
            Ok(img) => img,
            Err(e) => {
                warnings.push(format!("{stem}: {e}"));
                continue;
            }
        };
        let hr = hr.modcrop_center(spec.scale);
        let lr = degrade(&hr, &spec.for_stem(&stem))?;
        let sr = match upscaler.upscale(&lr, spec.scale) {
            Ok(img) => img.quantize_u8(),
            Err(e) => {
                warnings.push(format!("{stem}: {e}"));
                continue;
            }
        };
        let psnr = psnr_y(&sr, &hr, crop)?.min(PSNR_CAP_DB);
        let ssim = ssim_y(&sr, &hr, crop)?;
        rows.push(MetricsRow {
            file: stem,
            psnr_db: psnr,
            ssim,
        });
    }
    if rows.is_empty() {
        return Err(Error::usage("every image in the dataset failed"));
    }
    let n = rows.len() as f64;
    let mean_psnr_db = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
    let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    Ok(MetricsReport {
        model_id: upscaler.name(),
        spec: *spec,
        crop,
        rows,
        mean_psnr_db,
        mean_ssim,
        warnings,
    })
}

/// Exact-HR reference used in tests: returns the stored ground truth whose
/// extents match the requested output.
pub struct OracleUpscaler {
    pub hrs: Vec<ImageRGB>,
}

impl Upscaler for OracleUpscaler {
    fn name(&self) -> String {
        "oracle".to_string()
    }

    fn upscale(&self, lr: &ImageRGB, scale: usize) -> Result<ImageRGB> {
        let (h, w) = (lr.height() * scale, lr.width() * scale);
        self.hrs
            .iter()
            .find(|img| img.height() == h && img.width() == w)
            .cloned()
            .ok_or_else(|| Error::usage("oracle has no ground truth of this size"))
    }
}

/// A model tensor helper for tests: identity "network" that bicubically
/// upscales through the tensor interface.
pub fn unit_tensor_roundtrip(lr: &ImageRGB) -> Tensor<f32> {
    lr.to_unit_tensor()
}
