use std::sync::OnceLock;

use super::{degrade, DegradationSpec, ImageRGB};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// The eight dihedral augmentation codes: `code = rot + 4 * flip`, meaning
/// an optional horizontal mirror followed by `rot` counterclockwise
/// quarter-turns.
pub const DIHEDRAL_CODES: [u8; 8] = [0, 1, 2, 3, 4, 5, 6, 7];

fn rotate90_ccw(img: &ImageRGB) -> ImageRGB {
    let (h, w) = (img.height(), img.width());
    let mut out = ImageRGB::new(w, h);
    for ch in 0..3 {
        for r in 0..w {
            for c in 0..h {
                out.set(ch, r, c, img.get(ch, c, w - 1 - r));
            }
        }
    }
    out
}

fn mirror_h(img: &ImageRGB) -> ImageRGB {
    let (h, w) = (img.height(), img.width());
    let mut out = ImageRGB::new(h, w);
    for ch in 0..3 {
        for r in 0..h {
            for c in 0..w {
                out.set(ch, r, c, img.get(ch, r, w - 1 - c));
            }
        }
    }
    out
}

/// Apply dihedral augmentation `code` (0..8).
pub fn augment_image(img: &ImageRGB, code: u8) -> ImageRGB {
    debug_assert!(code < 8);
    let mut out = if code & 4 != 0 {
        mirror_h(img)
    } else {
        img.clone()
    };
    for _ in 0..(code & 3) {
        out = rotate90_ccw(&out);
    }
    out
}

fn dihedral_table() -> &'static [[u8; 8]; 8] {
    static TABLE: OnceLock<[[u8; 8]; 8]> = OnceLock::new();
    TABLE.get_or_init(|| {
        // Derive the group table on an asymmetric 2x2 marker; all eight
        // images are distinct, so matching identifies the composite code.
        let mut marker = ImageRGB::new(2, 2);
        for ch in 0..3 {
            marker.set(ch, 0, 0, 1.0);
            marker.set(ch, 0, 1, 2.0);
            marker.set(ch, 1, 0, 3.0);
            marker.set(ch, 1, 1, 4.0);
        }
        let images: Vec<ImageRGB> = (0..8).map(|c| augment_image(&marker, c)).collect();
        let mut table = [[0u8; 8]; 8];
        for a in 0..8 {
            for b in 0..8 {
                let composed = augment_image(&images[a], b as u8);
                let c = images
                    .iter()
                    .position(|m| m.data() == composed.data())
                    .expect("dihedral group is closed");
                table[a][b] = c as u8;
            }
        }
        table
    })
}

/// The code equivalent to applying `first` and then `second`.
pub fn compose_dihedral(first: u8, second: u8) -> u8 {
    dihedral_table()[first as usize][second as usize]
}

/// Where a patch pair came from: enough to reproduce the exact crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub image_id: u64,
    pub row: usize,
    pub col: usize,
    pub aug: u8,
}

/// Aligned LR/HR training patches in `[0, 1]`, with the augmentation
/// applied identically to both.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub provenance: Provenance,
}

/// An HR image with its LR counterpart degraded once up front, so crops
/// taken later are consistent across the whole patch (including borders).
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub image_id: u64,
    pub scale: usize,
    /// Center-cropped HR (extents divisible by the scale).
    pub hr: ImageRGB,
    pub lr: ImageRGB,
}

impl PreparedImage {
    pub fn prepare(hr: &ImageRGB, spec: &DegradationSpec, image_id: u64) -> Result<Self> {
        let cropped = hr.modcrop_center(spec.scale);
        let lr = degrade(&cropped, spec)?;
        Ok(PreparedImage {
            image_id,
            scale: spec.scale,
            hr: cropped,
            lr,
        })
    }
}

/// Draw one augmented patch pair. The RNG is consumed in a fixed order
/// (row, column, augmentation code), so a given stream yields a fixed pair.
pub fn sample_from_prepared(prep: &PreparedImage, p: usize, rng: &mut Rng) -> Result<PatchPair> {
    let (lh, lw) = (prep.lr.height(), prep.lr.width());
    if lh < p || lw < p {
        return Err(Error::usage(format!(
            "LR extents {lh}x{lw} smaller than patch size {p}"
        )));
    }
    let s = prep.scale;
    let row = rng.below(lh - p + 1);
    let col = rng.below(lw - p + 1);
    let aug = rng.below(8) as u8;
    let lr_patch = prep.lr.crop(row, col, p, p)?;
    let hr_patch = prep.hr.crop(s * row, s * col, s * p, s * p)?;
    Ok(PatchPair {
        lr: augment_image(&lr_patch, aug).to_unit_tensor(),
        hr: augment_image(&hr_patch, aug).to_unit_tensor(),
        provenance: Provenance {
            image_id: prep.image_id,
            row,
            col,
            aug,
        },
    })
}

/// One-shot variant: degrade the full image, then crop aligned windows.
pub fn sample_patch_pair(
    hr: &ImageRGB,
    spec: &DegradationSpec,
    p: usize,
    rng: &mut Rng,
) -> Result<PatchPair> {
    let prep = PreparedImage::prepare(hr, spec, 0)?;
    sample_from_prepared(&prep, p, rng)
}
