use super::ConvNodes;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Shape parameters of the trainable feature matching module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TfmConfig {
    /// Number of features N in each set.
    pub num_features: usize,
    /// Channels R of each feature.
    pub feature_channels: usize,
    /// Matched patch size K; features are (sK, sK).
    pub patch_size: usize,
    /// Scale factor s.
    pub scale: usize,
}

impl TfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_features == 0
            || self.feature_channels == 0
            || self.patch_size == 0
            || self.scale == 0
        {
            return Err(Error::config("TFM extents must all be >= 1"));
        }
        if self.patch_size % 2 == 0 {
            return Err(Error::config(
                "TFM patch size must be odd so matching can use symmetric padding",
            ));
        }
        Ok(())
    }

    /// Spatial extent of a stored feature.
    pub fn feature_extent(&self) -> usize {
        self.scale * self.patch_size
    }
}

/// The n trainable feature sets, one per recurrence, each `(N, R, sK, sK)`.
#[derive(Debug, Clone)]
pub struct FeatureSetBank<T> {
    sets: Vec<Tensor<T>>,
}

impl<T: Scalar> FeatureSetBank<T> {
    /// Initialize with zero-mean Gaussian entries, std 0.1.
    pub fn init(cfg: &TfmConfig, recurrences: usize, rng: &mut Rng) -> Self {
        let e = cfg.feature_extent();
        let shape = [cfg.num_features, cfg.feature_channels, e, e];
        let sets = (0..recurrences)
            .map(|_| Tensor::generate(&shape, || T::from_f64(0.1 * rng.gaussian())))
            .collect();
        FeatureSetBank { sets }
    }

    pub fn sets(&self) -> &[Tensor<T>] {
        &self.sets
    }

    /// Total trainable scalars: `n * N * R * s^2 * K^2`.
    pub fn scalar_count(&self) -> usize {
        self.sets.iter().map(|t| t.numel()).sum()
    }
}

/// Per-pixel count of overlapping reconstruction patches for an `(sK, sK)`
/// kernel applied with stride `s` over an `H x W` grid, after cropping
/// `s(K-1)/2` on every border. `K^2` in the interior, smaller near borders.
pub fn overlap_count_map<T: Scalar>(h: usize, w: usize, k: usize, s: usize) -> Result<Tensor<T>> {
    if s * (k - 1) % 2 != 0 {
        return Err(Error::config(
            "overlap map needs s*(K-1) even for symmetric cropping",
        ));
    }
    let pad = s * (k - 1) / 2;
    let axis_counts = |len: usize| -> Vec<f64> {
        let out_len = (len - 1) * s + s * k - 2 * pad;
        (0..out_len)
            .map(|y| {
                let mut count = 0;
                for ky in 0..s * k {
                    let num = y as i64 + pad as i64 - ky as i64;
                    if num >= 0 && num % s as i64 == 0 && (num / s as i64) < len as i64 {
                        count += 1;
                    }
                }
                count as f64
            })
            .collect()
    };
    let rows = axis_counts(h);
    let cols = axis_counts(w);
    let mut out = Tensor::zeros(&[rows.len(), cols.len()]);
    let o = out.data_mut();
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            o[i * cols.len() + j] = T::from_f64(r * c);
        }
    }
    Ok(out)
}

/// Bound tape nodes of one TFM application.
#[derive(Debug, Clone, Copy)]
pub struct TfmNodes {
    /// 1x1 convolution with identical channel mapping, applied before
    /// matching.
    pub ft: ConvNodes,
    /// 1x1 convolution R -> 1 producing the matching samples.
    pub k1: ConvNodes,
    /// 1x1 convolution R -> 1 producing the reconstruction samples.
    pub k2: ConvNodes,
    /// The feature set of this recurrence, `(N, R, sK, sK)`.
    pub alpha: NodeId,
}

/// Trainable feature matching: match every K x K patch of each channel
/// against N learned features and rebuild an up-scaled channel as the
/// softmax-weighted, overlap-averaged sum of the features' reconstruction
/// samples.
pub fn tfm_forward<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    nodes: &TfmNodes,
    cfg: &TfmConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::config("tfm_forward expects a [C, H, W] input"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (n, k, s) = (cfg.num_features, cfg.patch_size, cfg.scale);
    let alpha_shape = tape.value(nodes.alpha).shape();
    if alpha_shape
        != [
            n,
            cfg.feature_channels,
            cfg.feature_extent(),
            cfg.feature_extent(),
        ]
    {
        return Err(Error::config(format!(
            "feature set shape {alpha_shape:?} does not match TFM config"
        )));
    }

    // F_match: 1x1 conv over channels, then channels become the batch axis
    // so matching runs per channel.
    let x4 = tape.reshape(input, &[1, c, h, w])?;
    let ft = nodes.ft.apply(tape, x4, 0)?;
    let f_match = tape.reshape(ft, &[c, 1, h, w])?;

    // Matching samples k1: bilinear sK -> K, then 1x1 conv R -> 1.
    let alpha_small = tape.bilinear_resize(nodes.alpha, k, k)?;
    let k1 = nodes.k1.apply(tape, alpha_small, 0)?; // (N, 1, K, K)

    // Similarity scores and their softmax over the feature axis.
    let scores = tape.conv2d(f_match, k1, 1, (k - 1) / 2)?; // (C, N, H, W)
    let weights = tape.softmax(scores, 1)?;

    // Reconstruction samples k2: 1x1 conv R -> 1 on the full-size features.
    let k2 = nodes.k2.apply(tape, nodes.alpha, 0)?; // (N, 1, sK, sK)

    // Weighted tiling of the reconstruction samples; overlapping patches
    // are averaged by the exact border-aware contribution count.
    let pad = s * (k - 1) / 2;
    let recon = tape.conv_transpose2d(weights, k2, s, pad)?; // (C, 1, sH, sW)
    let counts = overlap_count_map::<T>(h, w, k, s)?;
    let averaged = tape.div_const_map(recon, counts)?;
    tape.reshape(averaged, &[c, s * h, s * w])
}
