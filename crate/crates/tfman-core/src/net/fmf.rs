use super::config::TfmanConfig;
use super::params::{BoundParams, ParamId};
use crate::blocks::{
    ca_forward, srnl_forward, tfm_forward, CaNodes, ConvNodes, MacCounter, NonLocalNodes,
    TfmConfig, TfmNodes,
};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// A convolution's parameter ids (weight plus optional bias).
#[derive(Debug, Clone, Copy)]
pub struct ConvIds {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl ConvIds {
    pub fn bind(&self, bound: &BoundParams) -> ConvNodes {
        ConvNodes {
            weight: bound.node(self.weight),
            bias: self.bias.map(|b| bound.node(b)),
        }
    }
}

/// A plumbing layer: convolution (or deconvolution) followed by PReLU.
#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub conv: ConvIds,
    /// PReLU slope; `None` on layers without an activation (H_Rec).
    pub act: Option<ParamId>,
}

/// Geometry of one plumbing layer application.
#[derive(Debug, Clone, Copy)]
pub enum LayerKind {
    Conv { stride: usize, padding: usize },
    Deconv { stride: usize, padding: usize },
}

/// Apply a layer to a `[C, H, W]` feature map (batch axis added and removed
/// around the rank-4 convolution kernels).
pub fn apply_layer<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    input: NodeId,
    layer: &LayerIds,
    kind: LayerKind,
) -> Result<NodeId> {
    let shape = tape.value(input).shape().to_vec();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let x4 = tape.reshape(input, &[1, c, h, w])?;
    let w_node = bound.node(layer.conv.weight);
    let mut out = match kind {
        LayerKind::Conv { stride, padding } => tape.conv2d(x4, w_node, stride, padding)?,
        LayerKind::Deconv { stride, padding } => {
            tape.conv_transpose2d(x4, w_node, stride, padding)?
        }
    };
    if let Some(bias) = layer.conv.bias {
        out = tape.add_channel_bias(out, bound.node(bias), 1)?;
    }
    if let Some(slope) = layer.act {
        out = tape.prelu(out, bound.node(slope), 1)?;
    }
    let os = tape.value(out).shape().to_vec();
    tape.reshape(out, &[os[1], os[2], os[3]])
}

/// TFM parameter ids.
#[derive(Debug, Clone, Copy)]
pub struct TfmIds {
    pub ft: ConvIds,
    pub k1: ConvIds,
    pub k2: ConvIds,
}

/// Non-local parameter ids.
#[derive(Debug, Clone, Copy)]
pub struct SrnlIds {
    pub theta: ConvIds,
    pub phi: ConvIds,
    pub g: ConvIds,
    pub out: ConvIds,
}

/// Channel attention parameter ids.
#[derive(Debug, Clone, Copy)]
pub struct CaIds {
    pub reduce: ConvIds,
    pub expand: ConvIds,
    pub mid_slope: Option<ParamId>,
}

/// One FMF block: the three branch modules (or their Base-variant
/// replacements) plus the fusion and resampling convolutions. Weights are
/// shared across recurrences; only the feature sets in `alphas` are
/// per-recurrence.
#[derive(Debug, Clone)]
pub struct FmfBlock {
    pub tfm: Option<TfmIds>,
    /// One feature set per recurrence (empty when TFM is off).
    pub alphas: Vec<ParamId>,
    /// Base replacement for TFM: a 3s x 3s deconvolution.
    pub tfm_up: Option<LayerIds>,
    pub srnl: Option<SrnlIds>,
    /// Base replacement for SRNL: a 3x3 convolution.
    pub srnl_conv: Option<LayerIds>,
    pub ca: Option<CaIds>,
    /// C-up-1: deconvolution after the SRNL branch.
    pub up1: LayerIds,
    /// OPs_1: two convolutions handling the branch difference.
    pub ops1: [LayerIds; 2],
    /// C-down-1: scale-strided convolution step(s).
    pub down1: Vec<LayerIds>,
    /// C-up-2: deconvolution fusing the identity branch.
    pub up2: LayerIds,
    /// C-down-2: scale-strided step(s) plus one normal convolution.
    pub down2_strided: Vec<LayerIds>,
    pub down2_conv: LayerIds,
}

impl FmfBlock {
    fn tfm_cfg(cfg: &TfmanConfig) -> TfmConfig {
        TfmConfig {
            num_features: cfg.tfm_features,
            feature_channels: cfg.tfm_channels,
            patch_size: cfg.tfm_patch,
            scale: cfg.scale,
        }
    }
}

/// One recurrence of feature matching and fusion.
///
/// Returns `(F_up, F_next)`: the up-sampled feature collected for the final
/// reconstruction and the re-down-sampled input of the next recurrence.
pub fn fmf_forward<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    block: &FmfBlock,
    cfg: &TfmanConfig,
    f_prev: NodeId,
    recurrence: usize,
    mut counter: Option<&mut MacCounter>,
) -> Result<(NodeId, NodeId)> {
    let (dk, ds, dp) = cfg.deconv_kernel();
    let deconv = LayerKind::Deconv {
        stride: ds,
        padding: dp,
    };
    let conv3 = LayerKind::Conv {
        stride: 1,
        padding: 1,
    };
    let _ = dk;

    // TFM branch (or its Base replacement), then channel attention.
    let matched = match (&block.tfm, &block.tfm_up) {
        (Some(tfm), _) => {
            let nodes = TfmNodes {
                ft: tfm.ft.bind(bound),
                k1: tfm.k1.bind(bound),
                k2: tfm.k2.bind(bound),
                alpha: bound.node(block.alphas[recurrence]),
            };
            tfm_forward(tape, f_prev, &nodes, &FmfBlock::tfm_cfg(cfg))?
        }
        (None, Some(up)) => apply_layer(tape, bound, f_prev, up, deconv)?,
        (None, None) => unreachable!("build() installs TFM or its replacement"),
    };
    let b1 = match &block.ca {
        Some(ca) => {
            let nodes = CaNodes {
                reduce: ca.reduce.bind(bound),
                expand: ca.expand.bind(bound),
                mid_slope: ca.mid_slope.map(|s| bound.node(s)),
            };
            ca_forward(tape, matched, &nodes)?
        }
        None => matched,
    };

    // SRNL branch (or its Base replacement), up-sampled by C-up-1.
    let refined = match (&block.srnl, &block.srnl_conv) {
        (Some(srnl), _) => {
            let nodes = NonLocalNodes {
                theta: srnl.theta.bind(bound),
                phi: srnl.phi.bind(bound),
                g: srnl.g.bind(bound),
                out: srnl.out.bind(bound),
                residual: cfg.nonlocal_residual,
            };
            srnl_forward(
                tape,
                f_prev,
                cfg.srnl_division,
                &nodes,
                counter.as_deref_mut(),
            )?
        }
        (None, Some(conv)) => apply_layer(tape, bound, f_prev, conv, conv3)?,
        (None, None) => unreachable!("build() installs SRNL or its replacement"),
    };
    let b2 = apply_layer(tape, bound, refined, &block.up1, deconv)?;

    // First fusion: handle the difference of the branch outputs.
    let diff = tape.sub(b2, b1)?;
    let t = apply_layer(tape, bound, diff, &block.ops1[0], conv3)?;
    let t = apply_layer(tape, bound, t, &block.ops1[1], conv3)?;
    let fuse = tape.add(t, b1)?;

    // Second fusion: fold in the identity branch.
    let mut down = fuse;
    for (step, (k, s, p)) in block.down1.iter().zip(cfg.downsample_steps()) {
        down = apply_layer(
            tape,
            bound,
            down,
            step,
            LayerKind::Conv {
                stride: s,
                padding: p,
            },
        )?;
        let _ = k;
    }
    let residual = tape.sub(f_prev, down)?;
    let up = apply_layer(tape, bound, residual, &block.up2, deconv)?;
    let f_up = tape.add(up, fuse)?;

    // Down-sample back to the middle feature space.
    let mut next = f_up;
    for (step, (_, s, p)) in block.down2_strided.iter().zip(cfg.downsample_steps()) {
        next = apply_layer(
            tape,
            bound,
            next,
            step,
            LayerKind::Conv {
                stride: s,
                padding: p,
            },
        )?;
    }
    let f_next = apply_layer(tape, bound, next, &block.down2_conv, conv3)?;
    Ok((f_up, f_next))
}
