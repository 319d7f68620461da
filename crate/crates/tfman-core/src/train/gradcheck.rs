//! Central-difference verification of the reverse pass.
//!
//! Every check runs in double precision: record the computation once and
//! read the analytic gradients, then re-evaluate the scalar with each
//! sampled element nudged by ±h and compare.

use crate::blocks::{
    ca_forward, nonlocal_block, srnl_forward, tfm_forward, CaNodes, ConvNodes, NonLocalNodes,
    TfmConfig, TfmNodes,
};
use crate::error::Result;
use crate::net::{BoundParams, Model, TfmanConfig};
use crate::rng::Rng;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Largest discrepancy found by a check, with enough context to report.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// `(label, worst error)` per checked quantity.
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn max_err(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn merge(&mut self, other: GradReport) {
        self.entries.extend(other.entries);
    }
}

/// Relative error with an absolute fallback for near-zero gradients.
fn grad_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if analytic.abs() < 1e-8 && numeric.abs() < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Which elements to difference.
pub enum SamplePlan {
    /// Every element of every input.
    All,
    /// `n` elements drawn over all inputs jointly.
    Total(usize),
}

/// Check the gradient of a taped scalar function of `inputs`.
///
/// `f` must record the same computation every call (it is replayed for the
/// ±h evaluations). Returns the worst error per input tensor.
pub fn check_scalar_fn(
    label: &str,
    f: &mut dyn FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
    inputs: &[Tensor<f64>],
    plan: SamplePlan,
    rng: &mut Rng,
) -> Result<GradReport> {
    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let out = f(&mut tape, &ids)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| {
            tape.grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    // Pick the elements to difference.
    let mut picks: Vec<(usize, usize)> = Vec::new();
    match plan {
        SamplePlan::All => {
            for (i, t) in inputs.iter().enumerate() {
                for e in 0..t.numel() {
                    picks.push((i, e));
                }
            }
        }
        SamplePlan::Total(n) => {
            let total: usize = inputs.iter().map(|t| t.numel()).sum();
            for _ in 0..n {
                let mut flat = rng.below(total);
                for (i, t) in inputs.iter().enumerate() {
                    if flat < t.numel() {
                        picks.push((i, flat));
                        break;
                    }
                    flat -= t.numel();
                }
            }
        }
    }

    let mut eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = perturbed
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).data()[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = vec![0.0f64; inputs.len()];
    for (i, e) in picks {
        let orig = work[i].data()[e];
        work[i].data_mut()[e] = orig + FD_STEP;
        let plus = eval(&work)?;
        work[i].data_mut()[e] = orig - FD_STEP;
        let minus = eval(&work)?;
        work[i].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = grad_error(analytic[i].data()[e], numeric);
        if err > worst[i] {
            worst[i] = err;
        }
    }
    Ok(GradReport {
        entries: inputs
            .iter()
            .enumerate()
            .map(|(i, _)| (format!("{label}[{i}]"), worst[i]))
            .collect(),
    })
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::generate(shape, || rng.uniform_in(-1.0, 1.0))
}

/// Random values bounded away from zero (for kinked ops like prelu and the
/// absolute value in the L1 loss).
fn random_off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::generate(shape, || {
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.uniform_in(0.1, 1.0)
    })
}

/// Finite-difference checks of every tensor-core operation on small random
/// instances.
pub fn gradcheck_tensor_ops(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let mut report = GradReport {
        entries: Vec::new(),
    };
    let mut run = |label: &str,
                   f: &mut dyn FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
                   inputs: &[Tensor<f64>],
                   rng: &mut Rng|
     -> Result<()> {
        let r = check_scalar_fn(label, f, inputs, SamplePlan::All, rng)?;
        report.merge(r);
        Ok(())
    };

    // conv2d, w.r.t. input and kernel.
    {
        let x = random(&[1, 2, 4, 4], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let g = random(&[1, 3, 4, 4], &mut rng);
        run(
            "conv2d",
            &mut |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], 1, 1)?;
                tape.weighted_sum(y, g.clone())
            },
            &[x, k],
            &mut rng,
        )?;
    }
    // conv2d with stride 2.
    {
        let x = random(&[1, 1, 4, 4], &mut rng);
        let k = random(&[2, 1, 2, 2], &mut rng);
        let g = random(&[1, 2, 2, 2], &mut rng);
        run(
            "conv2d_strided",
            &mut |tape, ids| {
                let y = tape.conv2d(ids[0], ids[1], 2, 0)?;
                tape.weighted_sum(y, g.clone())
            },
            &[x, k],
            &mut rng,
        )?;
    }
    // conv_transpose2d, w.r.t. input and kernel.
    {
        let x = random(&[1, 2, 3, 3], &mut rng);
        let k = random(&[2, 2, 4, 4], &mut rng);
        let g = random(&[1, 2, 6, 6], &mut rng);
        run(
            "conv_transpose2d",
            &mut |tape, ids| {
                let y = tape.conv_transpose2d(ids[0], ids[1], 2, 1)?;
                tape.weighted_sum(y, g.clone())
            },
            &[x, k],
            &mut rng,
        )?;
    }
    // softmax along a middle axis.
    {
        let x = random(&[2, 4, 4], &mut rng);
        let g = random(&[2, 4, 4], &mut rng);
        run(
            "softmax",
            &mut |tape, ids| {
                let y = tape.softmax(ids[0], 1)?;
                tape.weighted_sum(y, g.clone())
            },
            &[x],
            &mut rng,
        )?;
    }
    // prelu w.r.t. input and slope, inputs bounded away from the kink.
    {
        let x = random_off_zero(&[1, 3, 4, 4], &mut rng);
        let s = random_off_zero(&[3], &mut rng);
        let g = random(&[1, 3, 4, 4], &mut rng);
        run(
            "prelu",
            &mut |tape, ids| {
                let y = tape.prelu(ids[0], ids[1], 1)?;
                tape.weighted_sum(y, g.clone())
            },
            &[x, s],
            &mut rng,
        )?;
    }
    // bilinear resize (both directions).
    {
        let x = random(&[2, 4, 4], &mut rng);
        let g_up = random(&[2, 6, 7], &mut rng);
        run(
            "bilinear_up",
            &mut |tape, ids| {
                let y = tape.bilinear_resize(ids[0], 6, 7)?;
                tape.weighted_sum(y, g_up.clone())
            },
            &[x.clone()],
            &mut rng,
        )?;
        let g_down = random(&[2, 2, 3], &mut rng);
        run(
            "bilinear_down",
            &mut |tape, ids| {
                let y = tape.bilinear_resize(ids[0], 2, 3)?;
                tape.weighted_sum(y, g_down.clone())
            },
            &[x],
            &mut rng,
        )?;
    }
    // global average pooling.
    {
        let x = random(&[1, 3, 4, 4], &mut rng);
        let g = random(&[1, 3, 1, 1], &mut rng);
        run(
            "global_avg_pool",
            &mut |tape, ids| {
                let y = tape.global_avg_pool(ids[0])?;
                tape.weighted_sum(y, g.clone())
            },
            &[x],
            &mut rng,
        )?;
    }
    // matmul w.r.t. both factors.
    {
        let a = random(&[4, 3], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let g = random(&[4, 4], &mut rng);
        run(
            "matmul",
            &mut |tape, ids| {
                let y = tape.matmul(ids[0], ids[1])?;
                tape.weighted_sum(y, g.clone())
            },
            &[a, b],
            &mut rng,
        )?;
    }
    // l1 loss away from ties.
    {
        let target = Tensor::zeros(&[3, 4, 4]);
        let p = random_off_zero(&[3, 4, 4], &mut rng);
        run(
            "l1_loss",
            &mut |tape, ids| tape.l1_loss(ids[0], target.clone()),
            &[p],
            &mut rng,
        )?;
    }
    // A composite touching the remaining ops: elementwise arithmetic,
    // concat, crop, cover, channel bias and channel scaling.
    {
        let a = random(&[2, 4, 4], &mut rng);
        let b = random(&[2, 4, 4], &mut rng);
        let bias = random(&[2], &mut rng);
        let factors = random_off_zero(&[4], &mut rng);
        let g = random(&[4, 4, 4], &mut rng);
        let rect_a = crate::ops::Rect {
            r0: 0,
            r1: 3,
            c0: 0,
            c1: 3,
        };
        let rect_b = crate::ops::Rect {
            r0: 1,
            r1: 4,
            c0: 1,
            c1: 4,
        };
        run(
            "composite",
            &mut |tape, ids| {
                let sum = tape.add(ids[0], ids[1])?;
                let diff = tape.sub(ids[0], ids[1])?;
                let prod = tape.mul(sum, diff)?;
                let x4 = tape.reshape(prod, &[1, 2, 4, 4])?;
                let biased = tape.add_channel_bias(x4, ids[2], 1)?;
                let b3 = tape.reshape(biased, &[2, 4, 4])?;
                let ca = tape.crop3(b3, rect_a)?;
                let cb = tape.crop3(b3, rect_b)?;
                let covered = tape.paste_seq(&[ca, cb], &[rect_a, rect_b], 4, 4)?;
                let cat = tape.concat_channels(&[covered, b3])?;
                let scaled = tape.mul_channels(cat, ids[3])?;
                tape.weighted_sum(scaled, g.clone())
            },
            &[a, b, bias, factors],
            &mut rng,
        )?;
    }
    Ok(report)
}

/// Finite-difference check of TFM on toy shapes, over the input, the
/// feature set and all three 1x1 convolutions.
pub fn gradcheck_tfm(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let cfg = TfmConfig {
        num_features: 3,
        feature_channels: 2,
        patch_size: 3,
        scale: 2,
    };
    let x = random(&[2, 4, 4], &mut rng);
    let alpha = random(&[3, 2, 6, 6], &mut rng);
    let ft_w = random(&[2, 2, 1, 1], &mut rng);
    let ft_b = random(&[2], &mut rng);
    let k1_w = random(&[1, 2, 1, 1], &mut rng);
    let k1_b = random(&[1], &mut rng);
    let k2_w = random(&[1, 2, 1, 1], &mut rng);
    let k2_b = random(&[1], &mut rng);
    let g = random(&[2, 8, 8], &mut rng);
    check_scalar_fn(
        "tfm",
        &mut |tape, ids| {
            let nodes = TfmNodes {
                ft: ConvNodes {
                    weight: ids[2],
                    bias: Some(ids[3]),
                },
                k1: ConvNodes {
                    weight: ids[4],
                    bias: Some(ids[5]),
                },
                k2: ConvNodes {
                    weight: ids[6],
                    bias: Some(ids[7]),
                },
                alpha: ids[1],
            };
            let y = tfm_forward(tape, ids[0], &nodes, &cfg)?;
            tape.weighted_sum(y, g.clone())
        },
        &[x, alpha, ft_w, ft_b, k1_w, k1_b, k2_w, k2_b],
        SamplePlan::All,
        &mut rng,
    )
}

/// Finite-difference check of SRNL on a non-divisible 5x5 map with P = 3,
/// which exercises the cover-masked gradients.
pub fn gradcheck_srnl(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let x = random(&[2, 5, 5], &mut rng);
    let theta_w = random(&[2, 2, 1, 1], &mut rng);
    let theta_b = random(&[2], &mut rng);
    let phi_w = random(&[2, 2, 1, 1], &mut rng);
    let phi_b = random(&[2], &mut rng);
    let g_w = random(&[2, 2, 1, 1], &mut rng);
    let g_b = random(&[2], &mut rng);
    let out_w = random(&[2, 2, 1, 1], &mut rng);
    let out_b = random(&[2], &mut rng);
    let g = random(&[2, 5, 5], &mut rng);
    check_scalar_fn(
        "srnl",
        &mut |tape, ids| {
            let nodes = NonLocalNodes {
                theta: ConvNodes {
                    weight: ids[1],
                    bias: Some(ids[2]),
                },
                phi: ConvNodes {
                    weight: ids[3],
                    bias: Some(ids[4]),
                },
                g: ConvNodes {
                    weight: ids[5],
                    bias: Some(ids[6]),
                },
                out: ConvNodes {
                    weight: ids[7],
                    bias: Some(ids[8]),
                },
                residual: true,
            };
            let y = srnl_forward(tape, ids[0], 3, &nodes, None)?;
            tape.weighted_sum(y, g.clone())
        },
        &[x, theta_w, theta_b, phi_w, phi_b, g_w, g_b, out_w, out_b],
        SamplePlan::All,
        &mut rng,
    )
}

/// Finite-difference check of plain non-local attention on a single block.
pub fn gradcheck_nonlocal(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let x = random(&[2, 3, 3], &mut rng);
    let w: Vec<Tensor<f64>> = (0..4).map(|_| random(&[2, 2, 1, 1], &mut rng)).collect();
    let g = random(&[2, 3, 3], &mut rng);
    let inputs = vec![x, w[0].clone(), w[1].clone(), w[2].clone(), w[3].clone()];
    check_scalar_fn(
        "nonlocal",
        &mut |tape, ids| {
            let nodes = NonLocalNodes {
                theta: ConvNodes {
                    weight: ids[1],
                    bias: None,
                },
                phi: ConvNodes {
                    weight: ids[2],
                    bias: None,
                },
                g: ConvNodes {
                    weight: ids[3],
                    bias: None,
                },
                out: ConvNodes {
                    weight: ids[4],
                    bias: None,
                },
                residual: true,
            };
            let y = nonlocal_block(tape, ids[0], &nodes, None)?;
            tape.weighted_sum(y, g.clone())
        },
        &inputs,
        SamplePlan::All,
        &mut rng,
    )
}

/// Finite-difference check of channel attention.
pub fn gradcheck_ca(seed: u64) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let x = random(&[4, 3, 3], &mut rng);
    let reduce_w = random(&[2, 4, 1, 1], &mut rng);
    let reduce_b = random(&[2], &mut rng);
    let expand_w = random(&[4, 2, 1, 1], &mut rng);
    let expand_b = random(&[4], &mut rng);
    let slope = random_off_zero(&[2], &mut rng);
    let g = random(&[4, 3, 3], &mut rng);
    check_scalar_fn(
        "ca",
        &mut |tape, ids| {
            let nodes = CaNodes {
                reduce: ConvNodes {
                    weight: ids[1],
                    bias: Some(ids[2]),
                },
                expand: ConvNodes {
                    weight: ids[3],
                    bias: Some(ids[4]),
                },
                mid_slope: Some(ids[5]),
            };
            let y = ca_forward(tape, ids[0], &nodes)?;
            tape.weighted_sum(y, g.clone())
        },
        &[x, reduce_w, reduce_b, expand_w, expand_b, slope],
        SamplePlan::All,
        &mut rng,
    )
}

/// Finite-difference check of the full toy model over a random subset of
/// parameters.
pub fn gradcheck_model(seed: u64, samples: usize) -> Result<GradReport> {
    let mut rng = Rng::from_seed(seed);
    let cfg = TfmanConfig::toy();
    let model = Model::<f64>::build(&cfg, seed)?;
    let x = Tensor::generate(&[3, 6, 6], || rng.uniform_in(0.05, 0.95));
    let g = random(&[3, 12, 12], &mut rng);
    let inputs: Vec<Tensor<f64>> = model.store.iter().map(|(_, p)| p.value.clone()).collect();
    check_scalar_fn(
        "model",
        &mut |tape, ids| {
            let bound = BoundParams::from_nodes(ids.to_vec());
            let input = tape.constant(x.clone());
            let y = model.forward_on_tape(tape, &bound, input, false, None)?;
            tape.weighted_sum(y, g.clone())
        },
        &inputs,
        SamplePlan::Total(samples),
        &mut rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_ops_gradients_are_tight() {
        let report = gradcheck_tensor_ops(1).unwrap();
        assert!(
            report.max_err() < 1e-6,
            "tensor ops worst error {} in {:?}",
            report.max_err(),
            report.entries
        );
    }

    #[test]
    fn tfm_gradients_on_toy_shapes() {
        let report = gradcheck_tfm(2).unwrap();
        assert!(report.max_err() < 1e-5, "{:?}", report.entries);
    }

    #[test]
    fn srnl_gradients_on_non_divisible_map() {
        let report = gradcheck_srnl(3).unwrap();
        assert!(report.max_err() < 1e-5, "{:?}", report.entries);
    }

    #[test]
    fn nonlocal_gradients() {
        let report = gradcheck_nonlocal(4).unwrap();
        assert!(report.max_err() < 1e-5, "{:?}", report.entries);
    }

    #[test]
    fn ca_gradients() {
        let report = gradcheck_ca(5).unwrap();
        assert!(report.max_err() < 1e-5, "{:?}", report.entries);
    }
}
