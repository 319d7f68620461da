use super::ConvNodes;
use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::Scalar;

/// Bound tape nodes of one channel attention application.
#[derive(Debug, Clone, Copy)]
pub struct CaNodes {
    /// 1x1 conv C -> C2.
    pub reduce: ConvNodes,
    /// 1x1 conv C2 -> C.
    pub expand: ConvNodes,
    /// PReLU slope between the two convs, when the mid activation is on.
    pub mid_slope: Option<NodeId>,
}

/// Channel attention: softmax-normalized channel weights from a pooled
/// reduce/expand bottleneck, broadcast over space and multiplied in.
pub fn ca_forward<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    nodes: &CaNodes,
) -> Result<NodeId> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::config("ca_forward expects a [C, H, W] input"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let x4 = tape.reshape(input, &[1, c, h, w])?;
    let pooled = tape.global_avg_pool(x4)?; // (1, C, 1, 1)
    let mut mid = nodes.reduce.apply(tape, pooled, 0)?;
    if let Some(slope) = nodes.mid_slope {
        mid = tape.prelu(mid, slope, 1)?;
    }
    let logits = nodes.expand.apply(tape, mid, 0)?; // (1, C, 1, 1)
    let attn = tape.softmax(logits, 1)?;
    let factors = tape.reshape(attn, &[c])?;
    tape.mul_channels(input, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn random_nodes<T: Scalar>(
        tape: &mut Tape<T>,
        c: usize,
        c2: usize,
        rng: &mut Rng,
    ) -> CaNodes {
        let mut t = |shape: &[usize]| {
            let v = Tensor::generate(shape, || T::from_f64(rng.uniform_in(-0.5, 0.5)));
            tape.leaf(v, false)
        };
        CaNodes {
            reduce: ConvNodes {
                weight: t(&[c2, c, 1, 1]),
                bias: Some(t(&[c2])),
            },
            expand: ConvNodes {
                weight: t(&[c, c2, 1, 1]),
                bias: Some(t(&[c])),
            },
            mid_slope: Some(t(&[c2])),
        }
    }

    #[test]
    fn attention_sums_to_one_across_channels() {
        let mut rng = Rng::from_seed(31);
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::generate(&[5, 4, 4], || rng.uniform_in(0.1, 2.0));
        let x = tape.leaf(xt.clone(), false);
        let nodes = random_nodes(&mut tape, 5, 2, &mut rng);
        let y = ca_forward(&mut tape, x, &nodes).unwrap();
        // Recover the attention vector from the scaling of each channel.
        let out = tape.value(y);
        let mut sum = 0.0;
        for c in 0..5 {
            sum += out.at3(c, 0, 0) / xt.at3(c, 0, 0);
        }
        assert!((sum - 1.0).abs() < 1e-6, "sum {sum}");
    }

    #[test]
    fn identical_channels_scale_by_one_over_c() {
        // Symmetry: when the expand stage treats every output channel the
        // same way (identical rows and biases), the logits coincide and the
        // softmax hands each channel exactly 1/C.
        let mut rng = Rng::from_seed(32);
        let mut tape = Tape::<f64>::new();
        let mut xt = Tensor::zeros(&[4, 3, 3]);
        for c in 0..4 {
            for i in 0..9 {
                xt.data_mut()[c * 9 + i] = (i as f64).sin() + 1.5;
            }
        }
        let x = tape.leaf(xt.clone(), false);
        let reduce_w = Tensor::generate(&[2, 4, 1, 1], || rng.uniform_in(-0.5, 0.5));
        let row: Vec<f64> = (0..2).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        let expand_w = Tensor::from_vec(&[4, 2, 1, 1], row.repeat(4)).unwrap();
        let nodes = CaNodes {
            reduce: ConvNodes {
                weight: tape.leaf(reduce_w, false),
                bias: Some(tape.leaf(Tensor::filled(&[2], 0.1), false)),
            },
            expand: ConvNodes {
                weight: tape.leaf(expand_w, false),
                bias: Some(tape.leaf(Tensor::filled(&[4], -0.2), false)),
            },
            mid_slope: Some(tape.leaf(Tensor::filled(&[2], 0.25), false)),
        };
        let y = ca_forward(&mut tape, x, &nodes).unwrap();
        let out = tape.value(y);
        for (o, x) in out.data().iter().zip(xt.data()) {
            assert!((o - x / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_straight_line_oracle() {
        let mut rng = Rng::from_seed(33);
        let c = 4;
        let c2 = 2;
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::generate(&[c, 2, 2], || rng.uniform_in(-1.0, 1.0));
        let x = tape.leaf(xt.clone(), false);
        let nodes = random_nodes(&mut tape, c, c2, &mut rng);
        // Snapshot weights for the oracle.
        let rw = tape.value(nodes.reduce.weight).clone();
        let rb = tape.value(nodes.reduce.bias.unwrap()).clone();
        let ew = tape.value(nodes.expand.weight).clone();
        let eb = tape.value(nodes.expand.bias.unwrap()).clone();
        let slope = tape.value(nodes.mid_slope.unwrap()).clone();

        let y = ca_forward(&mut tape, x, &nodes).unwrap();
        let got = tape.value(y);

        // Oracle: pool -> reduce -> prelu -> expand -> softmax -> scale.
        let pooled: Vec<f64> = (0..c)
            .map(|ch| (0..4).map(|i| xt.data()[ch * 4 + i]).sum::<f64>() / 4.0)
            .collect();
        let mut mid = vec![0.0; c2];
        for i in 0..c2 {
            let mut acc = rb.data()[i];
            for j in 0..c {
                acc += rw.at4(i, j, 0, 0) * pooled[j];
            }
            mid[i] = if acc >= 0.0 { acc } else { slope.data()[i] * acc };
        }
        let mut logits = vec![0.0; c];
        for i in 0..c {
            let mut acc = eb.data()[i];
            for j in 0..c2 {
                acc += ew.at4(i, j, 0, 0) * mid[j];
            }
            logits[i] = acc;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        for ch in 0..c {
            let a = exps[ch] / z;
            for i in 0..4 {
                let want = a * xt.data()[ch * 4 + i];
                let gotv = got.data()[ch * 4 + i];
                assert!((gotv - want).abs() < 1e-12);
            }
        }
    }
}
