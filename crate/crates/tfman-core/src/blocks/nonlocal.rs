use super::ConvNodes;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};

/// Multiply-accumulate counts gathered while a non-local block runs,
/// split into the terms the closed-form cost model covers and the ones it
/// does not.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounter {
    /// Theta, phi and g embedding convolutions (modeled).
    pub embed_macs: u64,
    /// The two attention matrix products (modeled).
    pub attention_macs: u64,
    /// Output 1x1 convolution (unmodeled).
    pub out_conv_macs: u64,
    /// Residual additions, counted as adds (unmodeled).
    pub residual_adds: u64,
}

impl MacCounter {
    pub fn modeled(&self) -> u64 {
        self.embed_macs + self.attention_macs
    }
}

/// Bound tape nodes of one non-local attention application.
#[derive(Debug, Clone, Copy)]
pub struct NonLocalNodes {
    /// Query embedding, 1x1 conv C -> C1.
    pub theta: ConvNodes,
    /// Key embedding, 1x1 conv C -> C1.
    pub phi: ConvNodes,
    /// Value transform, 1x1 conv C -> C1.
    pub g: ConvNodes,
    /// Output projection, 1x1 conv C1 -> C.
    pub out: ConvNodes,
    /// Whether the input is added back onto the projected attention output.
    pub residual: bool,
}

/// Embedded-Gaussian non-local attention over a `[C, h, w]` block: every
/// site aggregates all sites, weighted by the row-softmax of embedded
/// dot-product similarities.
pub fn nonlocal_block<T: Scalar>(
    tape: &mut Tape<T>,
    input: NodeId,
    nodes: &NonLocalNodes,
    mut counter: Option<&mut MacCounter>,
) -> Result<NodeId> {
    let shape = tape.value(input).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::config("nonlocal_block expects a [C, h, w] input"));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let hw = h * w;
    let c1 = tape.value(nodes.theta.weight).dim(0);

    let x4 = tape.reshape(input, &[1, c, h, w])?;
    let q = nodes.theta.apply(tape, x4, 0)?;
    let k = nodes.phi.apply(tape, x4, 0)?;
    let v = nodes.g.apply(tape, x4, 0)?;
    if let Some(ctr) = counter.as_deref_mut() {
        ctr.embed_macs += 3 * (hw * c1 * c) as u64;
    }

    // Flatten to matrices: rows are spatial sites.
    let q2 = tape.reshape(q, &[c1, hw])?;
    let qt = tape.transpose2(q2)?; // (hw, C1)
    let k2 = tape.reshape(k, &[c1, hw])?; // (C1, hw)
    let v2 = tape.reshape(v, &[c1, hw])?;
    let vt = tape.transpose2(v2)?; // (hw, C1)

    let logits = tape.matmul(qt, k2)?; // (hw, hw)
    let attn = tape.softmax(logits, 1)?;
    let mixed = tape.matmul(attn, vt)?; // (hw, C1)
    if let Some(ctr) = counter.as_deref_mut() {
        ctr.attention_macs += 2 * (hw * hw * c1) as u64;
    }

    let mixed_t = tape.transpose2(mixed)?;
    let mixed4 = tape.reshape(mixed_t, &[1, c1, h, w])?;
    let projected = nodes.out.apply(tape, mixed4, 0)?;
    if let Some(ctr) = counter.as_deref_mut() {
        ctr.out_conv_macs += (hw * c * c1) as u64;
    }
    let out3 = tape.reshape(projected, &[c, h, w])?;
    if nodes.residual {
        if let Some(ctr) = counter.as_deref_mut() {
            ctr.residual_adds += (c * hw) as u64;
        }
        tape.add(out3, input)
    } else {
        Ok(out3)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    pub(crate) fn identity_nodes<T: Scalar>(tape: &mut Tape<T>, c: usize) -> NonLocalNodes {
        let mut eye = Tensor::zeros(&[c, c, 1, 1]);
        for i in 0..c {
            eye.data_mut()[i * c + i] = T::ONE;
        }
        let w = tape.leaf(eye, false);
        NonLocalNodes {
            theta: ConvNodes {
                weight: w,
                bias: None,
            },
            phi: ConvNodes {
                weight: w,
                bias: None,
            },
            g: ConvNodes {
                weight: w,
                bias: None,
            },
            out: ConvNodes {
                weight: w,
                bias: None,
            },
            residual: true,
        }
    }

    #[test]
    fn single_site_attention_is_identity_mixture() {
        // h = w = 1: the attention matrix is [[1]], so the output is
        // out(g(x)) + x; with identity transforms that is 2x.
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 1, 1], vec![0.7, -1.2]).unwrap(), false);
        let nodes = identity_nodes(&mut tape, 2);
        let y = nonlocal_block(&mut tape, x, &nodes, None).unwrap();
        assert_eq!(tape.value(y).data(), &[1.4, -2.4]);
    }

    #[test]
    fn spatially_constant_input_stays_constant() {
        let mut rng = Rng::from_seed(3);
        let mut tape = Tape::<f64>::new();
        let per_channel: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut xt = Tensor::zeros(&[3, 4, 5]);
        for c in 0..3 {
            for i in 0..20 {
                xt.data_mut()[c * 20 + i] = per_channel[c];
            }
        }
        let x = tape.leaf(xt, false);
        let nodes = identity_nodes(&mut tape, 3);
        let y = nonlocal_block(&mut tape, x, &nodes, None).unwrap();
        let out = tape.value(y);
        for c in 0..3 {
            for i in 0..20 {
                let v = out.data()[c * 20 + i];
                assert!((v - 2.0 * per_channel[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_site_closed_form() {
        // C = 1, 1x2 block, identity transforms: sites a, b mix through a
        // row softmax of [[a^2, ab], [ab, b^2]].
        let (a, b) = (0.9f64, -0.4f64);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 1, 2], vec![a, b]).unwrap(), false);
        let nodes = identity_nodes(&mut tape, 1);
        let y = nonlocal_block(&mut tape, x, &nodes, None).unwrap();
        let got = tape.value(y);

        let soft = |p: f64, q: f64| {
            let m = p.max(q);
            let (ep, eq) = ((p - m).exp(), (q - m).exp());
            (ep / (ep + eq), eq / (ep + eq))
        };
        let (w00, w01) = soft(a * a, a * b);
        let (w10, w11) = soft(a * b, b * b);
        let want0 = w00 * a + w01 * b + a;
        let want1 = w10 * a + w11 * b + b;
        assert!((got.data()[0] - want0).abs() < 1e-12);
        assert!((got.data()[1] - want1).abs() < 1e-12);
    }

    #[test]
    fn counter_tallies_by_term() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::filled(&[2, 3, 3], 0.5), false);
        let nodes = identity_nodes(&mut tape, 2);
        let mut ctr = MacCounter::default();
        nonlocal_block(&mut tape, x, &nodes, Some(&mut ctr)).unwrap();
        let hw = 9u64;
        assert_eq!(ctr.embed_macs, 3 * hw * 2 * 2);
        assert_eq!(ctr.attention_macs, 2 * hw * hw * 2);
        assert_eq!(ctr.out_conv_macs, hw * 2 * 2);
        assert_eq!(ctr.residual_adds, 2 * hw);
    }
}
