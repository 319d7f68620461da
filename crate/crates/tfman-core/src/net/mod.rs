//! The full network: feature extraction, n recurrences of feature matching
//! and fusion, and the tail reconstruction that fuses every recurrence's
//! up-sampled feature map.

mod checkpoint;
mod config;
mod fmf;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TfmanConfig;
pub use fmf::{apply_layer, fmf_forward, ConvIds, FmfBlock, LayerIds, LayerKind};
pub use params::{BoundParams, Param, ParamId, ParamStore};

use crate::blocks::{FeatureSetBank, MacCounter, TfmConfig};
use crate::error::{Error, Result};
use crate::rng::{Rng, StreamKind};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use fmf::{CaIds, SrnlIds, TfmIds};

/// A built TFMAN model: configuration, parameter store and the wiring ids.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: TfmanConfig,
    pub store: ParamStore<T>,
    fe: [LayerIds; 2],
    fmf: FmfBlock,
    rec: LayerIds,
}

struct Registrar<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut Rng,
    per_channel: bool,
}

impl<'a, T: Scalar> Registrar<'a, T> {
    /// Fan-in-scaled uniform weights, zero biases.
    fn conv(
        &mut self,
        name: &str,
        shape: [usize; 4],
        bias_channels: Option<usize>,
    ) -> Result<ConvIds> {
        let fan_in = shape[1] * shape[2] * shape[3];
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::generate(&shape, || T::from_f64(self.rng.uniform_in(-bound, bound)));
        let weight = self.store.register(format!("{name}.weight"), w)?;
        let bias = match bias_channels {
            Some(c) => Some(
                self.store
                    .register(format!("{name}.bias"), Tensor::zeros(&[c]))?,
            ),
            None => None,
        };
        Ok(ConvIds { weight, bias })
    }

    /// PReLU slopes, initialized to 0.25.
    fn act(&mut self, name: &str, channels: usize) -> Result<ParamId> {
        let len = if self.per_channel { channels } else { 1 };
        self.store
            .register(format!("{name}.slope"), Tensor::filled(&[len], T::from_f64(0.25)))
    }

    fn layer(
        &mut self,
        name: &str,
        shape: [usize; 4],
        out_channels: usize,
        act_name: &str,
    ) -> Result<LayerIds> {
        let conv = self.conv(name, shape, Some(out_channels))?;
        let act = Some(self.act(act_name, out_channels)?);
        Ok(LayerIds { conv, act })
    }
}

impl<T: Scalar> Model<T> {
    /// Deterministically initialize a model from a seed.
    pub fn build(cfg: &TfmanConfig, seed: u64) -> Result<Model<T>> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::stream(seed, StreamKind::Init);
        let per_channel = cfg.prelu_per_channel;
        let mut reg = Registrar {
            store: &mut store,
            rng: &mut rng,
            per_channel,
        };
        let c = cfg.channels;
        let (dk, _, _) = cfg.deconv_kernel();

        // H_FE: two 3x3 convolutions, 3 -> C -> C.
        let fe = [
            reg.layer("fe.conv0", [c, 3, 3, 3], c, "fe.act0")?,
            reg.layer("fe.conv1", [c, c, 3, 3], c, "fe.act1")?,
        ];

        // TFM branch or its Base replacement.
        let (tfm, alphas, tfm_up) = if cfg.use_tfm {
            let bias = |ch: usize| if cfg.tfm_bias { Some(ch) } else { None };
            let ids = TfmIds {
                ft: reg.conv("fmf.tfm.ft", [c, c, 1, 1], bias(c))?,
                k1: reg.conv("fmf.tfm.k1", [1, cfg.tfm_channels, 1, 1], bias(1))?,
                k2: reg.conv("fmf.tfm.k2", [1, cfg.tfm_channels, 1, 1], bias(1))?,
            };
            let tfm_cfg = TfmConfig {
                num_features: cfg.tfm_features,
                feature_channels: cfg.tfm_channels,
                patch_size: cfg.tfm_patch,
                scale: cfg.scale,
            };
            let bank = FeatureSetBank::<T>::init(&tfm_cfg, cfg.recurrences, reg.rng);
            let mut alphas = Vec::with_capacity(cfg.recurrences);
            for (i, set) in bank.sets().iter().enumerate() {
                alphas.push(reg.store.register(format!("fmf.alpha.{i}"), set.clone())?);
            }
            (Some(ids), alphas, None)
        } else {
            let up = reg.layer(
                "fmf.tfm_up",
                [c, c, dk, dk],
                c,
                "fmf.tfm_up.act",
            )?;
            (None, Vec::new(), Some(up))
        };

        // SRNL branch or its Base replacement.
        let (srnl, srnl_conv) = if cfg.use_srnl {
            let c1 = cfg.nonlocal_channels;
            let ids = SrnlIds {
                theta: reg.conv("fmf.srnl.theta", [c1, c, 1, 1], Some(c1))?,
                phi: reg.conv("fmf.srnl.phi", [c1, c, 1, 1], Some(c1))?,
                g: reg.conv("fmf.srnl.g", [c1, c, 1, 1], Some(c1))?,
                out: reg.conv("fmf.srnl.out", [c, c1, 1, 1], Some(c))?,
            };
            (Some(ids), None)
        } else {
            let conv = reg.layer("fmf.srnl_conv", [c, c, 3, 3], c, "fmf.srnl_conv.act")?;
            (None, Some(conv))
        };

        // Channel attention (identity when off).
        let ca = if cfg.use_ca {
            let c2 = cfg.ca_reduced;
            Some(CaIds {
                reduce: reg.conv("fmf.ca.reduce", [c2, c, 1, 1], Some(c2))?,
                expand: reg.conv("fmf.ca.expand", [c, c2, 1, 1], Some(c))?,
                mid_slope: if cfg.ca_mid_activation {
                    Some(reg.act("fmf.ca.act", c2)?)
                } else {
                    None
                },
            })
        } else {
            None
        };

        let up1 = reg.layer("fmf.up1", [c, c, dk, dk], c, "fmf.up1.act")?;
        let ops1 = [
            reg.layer("fmf.ops1.conv0", [c, c, 3, 3], c, "fmf.ops1.act0")?,
            reg.layer("fmf.ops1.conv1", [c, c, 3, 3], c, "fmf.ops1.act1")?,
        ];
        let steps = cfg.downsample_steps();
        let mut down1 = Vec::with_capacity(steps.len());
        for (i, (k, _, _)) in steps.iter().enumerate() {
            down1.push(reg.layer(
                &format!("fmf.down1.step{i}"),
                [c, c, *k, *k],
                c,
                &format!("fmf.down1.act{i}"),
            )?);
        }
        let up2 = reg.layer("fmf.up2", [c, c, dk, dk], c, "fmf.up2.act")?;
        let mut down2_strided = Vec::with_capacity(steps.len());
        for (i, (k, _, _)) in steps.iter().enumerate() {
            down2_strided.push(reg.layer(
                &format!("fmf.down2.step{i}"),
                [c, c, *k, *k],
                c,
                &format!("fmf.down2.act{i}"),
            )?);
        }
        let down2_conv = reg.layer("fmf.down2.conv", [c, c, 3, 3], c, "fmf.down2.conv_act")?;

        // H_Rec: one 3x3 convolution from the n concatenated up-sampled
        // features to RGB; no activation on the output.
        let rec_conv = reg.conv("rec", [3, cfg.recurrences * c, 3, 3], Some(3))?;
        let rec = LayerIds {
            conv: rec_conv,
            act: None,
        };

        Ok(Model {
            cfg: cfg.clone(),
            store,
            fe,
            fmf: FmfBlock {
                tfm,
                alphas,
                tfm_up,
                srnl,
                srnl_conv,
                ca,
                up1,
                ops1,
                down1,
                up2,
                down2_strided,
                down2_conv,
            },
            rec,
        })
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        self.store.bind(tape, trainable)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::usage(format!(
                "expected a [3, H, W] input, got {shape:?}"
            )));
        }
        let min = self.cfg.tfm_patch.max(1);
        if shape[1] < min || shape[2] < min {
            return Err(Error::usage(format!(
                "input {}x{} smaller than the minimum extent {min}",
                shape[1], shape[2]
            )));
        }
        Ok(())
    }

    /// Record the full forward pass on `tape`. With `scoped` set, per-
    /// recurrence intermediates are dropped as soon as the recurrence
    /// finishes (valid only when no gradient is needed).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        input: NodeId,
        scoped: bool,
        mut counter: Option<&mut MacCounter>,
    ) -> Result<NodeId> {
        self.check_input(tape.value(input).shape())?;
        let conv3 = LayerKind::Conv {
            stride: 1,
            padding: 1,
        };
        let mut f = apply_layer(tape, bound, input, &self.fe[0], conv3)?;
        f = apply_layer(tape, bound, f, &self.fe[1], conv3)?;

        let mut ups = Vec::with_capacity(self.cfg.recurrences);
        for i in 0..self.cfg.recurrences {
            let mark = tape.mark();
            let (up, next) = fmf_forward(
                tape,
                bound,
                &self.fmf,
                &self.cfg,
                f,
                i,
                counter.as_deref_mut(),
            )?;
            if scoped {
                let up_v = tape.value(up).clone();
                let next_v = tape.value(next).clone();
                tape.truncate(mark);
                ups.push(tape.constant(up_v));
                f = tape.constant(next_v);
            } else {
                ups.push(up);
                f = next;
            }
        }
        let cat = tape.concat_channels(&ups)?;
        apply_layer(tape, bound, cat, &self.rec, conv3)
    }

    /// Inference: pure function of (parameters, input).
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.leaf(input.clone(), false);
        let out = self.forward_on_tape(&mut tape, &bound, x, true, None)?;
        Ok(tape.value(out).clone())
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.store.total_scalars()
    }

    /// Scalar count of the parameters under a name prefix.
    pub fn parameter_count_with_prefix(&self, prefix: &str) -> usize {
        self.store.scalars_with_prefix(prefix)
    }

    /// Per-subtree breakdown (two name segments deep), in a stable order.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for (_, p) in self.store.iter() {
            let mut segs = p.name.split('.');
            let a = segs.next().unwrap_or("");
            let key = match segs.next() {
                Some(b) if a == "fmf" => format!("{a}.{b}"),
                _ => a.to_string(),
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, n)) => *n += p.value.numel(),
                None => groups.push((key, p.value.numel())),
            }
        }
        groups
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            fe: self.fe,
            fmf: self.fmf.clone(),
            rec: self.rec,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_builds_identical_models() {
        let cfg = TfmanConfig::toy();
        let a = Model::<f32>::build(&cfg, 7).unwrap();
        let b = Model::<f32>::build(&cfg, 7).unwrap();
        for ((_, pa), (_, pb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(pa.name, pb.name);
            assert_eq!(pa.value.data(), pb.value.data());
        }
        let c = Model::<f32>::build(&cfg, 8).unwrap();
        let same = a
            .store
            .iter()
            .zip(c.store.iter())
            .all(|((_, x), (_, y))| x.value.data() == y.value.data());
        assert!(!same);
    }

    #[test]
    fn default_x2_parameter_count_within_budget() {
        let model = Model::<f32>::build(&TfmanConfig::default(), 0).unwrap();
        let count = model.parameter_count() as f64;
        let target = 3.1022e6;
        assert!(
            (count - target).abs() / target < 0.02,
            "x2 default has {count} parameters"
        );
    }

    #[test]
    fn base_variant_parameter_count_within_budget() {
        let model = Model::<f32>::build(&TfmanConfig::base_variant(), 0).unwrap();
        let count = model.parameter_count() as f64;
        let target = 3.7327e6;
        assert!(
            (count - target).abs() / target < 0.02,
            "base variant has {count} parameters"
        );
    }

    #[test]
    fn alpha_subtree_counts() {
        let model = Model::<f32>::build(&TfmanConfig::default(), 0).unwrap();
        assert_eq!(model.parameter_count_with_prefix("fmf.alpha"), 55296);

        let mut cfg3 = TfmanConfig::default();
        cfg3.scale = 3;
        let model3 = Model::<f32>::build(&cfg3, 0).unwrap();
        assert_eq!(
            model3.parameter_count_with_prefix("fmf.alpha"),
            12 * 32 * 4 * 9 * 9
        );

        let mut cfg_2n = TfmanConfig::default();
        cfg_2n.tfm_features = 64;
        let model_2n = Model::<f32>::build(&cfg_2n, 0).unwrap();
        assert_eq!(
            model_2n.parameter_count_with_prefix("fmf.alpha"),
            2 * 55296
        );
    }

    #[test]
    fn ca_toggle_delta_is_exactly_the_ca_subtree() {
        let full = Model::<f32>::build(&TfmanConfig::default(), 0).unwrap();
        let mut cfg = TfmanConfig::default();
        cfg.use_ca = false;
        let r7 = Model::<f32>::build(&cfg, 0).unwrap();
        let delta = full.parameter_count() - r7.parameter_count();
        assert_eq!(delta, full.parameter_count_with_prefix("fmf.ca"));
    }

    #[test]
    fn forward_shape_contract_x2_and_x3() {
        let mut cfg = TfmanConfig::toy();
        cfg.scale = 2;
        let model = Model::<f32>::build(&cfg, 1).unwrap();
        let x = Tensor::filled(&[3, 24, 24], 0.5);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 48, 48]);

        cfg.scale = 3;
        let model3 = Model::<f32>::build(&cfg, 1).unwrap();
        let x = Tensor::filled(&[3, 17, 23], 0.5);
        let y = model3.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 51, 69]);
    }

    #[test]
    fn forward_is_pure() {
        let model = Model::<f32>::build(&TfmanConfig::toy(), 3).unwrap();
        let mut rng = crate::rng::Rng::from_seed(5);
        let x = Tensor::generate(&[3, 9, 11], || rng.uniform() as f32);
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.all_finite());
    }

    #[test]
    fn scoped_and_unscoped_forward_agree_bitwise() {
        let model = Model::<f32>::build(&TfmanConfig::toy(), 4).unwrap();
        let mut rng = crate::rng::Rng::from_seed(6);
        let x = Tensor::generate(&[3, 8, 8], || rng.uniform() as f32);
        let scoped = model.forward(&x).unwrap();
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, false);
        let xn = tape.leaf(x, false);
        let out = model
            .forward_on_tape(&mut tape, &bound, xn, false, None)
            .unwrap();
        assert_eq!(scoped.data(), tape.value(out).data());
    }

    #[test]
    fn undersized_input_is_usage_error() {
        let model = Model::<f32>::build(&TfmanConfig::toy(), 0).unwrap();
        let x = Tensor::filled(&[3, 2, 2], 0.1);
        assert!(matches!(model.forward(&x), Err(Error::Usage(_))));
    }

    #[test]
    fn base_variant_keeps_shape_contract() {
        let mut cfg = TfmanConfig::base_variant();
        cfg.recurrences = 2;
        cfg.channels = 8;
        let model = Model::<f32>::build(&cfg, 2).unwrap();
        let x = Tensor::filled(&[3, 10, 14], 0.3);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 20, 28]);
    }

    #[test]
    fn all_scales_keep_shape_contract() {
        for scale in [2usize, 3, 4, 8] {
            let mut cfg = TfmanConfig::toy();
            cfg.scale = scale;
            cfg.recurrences = 1;
            cfg.channels = 4;
            cfg.nonlocal_channels = 4;
            cfg.ca_reduced = 2;
            cfg.tfm_features = 4;
            let model = Model::<f32>::build(&cfg, 9).unwrap();
            let x = Tensor::filled(&[3, 8, 9], 0.2);
            let y = model.forward(&x).unwrap();
            assert_eq!(y.shape(), &[3, 8 * scale, 9 * scale], "scale {scale}");
        }
    }

    #[test]
    fn perturbing_later_recurrence_leaves_earlier_f_up_unchanged() {
        // Only the per-recurrence feature sets differ across recurrences;
        // check that editing alpha_1 does not change F_up_0.
        let cfg = TfmanConfig::toy();
        let mut model = Model::<f32>::build(&cfg, 11).unwrap();
        let mut rng = crate::rng::Rng::from_seed(12);
        let x = Tensor::generate(&[3, 6, 6], || rng.uniform() as f32);

        let f_up0 = |m: &Model<f32>| -> Tensor<f32> {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, false);
            let xn = tape.leaf(x.clone(), false);
            let conv3 = LayerKind::Conv {
                stride: 1,
                padding: 1,
            };
            let mut f = apply_layer(&mut tape, &bound, xn, &m.fe[0], conv3).unwrap();
            f = apply_layer(&mut tape, &bound, f, &m.fe[1], conv3).unwrap();
            let (up, _) = fmf_forward(&mut tape, &bound, &m.fmf, &m.cfg, f, 0, None).unwrap();
            tape.value(up).clone()
        };
        let before = f_up0(&model);
        let alpha1 = model.fmf.alphas[1];
        for v in model.store.get_mut(alpha1).value.data_mut() {
            *v += 0.5;
        }
        let after = f_up0(&model);
        assert_eq!(before.data(), after.data());
    }
}
