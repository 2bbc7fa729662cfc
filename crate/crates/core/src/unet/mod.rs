//! Three-level 3D U-Net for volumetric inpainting.
//!
//! ```text
//! [voided, mask] ─ enc0 ──────────────────────────────── dec0 ─ head ─ out
//!                   └ pool ─ enc1 ────────────── dec1 ──┘
//!                             └ pool ─ enc2 ── dec2 ──┘
//!                                      └ pool ─ bridge ┘
//! ```
//!
//! Every block is two `conv3×3×3 → instance norm → activation` layers.
//! Encoder and decoder blocks use PReLU, the bridge uses ReLU. Bridge and
//! decoder blocks end with dropout. Each decoder block upsamples its input,
//! concatenates the matching encoder features and halves the channel count
//! in its first convolution. A linear 1×1×1 convolution produces the output.

mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Element, Tape, Tensor, TensorError, Var};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointError,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

const NORM_EPS: f64 = 1e-5;
const PRELU_INIT: f64 = 0.25;
const KERNEL: usize = 3;
/// Input extents must be divisible by this (three 2× poolings).
pub const SPATIAL_MULTIPLE: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input spatial dims {0:?} must each be divisible by {SPATIAL_MULTIPLE}")]
    IndivisibleInput([usize; 3]),
    #[error("input shape: {0}")]
    InputShape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            in_channels: 2,
            out_channels: 1,
            dropout_rate: 0.2,
        }
    }
}

impl UNetConfig {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_channels == 0 {
            return Err(ModelError::InvalidConfig("base_channels must be at least 1".into()));
        }
        if self.in_channels != 2 {
            return Err(ModelError::InvalidConfig(format!(
                "in_channels is fixed at 2 (voided image + mask), got {}",
                self.in_channels
            )));
        }
        if self.out_channels != 1 {
            return Err(ModelError::InvalidConfig(format!(
                "out_channels is fixed at 1, got {}",
                self.out_channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Output channels of enc0..enc2, bridge, dec2..dec0.
    pub fn channel_ladder(&self) -> [usize; 7] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b, 8 * b, 4 * b, 2 * b, b]
    }

    pub fn parameter_count(&self) -> usize {
        param_specs(self).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    PRelu,
    Relu,
}

#[derive(Clone, Debug)]
struct BlockSpec {
    name: &'static str,
    cin: usize,
    cout: usize,
    activation: Activation,
}

fn block_specs(config: &UNetConfig) -> [BlockSpec; 7] {
    let b = config.base_channels;
    let block = |name, cin, cout, activation| BlockSpec {
        name,
        cin,
        cout,
        activation,
    };
    [
        block("enc0", config.in_channels, b, Activation::PRelu),
        block("enc1", b, 2 * b, Activation::PRelu),
        block("enc2", 2 * b, 4 * b, Activation::PRelu),
        block("bridge", 4 * b, 8 * b, Activation::Relu),
        block("dec2", 8 * b + 4 * b, 4 * b, Activation::PRelu),
        block("dec1", 4 * b + 2 * b, 2 * b, Activation::PRelu),
        block("dec0", 2 * b + b, b, Activation::PRelu),
    ]
}

/// Ordered `(name, shape)` of every parameter.
pub fn param_specs(config: &UNetConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    for block in block_specs(config) {
        for (layer, cin) in [(1, block.cin), (2, block.cout)] {
            let p = format!("{}.conv{layer}", block.name);
            let c = block.cout;
            specs.push((format!("{p}.weight"), vec![c, cin, KERNEL, KERNEL, KERNEL]));
            specs.push((format!("{p}.bias"), vec![c]));
            specs.push((format!("{p}.gamma"), vec![c]));
            specs.push((format!("{p}.beta"), vec![c]));
            if block.activation == Activation::PRelu {
                specs.push((format!("{p}.alpha"), vec![1]));
            }
        }
    }
    specs.push(("head.weight".into(), vec![config.out_channels, config.base_channels, 1, 1, 1]));
    specs.push(("head.bias".into(), vec![config.out_channels]));
    specs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameters plus the configuration that fixes the topology.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel<T> {
    config: UNetConfig,
    params: Vec<Param<T>>,
}

/// Sequential reader over registered parameter handles.
struct Cursor<'a> {
    vars: &'a [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }
}

impl<T: Element> UNetModel<T> {
    /// Builds a model with fan-in scaled normal conv weights, zero biases,
    /// unit gammas, zero betas and PReLU slopes of 0.25.
    pub fn build<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape)| {
                let value = if name.ends_with(".weight") {
                    let fan_in: usize = shape[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
                } else if name.ends_with(".gamma") {
                    Tensor::full(shape, T::one())
                } else if name.ends_with(".alpha") {
                    Tensor::full(shape, T::lit(PRELU_INIT))
                } else {
                    Tensor::zeros(shape)
                };
                Param { name, value }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Model with every parameter set to zero.
    pub fn zeroed(config: UNetConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape)| Param {
                name,
                value: Tensor::zeros(shape),
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Replaces all parameters; shapes must match.
    pub fn set_tensors(&mut self, tensors: Vec<Tensor<T>>) -> Result<(), ModelError> {
        if tensors.len() != self.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            if p.value.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "set_tensors",
                    expected: p.value.shape().to_vec(),
                    actual: t.shape().to_vec(),
                }
                .into());
            }
            p.value = t;
        }
        Ok(())
    }

    /// Same model in another precision.
    pub fn cast<U: Element>(&self) -> UNetModel<U> {
        UNetModel {
            config: self.config,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    fn check_inputs(&self, voided: &Tensor<T>, mask: &Tensor<T>) -> Result<(), ModelError> {
        let [n, c, d, h, w] = voided.dims5("unet.forward")?;
        if c != 1 {
            return Err(ModelError::InputShape(format!(
                "voided image must have one channel, got shape {:?}",
                voided.shape()
            )));
        }
        if mask.shape() != voided.shape() {
            return Err(ModelError::InputShape(format!(
                "mask shape {:?} differs from image shape {:?}",
                mask.shape(),
                voided.shape()
            )));
        }
        if n == 0 || [d, h, w].iter().any(|&e| e == 0 || e % SPATIAL_MULTIPLE != 0) {
            return Err(ModelError::IndivisibleInput([d, h, w]));
        }
        Ok(())
    }

    fn layer(
        &self,
        tape: &mut Tape<T>,
        params: &mut Cursor,
        x: Var,
        activation: Activation,
    ) -> Result<Var, ModelError> {
        let (w, b, g, be) = (params.next(), params.next(), params.next(), params.next());
        let y = tape.conv3d(x, w, b, KERNEL / 2)?;
        let y = tape.instance_norm(y, g, be, T::lit(NORM_EPS))?;
        Ok(match activation {
            Activation::PRelu => {
                let alpha = params.next();
                tape.prelu(y, alpha)?
            }
            Activation::Relu => tape.relu(y),
        })
    }

    fn block(&self, tape: &mut Tape<T>, params: &mut Cursor, x: Var, spec: &BlockSpec) -> Result<Var, ModelError> {
        let y = self.layer(tape, params, x, spec.activation)?;
        self.layer(tape, params, y, spec.activation)
    }

    /// Builds the forward graph on `tape` using parameter handles from
    /// [`register`](Self::register). Dropout draws from `rng` only when
    /// `training` is set.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        voided: Var,
        mask: Var,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        self.check_inputs(tape.value(voided), tape.value(mask))?;
        if params.len() != self.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameter handles, got {}",
                self.params.len(),
                params.len()
            )));
        }
        let rate = self.config.dropout_rate;
        let specs = block_specs(&self.config);
        let mut cur = Cursor { vars: params, pos: 0 };

        let x = tape.concat_channels(voided, mask)?;
        let e0 = self.block(tape, &mut cur, x, &specs[0])?;
        let p0 = tape.maxpool3d(e0)?;
        let e1 = self.block(tape, &mut cur, p0, &specs[1])?;
        let p1 = tape.maxpool3d(e1)?;
        let e2 = self.block(tape, &mut cur, p1, &specs[2])?;
        let p2 = tape.maxpool3d(e2)?;

        let br = self.block(tape, &mut cur, p2, &specs[3])?;
        let mut y = tape.dropout(br, rate, training, rng)?;

        for (skip, spec) in [e2, e1, e0].into_iter().zip(&specs[4..]) {
            let up = tape.upsample3d(y)?;
            let cat = tape.concat_channels(up, skip)?;
            let d = self.block(tape, &mut cur, cat, spec)?;
            y = tape.dropout(d, rate, training, rng)?;
        }

        let (hw, hb) = (cur.next(), cur.next());
        Ok(tape.conv3d(y, hw, hb, 0)?)
    }

    /// Inference (or stochastic training-mode) forward pass without gradients.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        voided: &Tensor<T>,
        mask: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<T>, ModelError> {
        self.check_inputs(voided, mask)?;
        let mut tape = Tape::new();
        let params = self.register(&mut tape, false);
        let v = tape.constant(voided.clone());
        let m = tape.constant(mask.clone());
        let out = self.forward_on_tape(&mut tape, &params, v, m, training, rng)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn channel_ladders() {
        assert_eq!(UNetConfig::with_base(32).channel_ladder(), [32, 64, 128, 256, 128, 64, 32]);
        assert_eq!(UNetConfig::with_base(8).channel_ladder(), [8, 16, 32, 64, 32, 16, 8]);
    }

    #[test]
    fn parameter_counts_match_hand_count() {
        // Per conv layer: 27·cin·cout weights + cout bias + 2·cout norm,
        // plus one PReLU slope outside the bridge. Head: b weights + 1 bias.
        let b8 = [
            457, 1753, // enc0   2→8, 8→8
            3505, 6961, // enc1   8→16, 16→16
            13921, 27745, // enc2   16→32, 32→32
            55488, 110784, // bridge 32→64, 64→64
            83041, 27745, // dec2   96→32, 32→32
            20785, 6961, // dec1   48→16, 16→16
            5209, 1753, // dec0   24→8, 8→8
            9,    // head
        ];
        assert_eq!(UNetConfig::with_base(8).parameter_count(), b8.iter().sum::<usize>());
        assert_eq!(UNetConfig::with_base(8).parameter_count(), 366_117);
        assert_eq!(UNetConfig::with_base(32).parameter_count(), 5_839_725);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(UNetConfig::with_base(0).validate().is_err());
        let c = UNetConfig {
            in_channels: 3,
            ..UNetConfig::default()
        };
        assert!(c.validate().is_err());
        let c = UNetConfig {
            dropout_rate: 1.0,
            ..UNetConfig::default()
        };
        assert!(UNetModel::<f32>::build(c, &mut seeded(0)).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = UNetModel::<f32>::build(UNetConfig::with_base(4), &mut seeded(11)).unwrap();
        let b = UNetModel::<f32>::build(UNetConfig::with_base(4), &mut seeded(11)).unwrap();
        let c = UNetModel::<f32>::build(UNetConfig::with_base(4), &mut seeded(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn indivisible_input_rejected() {
        let m = UNetModel::<f32>::build(UNetConfig::with_base(2), &mut seeded(0)).unwrap();
        let x = Tensor::zeros(vec![1, 1, 16, 12, 16]);
        let err = m.forward(&x, &x, false, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, ModelError::IndivisibleInput([16, 12, 16])));
        assert!(err.to_string().contains("divisible by 8"));
    }
}
