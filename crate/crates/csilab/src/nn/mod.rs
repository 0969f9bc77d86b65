//! Convolutional autoencoder: architecture specs, parameter accounting,
//! forward/backward passes, Adam training and checkpointing.
//!
//! The encoder stacks five strided-convolution blocks (3x3 kernels, stride
//! 2, "same" padding, batch norm, ReLU) with filter counts 8..128, then a
//! dense layer with tanh produces the codeword. The decoder mirrors it with
//! transposed convolutions and a final unit-stride convolution back to two
//! channels. Layer shapes and parameter counts are closed-form contracts,
//! asserted against the reference architecture in the tests.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, UL_ONLY_PROVENANCE,
};
pub use layers::Elem;
pub use model::{
    backward, forward_infer, forward_train, init_net, reconstruction_loss,
    reconstruction_loss_grad, Activations, LayerCache, LayerGrads, LayerParams, Mode, NetState,
};
pub use train::{
    train, train_from, write_training_log, Adam, AutoencoderState, EpochRecord, TrainConfig,
    TrainOutcome,
};

/// Convolution kernel size used throughout (3x3).
pub const KERNEL: usize = 3;

/// Encoder block filter counts; the decoder mirrors them.
pub const ENCODER_FILTERS: [usize; 5] = [8, 16, 32, 64, 128];

const DECODER_FILTERS: [usize; 5] = [128, 64, 32, 16, 8];

/// Shape of one activation tensor, `[height, width, channels]`.
pub type Shape3 = [usize; 3];

/// One layer of a [`ModelSpec`]; shapes are per sample (no batch axis).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3x3 convolution, stride 2, zero-padded so `out = ceil(in / 2)`.
    ConvStride2 { in_shape: Shape3, out_shape: Shape3 },
    /// Exact shape inverse of the matching stride-2 convolution.
    ConvTransposeStride2 { in_shape: Shape3, out_shape: Shape3 },
    /// 3x3 convolution, stride 1, shape preserving.
    ConvUnitStride { in_shape: Shape3, out_shape: Shape3 },
    /// Per-channel standardization; batch statistics while training,
    /// running statistics at inference.
    BatchNorm { shape: Shape3 },
    Relu { shape: Shape3 },
    /// Bounds the codeword entries to [-1, 1].
    Tanh { len: usize },
    Flatten { in_shape: Shape3, out_len: usize },
    Reshape { in_len: usize, out_shape: Shape3 },
    Dense { in_len: usize, out_len: usize },
}

impl LayerSpec {
    /// Layer name used in error messages and table printing.
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::ConvStride2 { .. } => "conv_stride2",
            LayerSpec::ConvTransposeStride2 { .. } => "conv_transpose_stride2",
            LayerSpec::ConvUnitStride { .. } => "conv_unit_stride",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::Tanh { .. } => "tanh",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    /// Parameter count as reported by the architecture tables. Convolutions
    /// count `3*3*c_in*c_out + c_out`, dense layers `d_in*d_out + d_out`,
    /// batch norm `4*channels` (scale, shift and the two running moments).
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::ConvStride2 { in_shape, out_shape }
            | LayerSpec::ConvTransposeStride2 { in_shape, out_shape }
            | LayerSpec::ConvUnitStride { in_shape, out_shape } => {
                KERNEL * KERNEL * in_shape[2] * out_shape[2] + out_shape[2]
            }
            LayerSpec::BatchNorm { shape } => 4 * shape[2],
            LayerSpec::Dense { in_len, out_len } => in_len * out_len + out_len,
            _ => 0,
        }
    }

    /// Parameters touched by the optimizer: as [`LayerSpec::param_count`]
    /// but batch norm contributes only scale and shift (`2*channels`).
    pub fn trainable_param_count(&self) -> usize {
        match self {
            LayerSpec::BatchNorm { shape } => 2 * shape[2],
            other => other.param_count(),
        }
    }
}

/// Input or output of one network: a spatial tensor or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoShape {
    Tensor(Shape3),
    Vector(usize),
}

impl std::fmt::Display for IoShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IoShape::Tensor([h, w, c]) => write!(f, "{h}x{w}x{c}"),
            IoShape::Vector(n) => write!(f, "{n}"),
        }
    }
}

/// Ordered layer list of one network (encoder or decoder).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub input: IoShape,
    pub codeword_dim: usize,
}

impl ModelSpec {
    pub fn output(&self) -> IoShape {
        self.layers.last().map(layer_output).unwrap_or(self.input)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::trainable_param_count).sum()
    }

    pub fn per_layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerSpec::param_count).collect()
    }
}

pub(crate) fn layer_output(layer: &LayerSpec) -> IoShape {
    match layer {
        LayerSpec::ConvStride2 { out_shape, .. }
        | LayerSpec::ConvTransposeStride2 { out_shape, .. }
        | LayerSpec::ConvUnitStride { out_shape, .. }
        | LayerSpec::Reshape { out_shape, .. } => IoShape::Tensor(*out_shape),
        LayerSpec::BatchNorm { shape } | LayerSpec::Relu { shape } => IoShape::Tensor(*shape),
        LayerSpec::Tanh { len } => IoShape::Vector(*len),
        LayerSpec::Flatten { out_len, .. } => IoShape::Vector(*out_len),
        LayerSpec::Dense { out_len, .. } => IoShape::Vector(*out_len),
    }
}

/// Encoder and decoder specs of one autoencoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub encoder: ModelSpec,
    pub decoder: ModelSpec,
}

impl AutoencoderSpec {
    pub fn for_dims(n_a: usize, n_c: usize, d_z: usize) -> Result<Self> {
        Ok(Self {
            encoder: build_encoder(n_a, n_c, d_z)?,
            decoder: build_decoder(n_a, n_c, d_z)?,
        })
    }

    pub fn input_shape(&self) -> Shape3 {
        match self.encoder.input {
            IoShape::Tensor(s) => s,
            IoShape::Vector(_) => unreachable!("encoder input is spatial"),
        }
    }

    pub fn codeword_dim(&self) -> usize {
        self.encoder.codeword_dim
    }
}

fn check_dims(n_a: usize, n_c: usize, d_z: usize) -> Result<()> {
    if n_a == 0 || n_c == 0 {
        return Err(Error::Config(format!(
            "spatial dims must be positive, got {n_a}x{n_c}"
        )));
    }
    if d_z == 0 {
        return Err(Error::Config("codeword dimension must be positive".into()));
    }
    Ok(())
}

/// Spatial sizes after each of the five stride-2 stages (ceil division),
/// starting from the input size.
fn halving_sequence(n_a: usize, n_c: usize) -> [(usize, usize); 6] {
    let mut seq = [(n_a, n_c); 6];
    for i in 1..6 {
        let (h, w) = seq[i - 1];
        seq[i] = (h.div_ceil(2), w.div_ceil(2));
    }
    seq
}

/// Real-input-to-codeword compression factor `(n_a * n_c * 2) / d_z`.
pub fn compression_factor(n_a: usize, n_c: usize, d_z: usize) -> f64 {
    (n_a * n_c * 2) as f64 / d_z as f64
}

/// Build the encoder spec for an `n_a x n_c x 2` input and codeword
/// dimension `d_z`.
pub fn build_encoder(n_a: usize, n_c: usize, d_z: usize) -> Result<ModelSpec> {
    check_dims(n_a, n_c, d_z)?;
    let seq = halving_sequence(n_a, n_c);
    let mut layers = Vec::new();
    let mut channels = 2;
    for (i, filters) in ENCODER_FILTERS.iter().enumerate() {
        let (ih, iw) = seq[i];
        let (oh, ow) = seq[i + 1];
        layers.push(LayerSpec::ConvStride2 {
            in_shape: [ih, iw, channels],
            out_shape: [oh, ow, *filters],
        });
        layers.push(LayerSpec::BatchNorm {
            shape: [oh, ow, *filters],
        });
        layers.push(LayerSpec::Relu {
            shape: [oh, ow, *filters],
        });
        channels = *filters;
    }
    let (bh, bw) = seq[5];
    let flat = bh * bw * channels;
    layers.push(LayerSpec::Flatten {
        in_shape: [bh, bw, channels],
        out_len: flat,
    });
    layers.push(LayerSpec::Dense {
        in_len: flat,
        out_len: d_z,
    });
    layers.push(LayerSpec::Tanh { len: d_z });
    Ok(ModelSpec {
        layers,
        input: IoShape::Tensor([n_a, n_c, 2]),
        codeword_dim: d_z,
    })
}

/// Build the decoder spec mirroring [`build_encoder`]: dense back to the
/// bottleneck, five transposed-convolution blocks, and a final unit-stride
/// convolution to two channels with no activation.
pub fn build_decoder(n_a: usize, n_c: usize, d_z: usize) -> Result<ModelSpec> {
    check_dims(n_a, n_c, d_z)?;
    let seq = halving_sequence(n_a, n_c);
    let (bh, bw) = seq[5];
    let bottleneck_channels = *ENCODER_FILTERS.last().unwrap();
    let flat = bh * bw * bottleneck_channels;
    let mut layers = vec![
        LayerSpec::Dense {
            in_len: d_z,
            out_len: flat,
        },
        LayerSpec::Reshape {
            in_len: flat,
            out_shape: [bh, bw, bottleneck_channels],
        },
    ];
    let mut channels = bottleneck_channels;
    for (i, filters) in DECODER_FILTERS.iter().enumerate() {
        let (ih, iw) = seq[5 - i];
        let (oh, ow) = seq[4 - i];
        layers.push(LayerSpec::ConvTransposeStride2 {
            in_shape: [ih, iw, channels],
            out_shape: [oh, ow, *filters],
        });
        layers.push(LayerSpec::BatchNorm {
            shape: [oh, ow, *filters],
        });
        layers.push(LayerSpec::Relu {
            shape: [oh, ow, *filters],
        });
        channels = *filters;
    }
    layers.push(LayerSpec::ConvUnitStride {
        in_shape: [n_a, n_c, channels],
        out_shape: [n_a, n_c, 2],
    });
    Ok(ModelSpec {
        layers,
        input: IoShape::Vector(d_z),
        codeword_dim: d_z,
    })
}

/// Stack real and imaginary parts along the third axis.
pub fn complex_to_real_tensor(h: &Array2<Complex32>) -> Array3<f32> {
    let (n_a, n_c) = h.dim();
    let mut t = Array3::zeros((n_a, n_c, 2));
    for ((a, c), v) in h.indexed_iter() {
        t[(a, c, 0)] = v.re;
        t[(a, c, 1)] = v.im;
    }
    t
}

/// Inverse of [`complex_to_real_tensor`].
pub fn real_tensor_to_complex(t: &Array3<f32>) -> Array2<Complex32> {
    let (n_a, n_c, two) = t.dim();
    assert_eq!(two, 2, "expected a 2-channel tensor");
    Array2::from_shape_fn((n_a, n_c), |(a, c)| {
        Complex32::new(t[(a, c, 0)], t[(a, c, 1)])
    })
}

/// Stack a batch of complex matrices into an `[n, h, w, 2]` tensor.
pub fn stack_complex_batch(mats: &[&Array2<Complex32>]) -> Array4<f32> {
    assert!(!mats.is_empty());
    let (n_a, n_c) = mats[0].dim();
    let mut t = Array4::zeros((mats.len(), n_a, n_c, 2));
    for (i, m) in mats.iter().enumerate() {
        for ((a, c), v) in m.indexed_iter() {
            t[(i, a, c, 0)] = v.re;
            t[(i, a, c, 1)] = v.im;
        }
    }
    t
}
