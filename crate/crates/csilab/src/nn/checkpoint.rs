//! Self-describing model checkpoint: a JSON header (specs, metadata,
//! tensor directory) followed by raw little-endian f32 tensor data.
//!
//! Loading rebuilds the expected tensor directory from the spec and fails
//! loudly on any name or shape difference.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{init_net, LayerParams, NetState};
use super::train::AutoencoderState;
use super::{AutoencoderSpec, ModelSpec};

const MAGIC: &[u8; 8] = b"CSICKPT1";
const FORMAT_VERSION: u32 = 1;

/// Provenance tag written by the trainer; the deployment path refuses
/// anything else.
pub const UL_ONLY_PROVENANCE: &str = "ul-noisy";

/// Training provenance and bookkeeping stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Which data the weights were fitted on; `"ul-noisy"` is the only
    /// value the feedback codec accepts.
    pub trained_on: String,
    pub snr_db: f64,
    pub train_seed: u64,
    pub best_epoch: usize,
}

/// A loaded or to-be-saved checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: AutoencoderSpec,
    pub state: AutoencoderState,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    meta: CheckpointMeta,
    step: u64,
    encoder: ModelSpec,
    decoder: ModelSpec,
    tensors: Vec<TensorEntry>,
}

/// Named slices over every persisted array of one network, in layer order.
/// All arrays are owned standard-layout tensors, so slicing cannot fail.
fn tensor_views<'a>(prefix: &str, net: &'a NetState<f32>) -> Vec<(String, Vec<usize>, &'a [f32])> {
    let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
    for (idx, layer) in net.layers.iter().enumerate() {
        match layer {
            LayerParams::Conv { weight, bias } | LayerParams::ConvT { weight, bias } => {
                out.push((
                    format!("{prefix}.{idx}.weight"),
                    weight.shape().to_vec(),
                    weight.as_slice().unwrap(),
                ));
                out.push((
                    format!("{prefix}.{idx}.bias"),
                    bias.shape().to_vec(),
                    bias.as_slice().unwrap(),
                ));
            }
            LayerParams::Dense { weight, bias } => {
                out.push((
                    format!("{prefix}.{idx}.weight"),
                    weight.shape().to_vec(),
                    weight.as_slice().unwrap(),
                ));
                out.push((
                    format!("{prefix}.{idx}.bias"),
                    bias.shape().to_vec(),
                    bias.as_slice().unwrap(),
                ));
            }
            LayerParams::BatchNorm(bn) => {
                for (name, arr) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("moving_mean", &bn.moving_mean),
                    ("moving_var", &bn.moving_var),
                ] {
                    out.push((
                        format!("{prefix}.{idx}.{name}"),
                        arr.shape().to_vec(),
                        arr.as_slice().unwrap(),
                    ));
                }
            }
            LayerParams::Stateless => {}
        }
    }
    out
}

/// Mutable slices over every persisted array, aligned with
/// [`tensor_views`].
fn tensor_slices_mut<'a>(net: &'a mut NetState<f32>) -> Vec<&'a mut [f32]> {
    let mut out: Vec<&mut [f32]> = Vec::new();
    for layer in net.layers.iter_mut() {
        match layer {
            LayerParams::Conv { weight, bias } | LayerParams::ConvT { weight, bias } => {
                out.push(weight.as_slice_mut().unwrap());
                out.push(bias.as_slice_mut().unwrap());
            }
            LayerParams::Dense { weight, bias } => {
                out.push(weight.as_slice_mut().unwrap());
                out.push(bias.as_slice_mut().unwrap());
            }
            LayerParams::BatchNorm(bn) => {
                out.push(bn.gamma.as_slice_mut().unwrap());
                out.push(bn.beta.as_slice_mut().unwrap());
                out.push(bn.moving_mean.as_slice_mut().unwrap());
                out.push(bn.moving_var.as_slice_mut().unwrap());
            }
            LayerParams::Stateless => {}
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let enc = tensor_views("encoder", &ckpt.state.encoder);
    let dec = tensor_views("decoder", &ckpt.state.decoder);
    let tensors: Vec<TensorEntry> = enc
        .iter()
        .chain(dec.iter())
        .map(|(name, shape, _)| TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
        })
        .collect();
    let header = Header {
        format_version: FORMAT_VERSION,
        meta: ckpt.meta.clone(),
        step: ckpt.state.step,
        encoder: ckpt.spec.encoder.clone(),
        decoder: ckpt.spec.decoder.clone(),
        tensors,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let tmp = path.with_extension("tmp");
    let err = |e| Error::Io {
        path: tmp.clone(),
        source: e,
    };
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(err)?);
        (|| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(header_bytes.len() as u32)?;
            w.write_all(&header_bytes)?;
            for (_, _, values) in enc.iter().chain(dec.iter()) {
                for v in *values {
                    w.write_f32::<LittleEndian>(*v)?;
                }
            }
            w.flush()
        })()
        .map_err(err)?;
    }
    fs::rename(&tmp, path).map_err(Error::io(path))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let err = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut r = BufReader::new(File::open(path).map_err(err)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(err)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing CSICKPT1 magic".into(),
        });
    }
    let header_len = r.read_u32::<LittleEndian>().map_err(err)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(err)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported checkpoint version {}", header.format_version),
        });
    }

    let spec = AutoencoderSpec {
        encoder: header.encoder.clone(),
        decoder: header.decoder.clone(),
    };
    // Build the state skeleton from the spec, then verify the header's
    // tensor directory is exactly what the spec implies.
    let mut state = AutoencoderState {
        encoder: init_net(&spec.encoder, 0),
        decoder: init_net(&spec.decoder, 0),
        step: header.step,
    };
    let expected: Vec<TensorEntry> = tensor_views("encoder", &state.encoder)
        .iter()
        .chain(tensor_views("decoder", &state.decoder).iter())
        .map(|(name, shape, _)| TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
        })
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(Error::CheckpointMismatch(format!(
            "expected {} tensors from the spec, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for (want, got) in expected.iter().zip(header.tensors.iter()) {
        if want.name != got.name || want.shape != got.shape {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {} with shape {:?} does not match spec-derived {} {:?}",
                got.name, got.shape, want.name, want.shape
            )));
        }
    }

    let mut slices = tensor_slices_mut(&mut state.encoder);
    slices.extend(tensor_slices_mut(&mut state.decoder));
    for slice in slices {
        for v in slice.iter_mut() {
            *v = r.read_f32::<LittleEndian>().map_err(err)?;
        }
    }
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "trailing bytes after tensor payload".into(),
            })
        }
        Err(e) => return Err(err(e)),
    }

    Ok(Checkpoint {
        spec,
        state,
        meta: header.meta,
    })
}
