//! The deployed feedback path: encoder inference at the terminal on noisy
//! downlink CSI, uniform scalar quantization of the codeword, and decoder
//! inference at the base station.
//!
//! Wire format of a quantized codeword (network byte order):
//!
//! ```text
//! d_z   u16 big-endian
//! bits  u8 (1..=16)
//! indices, d_z values of `bits` bits each, packed MSB-first;
//! the final byte is zero-padded in its low bits
//! ```

use ndarray::{Array1, Array2, Array4};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    complex_to_real_tensor, forward_infer, real_tensor_to_complex, Activations, AutoencoderSpec,
    AutoencoderState, Checkpoint, ModelSpec, NetState, UL_ONLY_PROVENANCE,
};

/// Which carrier a codeword was produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqTag {
    Ul,
    /// Downlink carrier at `f_ul + gap_hz`.
    Dl { gap_hz: u64 },
}

impl std::fmt::Display for FreqTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FreqTag::Ul => write!(f, "UL"),
            FreqTag::Dl { gap_hz } => write!(f, "DL-{}MHz", gap_hz / 1_000_000),
        }
    }
}

/// The real-valued latent vector fed back over the air; every entry lies in
/// [-1, 1] because the encoder ends in tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub values: Array1<f32>,
    pub source_freq: FreqTag,
}

/// A codeword after uniform scalar quantization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCodeword {
    pub indices: Vec<u16>,
    pub bits: u8,
    pub source_freq: FreqTag,
    /// How many entries were outside [-1, 1] and clamped; nonzero only for
    /// corrupted inputs.
    pub clamped: usize,
}

impl QuantizedCodeword {
    /// Feedback payload size in bits: `d_z * b`.
    pub fn payload_bits(&self) -> usize {
        self.indices.len() * self.bits as usize
    }
}

/// Uniform mid-rise quantizer on [-1, 1]: step `2 / 2^b`, index
/// `floor((v + 1) / step)` clamped to `[0, 2^b - 1]`.
pub fn quantize(z: &Codeword, bits: u8) -> Result<QuantizedCodeword> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Config(format!(
            "quantizer bits must be 1..=16, got {bits}"
        )));
    }
    let levels = 1u32 << bits;
    let step = 2.0 / levels as f64;
    let mut clamped = 0usize;
    let indices = z
        .values
        .iter()
        .map(|v| {
            let v = *v as f64;
            if !(-1.0..=1.0).contains(&v) {
                clamped += 1;
            }
            let idx = ((v + 1.0) / step).floor();
            idx.clamp(0.0, (levels - 1) as f64) as u16
        })
        .collect();
    Ok(QuantizedCodeword {
        indices,
        bits,
        source_freq: z.source_freq,
        clamped,
    })
}

/// Reconstruction at the cell midpoints: `-1 + (index + 0.5) * step`.
pub fn dequantize(q: &QuantizedCodeword) -> Codeword {
    let levels = 1u32 << q.bits;
    let step = 2.0 / levels as f64;
    let values = q
        .indices
        .iter()
        .map(|idx| (-1.0 + (*idx as f64 + 0.5) * step) as f32)
        .collect();
    Codeword {
        values: Array1::from_vec(values),
        source_freq: q.source_freq,
    }
}

/// Serialize a quantized codeword to its wire bytes.
pub fn write_codeword(q: &QuantizedCodeword) -> Result<Vec<u8>> {
    let d_z = q.indices.len();
    if d_z > u16::MAX as usize {
        return Err(Error::Config(
            "codeword longer than the wire format allows".into(),
        ));
    }
    let total_bits = d_z * q.bits as usize;
    let mut out = Vec::with_capacity(3 + total_bits.div_ceil(8));
    out.extend_from_slice(&(d_z as u16).to_be_bytes());
    out.push(q.bits);
    let mut acc: u32 = 0;
    let mut acc_bits: u8 = 0;
    for idx in &q.indices {
        debug_assert!((*idx as u32) < (1u32 << q.bits));
        acc = (acc << q.bits) | *idx as u32;
        acc_bits += q.bits;
        while acc_bits >= 8 {
            acc_bits -= 8;
            out.push((acc >> acc_bits) as u8);
        }
    }
    if acc_bits > 0 {
        out.push((acc << (8 - acc_bits)) as u8);
    }
    Ok(out)
}

/// Parse wire bytes back into a quantized codeword. The frequency tag is
/// not on the wire; the caller supplies it.
pub fn read_codeword(bytes: &[u8], source_freq: FreqTag) -> Result<QuantizedCodeword> {
    let fail = |reason: &str| Error::Config(format!("codeword wire format: {reason}"));
    if bytes.len() < 3 {
        return Err(fail("shorter than the 3-byte header"));
    }
    let d_z = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    let bits = bytes[2];
    if !(1..=16).contains(&bits) {
        return Err(fail("bits out of range"));
    }
    let total_bits = d_z * bits as usize;
    let expect = 3 + total_bits.div_ceil(8);
    if bytes.len() != expect {
        return Err(fail("payload length mismatch"));
    }
    let mut indices = Vec::with_capacity(d_z);
    let mut acc: u32 = 0;
    let mut acc_bits: u8 = 0;
    let mut cursor = 3;
    for _ in 0..d_z {
        while acc_bits < bits {
            acc = (acc << 8) | bytes[cursor] as u32;
            cursor += 1;
            acc_bits += 8;
        }
        acc_bits -= bits;
        indices.push(((acc >> acc_bits) & ((1u32 << bits) - 1)) as u16);
    }
    Ok(QuantizedCodeword {
        indices,
        bits,
        source_freq,
        clamped: 0,
    })
}

/// Encoder inference on one noisy CSI matrix.
pub fn encode(
    spec: &ModelSpec,
    net: &NetState<f32>,
    y: &Array2<Complex32>,
    source_freq: FreqTag,
) -> Result<Codeword> {
    let t = complex_to_real_tensor(y);
    let (h, w, c) = t.dim();
    let batch = t.into_shape_with_order((1, h, w, c)).expect("contiguous");
    let z = forward_infer(spec, net, Activations::Spatial(batch))?.into_flat();
    Ok(Codeword {
        values: z.row(0).to_owned(),
        source_freq,
    })
}

/// Decoder inference from one codeword back to a complex CSI matrix.
pub fn decode(spec: &ModelSpec, net: &NetState<f32>, z: &Codeword) -> Result<Array2<Complex32>> {
    let d_z = z.values.len();
    let batch = z
        .values
        .view()
        .into_shape_with_order((1, d_z))
        .expect("contiguous")
        .to_owned();
    let y = forward_infer(spec, net, Activations::Flat(batch))?.into_spatial();
    let (_, h, w, c) = y.dim();
    let t = y.into_shape_with_order((h, w, c)).expect("contiguous");
    Ok(real_tensor_to_complex(&t))
}

/// One reconstructed feedback round plus its payload accounting.
#[derive(Debug, Clone)]
pub struct FeedbackResult {
    pub h_hat: Array2<Complex32>,
    /// `d_z * b` when quantized; `None` for the unquantized float path.
    pub payload_bits: Option<usize>,
}

/// An immutable, provenance-checked codec ready for terminal-side encoding
/// and base-station-side decoding.
#[derive(Debug, Clone)]
pub struct Deployment {
    spec: AutoencoderSpec,
    state: AutoencoderState,
}

impl Deployment {
    /// Accepts only checkpoints trained exclusively on uplink data.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.meta.trained_on != UL_ONLY_PROVENANCE {
            return Err(Error::Provenance {
                found: ckpt.meta.trained_on.clone(),
            });
        }
        Ok(Self {
            spec: ckpt.spec.clone(),
            state: ckpt.state.clone(),
        })
    }

    pub fn spec(&self) -> &AutoencoderSpec {
        &self.spec
    }

    pub fn encode(&self, y: &Array2<Complex32>, tag: FreqTag) -> Result<Codeword> {
        encode(&self.spec.encoder, &self.state.encoder, y, tag)
    }

    pub fn decode(&self, z: &Codeword) -> Result<Array2<Complex32>> {
        decode(&self.spec.decoder, &self.state.decoder, z)
    }

    /// Encode, optionally quantize/dequantize, and decode. The feedback
    /// link itself is error-free.
    pub fn feedback_roundtrip(
        &self,
        y_dl: &Array2<Complex32>,
        tag: FreqTag,
        bits: Option<u8>,
    ) -> Result<FeedbackResult> {
        let z = self.encode(y_dl, tag)?;
        match bits {
            None => Ok(FeedbackResult {
                h_hat: self.decode(&z)?,
                payload_bits: None,
            }),
            Some(b) => {
                let q = quantize(&z, b)?;
                let payload = q.payload_bits();
                let z_hat = dequantize(&q);
                Ok(FeedbackResult {
                    h_hat: self.decode(&z_hat)?,
                    payload_bits: Some(payload),
                })
            }
        }
    }

    /// Batched inference: reconstruct every matrix in `ys`, optionally
    /// passing the codewords through the `bits`-wide quantizer.
    pub fn reconstruct_batch(&self, ys: &Array4<f32>, bits: Option<u8>) -> Result<Array4<f32>> {
        let mut z = forward_infer(
            &self.spec.encoder,
            &self.state.encoder,
            Activations::Spatial(ys.clone()),
        )?
        .into_flat();
        if let Some(b) = bits {
            if !(1..=16).contains(&b) {
                return Err(Error::Config(format!(
                    "quantizer bits must be 1..=16, got {b}"
                )));
            }
            let levels = 1u32 << b;
            let step = 2.0 / levels as f64;
            for v in z.iter_mut() {
                let idx = ((*v as f64 + 1.0) / step)
                    .floor()
                    .clamp(0.0, (levels - 1) as f64);
                *v = (-1.0 + (idx + 0.5) * step) as f32;
            }
        }
        Ok(forward_infer(
            &self.spec.decoder,
            &self.state.decoder,
            Activations::Flat(z),
        )?
        .into_spatial())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::CheckpointMeta;
    use proptest::prelude::*;

    fn tiny_deployment() -> Deployment {
        let spec = AutoencoderSpec::for_dims(8, 8, 6).unwrap();
        let state = AutoencoderState::init(&spec, 1);
        Deployment { spec, state }
    }

    fn sample_matrix(seed: u64) -> Array2<Complex32> {
        use crate::rng::{rng_from, stream};
        use rand::RngExt;
        let mut rng = rng_from(seed, stream::NOISE, 0);
        Array2::from_shape_fn((8, 8), |_| {
            Complex32::new(rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5)
        })
    }

    #[test]
    fn encode_is_deterministic_and_bounded() {
        let dep = tiny_deployment();
        let y = sample_matrix(3);
        let a = dep.encode(&y, FreqTag::Ul).unwrap();
        let b = dep.encode(&y, FreqTag::Ul).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 6);
        assert!(a.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn decode_of_zero_codeword_is_finite() {
        let dep = tiny_deployment();
        let z = Codeword {
            values: Array1::zeros(6),
            source_freq: FreqTag::Dl {
                gap_hz: 120_000_000,
            },
        };
        let h = dep.decode(&z).unwrap();
        assert_eq!(h.dim(), (8, 8));
        assert!(h.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn quantizer_midpoints_and_payload() {
        let z = Codeword {
            values: Array1::from_vec(vec![0.0; 256]),
            source_freq: FreqTag::Ul,
        };
        let q = quantize(&z, 8).unwrap();
        assert_eq!(q.payload_bits(), 2048);
        assert_eq!(q.clamped, 0);
        let back = dequantize(&q);
        for v in back.values.iter() {
            assert!((*v as f64).abs() <= 2.0 / 256.0 / 2.0 + 1e-9);
        }
        let q7 = quantize(&z, 7).unwrap();
        assert_eq!(q7.payload_bits(), 1792);
    }

    #[test]
    fn out_of_range_values_clamp_with_a_count() {
        let z = Codeword {
            values: Array1::from_vec(vec![-3.0, 1.5, 0.2]),
            source_freq: FreqTag::Ul,
        };
        let q = quantize(&z, 4).unwrap();
        assert_eq!(q.clamped, 2);
        assert_eq!(q.indices[0], 0);
        assert_eq!(q.indices[1], 15);
        let back = dequantize(&q);
        assert!(back.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn wire_format_is_bit_exact() {
        // Hand-checked example: d_z = 3, 4 bits, indices 0x1, 0xF, 0x8
        // packs to 0x1F 0x80.
        let q = QuantizedCodeword {
            indices: vec![1, 15, 8],
            bits: 4,
            source_freq: FreqTag::Ul,
            clamped: 0,
        };
        let bytes = write_codeword(&q).unwrap();
        assert_eq!(bytes, vec![0x00, 0x03, 0x04, 0x1F, 0x80]);
        let parsed = read_codeword(&bytes, FreqTag::Ul).unwrap();
        assert_eq!(parsed.indices, q.indices);
        assert_eq!(parsed.bits, 4);

        // 7-bit packing crosses byte boundaries.
        let q = QuantizedCodeword {
            indices: vec![0x7F, 0x01, 0x40, 0x2A],
            bits: 7,
            source_freq: FreqTag::Ul,
            clamped: 0,
        };
        let bytes = write_codeword(&q).unwrap();
        assert_eq!(bytes.len(), 3 + (4 * 7usize).div_ceil(8));
        let parsed = read_codeword(&bytes, FreqTag::Ul).unwrap();
        assert_eq!(parsed.indices, q.indices);
    }

    #[test]
    fn wire_format_rejects_bad_lengths() {
        assert!(read_codeword(&[0, 1], FreqTag::Ul).is_err());
        assert!(read_codeword(&[0, 1, 0], FreqTag::Ul).is_err());
        assert!(read_codeword(&[0, 1, 8, 0x10, 0xFF], FreqTag::Ul).is_err());
    }

    #[test]
    fn roundtrip_without_bits_equals_plain_decode() {
        let dep = tiny_deployment();
        let y = sample_matrix(9);
        let tag = FreqTag::Dl {
            gap_hz: 120_000_000,
        };
        let direct = dep.decode(&dep.encode(&y, tag).unwrap()).unwrap();
        let via = dep.feedback_roundtrip(&y, tag, None).unwrap();
        assert_eq!(via.h_hat, direct);
        assert_eq!(via.payload_bits, None);
        let quantized = dep.feedback_roundtrip(&y, tag, Some(8)).unwrap();
        assert_eq!(quantized.payload_bits, Some(6 * 8));
    }

    #[test]
    fn deployment_refuses_non_ul_provenance() {
        let spec = AutoencoderSpec::for_dims(8, 8, 6).unwrap();
        let state = AutoencoderState::init(&spec, 1);
        let ckpt = Checkpoint {
            spec,
            state,
            meta: CheckpointMeta {
                trained_on: "dl-mixed".into(),
                snr_db: 10.0,
                train_seed: 0,
                best_epoch: 0,
            },
        };
        match Deployment::from_checkpoint(&ckpt) {
            Err(Error::Provenance { found }) => assert_eq!(found, "dl-mixed"),
            other => panic!("expected provenance refusal, got {other:?}"),
        }
    }

    proptest! {
        /// |dequantize(quantize(v)) - v| <= 2^-b for v in [-1, 1].
        #[test]
        fn quantizer_error_bound(v in -1.0f32..=1.0, bits in 1u8..=16) {
            let z = Codeword {
                values: Array1::from_vec(vec![v]),
                source_freq: FreqTag::Ul,
            };
            let back = dequantize(&quantize(&z, bits).unwrap());
            let bound = 2f64.powi(-(bits as i32)) + 1e-7;
            prop_assert!(
                ((back.values[0] - v) as f64).abs() <= bound,
                "v={} bits={} back={}",
                v, bits, back.values[0]
            );
        }

        /// quantize(dequantize(q)) == q for every valid index vector.
        #[test]
        fn quantizer_idempotence(
            bits in 1u8..=12,
            raw in proptest::collection::vec(0u16..4096, 1..64),
        ) {
            let mask = (1u32 << bits) - 1;
            let indices: Vec<u16> = raw.iter().map(|v| (*v as u32 & mask) as u16).collect();
            let q = QuantizedCodeword {
                indices: indices.clone(),
                bits,
                source_freq: FreqTag::Ul,
                clamped: 0,
            };
            let again = quantize(&dequantize(&q), bits).unwrap();
            prop_assert_eq!(again.indices, indices);
        }

        /// Wire roundtrip preserves indices for arbitrary widths.
        #[test]
        fn wire_roundtrip(
            bits in 1u8..=16,
            raw in proptest::collection::vec(0u16..u16::MAX, 0..48),
        ) {
            let mask = ((1u32 << bits as u32) - 1) as u16;
            let indices: Vec<u16> = raw.iter().map(|v| v & mask).collect();
            let q = QuantizedCodeword {
                indices: indices.clone(),
                bits,
                source_freq: FreqTag::Ul,
                clamped: 0,
            };
            let bytes = write_codeword(&q).unwrap();
            let parsed = read_codeword(&bytes, FreqTag::Ul).unwrap();
            prop_assert_eq!(parsed.indices, indices);
            prop_assert_eq!(bytes.len(), 3 + (q.indices.len() * bits as usize).div_ceil(8));
        }
    }
}
