//! `ISMLP1` model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ISMLP1"                      6 bytes magic
//! precision                     u8, 32 or 64
//! layer count L                 u32, number of weight layers
//! dims                          (L + 1) x u32
//! activation tags               L x u8 (0 = relu, 1 = linear)
//! per layer: weights, biases    row-major (out, in) then out values,
//!                               IEEE-754 in the declared precision
//! metadata length               u32
//! metadata                      UTF-8 (run fingerprint record)
//! ```

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, Dense, Mlp, Precision, Scalar};
use crate::binio::Reader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"ISMLP1";

/// A checkpointed model of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMlp {
    Single(Mlp<f32>),
    Double(Mlp<f64>),
}

impl AnyMlp {
    pub fn precision(&self) -> Precision {
        match self {
            AnyMlp::Single(_) => Precision::Single,
            AnyMlp::Double(_) => Precision::Double,
        }
    }

    /// Converts to the requested element type (exact when widening).
    pub fn into_precision<F: Scalar>(self) -> Mlp<F> {
        match self {
            AnyMlp::Single(m) => m.cast(),
            AnyMlp::Double(m) => m.cast(),
        }
    }
}

impl<F: Scalar> From<Mlp<F>> for AnyMlp {
    fn from(m: Mlp<F>) -> Self {
        match F::PRECISION {
            Precision::Single => AnyMlp::Single(m.cast()),
            Precision::Double => AnyMlp::Double(m.cast()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: AnyMlp,
    pub metadata: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.model {
            AnyMlp::Single(m) => encode(m, &self.metadata),
            AnyMlp::Double(m) => encode(m, &self.metadata),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(6, "magic")? != MAGIC {
            return Err(r.error_at(0, "bad magic, not an ISMLP1 checkpoint"));
        }
        let prec_pos = r.pos;
        let precision = Precision::from_bits(r.u8("precision")?)
            .ok_or_else(|| r.error_at(prec_pos, "precision must be 32 or 64"))?;
        let count_pos = r.pos;
        let layers = r.u32("layer count")? as usize;
        if layers == 0 {
            return Err(r.error_at(count_pos, "zero layers"));
        }
        let mut dims = Vec::with_capacity(layers + 1);
        for _ in 0..=layers {
            let pos = r.pos;
            let d = r.u32("layer dim")? as usize;
            if d == 0 {
                return Err(r.error_at(pos, "zero layer dim"));
            }
            dims.push(d);
        }
        let mut plan = Vec::with_capacity(layers);
        for _ in 0..layers {
            let pos = r.pos;
            let tag = r.u8("activation tag")?;
            plan.push(Activation::from_tag(tag).ok_or_else(|| r.error_at(pos, "unknown activation tag"))?);
        }
        let model = match precision {
            Precision::Single => AnyMlp::Single(read_params(&mut r, &dims, &plan)?),
            Precision::Double => AnyMlp::Double(read_params(&mut r, &dims, &plan)?),
        };
        let meta_len = r.u32("metadata length")? as usize;
        let meta_pos = r.pos;
        let metadata = String::from_utf8(r.take(meta_len, "metadata")?.to_vec())
            .map_err(|_| r.error_at(meta_pos, "metadata is not UTF-8"))?;
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { model, metadata })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn encode<F: Scalar>(m: &Mlp<F>, metadata: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + m.parameter_count() * F::BYTES + metadata.len());
    out.extend_from_slice(MAGIC);
    out.push(F::PRECISION.bits());
    out.extend_from_slice(&(m.layers().len() as u32).to_le_bytes());
    for d in m.layer_dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for l in m.layers() {
        out.push(l.activation.tag());
    }
    for l in m.layers() {
        for &w in l.weight.iter() {
            w.write_le(&mut out);
        }
        for &b in l.bias.iter() {
            b.write_le(&mut out);
        }
    }
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out
}

fn read_params<F: Scalar>(r: &mut Reader<'_>, dims: &[usize], plan: &[Activation]) -> Result<Mlp<F>> {
    let mut layers = Vec::with_capacity(plan.len());
    for (io, &activation) in dims.windows(2).zip(plan) {
        let (fan_in, fan_out) = (io[0], io[1]);
        let raw = r.take(fan_in * fan_out * F::BYTES, "weights")?;
        let weight = Array2::from_shape_vec(
            (fan_out, fan_in),
            raw.chunks_exact(F::BYTES).map(F::read_le).collect(),
        )
        .expect("length checked");
        let raw = r.take(fan_out * F::BYTES, "biases")?;
        let bias = Array1::from_vec(raw.chunks_exact(F::BYTES).map(F::read_le).collect());
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    Mlp::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation_plan;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        for seed in 0..3 {
            let m = Mlp::<f32>::new(&[7, 5, 3], &activation_plan(2, Activation::Linear), seed).unwrap();
            let ck = Checkpoint {
                model: m.into(),
                metadata: "{\"fingerprint\":\"abc\"}".into(),
            };
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
        let m = Mlp::<f64>::new(&[2, 2], &[Activation::Relu], 3).unwrap();
        let ck = Checkpoint { model: m.clone().into(), metadata: String::new() };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.model.into_precision::<f64>(), m);
    }

    #[test]
    fn header_layout() {
        let m = Mlp::<f32>::zeros(&[2, 1], &[Activation::Linear]).unwrap();
        let bytes = Checkpoint { model: m.into(), metadata: "x".into() }.to_bytes();
        assert_eq!(&bytes[..6], b"ISMLP1");
        assert_eq!(bytes[6], 32);
        assert_eq!(&bytes[7..11], &1u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &2u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1u32.to_le_bytes());
        assert_eq!(bytes[19], 1);
        assert_eq!(bytes.len(), 20 + 3 * 4 + 4 + 1);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let m = Mlp::<f32>::new(&[3, 2], &[Activation::Relu], 0).unwrap();
        let bytes = Checkpoint { model: m.into(), metadata: String::new() }.to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[6] = 16;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 6, .. })));
        for cut in [3, 10, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format { .. })));
        }
    }

    proptest! {
        #[test]
        fn any_float_payload_round_trips(vals in proptest::collection::vec(any::<u32>(), 6)) {
            let mut m = Mlp::<f32>::zeros(&[2, 2], &[Activation::Linear]).unwrap();
            let layer = &mut m.layers_mut()[0];
            for (slot, bits) in layer.weight.iter_mut().chain(layer.bias.iter_mut()).zip(vals) {
                *slot = f32::from_bits(bits);
            }
            let bytes = Checkpoint { model: m.into(), metadata: String::new() }.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
