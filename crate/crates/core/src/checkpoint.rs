//! "BSLB" checkpoint container for weights and ensembles.
//!
//! Layout (integers little-endian unless noted):
//!   magic       4 bytes  b"BSLB"
//!   version     u32      currently 1
//!   descriptor           class_count u32, layer_count u32, then per layer
//!                        {input_width u32, output_width u32, has_bias u8,
//!                        activation u8 (0 relu, 1 identity)}, model kind u8
//!                        (0 deterministic, 1 vi, 2 hmc)
//!   sample_count u32
//!   samples              per sample: length u64, then length f64 values
//!                        (little-endian bit patterns, round-trip exact)

use crate::error::{Error, Result};
use crate::metrics::ModelKind;
use crate::nn::{Activation, LayerSpec, NetworkSpec, WeightVector};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"BSLB";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub samples: Vec<WeightVector>,
    pub kind: ModelKind,
}

fn kind_byte(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::Deterministic => 0,
        ModelKind::BayesVi => 1,
        ModelKind::BayesHmc => 2,
    }
}

fn parse_kind(b: u8) -> Result<ModelKind> {
    match b {
        0 => Ok(ModelKind::Deterministic),
        1 => Ok(ModelKind::BayesVi),
        2 => Ok(ModelKind::BayesHmc),
        other => Err(Error::Format(format!("unknown model kind byte {other}"))),
    }
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, samples: &[WeightVector], kind: ModelKind) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Parameter("checkpoint needs at least one weight vector".into()));
    }
    for w in samples {
        if w.values().len() != spec.param_count() {
            return Err(Error::Shape("sample length does not match the spec".into()));
        }
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(spec.class_count() as u32)?;
    out.write_u32::<LittleEndian>(spec.layer_count() as u32)?;
    for layer in spec.layers() {
        out.write_u32::<LittleEndian>(layer.input_width as u32)?;
        out.write_u32::<LittleEndian>(layer.output_width as u32)?;
        out.write_u8(u8::from(layer.has_bias))?;
        out.write_u8(match layer.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        })?;
    }
    out.write_u8(kind_byte(kind))?;
    out.write_u32::<LittleEndian>(samples.len() as u32)?;
    for w in samples {
        out.write_u64::<LittleEndian>(w.values().len() as u64)?;
        for &v in w.values() {
            out.write_u64::<LittleEndian>(v.to_bits())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut inp = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected \"BSLB\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = inp
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("checkpoint truncated at version".into()))?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let class_count = inp.read_u32::<LittleEndian>().map_err(trunc("class count"))? as usize;
    let layer_count = inp.read_u32::<LittleEndian>().map_err(trunc("layer count"))? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let input_width = inp.read_u32::<LittleEndian>().map_err(trunc("layer widths"))? as usize;
        let output_width = inp.read_u32::<LittleEndian>().map_err(trunc("layer widths"))? as usize;
        let has_bias = inp.read_u8().map_err(trunc("bias flag"))? != 0;
        let activation = match inp.read_u8().map_err(trunc("activation"))? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            other => return Err(Error::Format(format!("unknown activation byte {other}"))),
        };
        layers.push(LayerSpec {
            input_width,
            output_width,
            has_bias,
            activation,
        });
    }
    let spec = NetworkSpec::new(layers, class_count)?;
    let kind = parse_kind(inp.read_u8().map_err(trunc("model kind"))?)?;
    let sample_count = inp.read_u32::<LittleEndian>().map_err(trunc("sample count"))? as usize;
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let len = inp.read_u64::<LittleEndian>().map_err(trunc("sample length"))? as usize;
        if len != spec.param_count() {
            return Err(Error::Format(format!(
                "sample length {len} does not match the architecture ({} parameters)",
                spec.param_count()
            )));
        }
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_bits(
                inp.read_u64::<LittleEndian>().map_err(trunc("sample values"))?,
            ));
        }
        samples.push(WeightVector::from_values(&spec, values)?);
    }
    if samples.is_empty() {
        return Err(Error::Format("checkpoint holds no samples".into()));
    }
    Ok(Checkpoint { spec, samples, kind })
}

fn trunc(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |_| Error::Format(format!("checkpoint truncated at {what}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn weight_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::mlp(5, &[4, 3], 2, true).unwrap();
        let w = WeightVector::init(&spec, &mut substream(3, "ckpt"));
        let path = dir.path().join("model.bslb");
        save_checkpoint(&path, &spec, std::slice::from_ref(&w), ModelKind::Deterministic).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.kind, ModelKind::Deterministic);
        assert_eq!(back.samples.len(), 1);
        assert_eq!(back.samples[0].values(), w.values());
    }

    #[test]
    fn ensemble_round_trip_preserves_sample_count() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::mlp(3, &[3], 2, false).unwrap();
        let mut rng = substream(4, "ckpt-ens");
        let samples: Vec<WeightVector> = (0..100).map(|_| WeightVector::init(&spec, &mut rng)).collect();
        let path = dir.path().join("ens.bslb");
        save_checkpoint(&path, &spec, &samples, ModelKind::BayesHmc).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.samples.len(), 100);
        assert_eq!(back.kind, ModelKind::BayesHmc);
        for (a, b) in back.samples.iter().zip(samples.iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, b"NOPE rest of file").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version 9"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
