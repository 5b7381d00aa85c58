//! Binary checkpoint container: a JSON manifest (format version, sizes,
//! vocabulary, config echo) followed by named tensors stored as row-major
//! little-endian f32. Saving from a 32-bit model and loading it back
//! reproduces predictions bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::model::{Model, OutputLayer, TreeLstmCell, EMBEDDING_PARAM};
use crate::tensor::{Scalar, Tensor};
use crate::training::TrainConfig;
use crate::treebank::NUM_CLASSES;

const MAGIC: &[u8; 8] = b"TREELSTM";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub hidden: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub vocab: Vec<String>,
    pub config: TrainConfig,
}

pub fn save_model<T: Scalar>(
    model: &Model<T>,
    config: &TrainConfig,
    mut w: impl Write,
) -> Result<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        hidden: model.hidden_size(),
        input_dim: model.input_dim(),
        classes: NUM_CLASSES,
        vocab: model.vocab.clone(),
        config: config.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encoding failed: {e}")))?;

    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(manifest_bytes.len() as u64)?;
    w.write_all(&manifest_bytes)?;

    let params = model.params();
    w.write_u32::<LittleEndian>(params.len() as u32)?;
    for p in &params {
        let name = p.name();
        let value = p.value();
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(value.shape().len() as u32)?;
        for &d in value.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in value.data() {
            w.write_f32::<LittleEndian>(v.as_f32())?;
        }
    }
    Ok(())
}

pub fn load_model<T: Scalar>(mut r: impl Read) -> Result<(Model<T>, Manifest)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let manifest_len = r.read_u64::<LittleEndian>()? as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("manifest decoding failed: {e}")))?;

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors: HashMap<String, Tensor<T>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(T::from_f32(r.read_f32::<LittleEndian>()?));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.insert(name, tensor);
    }

    let model = assemble_model(&manifest, &mut tensors)?;
    Ok((model, manifest))
}

fn assemble_model<T: Scalar>(
    manifest: &Manifest,
    tensors: &mut HashMap<String, Tensor<T>>,
) -> Result<Model<T>> {
    let cell = TreeLstmCell::zeros(
        manifest.hidden,
        manifest.input_dim,
        manifest.config.per_child_forget_input,
    );
    let classifier = OutputLayer::zeros(manifest.hidden, manifest.classes);
    let embedding = Parameter::new(
        EMBEDDING_PARAM,
        Tensor::zeros(&[manifest.vocab.len(), manifest.input_dim]),
    );
    let model = Model::from_parts(cell, classifier, embedding, manifest.vocab.clone());

    for p in model.params() {
        let name = p.name();
        let tensor = tensors
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if tensor.shape() != p.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                tensor.shape(),
                p.shape()
            )));
        }
        p.set_value(tensor);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingStore, OovPolicy};
    use crate::rng_from_seed;
    use crate::treebank::make_synthetic_treebank;

    fn small_model(seed: u64) -> (Model<f32>, TrainConfig) {
        let tb = make_synthetic_treebank(seed, 4, 8, 5);
        let store = EmbeddingStore::empty(6, OovPolicy::Random, seed);
        let mut rng = rng_from_seed(seed);
        let config = TrainConfig {
            hidden: 5,
            emb_dim: 6,
            ..TrainConfig::default()
        };
        let model = Model::<f32>::new(config.hidden, &store, tb.forms(), false, &mut rng);
        (model, config)
    }

    #[test]
    fn round_trip_preserves_every_parameter_bitwise() {
        let (model, config) = small_model(3);
        let mut buf = Vec::new();
        save_model(&model, &config, &mut buf).unwrap();
        let (loaded, manifest) = load_model::<f32>(buf.as_slice()).unwrap();
        assert_eq!(manifest.hidden, 5);
        assert_eq!(manifest.vocab, model.vocab);
        for (a, b) in model.params().iter().zip(loaded.params()) {
            assert_eq!(a.name(), b.name());
            assert!(a.value().bits_eq(&b.value()), "param {}", a.name());
        }
    }

    #[test]
    fn round_trip_predictions_are_identical() {
        let (model, config) = small_model(9);
        let tb = make_synthetic_treebank(9, 4, 8, 5);
        let mut buf = Vec::new();
        save_model(&model, &config, &mut buf).unwrap();
        let (loaded, _) = load_model::<f32>(buf.as_slice()).unwrap();
        for tree in tb.sentences() {
            assert_eq!(
                model.predict_sentence(tree).unwrap(),
                loaded.predict_sentence(tree).unwrap()
            );
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let data = b"NOTMAGIC\x01\x00\x00\x00";
        assert!(matches!(
            load_model::<f32>(&data[..]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (model, config) = small_model(5);
        let mut buf = Vec::new();
        save_model(&model, &config, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(load_model::<f32>(buf.as_slice()).is_err());
    }
}
