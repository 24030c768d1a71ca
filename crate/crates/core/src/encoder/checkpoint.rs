//! Binary parameter checkpoints.
//!
//! Layout:
//!
//! ```text
//! "FSEC1\n"
//! u64 LE   header length in bytes
//! header   JSON: encoder config, training config, vocabulary, tensor names and dims
//! payload  f64 LE values of every tensor, in header order, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderParams, Matrix, Tensors, Vocab, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"FSEC1\n";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    encoder: EncoderConfig,
    #[serde(default)]
    training: Option<serde_json::Value>,
    vocab: Vec<String>,
    tensors: Vec<TensorHeader>,
}

/// Writes `params`, recording `training` (any serialisable config) in the header.
pub fn write_checkpoint<W: Write>(
    mut writer: W,
    params: &EncoderParams,
    training: Option<serde_json::Value>,
) -> Result<()> {
    let header = Header {
        format: "FSEC1".into(),
        encoder: params.config.clone(),
        training,
        vocab: params.vocab.corpus_tokens().to_vec(),
        tensors: params
            .tensors
            .iter()
            .map(|(name, m)| TensorHeader {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    writer.write_all(MAGIC)?;
    writer.write_all(&(header.len() as u64).to_le_bytes())?;
    writer.write_all(&header)?;
    for (_, m) in params.tensors.iter() {
        for x in m.data() {
            writer.write_all(&x.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(
    mut reader: R,
) -> Result<(EncoderParams, Option<serde_json::Value>)> {
    let mut magic = [0u8; 6];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("missing FSEC1 magic".into()));
    }
    let mut len = [0u8; 8];
    reader.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len))
        .map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut header = vec![0u8; len];
    reader.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    if header.tensors.len() != TENSOR_NAMES.len()
        || header
            .tensors
            .iter()
            .zip(TENSOR_NAMES)
            .any(|(t, name)| t.name != name)
    {
        return Err(Error::Checkpoint("unexpected tensor list".into()));
    }
    let mut matrices = Vec::with_capacity(TENSOR_NAMES.len());
    for t in &header.tensors {
        let mut bytes = vec![0u8; t.rows * t.cols * 8];
        reader.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        matrices.push(Matrix::from_vec(t.rows, t.cols, data)?);
    }
    let mut it = matrices.into_iter();
    let mut next = || it.next().expect("six tensors");
    let tensors = Tensors {
        word: next(),
        position: next(),
        conv_weight: next(),
        conv_bias: next(),
        rec_weight: next(),
        rec_bias: next(),
    };
    let params = EncoderParams {
        config: header.encoder,
        vocab: Vocab::from_tokens(header.vocab),
        tensors,
    };
    params
        .validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((params, header.training))
}

pub fn save(
    path: impl AsRef<Path>,
    params: &EncoderParams,
    training: Option<serde_json::Value>,
) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, training)
}

pub fn load(path: impl AsRef<Path>) -> Result<(EncoderParams, Option<serde_json::Value>)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

/// True if the file starts with the checkpoint magic.
pub fn is_checkpoint(path: impl AsRef<Path>) -> bool {
    let mut magic = [0u8; 6];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == MAGIC)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let cfg = EncoderConfig {
            word_dim: 4,
            pos_dim: 2,
            filters: 3,
            window: 3,
            max_len: 5,
            max_vocab: 10,
            init_range: 0.1,
        };
        let params = EncoderParams::init(cfg, Vocab::from_tokens(["a", "b"]), None, 9).unwrap();
        let mut buf = Vec::new();
        let training = serde_json::json!({"lr": 1e-4});
        write_checkpoint(&mut buf, &params, Some(training.clone())).unwrap();
        assert!(buf.starts_with(b"FSEC1\n"));
        let (loaded, meta) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(meta, Some(training));
    }

    #[test]
    fn rejects_wrong_magic() {
        let err = read_checkpoint(&b"NOPE!!\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
