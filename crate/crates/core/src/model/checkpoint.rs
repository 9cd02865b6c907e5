//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes   "CSASRCKP"
//! version   u32       1
//! hlen      u64       length of the JSON header in bytes
//! header    hlen      UTF-8 JSON: {config, epoch, step, params: [{name, shape}], extra: [{name, shape}]}
//! values    f64 LE    every tensor in header order, params then extra
//! ```
//!
//! Nothing may follow the last value. `extra` holds optimizer and trainer
//! state so that a resumed run continues bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError, Params};
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"CSASRCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: usize,
    pub step: u64,
    pub extra: Params,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    step: u64,
    params: Vec<Entry>,
    extra: Vec<Entry>,
}

fn entries(p: &Params) -> Vec<Entry> {
    p.iter().map(|(name, t)| Entry { name: name.clone(), shape: t.shape().to_vec() }).collect()
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let header = Header {
        config: ck.model.config.clone(),
        epoch: ck.epoch,
        step: ck.step,
        params: entries(&ck.model.params),
        extra: entries(&ck.extra),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let n: usize = ck.model.params.values().chain(ck.extra.values()).map(Tensor::len).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in ck.model.params.values().chain(ck.extra.values()) {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], ModelError> {
    if bytes.len() < n {
        return Err(bad(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_tensors(entries: &[Entry], bytes: &mut &[u8]) -> Result<Params, ModelError> {
    let mut out = Params::new();
    for e in entries {
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("{}: shape overflows", e.name)))?;
        let len = n.checked_mul(8).ok_or_else(|| bad(format!("{}: shape overflows", e.name)))?;
        let raw = take(bytes, len, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        if out.insert(e.name.clone(), t).is_some() {
            return Err(bad(format!("duplicate tensor {}", e.name)));
        }
    }
    Ok(out)
}

/// Parses a checkpoint, rejecting anything malformed without panicking.
pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint, ModelError> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(take(b, 8, "header length")?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| bad("header length overflows"))?;
    let header: Header =
        serde_json::from_slice(take(b, hlen, "header")?).map_err(|e| bad(format!("header: {e}")))?;
    let params = read_tensors(&header.params, b)?;
    let extra = read_tensors(&header.extra, b)?;
    if !b.is_empty() {
        return Err(bad(format!("{} trailing bytes", b.len())));
    }
    let model = Model::from_params(header.config, params)?;
    Ok(Checkpoint { model, epoch: header.epoch, step: header.step, extra })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), ModelError> {
    let io = |source| ModelError::Io { path: path.display().to_string(), source };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(ck)).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig { encoder_hidden: 3, decoder_hidden: 4, embed_dim: 4, attention_dim: 3, vocab_size: 6, ..Default::default() };
        let mut extra = Params::new();
        extra.insert("opt.step".into(), Tensor::scalar(7.0));
        Checkpoint { model: Model::new(cfg).unwrap(), epoch: 2, step: 7, extra }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = encode_checkpoint(&ck);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_checkpoint(&sample());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_checkpoint(&longer).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_checkpoint(&wrong).is_err());
        assert!(decode_checkpoint(&[]).is_err());
        let mut huge = bytes[..12].to_vec();
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_checkpoint(&huge).is_err());
    }
}
