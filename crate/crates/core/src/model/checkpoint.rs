//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `PCSCKPT1`, a little-endian `u64` header length,
//! a JSON header (model config, tensor names and shapes, optional
//! vocabulary), then every tensor's values as little-endian `f64` in header
//! order. Values are stored as raw bits, so save → load is bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{PcsError, Result};

const MAGIC: &[u8; 8] = b"PCSCKPT1";

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocab: Option<Vec<String>>,
}

/// Model weights plus the vocabulary they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Option<Vec<String>>,
}

pub fn write_checkpoint<W: Write>(mut out: W, params: &ModelParams, vocab: Option<&[String]>) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        tensors: params
            .tensors()
            .into_iter()
            .map(|(n, m)| TensorHeader {
                name: n.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        vocab: vocab.map(<[String]>::to_vec),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + params.num_parameters() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, m) in params.tensors() {
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| PcsError::io("<checkpoint stream>", e))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| PcsError::io("<checkpoint stream>", e))?;
    let bad = |msg: &str| PcsError::Input(format!("corrupt checkpoint: {msg}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    let mut params = ModelParams::zeros(&header.config)?;
    let names = params.names();
    if names.len() != header.tensors.len() {
        return Err(bad("tensor count does not match config"));
    }
    let mut offset = body;
    for ((expected, th), m) in names.iter().zip(&header.tensors).zip(params.tensors_mut()) {
        if expected.to_string() != th.name || m.shape() != (th.rows, th.cols) {
            return Err(bad(&format!("unexpected tensor {} {}x{}", th.name, th.rows, th.cols)));
        }
        let n = th.rows * th.cols;
        let end = offset + n * 8;
        if end > bytes.len() {
            return Err(bad("truncated tensor data"));
        }
        for (dst, chunk) in m.data_mut().iter_mut().zip(bytes[offset..end].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    if !params.is_finite() {
        return Err(PcsError::Numeric("checkpoint holds non-finite weights".into()));
    }
    Ok(Checkpoint {
        params,
        vocab: header.vocab,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, vocab: Option<&[String]>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, vocab)?;
    fs::write(path, buf).map_err(|e| PcsError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).map_err(|e| PcsError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numerics::RngStream;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut cfg = ModelConfig::new(9, 2);
        cfg.embed_dim = 4;
        cfg.max_seq_len = 5;
        let p = init_params(&cfg, &mut RngStream::new(12)).unwrap();
        let vocab: Vec<String> = (0..9).map(|i| format!("w{i}")).collect();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, Some(&vocab)).unwrap();
        let ck = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(ck.params, p);
        let bits = |m: &ModelParams| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ck.params), bits(&p));
        assert_eq!(ck.vocab.unwrap(), vocab);
    }

    #[test]
    fn corruption_detected() {
        let cfg = ModelConfig::new(3, 2);
        let p = ModelParams::zeros(&cfg).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p, None).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }
}
