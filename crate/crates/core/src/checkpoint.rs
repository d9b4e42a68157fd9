//! Versioned single-file checkpoint container.
//!
//! ```text
//! b"NSCKPT" | u16 version | u32 header_len | header JSON | tensor records...
//! record: u16 name_len | name | u8 ndim | u32 dims[ndim] | f32le data
//! ```
//!
//! The header embeds the model configuration and its hash. Loading recomputes
//! the hash and refuses a mismatch unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tch::{nn::VarStore, Kind, Tensor};

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"NSCKPT";
pub const FORMAT_VERSION: u16 = 1;

/// Short content hash of any serializable value (canonical JSON, SHA-256, 16 hex chars).
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_value(value).expect("config serializes");
    short_hash(canonical_json(&json).as_bytes())
}

pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn canonical_json(v: &serde_json::Value) -> String {
    // serde_json without `preserve_order` keeps object keys sorted.
    serde_json::to_string(v).expect("value serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub version: u16,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub step: usize,
    /// Hash over every stored tensor; identifies the weights.
    pub params_hash: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Header {
    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.config.clone())?)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Load even when the embedded config hash does not match.
    pub force: bool,
}

/// Named parameter tensors gathered from one or more var stores under prefixes.
pub fn collect_params(stores: &[(&str, &VarStore)]) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (prefix, vs) in stores {
        for (name, t) in vs.variables() {
            out.insert(
                format!("{prefix}/{name}"),
                t.detach().to_kind(Kind::Float).contiguous(),
            );
        }
    }
    out
}

pub fn params_hash(stores: &[(&str, &VarStore)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in collect_params(stores) {
        h.update(name.as_bytes());
        h.update(tensor_bytes(&t));
    }
    hex::encode(&h.finalize()[..8])
}

fn tensor_bytes(t: &Tensor) -> Vec<u8> {
    let v: Vec<f32> = Vec::<f32>::try_from(t.flatten(0, -1)).expect("float tensor");
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn save(
    path: &Path,
    kind: &str,
    config: &impl Serialize,
    step: usize,
    extra: serde_json::Value,
    stores: &[(&str, &VarStore)],
) -> Result<Header> {
    let params = collect_params(stores);
    let header = Header {
        kind: kind.to_string(),
        version: FORMAT_VERSION,
        config: serde_json::to_value(config)?,
        config_hash: config_hash(config),
        step,
        params_hash: params_hash(stores),
        extra,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for (name, t) in &params {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let dims = t.size();
        buf.push(dims.len() as u8);
        for d in &dims {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&tensor_bytes(t));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(header)
}

fn bad(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<Header> {
    let mut f = fs::File::open(path).map_err(|e| bad(path, e.to_string()))?;
    let mut head = [0u8; 12];
    f.read_exact(&mut head)
        .map_err(|e| bad(path, e.to_string()))?;
    parse_preamble(path, &head).and_then(|len| {
        let mut json = vec![0u8; len];
        f.read_exact(&mut json)
            .map_err(|e| bad(path, e.to_string()))?;
        Ok(serde_json::from_slice(&json)?)
    })
}

fn parse_preamble(path: &Path, head: &[u8]) -> Result<usize> {
    if &head[..6] != MAGIC {
        return Err(bad(path, "not a checkpoint file"));
    }
    let version = u16::from_le_bytes([head[6], head[7]]);
    if version != FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {version}")));
    }
    Ok(u32::from_le_bytes([head[8], head[9], head[10], head[11]]) as usize)
}

/// Loads tensors into the given stores (matched by `prefix/name`) and returns the header.
pub fn load(
    path: &Path,
    kind: &str,
    opts: LoadOptions,
    stores: &mut [(&str, &mut VarStore)],
) -> Result<Header> {
    let buf = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    if buf.len() < 12 {
        return Err(bad(path, "truncated"));
    }
    let hlen = parse_preamble(path, &buf[..12])?;
    let header: Header = serde_json::from_slice(
        buf.get(12..12 + hlen)
            .ok_or_else(|| bad(path, "truncated header"))?,
    )?;
    if header.kind != kind {
        return Err(bad(
            path,
            format!("expected a {kind} checkpoint, found {}", header.kind),
        ));
    }
    let recomputed = short_hash(canonical_json(&header.config).as_bytes());
    if recomputed != header.config_hash && !opts.force {
        return Err(bad(
            path,
            format!(
                "config hash mismatch: header {} vs computed {recomputed}",
                header.config_hash
            ),
        ));
    }
    let mut tensors = BTreeMap::new();
    let mut pos = 12 + hlen;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let s = buf
            .get(*pos..*pos + n)
            .ok_or_else(|| bad(path, "truncated tensor record"))?;
        *pos += n;
        Ok(s)
    };
    while pos < buf.len() {
        let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
            .map_err(|e| bad(path, e.to_string()))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as i64);
        }
        let numel: i64 = dims.iter().product();
        let data: Vec<f32> = take(&mut pos, numel as usize * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::from_slice(&data).view(dims.as_slice()));
    }
    for (prefix, vs) in stores.iter_mut() {
        let vars = vs.variables();
        for (name, mut var) in vars {
            let key = format!("{prefix}/{name}");
            let src = tensors
                .get(&key)
                .ok_or_else(|| bad(path, format!("missing tensor {key}")))?;
            if src.size() != var.size() {
                return Err(bad(
                    path,
                    format!(
                        "tensor {key}: stored {:?}, model {:?}",
                        src.size(),
                        var.size()
                    ),
                ));
            }
            tch::no_grad(|| var.copy_(src));
        }
    }
    let stores_ref: Vec<(&str, &VarStore)> = stores.iter().map(|(p, v)| (*p, &**v)).collect();
    let loaded_hash = params_hash(&stores_ref);
    if loaded_hash != header.params_hash && !opts.force {
        return Err(bad(
            path,
            format!(
                "parameter hash mismatch: header {} vs loaded {loaded_hash}",
                header.params_hash
            ),
        ));
    }
    Ok(header)
}
