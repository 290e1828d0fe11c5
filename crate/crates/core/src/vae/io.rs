//! Binary model file.
//!
//! ```text
//! magic "SCADAVAE" | u32 version | u64 header length | header JSON
//! | blocks (u16 name length, name, u8 rank, u64 dims…, f64 values…)
//! | SHA-256 of everything before it
//! ```
//! All integers and floats are little-endian.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{VaeConfig, VaeModel};
use crate::dataio::ChannelStats;
use crate::diffcore::{RunningStats, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SCADAVAE";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: VaeConfig,
    channel_names: Vec<String>,
    provenance: BTreeMap<String, String>,
    blocks: usize,
}

fn put_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend((d as u64).to_le_bytes());
    }
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

pub fn to_bytes(model: &VaeModel) -> Vec<u8> {
    let mut blocks = Vec::new();
    let mut count = 0;
    let mut add = |name: &str, shape: &[usize], data: &[f64]| {
        put_block(&mut blocks, name, shape, data);
        count += 1;
    };
    let c = model.norm.len();
    add("norm.mean", &[c], &model.norm.mean);
    add("norm.std", &[c], &model.norm.std);
    for (name, s) in model.layout.bn_names.iter().zip(&model.bn) {
        add(&format!("{name}.running_mean"), &[s.mean.len()], &s.mean);
        add(&format!("{name}.running_var"), &[s.var.len()], &s.var);
    }
    for p in model.params.iter() {
        add(&p.name, p.value.shape(), p.value.data());
    }
    let header = Header {
        config: model.config.clone(),
        channel_names: model.channel_names.clone(),
        provenance: model.provenance.clone(),
        blocks: count,
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(blocks.len() + header.len() + 64);
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((header.len() as u64).to_le_bytes());
    out.extend(&header);
    out.extend(&blocks);
    let digest = Sha256::digest(&out);
    out.extend(digest.iter());
    out
}

pub fn save_model(model: &VaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::EmptyPath);
    }
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VaeModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<VaeModel> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 12 + 8 + DIGEST_LEN {
        return Err(Error::Integrity("file truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch (truncated or corrupted)".into()));
    }

    let mut cur = Cursor { buf: body, pos: 12 };
    let header_len = cur.u64()? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len)?)
        .map_err(|e| Error::Format(format!("header: {e}")))?;

    let mut blocks: HashMap<String, Tensor> = HashMap::new();
    for _ in 0..header.blocks {
        let name_len = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let rank = cur.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("block {name}: {e}")))?;
        if blocks.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate block {name}")));
        }
    }
    if cur.pos != body.len() {
        return Err(Error::Format("trailing bytes after last block".into()));
    }

    let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
        let t = blocks
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing block {name}")))?;
        if t.shape() != shape {
            return Err(Error::Format(format!(
                "block {name} has shape {:?}, configuration implies {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    };
    let c = header.config.channels;
    let norm = ChannelStats {
        mean: take("norm.mean", &[c])?.into_data(),
        std: take("norm.std", &[c])?.into_data(),
    };
    let mut model = VaeModel::new(header.config, header.channel_names, norm)
        .map_err(|e| Error::Format(format!("inconsistent header: {e}")))?;
    let mut bn = Vec::new();
    for (name, &n) in model.layout.bn_names.iter().zip(&model.layout.bn_sizes) {
        bn.push(RunningStats {
            mean: take(&format!("{name}.running_mean"), &[n])?.into_data(),
            var: take(&format!("{name}.running_var"), &[n])?.into_data(),
        });
    }
    let mut params = model.params.clone();
    for p in params.iter_mut() {
        p.value = take(&p.name, p.value.shape())?;
    }
    if let Some(extra) = blocks.keys().next() {
        return Err(Error::Format(format!("unknown block {extra}")));
    }
    model.set_state(params, bn);
    model.provenance = header.provenance;
    Ok(model)
}
