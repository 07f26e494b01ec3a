//! Checkpoint layout: a UTF-8 header followed by the raw parameter blob.
//!
//! ```text
//! spar-checkpoint 1
//! @seed 7
//! @config heads=4
//! @token 4 sports
//! encoder.tok_emb 60,64 0
//! ...
//! @blob 123456
//! <little-endian f32 values>
//! ```
//!
//! Manifest lines are `name shape_csv byte_offset`, contiguous in blob order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SparModel};
use crate::textprep::Vocabulary;

const MAGIC: &str = "spar-checkpoint 1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SparModel,
    pub seed: u64,
}

fn encode(model: &SparModel, seed: u64) -> Vec<u8> {
    let mut head = String::new();
    let w = &mut head;
    writeln!(w, "{MAGIC}").unwrap();
    writeln!(w, "@seed {seed}").unwrap();
    for (k, v) in model.config().to_pairs() {
        writeln!(w, "@config {k}={v}").unwrap();
    }
    for (id, tok) in model.vocab.tokens().iter().enumerate().skip(4) {
        if let Some(tok) = tok {
            writeln!(w, "@token {id} {tok}").unwrap();
        }
    }
    let mut offset = 0usize;
    for (_, p) in model.store.iter() {
        let shape: Vec<String> = p.tensor.shape().iter().map(|s| s.to_string()).collect();
        writeln!(w, "{} {} {offset}", p.name, shape.join(",")).unwrap();
        offset += p.tensor.len() * 4;
    }
    writeln!(w, "@blob {offset}").unwrap();
    let mut bytes = head.into_bytes();
    bytes.reserve(offset);
    for (_, p) in model.store.iter() {
        for v in p.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(model: &SparModel, seed: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode(model, seed)).map_err(|e| Error::io(path, e))
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Loads a checkpoint. With `expected`, every architecture key except the
/// vocabulary size must match, or a named mismatch error is returned.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("header is truncated"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    };
    if next_line()? != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut seed = None;
    let mut pairs = BTreeMap::new();
    let mut tokens: Vec<Option<String>> = vec![None; 4];
    let mut manifest = Vec::new();
    let blob_len = loop {
        let line = next_line()?;
        if let Some(v) = line.strip_prefix("@seed ") {
            seed = Some(v.parse::<u64>().map_err(|_| bad(format!("bad seed `{v}`")))?);
        } else if let Some(kv) = line.strip_prefix("@config ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad config line `{kv}`")))?;
            pairs.insert(k.to_string(), v.to_string());
        } else if let Some(t) = line.strip_prefix("@token ") {
            let (id, tok) = t.split_once(' ').ok_or_else(|| bad(format!("bad token line `{t}`")))?;
            let id: usize = id.parse().map_err(|_| bad(format!("bad token id `{id}`")))?;
            if tokens.len() <= id {
                tokens.resize(id + 1, None);
            }
            tokens[id] = Some(tok.to_string());
        } else if let Some(n) = line.strip_prefix("@blob ") {
            break n.parse::<usize>().map_err(|_| bad(format!("bad blob length `{n}`")))?;
        } else {
            let parts: Vec<&str> = line.split(' ').collect();
            let [name, shape, offset] = parts[..] else {
                return Err(bad(format!("bad manifest line `{line}`")));
            };
            let shape = shape
                .split(',')
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in `{line}`")))?;
            let offset = offset.parse().map_err(|_| bad(format!("bad offset in `{line}`")))?;
            manifest.push(Entry {
                name: name.to_string(),
                shape,
                offset,
            });
        }
    };
    let seed = seed.ok_or_else(|| bad("missing seed"))?;
    let blob = &bytes[pos..];
    if blob.len() != blob_len {
        return Err(bad(format!("blob has {} bytes, header declares {blob_len}", blob.len())));
    }

    let config = ModelConfig::from_pairs(&pairs)?;
    if let Some(want) = expected {
        let want_pairs = want.to_pairs();
        for (k, v) in &want_pairs {
            if k == "vocab_size" {
                continue;
            }
            let found = pairs.get(k).cloned().unwrap_or_default();
            if &found != v {
                return Err(Error::ConfigMismatch {
                    key: k.clone(),
                    expected: v.clone(),
                    found,
                });
            }
        }
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    if vocab.size() != config.encoder.vocab_size {
        return Err(bad(format!(
            "vocabulary has {} ids, config declares {}",
            vocab.size(),
            config.encoder.vocab_size
        )));
    }
    let mut model = SparModel::new(config, vocab, seed)?;
    if manifest.len() != model.store.len() {
        return Err(bad(format!(
            "manifest lists {} parameters, model has {}",
            manifest.len(),
            model.store.len()
        )));
    }
    let mut expected_offset = 0usize;
    for e in &manifest {
        if e.offset != expected_offset {
            return Err(bad(format!("{}: offset {} overlaps or leaves a gap", e.name, e.offset)));
        }
        let id = model.store.id(&e.name).ok_or_else(|| bad(format!("unknown parameter `{}`", e.name)))?;
        let tensor = &mut model.store.get_mut(id).tensor;
        if tensor.shape() != e.shape.as_slice() {
            return Err(bad(format!(
                "{}: shape {:?} does not match model shape {:?}",
                e.name,
                e.shape,
                tensor.shape()
            )));
        }
        let n = tensor.len() * 4;
        let chunk = blob
            .get(e.offset..e.offset + n)
            .ok_or_else(|| bad(format!("{}: data runs past the blob", e.name)))?;
        for (dst, src) in tensor.data_mut().iter_mut().zip(chunk.chunks_exact(4)) {
            *dst = f32::from_le_bytes(src.try_into().expect("chunk of four bytes"));
        }
        expected_offset += n;
    }
    if expected_offset != blob_len {
        return Err(bad(format!("blob has {blob_len} bytes, parameters need {expected_offset}")));
    }
    Ok(Checkpoint { model, seed })
}
